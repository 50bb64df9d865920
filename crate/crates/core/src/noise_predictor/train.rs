//! Stage-1 training: regress the injected noise at uniformly sampled steps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::unet::{NoisePredictor, NoisePredictorConfig};
use crate::checkpoint::Checkpoint;
use crate::diffusion::{q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Graph, ParamStore};
use crate::rng::{derive_rng, normal_tensor, tags};
use crate::tensor::Tensor;

pub const CHECKPOINT_KIND: &str = "noise_predictor";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseTrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl NoiseTrainOptions {
    /// Batch 8, learning rate 1e-4.
    pub fn full_size() -> Self {
        Self { steps: 100_000, batch_size: 8, lr: 1e-4, seed: 0 }
    }

    pub fn desk() -> Self {
        Self { steps: 2000, batch_size: 4, lr: 2e-3, seed: 0 }
    }
}

/// Resumable training state.
pub struct NoiseTrainer {
    pub net: NoisePredictor,
    pub store: ParamStore,
    pub adam: Adam,
    pub options: NoiseTrainOptions,
    pub loss_curve: Vec<f64>,
}

impl NoiseTrainer {
    pub fn new(config: NoisePredictorConfig, options: NoiseTrainOptions) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = derive_rng(options.seed, &[tags::INIT]);
        let net = NoisePredictor::new(config, &mut store, &mut rng)?;
        let adam = Adam::new(AdamConfig { lr: options.lr, ..Default::default() }, &store);
        Ok(Self { net, store, adam, options, loss_curve: Vec::new() })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step_count()
    }

    /// One optimisation step on a batch drawn from `images` (each `[3, h, w]`
    /// in `[-1, 1]`). Returns the batch loss before the update.
    pub fn train_step(&mut self, images: &[Tensor], sched: &NoiseSchedule) -> Result<f64> {
        if images.is_empty() {
            return Err(Error::Data("noise predictor training needs at least one image".into()));
        }
        let step = self.adam.step_count();
        let mut rng = derive_rng(self.options.seed, &[tags::BATCH, step]);
        let b = self.options.batch_size;
        let picks: Vec<usize> = (0..b).map(|_| rng.random_range(0..images.len())).collect();
        let steps: Vec<usize> = (0..b).map(|_| rng.random_range(0..sched.steps())).collect();
        let mut noisy = Vec::with_capacity(b);
        let mut noises = Vec::with_capacity(b);
        for (&i, &t) in picks.iter().zip(&steps) {
            let eps = normal_tensor(images[i].shape(), &mut rng);
            noisy.push(q_sample(&images[i], t, &eps, sched)?.pixels);
            noises.push(eps);
        }
        let x = Tensor::stack(&noisy.iter().collect::<Vec<_>>())?;
        let eps = Tensor::stack(&noises.iter().collect::<Vec<_>>())?;
        let mut g = Graph::new(&self.store);
        let xv = g.input(x);
        let out = self.net.forward(&mut g, xv, &steps, None)?;
        let loss = g.mse(out.eps.expect("full pass"), eps);
        let value = g.value(loss).data()[0] as f64;
        let grads = g.backward(loss);
        self.adam.step(&mut self.store, &grads);
        self.loss_curve.push(value);
        Ok(value)
    }

    /// Trains until `options.steps` total steps have been taken.
    pub fn run(&mut self, images: &[Tensor], sched: &NoiseSchedule, mut on_step: impl FnMut(u64, f64)) -> Result<()> {
        while self.step_count() < self.options.steps {
            let loss = self.train_step(images, sched)?;
            on_step(self.step_count(), loss);
        }
        Ok(())
    }

    /// Weights, Adam moments and the loss curve.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(
            CHECKPOINT_KIND,
            serde_json::to_value(&self.net.config).expect("config serializes"),
            &self.store,
        );
        let (step, m, v) = self.adam.state();
        ck.meta = serde_json::json!({
            "step": step,
            "options": self.options,
            "loss_curve": self.loss_curve,
        });
        for ((name, _), (m, v)) in self.store.iter().zip(m.iter().zip(v)) {
            ck.extra.push((format!("adam.m.{name}"), m.clone()));
            ck.extra.push((format!("adam.v.{name}"), v.clone()));
        }
        ck
    }

    /// Restores a trainer from [`NoiseTrainer::checkpoint`] output. `options`
    /// may extend the step budget; the seed must match to keep the batch
    /// sequence identical to an uninterrupted run.
    pub fn resume(ck: &Checkpoint, options: NoiseTrainOptions) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let config: NoisePredictorConfig = serde_json::from_value(ck.config.clone())?;
        let mut trainer = Self::new(config, options)?;
        ck.load_into(&mut trainer.store)?;
        let step = ck.meta["step"].as_u64().unwrap_or(0);
        if step > 0 {
            let find = |prefix: &str| -> Result<Vec<Tensor>> {
                trainer
                    .store
                    .iter()
                    .map(|(name, _)| {
                        ck.extra
                            .iter()
                            .find(|(n, _)| *n == format!("{prefix}{name}"))
                            .map(|(_, t)| t.clone())
                            .ok_or_else(|| Error::Config(format!("checkpoint lacks optimizer state for {name}")))
                    })
                    .collect()
            };
            let m = find("adam.m.")?;
            let v = find("adam.v.")?;
            trainer.adam.restore(step, m, v);
        }
        trainer.loss_curve = serde_json::from_value(ck.meta["loss_curve"].clone()).unwrap_or_default();
        Ok(trainer)
    }
}

/// Trained network with its loss curve.
pub struct TrainedNoisePredictor {
    pub net: NoisePredictor,
    pub store: ParamStore,
    pub loss_curve: Vec<f64>,
}

/// Full stage-1 run.
pub fn train_noise_predictor(
    images: &[Tensor],
    sched: &NoiseSchedule,
    config: NoisePredictorConfig,
    options: NoiseTrainOptions,
) -> Result<TrainedNoisePredictor> {
    if images.is_empty() {
        return Err(Error::Data("noise predictor training needs at least one image".into()));
    }
    let mut trainer = NoiseTrainer::new(config, options)?;
    trainer.run(images, sched, |_, _| {})?;
    Ok(TrainedNoisePredictor { net: trainer.net, store: trainer.store, loss_curve: trainer.loss_curve })
}

/// Loads a frozen network from a stage-1 checkpoint.
pub fn load_noise_predictor(ck: &Checkpoint) -> Result<(NoisePredictor, ParamStore)> {
    ck.expect_kind(CHECKPOINT_KIND)?;
    let config: NoisePredictorConfig = serde_json::from_value(ck.config.clone())?;
    let mut store = ParamStore::new();
    let net = NoisePredictor::new(config, &mut store, &mut derive_rng(0, &[tags::INIT]))?;
    ck.load_into(&mut store)?;
    Ok((net, store))
}

/// Mean of the first and last `window` entries of a loss curve.
pub fn smoothed_endpoints(curve: &[f64], window: usize) -> Option<(f64, f64)> {
    if curve.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(curve.len());
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&curve[..w]), mean(&curve[curve.len() - w..])))
}
