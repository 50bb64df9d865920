//! Noise schedule and the closed-form forward / reverse diffusion steps.
//!
//! Steps are indexed `0..T`. The cumulative product `alpha_bar[t]` includes
//! step `t` itself, so `alpha_bar[0] = alpha[0]`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Serialized form of a linear schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta ramp from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Range("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Range(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let beta = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Ok(Self::from_betas(beta))
    }

    /// Builds the derived arrays from raw betas without validating them; see
    /// [`NoiseSchedule::check_invariants`].
    pub fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Self { beta, alpha, alpha_bar }
    }

    pub fn check_invariants(&self) -> Result<()> {
        if let Some((t, b)) = self.beta.iter().enumerate().find(|(_, &b)| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Range(format!("beta[{t}] = {b} outside (0, 1)")));
        }
        for t in 0..self.alpha_bar.len() {
            let ab = self.alpha_bar[t];
            if ab <= 0.0 {
                return Err(Error::Range(format!("alpha_bar[{t}] = {ab} not positive")));
            }
            if t > 0 {
                let prev = self.alpha_bar[t - 1];
                if ab > prev {
                    return Err(Error::Range(format!("alpha_bar increases at step {t}")));
                }
                if (ab - prev * self.alpha[t]).abs() > 1e-12 {
                    return Err(Error::Range(format!("alpha_bar[{t}] breaks the cumulative product")));
                }
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(Error::Range(format!("step {t} outside [0, {})", self.steps())));
        }
        Ok(())
    }

    /// `(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t))`.
    pub fn mixing(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar[t];
        (ab.sqrt(), (1.0 - ab).sqrt())
    }
}

/// A noised image together with the step that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyImage {
    pub pixels: Tensor,
    pub step: usize,
}

/// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps` in 64-bit.
pub fn q_sample_f64(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    if x0.len() != eps.len() {
        return Err(shape_err!("x0 has {} values, eps has {}", x0.len(), eps.len()));
    }
    let (s, n) = sched.mixing(t);
    Ok(x0.iter().zip(eps).map(|(x, e)| s * x + n * e).collect())
}

/// Tensor version of [`q_sample_f64`]; coefficients are computed in 64-bit.
pub fn q_sample(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<NoisyImage> {
    sched.check_step(t)?;
    if x0.shape() != eps.shape() {
        return Err(shape_err!("x0 shape {:?} != eps shape {:?}", x0.shape(), eps.shape()));
    }
    let (s, n) = sched.mixing(t);
    let (s, n) = (s as f32, n as f32);
    let data = x0.data().iter().zip(eps.data()).map(|(x, e)| s * x + n * e).collect();
    Ok(NoisyImage {
        pixels: Tensor::from_vec(x0.shape(), data)?,
        step: t,
    })
}

/// Mean of the reverse step `p(x_{t-1} | x_t)` given a noise estimate:
/// `(x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)`.
pub fn denoise_step_mean(x_t: &[f64], t: usize, eps_hat: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    if x_t.len() != eps_hat.len() {
        return Err(shape_err!("x_t has {} values, eps_hat has {}", x_t.len(), eps_hat.len()));
    }
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / sched.alpha(t).sqrt();
    Ok(x_t.iter().zip(eps_hat).map(|(x, e)| inv * (x - coef * e)).collect())
}

/// One ancestral step: `mean + sqrt(beta_t) * z`, with the noise term
/// dropped at `t = 0`.
pub fn reverse_sample(mean: &[f64], t: usize, z: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    if mean.len() != z.len() {
        return Err(shape_err!("mean has {} values, z has {}", mean.len(), z.len()));
    }
    if t == 0 {
        return Ok(mean.to_vec());
    }
    let sigma = sched.beta(t).sqrt();
    Ok(mean.iter().zip(z).map(|(m, z)| m + sigma * z).collect())
}

/// Mean squared difference between predicted and true noise.
pub fn noise_mse(eps_hat: &[f64], eps: &[f64]) -> Result<f64> {
    if eps_hat.len() != eps.len() {
        return Err(shape_err!("eps_hat has {} values, eps has {}", eps_hat.len(), eps.len()));
    }
    if eps.is_empty() {
        return Ok(0.0);
    }
    Ok(eps_hat.iter().zip(eps).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / eps.len() as f64)
}
