use std::collections::BTreeMap;

use diffdepth::data::synth_split;
use diffdepth::depth_network::*;
use diffdepth::diffusion::ScheduleConfig;
use diffdepth::losses::LossConfig;
use diffdepth::nn::{Graph, ParamStore};
use diffdepth::noise_predictor::*;
use diffdepth::rng::{derive_rng, normal_tensor};
use diffdepth::Tensor;

fn source(seed: u64) -> StructureSource {
    let mut store = ParamStore::new();
    let net = NoisePredictor::new(NoisePredictorConfig::desk(), &mut store, &mut derive_rng(seed, &[1])).unwrap();
    StructureSource::new(net, store, FeatureTap::desk_defaults(), ScheduleConfig::default().build().unwrap()).unwrap()
}

fn net(fusion: bool, channels: BTreeMap<FeatureScale, usize>, seed: u64) -> (DepthNet, ParamStore) {
    let mut store = ParamStore::new();
    let n = DepthNet::new(DepthPredictorConfig::desk(channels, fusion), &mut store, &mut derive_rng(seed, &[1])).unwrap();
    (n, store)
}

fn items(n: usize) -> (Vec<diffdepth::data::Sample>, Vec<TrainItem>) {
    let samples = synth_split(3, "train", n, 32);
    let cfg = LossConfig::default();
    let items = samples
        .iter()
        .map(|s| TrainItem::new(s, diffdepth::data::sparsify(&s.depth, 0.1, diffdepth::data::SparsityPattern::Uniform, 1).unwrap(), &cfg, 2).unwrap())
        .collect();
    (samples, items)
}

fn options(steps: u64) -> DepthTrainOptions {
    DepthTrainOptions {
        steps,
        batch_size: 2,
        lr: LrSchedule::constant(2e-3),
        ..DepthTrainOptions::desk()
    }
}

#[test]
fn baseline_output_shape_and_determinism() {
    let (a, sa) = net(false, BTreeMap::new(), 0);
    let (b, sb) = net(false, BTreeMap::new(), 0);
    let x = normal_tensor(&[2, 3, 32, 48], &mut derive_rng(0, &[]));
    let pa = a.predict(&sa, &x, None).unwrap();
    assert_eq!(pa.len(), 2);
    assert_eq!((pa[0].height, pa[0].width), (32, 48));
    assert_eq!(pa, b.predict(&sb, &x, None).unwrap());
    let bad = normal_tensor(&[1, 3, 30, 32], &mut derive_rng(0, &[]));
    assert!(a.predict(&sa, &bad, None).is_err());
}

#[test]
fn fused_network_requires_every_scale() {
    let src = source(0);
    let (n, store) = net(true, src.channels(), 0);
    let x = normal_tensor(&[1, 3, 32, 32], &mut derive_rng(0, &[]));
    let feats = src.extract(&x, &mut derive_rng(1, &[])).unwrap();
    assert_eq!(n.predict(&store, &x, Some(&feats)).unwrap().len(), 1);
    assert!(matches!(n.predict(&store, &x, None), Err(diffdepth::Error::Config(_))));
    let mut partial = FeatureBundle::new();
    partial.insert(FeatureScale::Half, feats.get(FeatureScale::Half).unwrap().clone());
    assert!(matches!(n.predict(&store, &x, Some(&partial)), Err(diffdepth::Error::Config(_))));
}

#[test]
fn fusion_module_starts_as_identity_and_checks_channels() {
    let mut store = ParamStore::new();
    let ffm = FeatureFusion::new(&mut store, "f", 12, 20, 4, &mut derive_rng(0, &[]));
    let detail = normal_tensor(&[2, 12, 8, 8], &mut derive_rng(1, &[]));
    let structure = normal_tensor(&[2, 20, 8, 8], &mut derive_rng(2, &[]));
    let mut g = Graph::new(&store);
    let (d, s) = (g.input(detail.clone()), g.input(structure));
    let out = ffm.forward(&mut g, d, s).unwrap();
    assert_eq!(g.value(out).data(), detail.data());
    let wrong = g.input(normal_tensor(&[2, 16, 8, 8], &mut derive_rng(3, &[])));
    assert!(matches!(ffm.forward(&mut g, d, wrong), Err(diffdepth::Error::Shape(_))));
    let small = g.input(normal_tensor(&[2, 20, 4, 4], &mut derive_rng(3, &[])));
    assert!(matches!(ffm.forward(&mut g, d, small), Err(diffdepth::Error::Shape(_))));
}

#[test]
fn fusion_modules_sit_at_each_configured_scale() {
    let src = source(0);
    let ch = src.channels();
    let (n, _) = net(true, ch.clone(), 0);
    let dec = &n.config.decoder_channels;
    for (scale, detail) in [(FeatureScale::Eighth, dec[0]), (FeatureScale::Quarter, dec[1]), (FeatureScale::Half, dec[2])] {
        let m = n.fusion_module(scale).unwrap();
        assert_eq!((m.detail_channels, m.structure_channels), (detail, ch[&scale]));
    }
    let (b, _) = net(false, ch, 0);
    assert!(FeatureScale::ALL.iter().all(|&s| b.fusion_module(s).is_none()));
}

#[test]
fn structure_features_matter_after_one_step() {
    let src = source(4);
    let (_, items) = items(4);
    let mut t = DepthTrainer::new(DepthPredictorConfig::desk(src.channels(), true), options(1)).unwrap();
    t.run(&items, Some(&src), |_, _| {}).unwrap();
    let x = Tensor::stack(&[&items[0].image]).unwrap();
    let feats = src.extract(&x, &mut derive_rng(9, &[])).unwrap();
    let with = t.net.predict(&t.store, &x, Some(&feats)).unwrap();
    let zeroed = t.net.predict(&t.store, &x, Some(&feats.zeros_like())).unwrap();
    let diff = with[0].values.iter().zip(&zeroed[0].values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-6, "max difference {diff}");
}

#[test]
fn baseline_ignores_supplied_features() {
    let src = source(4);
    let (n, store) = net(false, BTreeMap::new(), 1);
    let x = normal_tensor(&[1, 3, 32, 32], &mut derive_rng(0, &[]));
    let feats = src.extract(&x, &mut derive_rng(1, &[])).unwrap();
    assert_eq!(n.predict(&store, &x, Some(&feats)).unwrap(), n.predict(&store, &x, None).unwrap());
}

#[test]
fn training_is_deterministic_and_leaves_stage_one_frozen() {
    let src = source(5);
    let before = src.weight_hash();
    let (_, items) = items(3);
    let run = || {
        let mut t = DepthTrainer::new(DepthPredictorConfig::desk(src.channels(), true), options(3)).unwrap();
        t.run(&items, Some(&src), |_, _| {}).unwrap();
        t.checkpoint(Some(&before), &src.taps).weight_hash()
    };
    assert_eq!(run(), run());
    assert_eq!(src.weight_hash(), before);
}

#[test]
fn checkpoint_round_trip_and_fusion_mismatch() {
    let (_, items) = items(2);
    let mut t = DepthTrainer::new(DepthPredictorConfig::desk(BTreeMap::new(), false), options(2)).unwrap();
    t.run(&items, None, |_, _| {}).unwrap();
    let ck = t.checkpoint(None, &[]);
    let (n, store) = load_depth_predictor(&ck, Some(false)).unwrap();
    let x = Tensor::stack(&[&items[0].image]).unwrap();
    assert_eq!(n.predict(&store, &x, None).unwrap(), t.net.predict(&t.store, &x, None).unwrap());
    assert!(matches!(load_depth_predictor(&ck, Some(true)), Err(diffdepth::Error::Config(_))));
}

#[test]
fn learning_rate_schedule_steps_down_to_floor() {
    let s = LrSchedule { initial: 5e-5, decrement: 1e-5, every: 5, min: 1e-5 };
    let got: Vec<f64> = [0, 4, 5, 10, 15, 20, 40].iter().map(|&k| s.at(k)).collect();
    let want = [5e-5, 5e-5, 4e-5, 3e-5, 2e-5, 1e-5, 1e-5];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-15, "{got:?}");
    }
}
