//! Finite-difference checks of every op's backward rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks d(sum(f(params) * w))/d(params) against central differences.
fn check(store: &mut ParamStore, build: impl Fn(&mut Graph) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let weights = {
        let mut g = Graph::new(store);
        let out = build(&mut g);
        random_tensor(g.value(out).shape(), &mut rng)
    };
    let eval = |store: &ParamStore| -> f64 {
        let mut g = Graph::new(store);
        let out = build(&mut g);
        g.value(out).data().iter().zip(weights.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
    };
    let grads = {
        let mut g = Graph::new(store);
        let out = build(&mut g);
        let root = g.dot(out, weights.clone());
        g.backward(root)
    };
    let h = 1e-2f32;
    for pid in 0..store.len() {
        let id = ParamId(pid);
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        for j in 0..store.get(id).len() {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + h;
            let plus = eval(store);
            store.get_mut(id).data_mut()[j] = orig - h;
            let minus = eval(store);
            store.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h as f64);
            let a = analytic.data()[j] as f64;
            let err = (a - numeric).abs() / (1.0 + a.abs().max(numeric.abs()));
            assert!(err < 2e-2, "param {pid}[{j}]: analytic {a} numeric {numeric}");
        }
    }
}

fn store_with(shapes: &[&[usize]]) -> (ParamStore, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(format!("p{i}"), random_tensor(s, &mut rng)))
        .collect();
    (store, ids)
}

#[test]
fn conv_grads() {
    for &(stride, k) in &[(1usize, 3usize), (2, 3), (1, 1)] {
        let (mut store, ids) = store_with(&[&[2, 2, 5, 4], &[3, 2, k, k], &[3]]);
        check(&mut store, |g| {
            let x = g.param(ids[0]);
            let w = g.param(ids[1]);
            let b = g.param(ids[2]);
            g.conv2d(x, w, Some(b), stride, k / 2)
        });
    }
}

#[test]
fn linear_and_channel_add_grads() {
    let (mut store, ids) = store_with(&[&[2, 3], &[4, 3], &[4], &[2, 4, 3, 3]]);
    check(&mut store, |g| {
        let x = g.param(ids[0]);
        let w = g.param(ids[1]);
        let b = g.param(ids[2]);
        let y = g.linear(x, w, b);
        let img = g.param(ids[3]);
        g.add_channel(img, y)
    });
}

#[test]
fn group_norm_silu_grads() {
    let (mut store, ids) = store_with(&[&[2, 4, 3, 3], &[4], &[4]]);
    check(&mut store, |g| {
        let x = g.param(ids[0]);
        let gamma = g.param(ids[1]);
        let beta = g.param(ids[2]);
        let y = g.group_norm(x, gamma, beta, 2);
        g.silu(y)
    });
}

#[test]
fn pool_upsample_concat_scale_grads() {
    let (mut store, ids) = store_with(&[&[1, 2, 4, 4], &[1, 3, 2, 2]]);
    check(&mut store, |g| {
        let x = g.param(ids[0]);
        let y = g.param(ids[1]);
        let p = g.avg_pool2(x);
        let c = g.concat(&[p, y]);
        let u = g.upsample2(c);
        let s = g.scale(u, 0.5);
        let x2 = g.param(ids[0]);
        let cat = g.concat(&[x2, x2]);
        let doubled = g.add(s, s);
        g.concat(&[doubled, cat])
    });
}

#[test]
fn attention_grads() {
    let (mut store, ids) = store_with(&[&[2, 12, 2, 3]]);
    check(&mut store, |g| {
        let x = g.param(ids[0]);
        g.attention(x, 2)
    });
}

#[test]
fn mse_grad() {
    let (mut store, ids) = store_with(&[&[1, 2, 2, 2]]);
    let target = Tensor::from_vec(&[1, 2, 2, 2], vec![0.5; 8]).unwrap();
    check(&mut store, |g| {
        let x = g.param(ids[0]);
        g.mse(x, target.clone())
    });
}
