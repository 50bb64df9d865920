//! Deterministic k-means over small point sets and 4-connected component
//! statistics for label maps.

use rand::Rng;

use crate::rng::{derive_rng, tags};

pub const MAX_ITERATIONS: usize = 100;
pub const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KMeans {
    pub dim: usize,
    /// `k * dim` row-major centers.
    pub centers: Vec<f64>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

impl KMeans {
    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm on `points` (row-major, `dim` columns). `stream`
/// separates independent runs sharing one seed.
///
/// The first center is a seeded uniform pick; each further center is the point
/// farthest from all chosen centers (lowest index on ties). Stops after
/// [`MAX_ITERATIONS`] or when no center moves more than [`CONVERGENCE_TOL`].
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64, stream: u64) -> KMeans {
    assert!(dim > 0 && points.len() % dim == 0);
    let n = points.len() / dim;
    assert!(k >= 1 && n >= k, "k-means needs at least k points");
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut rng = derive_rng(seed, &[tags::KMEANS, stream]);
    let first = rng.random_range(0..n);
    let mut centers = point(first).to_vec();
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(point(i), point(first))).collect();
    for _ in 1..k {
        let mut best = 0;
        for i in 1..n {
            if nearest[i] > nearest[best] {
                best = i;
            }
        }
        let c = point(best).to_vec();
        for i in 0..n {
            nearest[i] = nearest[i].min(dist2(point(i), &c));
        }
        centers.extend_from_slice(&c);
    }

    let mut assignments = vec![0usize; n];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        for i in 0..n {
            let p = point(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..k {
                let d = dist2(p, &centers[j * dim..(j + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assignments[i] = best;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let j = assignments[i];
            counts[j] += 1;
            for (s, v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        let mut moved = 0.0f64;
        for j in 0..k {
            // An empty cluster keeps its previous center.
            if counts[j] == 0 {
                continue;
            }
            let c = &mut centers[j * dim..(j + 1) * dim];
            let mut shift = 0.0;
            for (cv, s) in c.iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                let nv = s / counts[j] as f64;
                shift += (nv - *cv) * (nv - *cv);
                *cv = nv;
            }
            moved = moved.max(shift.sqrt());
        }
        if moved < CONVERGENCE_TOL {
            break;
        }
    }
    KMeans {
        dim,
        centers,
        assignments,
        iterations,
    }
}

/// Cosine similarity; zero-vs-zero is 1, zero-vs-nonzero is 0.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb),
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ComponentStats {
    pub components: usize,
    pub mean_area: f64,
}

/// 4-connected components of equal labels over an `h x w` label map.
pub fn connected_components(labels: &[usize], h: usize, w: usize) -> ComponentStats {
    assert_eq!(labels.len(), h * w);
    let mut seen = vec![false; h * w];
    let mut stack = Vec::new();
    let mut components = 0;
    for start in 0..h * w {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if !seen[j] && labels[j] == labels[start] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
    }
    ComponentStats {
        components,
        mean_area: if components == 0 { 0.0 } else { (h * w) as f64 / components as f64 },
    }
}
