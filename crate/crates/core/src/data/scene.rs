//! Procedural scenes: textured boxes, spheres and billboards on a ground plane,
//! ray cast from a pinhole camera with exact per-pixel depth and object labels.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::depth_map::DepthMap;
use crate::masks::ObjectMaskSet;
use crate::rng::{derive_rng, tags};
use crate::tensor::Tensor;

/// Depth assigned to sky and to ground beyond this distance.
pub const FAR_DEPTH: f64 = 40.0;
pub const MIN_OBJECTS: usize = 3;
pub const MAX_OBJECTS: usize = 8;

const CAMERA_HEIGHT: f64 = 1.6;
const PITCH: f64 = 0.28;
const HALF_FOV_TAN: f64 = 0.577;
const PIXEL_NOISE: f64 = 0.03;

#[derive(Debug, Clone)]
pub struct Scene {
    /// `[3, h, w]` in `[-1, 1]`.
    pub image: Tensor,
    pub depth: DepthMap,
    pub objects: ObjectMaskSet,
    pub seed: u64,
}

type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(a: V3) -> V3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

#[derive(Debug, Clone, Copy)]
enum Pattern {
    Stripes { freq: f64, axis: usize },
    Checker { freq: f64 },
    Plain,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    /// Yawed box; billboards are thin boxes.
    Box { center: V3, half: V3, yaw: f64 },
    Sphere { center: V3, radius: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Solid {
    shape: Shape,
    base: V3,
    accent: V3,
    pattern: Pattern,
}

struct Hit {
    t: f64,
    normal: V3,
    local: V3,
}

fn hit_box(origin: V3, dir: V3, center: V3, half: V3, yaw: f64) -> Option<Hit> {
    let (s, c) = yaw.sin_cos();
    let rot = |v: V3| [c * v[0] - s * v[2], v[1], s * v[0] + c * v[2]];
    let o = rot([origin[0] - center[0], origin[1] - center[1], origin[2] - center[2]]);
    let d = rot(dir);
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    let mut sign = 1.0;
    for a in 0..3 {
        if d[a].abs() < 1e-12 {
            if o[a].abs() > half[a] {
                return None;
            }
            continue;
        }
        let t1 = (-half[a] - o[a]) / d[a];
        let t2 = (half[a] - o[a]) / d[a];
        let (lo, hi, sg) = if t1 < t2 { (t1, t2, -1.0) } else { (t2, t1, 1.0) };
        if lo > t_near {
            t_near = lo;
            axis = a;
            sign = sg;
        }
        t_far = t_far.min(hi);
    }
    if t_near > t_far || t_near <= 1e-9 {
        return None;
    }
    let mut n = [0.0; 3];
    n[axis] = sign;
    // Back to world frame.
    let normal = [c * n[0] + s * n[2], n[1], -s * n[0] + c * n[2]];
    let local = [o[0] + t_near * d[0], o[1] + t_near * d[1], o[2] + t_near * d[2]];
    Some(Hit {
        t: t_near,
        normal,
        local,
    })
}

fn hit_sphere(origin: V3, dir: V3, center: V3, radius: f64) -> Option<Hit> {
    let oc = [origin[0] - center[0], origin[1] - center[1], origin[2] - center[2]];
    let b = dot(oc, dir);
    let disc = b * b - (dot(oc, oc) - radius * radius);
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    if t <= 1e-9 {
        return None;
    }
    let p = [oc[0] + t * dir[0], oc[1] + t * dir[1], oc[2] + t * dir[2]];
    let normal = [p[0] / radius, p[1] / radius, p[2] / radius];
    let local = [p[1].atan2(p[0]) * radius, p[1], p[2].atan2(p[0]) * radius];
    Some(Hit { t, normal, local })
}

impl Solid {
    fn hit(&self, origin: V3, dir: V3) -> Option<Hit> {
        match self.shape {
            Shape::Box { center, half, yaw } => hit_box(origin, dir, center, half, yaw),
            Shape::Sphere { center, radius } => hit_sphere(origin, dir, center, radius),
        }
    }

    fn albedo(&self, local: V3) -> V3 {
        let on = match self.pattern {
            Pattern::Stripes { freq, axis } => (local[axis] * freq).rem_euclid(2.0) < 1.0,
            Pattern::Checker { freq } => {
                let s = (local[0] * freq).floor() + (local[1] * freq).floor() + (local[2] * freq).floor();
                s.rem_euclid(2.0) < 1.0
            }
            Pattern::Plain => true,
        };
        if on {
            self.base
        } else {
            self.accent
        }
    }
}

fn hsv(h: f64, s: f64, v: f64) -> V3 {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i64 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn random_solid(rng: &mut ChaCha8Rng) -> Solid {
    let z = rng.random_range(3.5..11.0);
    let x = rng.random_range(-0.75..0.75) * z * HALF_FOV_TAN;
    let shape = match rng.random_range(0..3) {
        0 => {
            let half = [rng.random_range(0.4..1.2), rng.random_range(0.4..1.5), rng.random_range(0.4..1.2)];
            Shape::Box {
                center: [x, half[1], z],
                half,
                yaw: rng.random_range(0.0..std::f64::consts::FRAC_PI_2),
            }
        }
        1 => {
            let radius = rng.random_range(0.5..1.4);
            Shape::Sphere {
                center: [x, radius, z],
                radius,
            }
        }
        _ => {
            let half = [rng.random_range(0.5..1.5), rng.random_range(0.6..1.6), 0.04];
            let lift = rng.random_range(0.0..0.8);
            Shape::Box {
                center: [x, lift + half[1], z],
                half,
                yaw: rng.random_range(-0.5..0.5),
            }
        }
    };
    let hue = rng.random::<f64>();
    let base = hsv(hue, rng.random_range(0.5..0.9), rng.random_range(0.6..0.95));
    let accent = hsv((hue + rng.random_range(0.05..0.2)) % 1.0, rng.random_range(0.3..0.8), rng.random_range(0.35..0.7));
    let pattern = match rng.random_range(0..3) {
        0 => Pattern::Stripes {
            freq: rng.random_range(2.0..5.0),
            axis: rng.random_range(0..2),
        },
        1 => Pattern::Checker {
            freq: rng.random_range(1.5..4.0),
        },
        _ => Pattern::Plain,
    };
    Solid {
        shape,
        base,
        accent,
        pattern,
    }
}

struct Render {
    rgb: Vec<V3>,
    depth: Vec<f64>,
    labels: Vec<u16>,
}

fn render(solids: &[Solid], size: usize) -> Render {
    let origin = [0.0, CAMERA_HEIGHT, 0.0];
    let (sp, cp) = PITCH.sin_cos();
    let fwd = [0.0, -sp, cp];
    let up = [0.0, cp, sp];
    let light = normalize([0.4, 0.8, -0.3]);
    let n = size * size;
    let mut out = Render {
        rgb: vec![[0.0; 3]; n],
        depth: vec![FAR_DEPTH; n],
        labels: vec![0; n],
    };
    for y in 0..size {
        for x in 0..size {
            let u = ((x as f64 + 0.5) / size as f64 * 2.0 - 1.0) * HALF_FOV_TAN;
            let v = (1.0 - (y as f64 + 0.5) / size as f64 * 2.0) * HALF_FOV_TAN;
            let dir = normalize([u, fwd[1] + v * up[1], fwd[2] + v * up[2]]);
            let along = dot(dir, fwd);
            let i = y * size + x;

            let mut best: Option<(usize, Hit)> = None;
            for (k, s) in solids.iter().enumerate() {
                if let Some(h) = s.hit(origin, dir) {
                    if best.as_ref().is_none_or(|(_, b)| h.t < b.t) {
                        best = Some((k, h));
                    }
                }
            }
            let ground_t = if dir[1] < 0.0 { Some(-CAMERA_HEIGHT / dir[1]) } else { None };
            match best {
                Some((k, h)) if ground_t.is_none_or(|g| h.t < g) && h.t * along < FAR_DEPTH => {
                    let shade = 0.35 + 0.65 * dot(h.normal, light).max(0.0);
                    let a = solids[k].albedo(h.local);
                    out.rgb[i] = a.map(|c| c * shade);
                    out.depth[i] = h.t * along;
                    out.labels[i] = k as u16 + 1;
                }
                _ => match ground_t {
                    Some(t) if t * along < FAR_DEPTH => {
                        let gx = t * dir[0];
                        let gz = t * dir[2];
                        let tile = ((gx * 0.5).floor() + (gz * 0.5).floor()).rem_euclid(2.0) < 1.0;
                        let base = if tile { [0.42, 0.38, 0.30] } else { [0.36, 0.40, 0.28] };
                        let haze = (t * along / FAR_DEPTH).min(1.0);
                        out.rgb[i] = [0, 1, 2].map(|c| base[c] * (1.0 - haze) + 0.7 * haze);
                        out.depth[i] = t * along;
                    }
                    _ => {
                        let g = (v / HALF_FOV_TAN).clamp(-1.0, 1.0);
                        out.rgb[i] = [0.55 - 0.2 * g, 0.7 - 0.15 * g, 0.92];
                    }
                },
            }
        }
    }
    out
}

/// Deterministic scene for `seed` at `size x size` pixels.
pub fn synth_scene(seed: u64, size: usize) -> Scene {
    assert!(size >= 8, "scene size too small");
    let mut rng = derive_rng(seed, &[tags::SCENE]);
    let min_visible = (size * size / 300).max(4);
    let k = rng.random_range(MIN_OBJECTS..=MAX_OBJECTS);
    let mut solids: Vec<Solid> = Vec::with_capacity(k);
    // Place objects one at a time, redrawing any that end up mostly hidden.
    let mut rendered = render(&solids, size);
    while solids.len() < k {
        let candidate = random_solid(&mut rng);
        solids.push(candidate);
        let r = render(&solids, size);
        let mut counts = vec![0usize; solids.len() + 1];
        r.labels.iter().for_each(|&l| counts[l as usize] += 1);
        if counts[1..].iter().all(|&c| c >= min_visible) {
            rendered = r;
        } else {
            solids.pop();
        }
    }

    let noise = Normal::new(0.0, PIXEL_NOISE).expect("noise std");
    let n = size * size;
    let mut image = Tensor::zeros(&[3, size, size]);
    {
        let d = image.data_mut();
        for i in 0..n {
            for c in 0..3 {
                let v = rendered.rgb[i][c] + noise.sample(&mut rng);
                d[c * n + i] = (v.clamp(0.0, 1.0) * 2.0 - 1.0) as f32;
            }
        }
    }
    let depth = DepthMap::dense(size, size, rendered.depth).expect("scene depth");
    let objects = ObjectMaskSet::from_index_map(size, size, &rendered.labels, 1).expect("scene masks");
    Scene {
        image,
        depth,
        objects,
        seed,
    }
}
