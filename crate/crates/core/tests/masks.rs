use diffdepth::cluster::{cosine_similarity, kmeans};
use diffdepth::masks::*;
use diffdepth::rng::derive_rng;
use diffdepth::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = derive_rng(seed, &[]);
    let data: Vec<f32> = (0..3 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(&[3, h, w], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn occlusion_is_bounded_subset_and_deterministic(seed in any::<u64>(), n in 1usize..120, k in 1usize..7, fraction in 0.0f64..0.6) {
        let img = random_image(12, 12, seed);
        let mut rng = derive_rng(seed, &[1]);
        let mut pixels: Vec<usize> = (0..144).collect();
        rand::seq::SliceRandom::shuffle(pixels.as_mut_slice(), &mut rng);
        pixels.truncate(n);
        let cfg = OcclusionConfig { k, fraction };
        let a = occlusion_mask(&img, &pixels, cfg, seed, 3);
        if n < k {
            prop_assert!(a.is_none());
        } else {
            let a = a.unwrap();
            prop_assert_eq!(a.len(), n);
            let count = a.iter().filter(|&&f| f).count();
            prop_assert!(count <= (fraction * n as f64).ceil() as usize);
            prop_assert_eq!(Some(a), occlusion_mask(&img, &pixels, cfg, seed, 3));
        }
    }

    #[test]
    fn kmeans_assigns_every_point_to_nearest_center(seed in any::<u64>(), extra in 0usize..80, k in 1usize..6) {
        let n = k + extra;
        let mut rng = derive_rng(seed, &[]);
        let pts: Vec<f64> = (0..n * 3).map(|_| rng.random::<f64>()).collect();
        let km = kmeans(&pts, 3, k, seed, 0);
        prop_assert_eq!(km.assignments.len(), n);
        for i in 0..n {
            let p = &pts[i * 3..i * 3 + 3];
            let d = |c: &[f64]| p.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let own = d(km.center(km.assignments[i]));
            for j in 0..km.centers.len() / 3 {
                // Centers move by less than the convergence tolerance after the last assignment.
                prop_assert!(own <= d(km.center(j)) + 1e-5);
            }
        }
    }
}

#[test]
fn single_cluster_flags_the_least_aligned_colours() {
    // k = 1: the center is the mean colour; oracle ranks pixels by cosine to it.
    let img = random_image(6, 6, 42);
    let pixels: Vec<usize> = (0..36).collect();
    let cfg = OcclusionConfig { k: 1, fraction: 0.25 };
    let flags = occlusion_mask(&img, &pixels, cfg, 0, 0).unwrap();
    let d = img.data();
    let rgb: Vec<[f64; 3]> = (0..36).map(|p| [0, 1, 2].map(|c| (d[c * 36 + p] as f64 + 1.0) / 2.0)).collect();
    let mean = [0, 1, 2].map(|c| rgb.iter().map(|v| v[c]).sum::<f64>() / 36.0);
    let sims: Vec<f64> = rgb.iter().map(|v| cosine_similarity(v, &mean)).collect();
    let mut order: Vec<usize> = (0..36).collect();
    order.sort_by(|&a, &b| sims[a].total_cmp(&sims[b]));
    let expected: Vec<bool> = (0..36).map(|p| order[..9].contains(&p)).collect();
    assert_eq!(flags, expected);
}

#[test]
fn masks_round_trip_through_png() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.png");
    let mut map = vec![0u16; 64];
    map[..10].fill(1);
    map[20..23].fill(7);
    map[40..60].fill(300);
    let set = ObjectMaskSet::from_index_map(8, 8, &map, 4).unwrap();
    assert_eq!(set.k(), 2);
    assert_eq!(set.dropped, 1);
    set.save(&path).unwrap();
    let back = load_object_masks(&path, 1).unwrap();
    assert_eq!(back.to_index_map(), set.to_index_map());
}

#[test]
fn refinement_skips_tiny_objects() {
    let img = random_image(4, 4, 1);
    let mut map = vec![0u16; 16];
    map[..3].fill(1);
    map[8..16].fill(2);
    let mut set = ObjectMaskSet::from_index_map(4, 4, &map, 1).unwrap();
    set.refine_occlusion(&img, OcclusionConfig { k: 5, fraction: 0.2 }, 0).unwrap();
    assert_eq!(set.occlusion_skipped, 1);
    assert!(set.objects[0].occluded.iter().all(|&o| !o));
    assert!(set.refine_occlusion(&random_image(5, 5, 0), OcclusionConfig::default(), 0).is_err());
}
