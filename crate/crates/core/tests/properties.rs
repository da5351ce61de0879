use proptest::prelude::*;
use sceneflow_core::embedder::{latent_distance, CloudEmbedder, EmbedderConfig};
use sceneflow_core::flowmodels::{transform_cloud, ExtractorConfig, FlowExtractor, ReferenceExtractor};
use sceneflow_core::losses::{
    chamfer, cycle_consistency, loss_embedder, loss_flow_extractor, multiscale_triplet, partition_indices, CycleTerms,
    LossConfig, Multiscale,
};
use sceneflow_core::sandbox::{generate_pair, MotionBounds, SceneSpec, ShapeFamily};
use sceneflow_core::{Mechanism, PointCloud};

fn coord() -> impl Strategy<Value = f64> {
    -3.0..3.0f64
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    [coord(), coord(), coord()]
}

fn cloud(min: usize, max: usize) -> impl Strategy<Value = PointCloud<f64>> {
    prop::collection::vec(point(), min..max).prop_map(|p| PointCloud::new(p).unwrap())
}

fn pyramid(levels: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0..2.0f64, dim), levels)
}

fn multiscale() -> impl Strategy<Value = Multiscale> {
    prop::sample::select(Multiscale::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn triplet_losses_are_nonnegative(
        a in pyramid(4, 8), p in pyramid(4, 8), n in pyramid(4, 8),
        margin in 0.0..2.0f64, ms in multiscale(),
    ) {
        let config = LossConfig { margin, multiscale: ms, ..LossConfig::default() };
        prop_assert!(multiscale_triplet(&a, &p, &n, &config).unwrap() >= 0.0);
        let dist = |x: &[Vec<f64>], y: &[Vec<f64>]| -> Vec<f64> {
            x.iter().zip(y).map(|(u, v)| u.iter().zip(v).map(|(s, t)| (s - t).powi(2)).sum::<f64>().sqrt()).collect()
        };
        prop_assert!(loss_embedder(&dist(&a, &p), &dist(&a, &n), &config).unwrap() >= 0.0);
    }

    #[test]
    fn losses_pull_in_opposite_directions(
        r_p in prop::collection::vec(0.0..3.0f64, 4),
        r_n in prop::collection::vec(0.0..3.0f64, 4),
        level in 0usize..4, bump in 0.0..1.0f64, cc in -5.0..5.0f64, ms in multiscale(),
    ) {
        let config = LossConfig { multiscale: ms, ..LossConfig::default() };
        let mut raised = r_n.clone();
        raised[level] += bump;
        let h0 = loss_flow_extractor(&r_n, cc, &config).unwrap();
        let h1 = loss_flow_extractor(&raised, cc, &config).unwrap();
        prop_assert!(h1 >= h0);
        let g0 = loss_embedder(&r_p, &r_n, &config).unwrap();
        let g1 = loss_embedder(&r_p, &raised, &config).unwrap();
        prop_assert!(g1 <= g0);
    }

    #[test]
    fn cycle_term_lower_bound(
        forward in prop::collection::vec(point(), 1..32),
        backward in prop::collection::vec(point(), 32),
    ) {
        let n = forward.len();
        let terms = CycleTerms::COSINE_L2;
        let value = cycle_consistency(&forward, &backward[..n], terms, 1e-8).unwrap();
        prop_assert!(value >= -(n as f64) - 1e-9);
        let opposite: Vec<[f64; 3]> = forward.iter().map(|f| [-f[0], -f[1], -f[2]]).collect();
        let all_moving = forward.iter().all(|f| f.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-8);
        let at_bound = cycle_consistency(&forward, &opposite, terms, 1e-8).unwrap();
        if all_moving {
            prop_assert!((at_bound + n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn chamfer_is_symmetric(a in cloud(1, 40), b in cloud(1, 40)) {
        prop_assert_eq!(chamfer(&a, &b), chamfer(&b, &a));
    }

    #[test]
    fn partitions_split_into_disjoint_halves(n in 2usize..300, seed in any::<u64>()) {
        let (a, b) = partition_indices(n, seed).unwrap();
        prop_assert_eq!(a.len(), n.div_ceil(2));
        prop_assert_eq!(b.len(), n / 2);
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn gamma_is_nonincreasing(ms in multiscale()) {
        let config = LossConfig { multiscale: ms, ..LossConfig::default() };
        for l in 0..5 {
            prop_assert!(config.gamma(l + 1) <= config.gamma(l));
            prop_assert!(config.gamma(l) >= 0.0);
        }
        prop_assert_eq!(config.gamma(0), 1.0);
    }
}

fn spec_strategy() -> impl Strategy<Value = SceneSpec> {
    (
        1usize..4,
        16usize..96,
        prop::sample::select(vec![Mechanism::Correspondence, Mechanism::Resampling]),
        prop::sample::select(vec![ShapeFamily::Sphere, ShapeFamily::Box, ShapeFamily::Cylinder, ShapeFamily::Mixed]),
        0.0..1.0f64,
        0.0..1.0f64,
        any::<u64>(),
    )
        .prop_map(|(n_objects, points, mechanism, shape, rot, tr, seed)| SceneSpec {
            n_objects,
            points_per_cloud: points,
            mechanism,
            shape_family: shape,
            motion: MotionBounds { max_rotation: rot, max_translation: tr },
            seed,
            ..SceneSpec::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_objects_move_rigidly(spec in spec_strategy()) {
        let pair = generate_pair::<f64>(&spec).unwrap();
        prop_assert_eq!(pair.gt_flow.len(), pair.frame1.len());
        let p = pair.frame1.points();
        let f = pair.gt_flow.vectors();
        let mut start = 0;
        for &size in &pair.meta.object_sizes {
            for i in start..start + size {
                for j in (i + 1)..start + size {
                    let before: f64 = (0..3).map(|k| (p[i][k] - p[j][k]).powi(2)).sum::<f64>().sqrt();
                    let after: f64 = (0..3)
                        .map(|k| ((p[i][k] + f[i][k]) - (p[j][k] + f[j][k])).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    prop_assert!((before - after).abs() < 1e-5);
                }
            }
            start += size;
        }
        prop_assert_eq!(start, pair.frame1.len());
        if spec.mechanism == Mechanism::Correspondence {
            prop_assert_eq!(pair.frame2.len(), pair.frame1.len());
            for ((a, b), v) in p.iter().zip(pair.frame2.points()).zip(f) {
                for k in 0..3 {
                    prop_assert_eq!(b[k], a[k] + v[k]);
                }
            }
        }
    }

    #[test]
    fn generation_is_a_function_of_the_spec(spec in spec_strategy()) {
        prop_assert_eq!(generate_pair::<f32>(&spec).unwrap(), generate_pair::<f32>(&spec).unwrap());
    }
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    idx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn latent_distance_is_a_metric(
        a in cloud(32, 48), b in cloud(32, 48), c in cloud(32, 48), seed in any::<u64>(),
    ) {
        let e = CloudEmbedder::<f64>::new(EmbedderConfig::tiny(), seed).unwrap();
        let (za, zb, zc) = (e.embed(&a).unwrap(), e.embed(&b).unwrap(), e.embed(&c).unwrap());
        for l in 0..za.levels.len() {
            let ab = latent_distance(&za, &zb, l).unwrap();
            let bc = latent_distance(&zb, &zc, l).unwrap();
            let ac = latent_distance(&za, &zc, l).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, latent_distance(&zb, &za, l).unwrap());
            prop_assert_eq!(latent_distance(&za, &za, l).unwrap(), 0.0);
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn embedding_ignores_point_order(p in cloud(32, 64), seed in any::<u64>(), perm_seed in any::<u64>()) {
        let e = CloudEmbedder::<f64>::new(EmbedderConfig::tiny(), seed).unwrap();
        let base = e.embed(&p).unwrap();
        let moved = e.embed(&p.permuted(&shuffled(p.len(), perm_seed))).unwrap();
        for (x, y) in base.levels.iter().zip(&moved.levels) {
            for (u, v) in x.iter().zip(y) {
                prop_assert!((u - v).abs() <= 1e-5 * u.abs().max(v.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn transformed_cloud_keeps_frame1_size(a in cloud(16, 40), b in cloud(16, 40), seed in any::<u64>()) {
        let h = ReferenceExtractor::<f64>::new(ExtractorConfig::tiny(), seed).unwrap();
        let flow = h.predict_flow(&a, &b).unwrap();
        prop_assert_eq!(transform_cloud(&a, &flow).unwrap().len(), a.len());
    }

    #[test]
    fn shifting_both_frames_keeps_the_flow(
        a in cloud(16, 40), b in cloud(16, 40), shift in point(), seed in any::<u64>(),
    ) {
        let mut h = ReferenceExtractor::<f64>::new(ExtractorConfig::tiny(), seed).unwrap();
        // a nonzero head so the check is not trivially satisfied
        let mut flat = h.params().flatten();
        let mut rng = seed;
        for w in flat.iter_mut().filter(|w| **w == 0.0) {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *w = ((rng >> 33) as f64 / (1u64 << 31) as f64) - 0.5;
        }
        h.params_mut().assign_flat(&flat).unwrap();
        let base = h.predict_flow(&a, &b).unwrap();
        let moved = h.predict_flow(&a.translated(shift), &b.translated(shift)).unwrap();
        for (u, v) in base.vectors().iter().zip(moved.vectors()) {
            for k in 0..3 {
                prop_assert!((u[k] - v[k]).abs() < 1e-4);
            }
        }
    }
}
