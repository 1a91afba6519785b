//! Property tests over the building blocks.

use std::collections::{HashSet, VecDeque};

use proptest::prelude::*;

use scvrl_core::augment::{group_shuffle, sample_negative_perms, GroupPermutation};
use scvrl_core::model::{Encoder, ModelConfig};
use scvrl_core::momentum::{ema_params, MemoryBank};
use scvrl_core::motion::window_probabilities;
use scvrl_core::objective::{info_nce, info_nce_grad, ContrastiveBatch};
use scvrl_core::trainer::lr_at;
use scvrl_core::{Config, Rng, VideoTensor};

fn clip(frames: usize, size: usize, seed: u64) -> VideoTensor {
    let mut rng = Rng::new(seed);
    let data = (0..frames * size * size * 3).map(|_| rng.uniform() as f32).collect();
    VideoTensor::new(frames, size, size, 3, 8.0, data).unwrap()
}

fn unit(rng: &mut Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn negative_perms_are_distinct_and_never_identity(n_groups in 2usize..=6, want in 1usize..24, seed: u64) {
        let n = want.min(factorial(n_groups) - 1);
        let perms = sample_negative_perms(2, n_groups, n, &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(perms.len(), n);
        let mut seen = HashSet::new();
        for p in &perms {
            prop_assert!(!p.is_identity());
            let mut sorted = p.order().to_vec();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..n_groups).collect::<Vec<_>>());
            prop_assert!(seen.insert(p.order().to_vec()));
        }
    }

    #[test]
    fn too_many_negatives_is_an_error(n_groups in 2usize..=4, seed: u64) {
        let n = factorial(n_groups);
        prop_assert!(sample_negative_perms(2, n_groups, n, &mut Rng::new(seed)).is_err());
    }

    #[test]
    fn shuffle_commutes_with_pixel_maps_and_inverts(n_groups in 2usize..=4, g in 1usize..=3, seed: u64) {
        let c = clip(n_groups * g, 4, seed);
        let mut rng = Rng::new(seed ^ 1);
        let mut order: Vec<usize> = (0..n_groups).collect();
        rng.shuffle(&mut order);
        let perm = GroupPermutation::new(g, order).unwrap();
        let map = |v: &VideoTensor| {
            let data = v.data().iter().map(|x| 1.0 - x * x).collect();
            VideoTensor::new(v.frames(), v.height(), v.width(), v.channels(), v.fps(), data).unwrap()
        };
        let a = group_shuffle(&map(&c), &perm).unwrap();
        let b = map(&group_shuffle(&c, &perm).unwrap());
        prop_assert_eq!(a.data(), b.data());
        let back = group_shuffle(&group_shuffle(&c, &perm).unwrap(), &perm.inverse()).unwrap();
        prop_assert_eq!(back.data(), c.data());
        // frames inside a group keep their order
        let s = group_shuffle(&c, &perm).unwrap();
        for (j, &src) in perm.order().iter().enumerate() {
            for k in 0..g {
                prop_assert_eq!(s.frame(j * g + k), c.frame(src * g + k));
            }
        }
    }

    #[test]
    fn window_probabilities_are_a_shift_invariant_softmax(
        m in prop::collection::vec(0.0f64..10.0, 1..8),
        shift in -50.0f64..50.0,
        beta in 0.1f64..20.0,
    ) {
        let p = window_probabilities(&m, beta);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = m.iter().map(|x| x + shift).collect();
        let q = window_probabilities(&shifted, beta);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for i in 0..m.len() {
            for j in 0..m.len() {
                if m[i] > m[j] {
                    prop_assert!(p[i] > p[j]);
                }
            }
        }
        let u = window_probabilities(&m, f64::INFINITY);
        prop_assert!(u.iter().all(|&x| x == 1.0 / m.len() as f64));
    }

    #[test]
    fn info_nce_is_positive_and_gradients_agree(d in 2usize..10, n in 1usize..10, tau in 0.05f64..2.0, seed: u64) {
        let mut rng = Rng::new(seed);
        let anchor = unit(&mut rng, d);
        let positive = unit(&mut rng, d);
        let negatives: Vec<f64> = (0..n).flat_map(|_| unit(&mut rng, d)).collect();
        let batch = ContrastiveBatch::new(anchor.clone(), positive, negatives).unwrap();
        let l = info_nce(&batch, tau).unwrap();
        prop_assert!(l > 0.0 && l.is_finite());
        let g = info_nce_grad(&batch, tau).unwrap();
        prop_assert!((g.loss - l).abs() <= 1e-12 * l.max(1.0));
        // directional derivative along the anchor against a central difference
        let dir = unit(&mut rng, d);
        let h = 1e-6;
        let at = |s: f64| {
            let a: Vec<f64> = anchor.iter().zip(&dir).map(|(x, y)| x + s * y).collect();
            info_nce(&ContrastiveBatch::new(a, batch.positive.clone(), batch.negatives.clone()).unwrap(), tau).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let an: f64 = g.d_anchor.iter().zip(&dir).map(|(x, y)| x * y).sum();
        prop_assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "fd {} analytic {}", fd, an);
    }

    #[test]
    fn bank_matches_a_shadow_queue(capacity in 1usize..20, batches in prop::collection::vec(0usize..7, 1..30), seed: u64) {
        let d = 3;
        let mut rng = Rng::new(seed);
        let mut bank = MemoryBank::<f64>::new(capacity, d).unwrap();
        let mut shadow: VecDeque<Vec<f64>> = VecDeque::new();
        for b in batches {
            let keys: Vec<Vec<f64>> = (0..b).map(|_| unit(&mut rng, d)).collect();
            bank.enqueue(&keys).unwrap();
            for k in keys {
                if shadow.len() == capacity {
                    shadow.pop_front();
                }
                shadow.push_back(k);
            }
            prop_assert_eq!(bank.count(), shadow.len());
            if !shadow.is_empty() {
                let snap = bank.negatives().unwrap();
                let flat: Vec<f64> = shadow.iter().flatten().copied().collect();
                prop_assert_eq!(snap.data, flat);
            }
        }
    }

    #[test]
    fn ema_contracts_towards_the_online_weights(m in 0.0f64..=1.0, seed: u64) {
        let cfg = ModelConfig::micro();
        let online = Encoder::<f64>::init(cfg.clone(), &mut Rng::new(seed));
        let mut momentum = Encoder::<f64>::init(cfg, &mut Rng::new(seed ^ 7));
        let before = momentum.params().distance(online.params());
        let mut p = momentum.params().clone();
        ema_params(&mut p, online.params(), m).unwrap();
        *momentum.params_mut() = p;
        let after = momentum.params().distance(online.params());
        prop_assert!((after - m * before).abs() <= 1e-12 * before.max(1.0));
    }

    #[test]
    fn kernel_two_cube_projection_is_group_local(group in 0usize..4, seed: u64) {
        let enc = Encoder::<f32>::init(ModelConfig::from_config(&Config::default()), &mut Rng::new(seed));
        let base = clip(8, 32, seed);
        let mut pert = base.clone();
        let mut rng = Rng::new(seed ^ 3);
        for t in [2 * group, 2 * group + 1] {
            for v in pert.frame_mut(t) {
                *v = rng.uniform() as f32;
            }
        }
        let a = enc.cube_project(&base).unwrap();
        let b = enc.cube_project(&pert).unwrap();
        for t in 0..4 {
            prop_assert_eq!(a.time_slice(t) == b.time_slice(t), t != group);
        }
    }

    #[test]
    fn schedule_stays_between_its_endpoints(step in 0u64..=2000) {
        let cfg = Config::default();
        let lr = lr_at(step, &cfg);
        prop_assert!(lr >= cfg.lr_end.min(cfg.lr_warm) - 1e-18);
        prop_assert!(lr <= cfg.lr_peak + 1e-18);
    }
}
