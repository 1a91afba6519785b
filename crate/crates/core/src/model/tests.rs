use super::*;
use crate::config::{Config, HeadsMode, PoolingMode};
use crate::rng::Rng;
use crate::video::VideoTensor;

fn random_clip(frames: usize, size: usize, seed: u64) -> VideoTensor {
    let mut rng = Rng::new(seed);
    let data = (0..frames * size * size * 3).map(|_| rng.uniform() as f32).collect();
    VideoTensor::new(frames, size, size, 3, 8.0, data).unwrap()
}

fn perturb_frames(clip: &VideoTensor, frames: &[usize], seed: u64) -> VideoTensor {
    let mut rng = Rng::new(seed);
    let mut out = clip.clone();
    for &t in frames {
        for v in out.frame_mut(t) {
            *v = rng.uniform() as f32;
        }
    }
    out
}

fn changed_time_slices(a: &TokenGrid<f32>, b: &TokenGrid<f32>) -> Vec<usize> {
    (0..a.grid.t).filter(|&t| a.time_slice(t) != b.time_slice(t)).collect()
}

#[test]
fn token_grid_arithmetic() {
    let desk = ModelConfig::from_config(&Config::default());
    assert_eq!(desk.token_grid(), Grid { t: 4, h: 8, w: 8 });
    let full = ModelConfig::from_config(&Config {
        temporal_kernel: 3,
        ..Config::full_scale()
    });
    assert_eq!(full.token_grid(), Grid { t: 8, h: 56, w: 56 });
    let full2 = ModelConfig::from_config(&Config::full_scale());
    assert_eq!(full2.token_grid().t, 8);
    let grids: Vec<_> = full.block_specs().iter().map(|b| b.q_pool.output).collect();
    assert_eq!(grids.first().unwrap().h, 56);
    assert_eq!(grids.last().unwrap().h, 7);
}

#[test]
fn desk_repr_dimension_and_determinism() {
    let enc = Encoder::<f32>::init(ModelConfig::from_config(&Config::default()), &mut Rng::new(0));
    let clip = random_clip(8, 32, 1);
    let a = enc.forward(&clip).unwrap();
    let b = enc.forward(&clip).unwrap();
    assert_eq!(a.repr.len(), 128);
    assert_eq!(a.repr, b.repr);
    assert_eq!(enc.forward_calls(), 2);
}

#[test]
fn desk_parameter_count_is_stable() {
    let enc = Encoder::<f32>::init(ModelConfig::from_config(&Config::default()), &mut Rng::new(0));
    assert_eq!(enc.n_parameters(), DESK_PARAMETERS);
}

// cube 1552, cls 16, pos 1088, blocks 292720, final norm 256, two heads 18592
const DESK_PARAMETERS: usize = 314_224;

#[test]
fn wrong_geometry_is_a_shape_error() {
    let enc = Encoder::<f32>::init(ModelConfig::micro(), &mut Rng::new(0));
    let err = enc.forward(&random_clip(6, 8, 0)).err().unwrap();
    assert!(matches!(err, crate::Error::Shape { .. }), "{err}");
}

#[test]
fn kernel_two_keeps_groups_local() {
    let enc = Encoder::<f32>::init(ModelConfig::from_config(&Config::default()), &mut Rng::new(3));
    let clip = random_clip(8, 32, 4);
    let base = enc.cube_project(&clip).unwrap();
    for g in 0..4 {
        let changed = enc
            .cube_project(&perturb_frames(&clip, &[2 * g, 2 * g + 1], 10 + g as u64))
            .unwrap();
        assert_eq!(changed_time_slices(&base, &changed), vec![g]);
    }
}

#[test]
fn kernel_three_leaks_across_groups() {
    let cfg = Config {
        temporal_kernel: 3,
        ..Config::default()
    };
    let enc = Encoder::<f32>::init(ModelConfig::from_config(&cfg), &mut Rng::new(3));
    let clip = random_clip(8, 32, 4);
    let base = enc.cube_project(&clip).unwrap();
    let changed = enc.cube_project(&perturb_frames(&clip, &[2, 3], 5)).unwrap();
    assert_eq!(changed_time_slices(&base, &changed), vec![1, 2]);
}

#[test]
fn heads_are_unit_norm_and_shared_heads_agree() {
    let cfg = ModelConfig {
        heads_mode: HeadsMode::Shared,
        ..ModelConfig::micro()
    };
    let enc = Encoder::<f64>::init(cfg, &mut Rng::new(0));
    let mut rng = Rng::new(1);
    for _ in 0..10 {
        let r: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let (zv, _) = enc.head_forward(HeadKind::Visual, &r).unwrap();
        let (zt, _) = enc.head_forward(HeadKind::Temporal, &r).unwrap();
        assert_eq!(zv, zt);
        let n: f64 = zv.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-5);
    }
}

#[test]
fn zero_repr_with_zero_bias_is_degenerate() {
    let enc = Encoder::<f64>::init(ModelConfig::micro(), &mut Rng::new(0));
    let err = enc.head_forward(HeadKind::Visual, &[0.0; 8]).err().unwrap();
    assert!(matches!(err, crate::Error::DegenerateEmbedding));
}

/// Central differences of `loss` with respect to every parameter.
fn finite_difference(
    enc: &Encoder<f64>,
    loss: &dyn Fn(&Encoder<f64>) -> f64,
    step: f64,
) -> ParamSet<f64> {
    let mut grads = enc.zero_grads();
    let mut probe = enc.clone();
    for i in 0..enc.params().len() {
        for j in 0..enc.params().data(i).len() {
            let orig = probe.params().data(i)[j];
            probe.params_mut().data_mut(i)[j] = orig + step;
            let up = loss(&probe);
            probe.params_mut().data_mut(i)[j] = orig - step;
            let down = loss(&probe);
            probe.params_mut().data_mut(i)[j] = orig;
            grads.data_mut(i)[j] = (up - down) / (2.0 * step);
        }
    }
    grads
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn check_gradients(cfg: ModelConfig) {
    let (cfg_frames, cfg_size) = (cfg.frames, cfg.size);
    let mut rng = Rng::new(7);
    let mut enc = Encoder::<f64>::init(cfg, &mut rng);
    // larger weights make every path carry signal
    for i in 0..enc.params().len() {
        for v in enc.params_mut().data_mut(i) {
            *v += rng.normal() * 0.3;
        }
    }
    let clip = random_clip(cfg_frames, cfg_size, 2);
    let target: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
    let loss = |e: &Encoder<f64>| -> f64 {
        let f = e.forward(&clip).unwrap();
        let (z, _) = e.head_forward(HeadKind::Temporal, &f.repr).unwrap();
        z.iter().zip(&target).map(|(a, b)| a * b).sum()
    };
    let f = enc.forward_train(&clip).unwrap();
    let (_, hc) = enc.head_forward(HeadKind::Temporal, &f.repr).unwrap();
    let mut grads = enc.zero_grads();
    let d_repr = enc.head_backward(HeadKind::Temporal, &hc, &target, &mut grads);
    enc.backward(&f, &d_repr, &mut grads);
    let fd = finite_difference(&enc, &loss, 1e-5);
    for i in 0..grads.len() {
        let name = grads.name(i);
        if name.starts_with("head_v") {
            assert!(grads.data(i).iter().all(|&g| g == 0.0), "{name}");
            continue;
        }
        let err = relative_error(grads.data(i), fd.data(i));
        assert!(err < 1e-5, "{name}: relative error {err}");
    }
}

#[test]
fn gradients_match_finite_differences_cls() {
    check_gradients(ModelConfig::micro());
}

#[test]
fn gradients_match_finite_differences_avg_pooling_odd_grid() {
    check_gradients(ModelConfig {
        pooling: PoolingMode::Avg,
        size: 12,
        ..ModelConfig::micro()
    });
}
