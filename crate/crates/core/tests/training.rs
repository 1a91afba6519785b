//! Trainer contracts: determinism, checkpoints, routing and bookkeeping.

use scvrl_core::config::Objective;
use scvrl_core::model::HeadKind;
use scvrl_core::synthdata::{generate, Dataset, DatasetSpec};
use scvrl_core::trainer::{lr_at, pretrain, StepMetrics, TrainState};
use scvrl_core::{Config, Error, Scalar};

fn small_config(objective: Objective) -> Config {
    Config {
        objective,
        bank_size: 16,
        bank_warmup_min: 8,
        batch_size: 4,
        warmup_steps: 4,
        total_steps: 20,
        ..Config::default()
    }
}

fn data(n: usize, seed: u64) -> Dataset {
    generate(&DatasetSpec {
        n_videos: n,
        seed,
        ..DatasetSpec::default()
    })
    .unwrap()
}

fn run(cfg: &Config, data: &Dataset, steps: u64) -> (TrainState<f32>, Vec<StepMetrics>) {
    let mut metrics = Vec::new();
    let st = pretrain::<f32>(cfg, data, steps, None, &mut |m| metrics.push(m.clone())).unwrap();
    (st, metrics)
}

#[test]
fn same_seed_gives_identical_streams_and_states() {
    let cfg = small_config(Objective::Scvrl);
    let d = data(12, 1);
    let (a, ma) = run(&cfg, &d, 6);
    let (b, mb) = run(&cfg, &d, 6);
    assert_eq!(ma, mb);
    assert_eq!(a.to_bytes(), b.to_bytes());
    let (c, _) = run(&Config { seed: 1, ..cfg }, &d, 6);
    assert_ne!(a.to_bytes(), c.to_bytes());
}

#[test]
fn resumed_training_is_bit_exact() {
    let cfg = small_config(Objective::Scvrl);
    let d = data(12, 2);
    let (full, mfull) = run(&cfg, &d, 8);
    let (half, mut mhalf) = run(&cfg, &d, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.bin");
    half.save(&path).unwrap();
    let mut resumed = TrainState::<f32>::load(&path).unwrap();
    resumed.run(&d, 8, None, &mut |m| mhalf.push(m.clone())).unwrap();
    assert_eq!(mhalf, mfull);
    assert_eq!(resumed.to_bytes(), full.to_bytes());
}

#[test]
fn save_load_save_is_byte_identical() {
    let cfg = small_config(Objective::Scvrl);
    let d = data(8, 3);
    let (st, _) = run(&cfg, &d, 2);
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.bin");
    let p2 = dir.path().join("b.bin");
    st.save(&p1).unwrap();
    TrainState::<f32>::load(&p1).unwrap().save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(TrainState::<f32>::load(&p1).unwrap(), st);

    let f64_state = TrainState::<f64>::new(&cfg).unwrap();
    assert_eq!(TrainState::<f64>::from_bytes(&f64_state.to_bytes()).unwrap(), f64_state);
    // the element type is part of the format
    assert!(TrainState::<f32>::from_bytes(&f64_state.to_bytes()).is_err());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let cfg = small_config(Objective::Cvrl);
    let bytes = TrainState::<f32>::new(&cfg).unwrap().to_bytes();
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(TrainState::<f32>::from_bytes(&flipped).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(TrainState::<f32>::from_bytes(&magic).is_err());
    assert!(TrainState::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn zero_steps_leaves_the_initialization() {
    let cfg = small_config(Objective::Scvrl);
    let d = data(8, 4);
    let (st, metrics) = run(&cfg, &d, 0);
    let fresh = TrainState::<f32>::new(&cfg).unwrap();
    assert!(metrics.is_empty());
    assert_eq!(st.step, 0);
    assert_eq!(st.online, fresh.online);
    assert_eq!(st.momentum, fresh.online);
    assert_eq!(st.optimizer, fresh.optimizer);
}

#[test]
fn cvrl_temporal_head_only_sees_weight_decay() {
    let cfg = small_config(Objective::Cvrl);
    let d = data(8, 5);
    let (st, metrics) = run(&cfg, &d, 5);
    assert!(metrics.iter().all(|m| m.l_t.is_none() && m.l_v.is_some()));
    let init = TrainState::<f32>::new(&cfg).unwrap().online;
    for i in init.head_param_indices(HeadKind::Temporal) {
        let name = init.params().name(i);
        let decays = name.ends_with(".weight");
        let expected: Vec<f32> = init
            .params()
            .data(i)
            .iter()
            .map(|&p| {
                (0..5u64).fold(p, |p, s| {
                    if decays {
                        p * f32::of(1.0 - lr_at(s, &cfg) * cfg.weight_decay)
                    } else {
                        p
                    }
                })
            })
            .collect();
        assert_eq!(st.online.params().data(i), &expected[..], "{name}");
    }
    // the visual head does move
    let i = init.head_param_indices(HeadKind::Visual)[0];
    assert_ne!(st.online.params().data(i), init.params().data(i));
}

#[test]
fn shuffled_only_never_touches_the_bank_or_visual_head() {
    let cfg = small_config(Objective::ShuffledOnly);
    let d = data(8, 6);
    let (st, metrics) = run(&cfg, &d, 3);
    assert!(metrics.iter().all(|m| m.l_v.is_none() && m.l_t.is_some() && m.bank_count == 0));
    assert_eq!(st.bank.count(), 0);
}

#[test]
fn bank_grows_by_batch_until_full() {
    let cfg = small_config(Objective::Scvrl);
    let d = data(8, 7);
    let mut st = TrainState::<f32>::initialize(&cfg, &d).unwrap();
    assert_eq!(st.bank.count(), cfg.bank_warmup_min);
    let mut expected = cfg.bank_warmup_min;
    for _ in 0..4 {
        let m = st.train_step(&d).unwrap();
        expected = (expected + cfg.batch_size).min(cfg.bank_size);
        assert_eq!(m.bank_count, expected);
        assert_eq!(st.bank.count(), expected);
    }
    assert_eq!(expected, cfg.bank_size);
}

#[test]
fn one_online_forward_per_anchor() {
    let cfg = small_config(Objective::Scvrl);
    let d = data(8, 8);
    let mut st = TrainState::<f32>::initialize(&cfg, &d).unwrap();
    let (on0, mo0) = (st.online.forward_calls(), st.momentum.forward_calls());
    st.train_step(&d).unwrap();
    let b = cfg.batch_size as u64;
    assert_eq!(st.online.forward_calls() - on0, b);
    // positive, its shuffles and the visual key
    let per_video = 1 + cfg.n_temporal_negatives as u64 + 1;
    assert_eq!(st.momentum.forward_calls() - mo0, b * per_video);
}

#[test]
fn momentum_lags_online_and_freezes_with_zero_lr() {
    let cfg = small_config(Objective::Scvrl);
    let d = data(8, 9);
    let (mut st, _) = run(&cfg, &d, 4);
    let gap = st.momentum.params().distance(st.online.params());
    assert!(gap > 0.0 && gap.is_finite());
    st.cfg.lr_peak = 0.0;
    st.cfg.lr_warm = 0.0;
    st.cfg.lr_end = 0.0;
    st.run(&d, 14, None, &mut |_| {}).unwrap();
    let later = st.momentum.params().distance(st.online.params());
    // frozen online weights: the gap contracts by 0.999 per step
    let expected = gap * cfg.ema_momentum.powi(10);
    assert!((later - expected).abs() <= 1e-4 * expected, "{later} vs {expected}");
}

#[test]
fn total_loss_decreases_over_two_hundred_steps() {
    // bank held at its warm-up size so the visual term compares like with like
    let cfg = Config {
        bank_size: 64,
        bank_warmup_min: 64,
        ..Config::default()
    };
    let d = data(64, 10);
    let (_, metrics) = run(&cfg, &d, 200);
    let smooth = |at: usize| -> f64 {
        let w = &metrics[at.saturating_sub(5)..(at + 5).min(metrics.len())];
        w.iter().map(|m| m.l_total).sum::<f64>() / w.len() as f64
    };
    let (early, late) = (smooth(10), smooth(195));
    assert!(late < early, "smoothed total loss {early} at step 10, {late} at step 200");
}

#[test]
fn exploding_updates_surface_as_numerical_errors() {
    let cfg = Config {
        lr_peak: 1e30,
        lr_warm: 1e30,
        weight_decay: 0.0,
        ..small_config(Objective::Scvrl)
    };
    let d = data(8, 11);
    let err = pretrain::<f32>(&cfg, &d, 5, None, &mut |_| {}).err().expect("training must fail");
    assert!(err.is_numerical(), "{err}");
    assert!(matches!(err, Error::NonFiniteLoss { .. } | Error::NonFinite { .. } | Error::DegenerateEmbedding), "{err}");
}
