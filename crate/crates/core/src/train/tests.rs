use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::Tensor;
use crate::error::{CheckpointError, Error};
use crate::model::{Lantern, LanternConfig, LanternParams, Variant};
use crate::synth::{generate_dataset, Dataset, GeneratorConfig};

fn scalar_params(w: f64) -> LanternParams {
    let mut p = LanternParams::default();
    p.insert("w", Tensor::vector(vec![w]));
    p
}

fn grads_of(g: &[f64]) -> BTreeMap<String, Vec<f64>> {
    BTreeMap::from([("w".to_string(), g.to_vec())])
}

#[test]
fn zero_gradient_leaves_params_unchanged() {
    let mut p = scalar_params(1.25);
    let mut s = AdamState::new(&p);
    adam_step(&mut p, &grads_of(&[0.0]), &mut s, &TrainConfig::default()).unwrap();
    assert_eq!(p.get("w").unwrap().data(), &[1.25]);
    assert_eq!(s.step, 1);
}

#[test]
fn first_step_moves_by_learning_rate_against_gradient() {
    let cfg = TrainConfig::default();
    let mut p = LanternParams::default();
    p.insert("w", Tensor::vector(vec![0.0, 0.0, 0.0]));
    let mut s = AdamState::new(&p);
    let g = BTreeMap::from([("w".to_string(), vec![3.0, -0.02, 1e3])]);
    adam_step(&mut p, &g, &mut s, &cfg).unwrap();
    for (w, sign) in p.get("w").unwrap().data().iter().zip([-1.0, 1.0, -1.0]) {
        assert!((w - sign * cfg.learning_rate).abs() < 1e-9, "{w}");
    }
}

#[test]
fn first_step_is_invariant_to_loss_scale() {
    let cfg = TrainConfig::default();
    let g = [0.7, -2.0, 0.05];
    let step = |c: f64| {
        let mut p = LanternParams::default();
        p.insert("w", Tensor::vector(vec![0.0; 3]));
        let mut s = AdamState::new(&p);
        let scaled: Vec<f64> = g.iter().map(|x| c * x).collect();
        adam_step(&mut p, &grads_of(&scaled), &mut s, &cfg).unwrap();
        p.get("w").unwrap().data().to_vec()
    };
    for (a, b) in step(1.0).iter().zip(step(100.0)) {
        assert!((a - b).abs() < 1e-6);
    }
}

/// Plain scalar Adam, written independently of `adam_step`.
fn reference_adam(w0: f64, steps: usize, cfg: &TrainConfig) -> Vec<f64> {
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * (w - 3.0);
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mh = m / (1.0 - cfg.beta1.powi(t as i32));
        let vh = v / (1.0 - cfg.beta2.powi(t as i32));
        w -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
        out.push(w);
    }
    out
}

#[test]
fn quadratic_descends_toward_minimum() {
    let cfg = TrainConfig::default();
    let mut p = scalar_params(0.0);
    let mut s = AdamState::new(&p);
    let mut path = Vec::new();
    for _ in 0..100 {
        let w = p.get("w").unwrap().data()[0];
        adam_step(&mut p, &grads_of(&[2.0 * (w - 3.0)]), &mut s, &cfg).unwrap();
        path.push(p.get("w").unwrap().data()[0]);
    }
    let expected = reference_adam(0.0, 100, &cfg);
    for (a, b) in path.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    let dist: Vec<f64> = path.iter().map(|w| (w - 3.0).abs()).collect();
    assert!(dist.windows(2).all(|d| d[1] < d[0]));

    let fast = TrainConfig {
        learning_rate: 0.1,
        ..cfg
    };
    let long = reference_adam(0.0, 500, &fast);
    assert!((long[499] - 3.0).abs() < 0.05);
}

#[test]
fn adam_rejects_misaligned_gradients() {
    let cfg = TrainConfig::default();
    let mut p = scalar_params(0.0);
    let mut s = AdamState::new(&p);
    assert!(matches!(
        adam_step(&mut p, &grads_of(&[1.0, 2.0]), &mut s, &cfg),
        Err(Error::ShapeMismatch { .. })
    ));
    assert!(adam_step(&mut p, &BTreeMap::new(), &mut s, &cfg).is_err());
    let mut extra = grads_of(&[1.0]);
    extra.insert("v".into(), vec![1.0]);
    assert!(adam_step(&mut p, &extra, &mut s, &cfg).is_err());
    assert_eq!(s.step, 0);
}

#[test]
fn train_config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig::full_scale().validate().is_ok());
    for bad in [
        TrainConfig { beta2: 1.0, ..Default::default() },
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { learning_rate: 0.0, ..Default::default() },
        TrainConfig { validation_fraction: 0.0, ..Default::default() },
    ] {
        assert!(bad.validate().is_err());
    }
}

fn small_dataset(n_users: usize, seed: u64) -> Dataset {
    generate_dataset(&GeneratorConfig {
        n_users,
        n_binary: 6,
        n_single: 2,
        n_multi: 2,
        survey_dim: 8,
        external_dim: 6,
        seed,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

fn small_model_config(ds: &Dataset) -> LanternConfig {
    LanternConfig {
        d_embed: 8,
        d_proj: 16,
        n_tokens: 4,
        d_token: 4,
        d_ffn: 16,
        ..fit_config_to(&LanternConfig::desk(1, 1, 1), &ds.manifest)
    }
}

#[test]
fn split_is_seeded_disjoint_and_complete() {
    let s = split_users(1000, 0.1, 4).unwrap();
    assert_eq!(s.validation.len(), 100);
    assert_eq!(s.train.len(), 900);
    let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..1000).collect::<Vec<_>>());
    assert_eq!(s, split_users(1000, 0.1, 4).unwrap());
    assert_ne!(s, split_users(1000, 0.1, 5).unwrap());
    assert_eq!(split_users(2, 0.1, 0).unwrap().validation.len(), 1);
    assert!(split_users(1, 0.1, 0).is_err());
}

#[test]
fn batch_stream_repeats_with_fresh_order() {
    let mut s = BatchStream::new((0..5).collect(), ChaCha8Rng::seed_from_u64(1)).unwrap();
    let drawn = s.next_indices(15);
    for pass in drawn.chunks(5) {
        let mut p = pass.to_vec();
        p.sort_unstable();
        assert_eq!(p, vec![0, 1, 2, 3, 4]);
    }
    assert!(drawn[..5] != drawn[5..10] || drawn[5..10] != drawn[10..]);
    assert!(BatchStream::new(Vec::new(), ChaCha8Rng::seed_from_u64(1)).is_err());
}

#[test]
fn batch_from_records_stacks_rows() {
    let ds = small_dataset(4, 1);
    let b = Batch::gather(&ds, &[2, 0]).unwrap();
    assert_eq!(b.len(), 2);
    assert_eq!(&b.x_s.data()[..8], ds.records[2].x_s.as_slice());
    assert_eq!(&b.mask[ds.n_keys()..], ds.records[0].mask.as_slice());
    assert!(Batch::from_records(std::iter::empty()).is_err());
}

#[test]
fn all_zero_mask_step_changes_nothing() {
    let ds = small_dataset(8, 2);
    let cfg = small_model_config(&ds);
    let mut model = build_variant(Variant::Fused, &cfg, 0).unwrap();
    let before = model.params.clone();
    let mut batch = Batch::gather(&ds, &[0, 1, 2]).unwrap();
    batch.mask.iter_mut().for_each(|m| *m = 0);
    let mut state = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let loss = train_step(&mut model, &batch, &mut state, &TrainConfig::default(), &mut rng).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(model.params, before);
    assert!(state.first.values().flatten().all(|&m| m == 0.0));
}

#[test]
fn train_steps_reduce_loss_and_are_reproducible() {
    let ds = small_dataset(200, 3);
    let cfg = small_model_config(&ds);
    let tc = TrainConfig::default();
    let batch = Batch::gather(&ds, &(0..64).collect::<Vec<_>>()).unwrap();
    let run = || {
        let mut model = build_variant(Variant::Fused, &cfg, 1).unwrap();
        let mut state = AdamState::new(&model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..200)
            .map(|_| train_step(&mut model, &batch, &mut state, &tc, &mut rng).unwrap())
            .collect::<Vec<f64>>()
    };
    let losses = run();
    assert_eq!(losses, run());
    assert!(losses[199] < losses[0], "{} vs {}", losses[199], losses[0]);
}

#[test]
fn variants_differ_only_by_fusion_stack() {
    let ds = small_dataset(4, 1);
    let cfg = small_model_config(&ds);
    let fused = build_variant(Variant::Fused, &cfg, 0).unwrap();
    let survey = build_variant(Variant::SurveyOnly, &cfg, 0).unwrap();
    let external = build_variant(Variant::ExternalOnly, &cfg, 0).unwrap();
    assert!(fused.parameter_count() > survey.parameter_count());
    for name in ["head.w", "head.b", "post_norm.gamma"] {
        assert_eq!(survey.params.get(name), external.params.get(name));
        assert_eq!(fused.params.get(name), survey.params.get(name));
    }
}

#[test]
fn training_is_deterministic_and_repeats_past_the_data() {
    let ds = small_dataset(40, 5);
    let cfg = small_model_config(&ds);
    let tc = TrainConfig {
        epochs: 3,
        steps_per_epoch: 4,
        validation_steps: 2,
        batch_size: 32,
        seed: 11,
        ..TrainConfig::default()
    };
    // 4 steps of 32 users each exceed the 36 training users several times over.
    let a = train(&ds, &tc, &cfg).unwrap();
    let b = train(&ds, &tc, &cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.log.epochs.len(), 3);
    assert!(a.log.to_csv().starts_with("epoch,train_loss,val_loss\n1,"));
    assert_eq!(a.log.to_csv().lines().count(), 4);
    let c = train(&ds, &TrainConfig { seed: 12, ..tc }, &cfg).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn training_lowers_validation_loss() {
    let ds = small_dataset(600, 6);
    let cfg = small_model_config(&ds);
    let tc = TrainConfig {
        epochs: 4,
        steps_per_epoch: 40,
        variant: Variant::SurveyOnly,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let out = train(&ds, &tc, &cfg).unwrap();
    assert!(out.log.final_val_loss().unwrap() < out.log.initial_val_loss);
}

#[test]
fn train_rejects_bad_inputs() {
    let ds = small_dataset(10, 1);
    let cfg = small_model_config(&ds);
    let empty = Dataset::new(ds.manifest.clone(), Vec::new()).unwrap();
    assert!(train(&empty, &TrainConfig::default(), &cfg).is_err());
    let wrong = LanternConfig {
        n_keys: cfg.n_keys + 1,
        ..cfg.clone()
    };
    assert!(train(&ds, &TrainConfig::default(), &wrong).is_err());
}

fn trained_checkpoint() -> (Lantern, AdamState, TrainConfig, Dataset) {
    let ds = small_dataset(50, 8);
    let cfg = small_model_config(&ds);
    let tc = TrainConfig {
        epochs: 1,
        steps_per_epoch: 3,
        validation_steps: 1,
        ..TrainConfig::default()
    };
    let out = train(&ds, &tc, &cfg).unwrap();
    (out.model, out.adam, tc, ds)
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let (model, adam, tc, ds) = trained_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.lntn");
    save_checkpoint(&path, &model, &adam, &tc).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.model, model);
    assert_eq!(ck.adam, adam);
    assert_eq!(ck.train_config, tc);
    let batch = Batch::gather(&ds, &[0, 1, 2, 3]).unwrap();
    let before = model.predict(&batch.x_s, &batch.x_e).unwrap();
    let after = ck.model.predict(&batch.x_s, &batch.x_e).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&before), bits(&after));
    assert_eq!(checkpoint_bytes(&model, &adam, &tc).unwrap(), std::fs::read(&path).unwrap());
}

fn checkpoint_error(bytes: &[u8]) -> CheckpointError {
    match parse_checkpoint(bytes) {
        Err(Error::Checkpoint(e)) => e,
        other => panic!("expected checkpoint error, got {other:?}"),
    }
}

#[test]
fn checkpoint_defects_are_named() {
    let (model, adam, tc, _) = trained_checkpoint();
    let bytes = checkpoint_bytes(&model, &adam, &tc).unwrap();

    for cut in [0, 3, 7, 11, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(checkpoint_error(&bytes[..cut]), CheckpointError::Truncated { .. }),
            "cut at {cut}"
        );
    }
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"NOPE");
    assert_eq!(checkpoint_error(&bad), CheckpointError::BadMagic { found: *b"NOPE" });
    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&7u32.to_le_bytes());
    assert_eq!(
        checkpoint_error(&bad),
        CheckpointError::VersionMismatch {
            found: 7,
            expected: FORMAT_VERSION
        }
    );
    let mut bad = bytes.clone();
    bad.push(0);
    assert!(matches!(checkpoint_error(&bad), CheckpointError::Corrupt(_)));
    let missing = load_checkpoint(std::path::Path::new("/nonexistent/model.lntn"));
    assert!(matches!(missing, Err(Error::Io { .. })));
}
