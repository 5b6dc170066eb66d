use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;
use crate::error::Error;

fn small_cfg(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        n_users: 300,
        latent_dim: 4,
        n_binary: 4,
        n_single: 3,
        n_multi: 3,
        min_options: 2,
        max_options: 4,
        survey_dim: 6,
        external_dim: 5,
        seed,
        ..GeneratorConfig::default()
    }
}

fn binary(qid: u32) -> QuestionSpec {
    QuestionSpec {
        question_id: qid,
        question_type: QuestionType::Binary,
        n_options: 1,
        serve_probability: 1.0,
    }
}

fn single(qid: u32, n: usize) -> QuestionSpec {
    QuestionSpec {
        question_id: qid,
        question_type: QuestionType::SingleChoice,
        n_options: n,
        serve_probability: 0.5,
    }
}

#[test]
fn forced_serving_leaves_no_unasked_keys() {
    let cfg = GeneratorConfig {
        common_serve_probability: 1.0,
        rare_serve_probability: 1.0,
        ..small_cfg(1)
    };
    let ds = generate_dataset(&cfg).unwrap();
    assert!(ds.records.iter().all(|r| r.mask.iter().all(|&m| m != 0)));
}

fn corr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn uninformative_external_features_are_uncorrelated_with_labels() {
    let cfg = GeneratorConfig {
        n_users: 10_000,
        external_informative_fraction: 0.0,
        common_serve_probability: 1.0,
        rare_serve_probability: 1.0,
        ..small_cfg(2)
    };
    let ds = generate_dataset(&cfg).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..cfg.external_dim {
        let x: Vec<f64> = ds.records.iter().map(|r| r.x_e[j]).collect();
        for k in 0..ds.n_keys() {
            let y: Vec<f64> = ds.records.iter().map(|r| (r.mask[k] == 1) as u8 as f64).collect();
            worst = worst.max(corr(&x, &y).abs());
        }
    }
    assert!(worst < 0.05, "max |corr| = {worst}");

    // Positive control: informative features do correlate.
    let informative = generate_dataset(&GeneratorConfig {
        external_informative_fraction: 1.0,
        external_noise_sigma: 0.1,
        ..cfg
    })
    .unwrap();
    let mut best: f64 = 0.0;
    for j in 0..cfg.external_dim {
        let x: Vec<f64> = informative.records.iter().map(|r| r.x_e[j]).collect();
        for k in 0..informative.n_keys() {
            let y: Vec<f64> = informative.records.iter().map(|r| (r.mask[k] == 1) as u8 as f64).collect();
            best = best.max(corr(&x, &y).abs());
        }
    }
    assert!(best > 0.2, "max |corr| = {best}");
}

#[test]
fn generation_is_deterministic_in_seed() {
    let a = generate_dataset(&small_cfg(9)).unwrap();
    let b = generate_dataset(&small_cfg(9)).unwrap();
    assert_eq!(a, b);
    assert_eq!(records_bytes(&a.records), records_bytes(&b.records));
    let c = generate_dataset(&small_cfg(10)).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn user_draws_do_not_depend_on_population_size() {
    let a = generate_dataset(&small_cfg(4)).unwrap();
    let b = generate_dataset(&GeneratorConfig {
        n_users: 50,
        ..small_cfg(4)
    })
    .unwrap();
    assert_eq!(&a.records[..50], &b.records[..]);
}

#[test]
fn generated_records_satisfy_mask_structure() {
    for seed in 0..5 {
        let ds = generate_dataset(&small_cfg(seed)).unwrap();
        let qs = ds.manifest.questions();
        for r in &ds.records {
            ds.manifest.validate_record(r).unwrap();
            for q in &qs {
                let vals: Vec<i8> = q.key_ids.iter().map(|&k| r.mask[k]).collect();
                let served = vals[0] != 0;
                assert!(vals.iter().all(|&v| (v != 0) == served));
                if served && q.question_type == QuestionType::SingleChoice {
                    assert_eq!(vals.iter().filter(|&&v| v == 1).count(), 1);
                }
            }
        }
        for q in &qs {
            match q.question_type {
                QuestionType::Binary => assert_eq!(q.key_ids.len(), 1),
                _ => assert!(q.key_ids.len() >= 2),
            }
        }
    }
}

#[test]
fn rare_key_counts_follow_binomial() {
    for seed in 0..3 {
        let cfg = GeneratorConfig {
            n_users: 4000,
            rare_serve_probability: 0.1,
            rare_key_fraction: 0.3,
            ..small_cfg(100 + seed)
        };
        let p = cfg.rare_serve_probability;
        let ds = generate_dataset(&cfg).unwrap();
        let counts = response_counts(&ds.records, ds.n_keys(), ResponseCount::Served);
        let n = cfg.n_users as f64;
        let sigma = (n * p * (1.0 - p)).sqrt();
        let mut rare_seen = 0;
        for (k, key) in ds.manifest.keys.iter().enumerate() {
            if key.serve_probability == p {
                rare_seen += 1;
                let dev = (counts[k] as f64 - n * p).abs();
                assert!(dev < 5.0 * sigma, "key {k}: count {} vs {}", counts[k], n * p);
            }
        }
        assert!(rare_seen > 0);
    }
}

#[test]
fn favourable_rates_are_sparse() {
    let cfg = GeneratorConfig {
        n_users: 4000,
        common_serve_probability: 1.0,
        rare_serve_probability: 1.0,
        ..small_cfg(5)
    };
    let ds = generate_dataset(&cfg).unwrap();
    let fav = response_counts(&ds.records, ds.n_keys(), ResponseCount::Favorable);
    for (k, key) in ds.manifest.keys.iter().enumerate() {
        if key.question_type != QuestionType::SingleChoice {
            let rate = fav[k] as f64 / cfg.n_users as f64;
            assert!((0.03..0.53).contains(&rate), "key {k} rate {rate}");
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        GeneratorConfig { survey_dim: 0, ..small_cfg(0) },
        GeneratorConfig { n_users: 0, ..small_cfg(0) },
        GeneratorConfig { min_options: 1, ..small_cfg(0) },
        GeneratorConfig { external_informative_fraction: 1.5, ..small_cfg(0) },
        GeneratorConfig { rare_serve_probability: 0.0, ..small_cfg(0) },
        GeneratorConfig { survey_noise_sigma: -1.0, ..small_cfg(0) },
        GeneratorConfig { n_binary: 0, n_single: 0, n_multi: 0, ..small_cfg(0) },
    ];
    for cfg in bad {
        assert!(generate_dataset(&cfg).is_err(), "{cfg:?}");
    }
}

// ---- persistence ----------------------------------------------------------------

#[test]
fn save_load_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&small_cfg(3)).unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
    // Byte stability.
    let first = std::fs::read(dir.path().join(RECORDS_FILE)).unwrap();
    save_dataset(&back, dir.path()).unwrap();
    assert_eq!(first, std::fs::read(dir.path().join(RECORDS_FILE)).unwrap());
}

#[test]
fn empty_record_list_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest::from_questions(3, 2, &[binary(0)], 1, 0).unwrap();
    let ds = Dataset::new(manifest, vec![]).unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    assert_eq!(std::fs::read(dir.path().join(RECORDS_FILE)).unwrap().len(), 0);
    assert_eq!(load_dataset(dir.path()).unwrap(), ds);
}

fn write_single_record(line: &str) -> (tempfile::TempDir, Result<Dataset, Error>) {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest::from_questions(2, 1, &[binary(0), single(1, 2)], 1, 0).unwrap();
    save_dataset(&Dataset::new(manifest, vec![]).unwrap(), dir.path()).unwrap();
    let ok = r#"{"user_id":0,"x_s":[0.5,1.0],"x_e":[2.0],"mask":[1,-1,1]}"#;
    std::fs::write(dir.path().join(RECORDS_FILE), format!("{ok}\n{line}\n")).unwrap();
    let res = load_dataset(dir.path());
    (dir, res)
}

#[test]
fn load_rejects_out_of_range_mask_value() {
    let (_d, res) = write_single_record(r#"{"user_id":1,"x_s":[0.5,1.0],"x_e":[2.0],"mask":[2,-1,1]}"#);
    match res {
        Err(Error::Invariant { invariant, detail }) => {
            assert_eq!(invariant, "mask_values");
            assert!(detail.contains(":2:"), "{detail}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn load_rejects_wrong_survey_length() {
    let (_d, res) = write_single_record(r#"{"user_id":1,"x_s":[0.5],"x_e":[2.0],"mask":[1,-1,1]}"#);
    match res {
        Err(Error::Invariant { invariant, detail }) => {
            assert_eq!(invariant, "survey_dim");
            assert!(detail.contains("F_s = 2"), "{detail}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn load_rejects_broken_mask_structure() {
    let (_d, res) = write_single_record(r#"{"user_id":1,"x_s":[0.5,1.0],"x_e":[2.0],"mask":[1,1,1]}"#);
    assert!(matches!(res, Err(Error::Invariant { invariant: "mask_structure", .. })));
    let (_d, res) = write_single_record(r#"{"user_id":1,"x_s":[0.5,1.0],"x_e":[2.0],"mask":[1,0,1]}"#);
    assert!(matches!(res, Err(Error::Invariant { invariant: "mask_structure", .. })));
}

#[test]
fn load_reports_line_of_malformed_json() {
    let (_d, res) = write_single_record(r#"{"user_id":1,"x_s":[0.5,"#);
    match res {
        Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn manifest_rejects_sparse_key_ids_and_bad_arity() {
    let mut m = DatasetManifest::from_questions(2, 2, &[binary(0), single(1, 3)], 0, 0).unwrap();
    m.keys[2].key_id = 7;
    assert!(matches!(m.validate(), Err(Error::Invariant { invariant: "dense_key_ids", .. })));
    let bad = DatasetManifest::from_questions(2, 2, &[single(0, 1)], 0, 0);
    assert!(matches!(bad, Err(Error::Invariant { invariant: "question_arity", .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn floats_roundtrip_exactly(xs in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 3),
                                 xe in prop::collection::vec(-1e300f64..1e300, 2)) {
        let manifest = DatasetManifest::from_questions(3, 2, &[binary(0)], 0, 0).unwrap();
        let rec = UserRecord { user_id: 5, x_s: xs, x_e: xe, mask: vec![-1] };
        let ds = Dataset::new(manifest, vec![rec]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        for (a, b) in back.records[0].x_s.iter().zip(&ds.records[0].x_s) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn diff_is_antisymmetric(qa in prop::collection::btree_set(0u32..12, 1..8),
                             qb in prop::collection::btree_set(0u32..12, 1..8)) {
        let mk = |qs: &BTreeSet<u32>| {
            let specs: Vec<QuestionSpec> = qs.iter()
                .map(|&q| if q % 2 == 0 { binary(q) } else { single(q, 2 + (q as usize % 3)) })
                .collect();
            DatasetManifest::from_questions(1, 1, &specs, 0, 0).unwrap()
        };
        let (a, b) = (mk(&qa), mk(&qb));
        prop_assert!(label_space_diff(&a, &a).is_empty());
        let ab = label_space_diff(&a, &b);
        let ba = label_space_diff(&b, &a);
        prop_assert_eq!(&ab.added, &ba.removed);
        prop_assert_eq!(&ab.removed, &ba.added);
        prop_assert_eq!(&ab.retained, &ba.retained);
    }
}

// ---- label-space drift --------------------------------------------------------------

#[test]
fn diff_set_algebra() {
    let a = DatasetManifest::from_questions(1, 1, &[binary(0), binary(1)], 0, 0).unwrap();
    let b = DatasetManifest::from_questions(1, 1, &[binary(1), binary(2)], 0, 1).unwrap();
    let d = label_space_diff(&a, &b);
    let id = |q| KeyIdentity { question_id: q, position: 0 };
    assert_eq!(d.added, [id(2)].into());
    assert_eq!(d.removed, [id(0)].into());
    assert_eq!(d.retained, [id(1)].into());
    assert!(d.misaligned());
}

#[test]
fn identical_manifests_are_aligned() {
    let a = DatasetManifest::from_questions(1, 1, &[binary(0), single(1, 3)], 0, 0).unwrap();
    let d = label_space_diff(&a, &a);
    assert_eq!(d.retained.len(), 4);
    assert!(!d.misaligned());
    assert!(d.to_string().contains("aligned"));
}

#[test]
fn adding_a_binary_question_adds_one_key() {
    let a = DatasetManifest::from_questions(1, 1, &[binary(0), single(1, 3)], 0, 0).unwrap();
    let b = DatasetManifest::from_questions(1, 1, &[binary(0), single(1, 3), binary(2)], 0, 1).unwrap();
    let d = label_space_diff(&a, &b);
    assert_eq!(d.added.len(), 1);
    assert!(d.removed.is_empty());
    assert!(d.misaligned());
    assert!(d.to_string().contains("MISALIGNED"));
}
