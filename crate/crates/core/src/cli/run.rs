use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{
    ablation_suite, gate_histogram, gate_values_for, predict_users, segment_eval, threshold_sweep, Predictions,
};
use crate::model::{Lantern, Variant};
use crate::synth::{
    dataset_digest, frequency_buckets, generate_dataset, label_space_diff, load_dataset, load_manifest,
    manifest_bytes, records_bytes, Dataset, DatasetManifest, MANIFEST_FILE, RECORDS_FILE,
};
use crate::train::{checkpoint_bytes, fit_config_to, load_checkpoint, split_users, train, TrainConfig};

pub const RESOLVED_CONFIG_FILE: &str = "config.txt";
pub const STAMP_FILE: &str = "stamp.json";
pub const CHECKPOINT_FILE: &str = "model.lntn";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Evaluate,
    Ablate,
    Sweep,
    GateReport,
    LabelDiff,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
            Command::Sweep => "sweep",
            Command::GateReport => "gate-report",
            Command::LabelDiff => "label-diff",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Files written by one run, each with its digest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub artifacts: BTreeMap<String, String>,
    pub dataset_digest: Option<String>,
    /// Human-readable result lines.
    pub messages: Vec<String>,
}

/// Artifacts are held in memory until the command succeeds, so a failed run
/// leaves nothing behind.
struct RunDir {
    summary: RunSummary,
    pending: Vec<(String, Vec<u8>)>,
}

impl RunDir {
    fn new(out: &Path) -> Self {
        Self {
            summary: RunSummary {
                out_dir: out.to_path_buf(),
                ..RunSummary::default()
            },
            pending: Vec::new(),
        }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) {
        self.summary.artifacts.insert(name.to_string(), sha256_hex(bytes));
        self.pending.push((name.to_string(), bytes.to_vec()));
    }

    fn flush(&self) -> Result<()> {
        let out = &self.summary.out_dir;
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        for (name, bytes) in &self.pending {
            let path = out.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn say(&mut self, line: impl Into<String>) {
        self.summary.messages.push(line.into());
    }
}

/// The configured dataset: loaded from `dataset` if set, otherwise generated.
fn obtain_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.inputs.dataset {
        Some(dir) => load_dataset(dir),
        None => generate_dataset(&cfg.generator_config()),
    }
}

/// A model plus the held-out users it should be scored on.
struct Scored {
    model: Lantern,
    validation: Vec<usize>,
}

/// Loads `checkpoint` if set, otherwise trains `variant` (or the configured
/// variant) in-process. Held-out users come from the training config that
/// produced the model.
fn obtain_model(cfg: &RunConfig, ds: &Dataset, variant: Option<Variant>) -> Result<Scored> {
    let (model, tc) = match &cfg.inputs.checkpoint {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let c = &ck.model.config;
            let m = &ds.manifest;
            if (c.survey_dim, c.external_dim, c.n_keys) != (m.survey_dim, m.external_dim, m.n_keys()) {
                return Err(Error::Config(format!(
                    "checkpoint {} expects (survey_dim, external_dim, n_keys) = ({}, {}, {}), dataset has ({}, {}, {})",
                    path.display(),
                    c.survey_dim,
                    c.external_dim,
                    c.n_keys,
                    m.survey_dim,
                    m.external_dim,
                    m.n_keys()
                )));
            }
            (ck.model, ck.train_config)
        }
        None => {
            let tc = TrainConfig {
                variant: variant.unwrap_or(cfg.train.variant),
                ..cfg.train_config()
            };
            let outcome = train(ds, &tc, &fit_config_to(&cfg.model, &ds.manifest))?;
            (outcome.model, tc)
        }
    };
    let split = split_users(ds.n_users(), tc.validation_fraction, tc.seed)?;
    Ok(Scored {
        model,
        validation: split.validation,
    })
}

fn held_out_predictions(cfg: &RunConfig, ds: &Dataset) -> Result<Predictions> {
    let scored = obtain_model(cfg, ds, None)?;
    predict_users(&scored.model, ds, &scored.validation)
}

fn manifest_at(path: &Path) -> Result<DatasetManifest> {
    if path.is_dir() {
        load_manifest(&path.join(MANIFEST_FILE))
    } else {
        load_manifest(path)
    }
}

fn run_with_dataset(command: Command, cfg: &RunConfig, dir: &mut RunDir) -> Result<()> {
    let ds = obtain_dataset(cfg)?;
    dir.summary.dataset_digest = Some(dataset_digest(&ds));
    let ev = &cfg.eval;
    match command {
        Command::Generate => {
            dir.write(MANIFEST_FILE, &manifest_bytes(&ds.manifest));
            dir.write(RECORDS_FILE, &records_bytes(&ds.records));
            dir.say(format!("dataset: {} users, {} keys", ds.n_users(), ds.n_keys()));
        }
        Command::Train => {
            let tc = cfg.train_config();
            let outcome = train(&ds, &tc, &fit_config_to(&cfg.model, &ds.manifest))?;
            dir.write(CHECKPOINT_FILE, &checkpoint_bytes(&outcome.model, &outcome.adam, &tc)?);
            dir.write("train_log.csv", outcome.log.to_csv().as_bytes());
            dir.say(format!(
                "{} model: {} parameters, validation loss {:.4} -> {:.4}",
                tc.variant,
                outcome.model.parameter_count(),
                outcome.log.initial_val_loss,
                outcome.log.final_val_loss().unwrap_or(f64::NAN)
            ));
        }
        Command::Evaluate => {
            let preds = held_out_predictions(cfg, &ds)?;
            let r = preds.report(ev.threshold, ev.averaging)?;
            let c = r.counts;
            dir.write(
                "metrics.csv",
                format!(
                    "threshold,precision,recall,f1,true_pos,false_pos,false_neg,true_neg\n{},{},{},{},{},{},{},{}\n",
                    r.threshold, r.precision, r.recall, r.f1, c.true_pos, c.false_pos, c.false_neg, c.true_neg
                )
                .as_bytes(),
            );
            let k = if ev.bucket_size == 0 { (ds.n_keys() / 4).max(1) } else { ev.bucket_size };
            let buckets = frequency_buckets(&ds.records, ds.n_keys(), k, ev.bucket_by)?;
            let seg = segment_eval(&preds, &buckets.rare, &buckets.frequent, ev.threshold, ev.averaging)?;
            dir.write("segments.csv", seg.to_csv().as_bytes());
            dir.say(format!(
                "t={}: P={:.4} R={:.4} F1={:.4}; rare F1={:.4}, frequent F1={:.4}",
                r.threshold, r.precision, r.recall, r.f1, seg.rare.f1, seg.frequent.f1
            ));
        }
        Command::Ablate => {
            let report = ablation_suite(&ds, &cfg.model, &cfg.train_config(), ev.averaging)?;
            dir.write("ablation.csv", report.to_csv().as_bytes());
            for run in &report.runs {
                dir.say(format!("{:<13} F1={:.4}", run.variant.as_str(), run.report.f1));
            }
        }
        Command::Sweep => {
            let preds = held_out_predictions(cfg, &ds)?;
            let sweep = threshold_sweep(&preds, &ev.grid, ev.averaging)?;
            dir.write("sweep.csv", sweep.to_csv().as_bytes());
            for r in &sweep.rows {
                dir.say(format!("t={}: P={:.4} R={:.4} F1={:.4}", r.threshold, r.precision, r.recall, r.f1));
            }
        }
        Command::GateReport => {
            let scored = obtain_model(cfg, &ds, Some(Variant::Fused))?;
            let values = gate_values_for(&scored.model, &ds, &scored.validation)?;
            let h = gate_histogram(&values, ev.gate_bins)?;
            dir.write("gates.csv", h.to_csv().as_bytes());
            dir.write(
                "gate_summary.csv",
                format!(
                    "n_values,mean,frac_below_0.1,frac_above_0.9\n{},{},{},{}\n",
                    h.total(),
                    h.mean,
                    h.frac_low,
                    h.frac_high
                )
                .as_bytes(),
            );
            dir.say(format!(
                "{} gate values: mean {:.4}, {:.1}% below 0.1, {:.1}% above 0.9",
                h.total(),
                h.mean,
                100.0 * h.frac_low,
                100.0 * h.frac_high
            ));
        }
        Command::LabelDiff => unreachable!("label-diff reads manifests only"),
    }
    Ok(())
}

fn run_label_diff(cfg: &RunConfig, dir: &mut RunDir) -> Result<()> {
    let need = |p: &Option<PathBuf>, key: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("label-diff needs `{key}` (a manifest file or dataset directory)")))
    };
    let old = manifest_at(&need(&cfg.inputs.old_manifest, "old_manifest")?)?;
    let new = manifest_at(&need(&cfg.inputs.new_manifest, "new_manifest")?)?;
    let diff = label_space_diff(&old, &new);
    let text = format!(
        "old cycle {} ({} keys) -> new cycle {} ({} keys)\n{diff}",
        old.cycle_id,
        old.n_keys(),
        new.cycle_id,
        new.n_keys()
    );
    dir.write("label_diff.txt", text.as_bytes());
    dir.summary.messages.extend(text.lines().map(String::from));
    Ok(())
}

/// Runs `command` with `cfg`, writing every artifact, the resolved config and
/// a provenance stamp under `out` and nowhere else.
pub fn execute(command: Command, cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    // Input widths and key count are placeholders until a dataset is loaded,
    // but the architecture can be checked before any work is done.
    cfg.model.validate()?;
    cfg.train_config().validate()?;
    cfg.eval.validate()?;
    let mut dir = RunDir::new(out);
    dir.write(RESOLVED_CONFIG_FILE, cfg.to_text().as_bytes());
    match command {
        Command::LabelDiff => run_label_diff(cfg, &mut dir)?,
        _ => run_with_dataset(command, cfg, &mut dir)?,
    }

    let config: BTreeMap<_, _> = cfg.entries().into_iter().collect();
    let stamp = json!({
        "command": command.as_str(),
        "seed": cfg.seed,
        "generator_seed": cfg.effective_generator_seed(),
        "config": config,
        "dataset_digest": dir.summary.dataset_digest,
        "artifacts": dir.summary.artifacts,
    });
    let mut bytes = serde_json::to_vec_pretty(&stamp).expect("stamp serializes");
    bytes.push(b'\n');
    dir.pending.push((STAMP_FILE.to_string(), bytes));
    dir.flush()?;
    Ok(dir.summary)
}
