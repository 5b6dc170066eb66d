use super::metrics::{Averaging, MetricsReport, Predictions, DEFAULT_THRESHOLD};
use crate::error::Result;
use crate::model::{Lantern, LanternConfig, Variant};
use crate::synth::Dataset;
use crate::train::{fit_config_to, train, Batch, TrainConfig, TrainOutcome};

const PREDICT_CHUNK: usize = 512;

/// Eval-mode predictions for `users` of `dataset`, in that order.
pub fn predict_users(model: &Lantern, dataset: &Dataset, users: &[usize]) -> Result<Predictions> {
    let mut y_hat = Vec::with_capacity(users.len() * dataset.n_keys());
    let mut mask = Vec::with_capacity(users.len() * dataset.n_keys());
    for chunk in users.chunks(PREDICT_CHUNK) {
        let batch = Batch::gather(dataset, chunk)?;
        y_hat.extend_from_slice(model.predict(&batch.x_s, &batch.x_e)?.data());
        mask.extend_from_slice(&batch.mask);
    }
    Predictions::new(dataset.n_keys(), y_hat, mask)
}

/// Eval-mode gate activations for `users`, `N × D` values in row order.
pub fn gate_values_for(model: &Lantern, dataset: &Dataset, users: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(users.len() * model.config.d_embed);
    for chunk in users.chunks(PREDICT_CHUNK) {
        let batch = Batch::gather(dataset, chunk)?;
        out.extend(model.gate_values(&batch.x_s, &batch.x_e)?);
    }
    Ok(out)
}

/// One trained variant with its held-out predictions.
#[derive(Clone, Debug)]
pub struct AblationRun {
    pub variant: Variant,
    pub outcome: TrainOutcome,
    /// Predictions on the validation users.
    pub predictions: Predictions,
    pub report: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    pub fn get(&self, variant: Variant) -> Option<&AblationRun> {
        self.runs.iter().find(|r| r.variant == variant)
    }

    /// `variant,precision,recall,f1`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,precision,recall,f1\n");
        for r in &self.runs {
            let m = &r.report;
            s.push_str(&format!("{},{},{},{}\n", r.variant, m.precision, m.recall, m.f1));
        }
        s
    }
}

/// Trains survey-only, external-only and fused models on the same split and
/// seed, then scores each on the held-out users at threshold 0.5.
///
/// The data-dependent dimensions of `model_cfg` are taken from `dataset`.
pub fn ablation_suite(
    dataset: &Dataset,
    model_cfg: &LanternConfig,
    train_cfg: &TrainConfig,
    averaging: Averaging,
) -> Result<AblationReport> {
    let cfg = fit_config_to(model_cfg, &dataset.manifest);
    let runs = Variant::ALL
        .iter()
        .map(|&variant| {
            let tc = TrainConfig {
                variant,
                ..train_cfg.clone()
            };
            let outcome = train(dataset, &tc, &cfg)?;
            let predictions = predict_users(&outcome.model, dataset, &outcome.split.validation)?;
            let report = predictions.report(DEFAULT_THRESHOLD, averaging)?;
            Ok(AblationRun {
                variant,
                outcome,
                predictions,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport { runs })
}
