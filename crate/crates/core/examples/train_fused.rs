//! Train the fused model on a synthetic population with masked BCE and Adam,
//! printing the per-epoch losses and held-out precision/recall/F1.
//!
//! cargo run --release --example train_fused

use lantern::eval::{predict_users, Averaging, DEFAULT_THRESHOLD};
use lantern::model::{LanternConfig, Variant};
use lantern::synth::{generate_dataset, GeneratorConfig};
use lantern::train::{fit_config_to, train, TrainConfig};
use lantern::Result;

fn main() -> Result<()> {
    let ds = generate_dataset(&GeneratorConfig::default())?;
    let model_cfg = fit_config_to(&LanternConfig::desk(0, 0, 0), &ds.manifest);
    let train_cfg = TrainConfig {
        variant: Variant::Fused,
        ..TrainConfig::default()
    };

    let outcome = train(&ds, &train_cfg, &model_cfg)?;
    println!(
        "{} parameters, {} training / {} validation users",
        outcome.model.parameter_count(),
        outcome.split.train.len(),
        outcome.split.validation.len()
    );
    println!("initial validation loss {:.4}", outcome.log.initial_val_loss);
    print!("{}", outcome.log.to_csv());

    let preds = predict_users(&outcome.model, &ds, &outcome.split.validation)?;
    let r = preds.report(DEFAULT_THRESHOLD, Averaging::Micro)?;
    println!(
        "held out at t={}: precision {:.4}, recall {:.4}, F1 {:.4} over {} answered entries",
        r.threshold,
        r.precision,
        r.recall,
        r.f1,
        r.n_scored()
    );
    Ok(())
}
