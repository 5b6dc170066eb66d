//! Score one trained model across decision thresholds. Recall can only fall
//! as the threshold rises; precision usually climbs.
//!
//! cargo run --release --example threshold_sweep

use lantern::eval::{predict_users, threshold_sweep, Averaging, DEFAULT_THRESHOLDS};
use lantern::model::LanternConfig;
use lantern::synth::{generate_dataset, GeneratorConfig};
use lantern::train::{fit_config_to, train, TrainConfig};
use lantern::Result;

fn main() -> Result<()> {
    let ds = generate_dataset(&GeneratorConfig::default())?;
    let outcome = train(&ds, &TrainConfig::default(), &fit_config_to(&LanternConfig::desk(0, 0, 0), &ds.manifest))?;
    let preds = predict_users(&outcome.model, &ds, &outcome.split.validation)?;

    for (name, grid) in [
        ("default grid", DEFAULT_THRESHOLDS.to_vec()),
        ("fine grid", (1..10).map(|i| i as f64 / 10.0).collect()),
    ] {
        println!("{name}");
        for avg in [Averaging::Micro, Averaging::Macro] {
            let sweep = threshold_sweep(&preds, &grid, avg)?;
            for r in &sweep.rows {
                println!(
                    "  {avg:?} t={:.1}  P {:.4}  R {:.4}  F1 {:.4}",
                    r.threshold, r.precision, r.recall, r.f1
                );
            }
        }
    }
    Ok(())
}
