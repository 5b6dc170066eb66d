//! Compare survey-only, external-only and fused models trained on the same
//! split and seed, and print the comparison table.
//!
//! cargo run --release --example ablation

use lantern::eval::{ablation_suite, Averaging};
use lantern::model::LanternConfig;
use lantern::synth::{generate_dataset, GeneratorConfig};
use lantern::train::TrainConfig;
use lantern::Result;

fn main() -> Result<()> {
    let ds = generate_dataset(&GeneratorConfig::default())?;
    let report = ablation_suite(&ds, &LanternConfig::desk(0, 0, 0), &TrainConfig::default(), Averaging::Micro)?;
    println!("{:<14} {:>9} {:>9} {:>9}", "variant", "precision", "recall", "F1");
    for run in &report.runs {
        let r = &run.report;
        println!(
            "{:<14} {:>9.4} {:>9.4} {:>9.4}",
            run.variant.as_str(),
            r.precision,
            r.recall,
            r.f1
        );
    }
    print!("\n{}", report.to_csv());
    Ok(())
}
