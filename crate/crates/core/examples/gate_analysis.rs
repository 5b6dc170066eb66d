//! Train fused models with informative and with pure-noise external features
//! and compare where their gates settle.
//!
//! cargo run --release --example gate_analysis

use lantern::eval::{gate_histogram, gate_values_for, DEFAULT_BINS};
use lantern::model::LanternConfig;
use lantern::synth::{generate_dataset, GeneratorConfig};
use lantern::train::{fit_config_to, train, TrainConfig};
use lantern::Result;

fn main() -> Result<()> {
    for informative in [0.5, 0.0] {
        let ds = generate_dataset(&GeneratorConfig {
            external_informative_fraction: informative,
            ..GeneratorConfig::default()
        })?;
        let outcome = train(&ds, &TrainConfig::default(), &fit_config_to(&LanternConfig::desk(0, 0, 0), &ds.manifest))?;
        let values = gate_values_for(&outcome.model, &ds, &outcome.split.validation)?;
        let h = gate_histogram(&values, DEFAULT_BINS)?;
        println!(
            "informative fraction {informative}: {} gate values, mean {:.3}, {:.1}% below 0.1, {:.1}% above 0.9",
            h.total(),
            h.mean,
            100.0 * h.frac_low,
            100.0 * h.frac_high
        );
        // Five-bin groups keep the text plot short.
        let groups: Vec<u64> = h.counts.chunks(5).map(|c| c.iter().sum()).collect();
        let peak = *groups.iter().max().unwrap() as f64;
        for (i, &c) in groups.iter().enumerate() {
            let bar = "#".repeat((40.0 * c as f64 / peak).ceil() as usize);
            println!("  [{:.1}, {:.1})  {c:>6}  {bar}", h.edges[5 * i], h.edges[(5 * i + 5).min(h.counts.len())]);
        }
    }
    Ok(())
}
