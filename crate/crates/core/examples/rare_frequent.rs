//! Split response keys into rarely and frequently answered buckets and compare
//! the survey-only and fused models on each.
//!
//! cargo run --release --example rare_frequent

use lantern::eval::{ablation_suite, segment_eval, Averaging, DEFAULT_THRESHOLD};
use lantern::model::{LanternConfig, Variant};
use lantern::synth::{frequency_buckets, generate_dataset, GeneratorConfig, ResponseCount};
use lantern::train::TrainConfig;
use lantern::Result;

fn main() -> Result<()> {
    let ds = generate_dataset(&GeneratorConfig::default())?;
    let buckets = frequency_buckets(&ds.records, ds.n_keys(), ds.n_keys() / 4, ResponseCount::Served)?;
    println!("{} rare and {} frequent keys", buckets.rare.len(), buckets.frequent.len());

    let report = ablation_suite(&ds, &LanternConfig::desk(0, 0, 0), &TrainConfig::default(), Averaging::Micro)?;
    for variant in [Variant::SurveyOnly, Variant::Fused] {
        let preds = &report.get(variant).expect("every variant is trained").predictions;
        let seg = segment_eval(preds, &buckets.rare, &buckets.frequent, DEFAULT_THRESHOLD, Averaging::Micro)?;
        for (bucket, r) in [("rare", &seg.rare), ("frequent", &seg.frequent)] {
            println!(
                "{:<12} {bucket:<9} P {:.4}  R {:.4}  F1 {:.4}  ({} answered entries)",
                variant.as_str(),
                r.precision,
                r.recall,
                r.f1,
                r.n_scored()
            );
        }
    }
    Ok(())
}
