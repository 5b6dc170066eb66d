//! Sample a synthetic adaptive-survey population, inspect its key space and
//! response sparsity, and write it to disk.
//!
//! cargo run --example generate_survey [out_dir]

use lantern::synth::{
    dataset_digest, frequency_buckets, generate_dataset, response_counts, save_dataset, GeneratorConfig,
    QuestionType, ResponseCount,
};
use lantern::Result;

fn main() -> Result<()> {
    let cfg = GeneratorConfig {
        n_users: 2_000,
        ..GeneratorConfig::default()
    };
    let ds = generate_dataset(&cfg)?;
    let m = &ds.manifest;

    let questions = m.questions();
    let of_type = |t| questions.iter().filter(|q| q.question_type == t).count();
    println!(
        "{} users, {} questions ({} binary, {} single-choice, {} multi-choice), {} response keys",
        ds.n_users(),
        questions.len(),
        of_type(QuestionType::Binary),
        of_type(QuestionType::SingleChoice),
        of_type(QuestionType::MultiChoice),
        ds.n_keys()
    );

    let cells = (ds.n_users() * ds.n_keys()) as f64;
    let served: usize = response_counts(&ds.records, ds.n_keys(), ResponseCount::Served).iter().sum();
    let favourable: usize = response_counts(&ds.records, ds.n_keys(), ResponseCount::Favorable).iter().sum();
    println!(
        "mask: {:.1}% answered, {:.1}% of answers favourable",
        100.0 * served as f64 / cells,
        100.0 * favourable as f64 / served as f64
    );

    let k = ds.n_keys() / 4;
    let buckets = frequency_buckets(&ds.records, ds.n_keys(), k, ResponseCount::Served)?;
    let counts = response_counts(&ds.records, ds.n_keys(), ResponseCount::Served);
    let mean = |keys: &std::collections::BTreeSet<usize>| keys.iter().map(|&k| counts[k]).sum::<usize>() as f64 / keys.len() as f64;
    println!(
        "{k} rarest keys answered {:.0} times on average, {k} most frequent {:.0} times",
        mean(&buckets.rare),
        mean(&buckets.frequent)
    );

    let first = &ds.records[0];
    println!(
        "user 0: x_s[..4] = {:.3?}, x_e[..4] = {:.3?}, mask[..12] = {:?}",
        &first.x_s[..4],
        &first.x_e[..4],
        &first.mask[..12]
    );

    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example-data".into());
    save_dataset(&ds, out.as_ref())?;
    println!("wrote {out} (sha256 {})", dataset_digest(&ds));
    Ok(())
}
