//! Train briefly, save a checkpoint with its optimiser state, reload it and
//! check that predictions are bit-for-bit identical. Then show how damaged
//! files are rejected.
//!
//! cargo run --example checkpoint

use lantern::model::LanternConfig;
use lantern::synth::{generate_dataset, GeneratorConfig};
use lantern::train::{checkpoint_bytes, fit_config_to, load_checkpoint, parse_checkpoint, save_checkpoint, train, Batch, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate_dataset(&GeneratorConfig {
        n_users: 500,
        ..GeneratorConfig::default()
    })?;
    let tc = TrainConfig {
        epochs: 2,
        steps_per_epoch: 20,
        ..TrainConfig::default()
    };
    let outcome = train(&ds, &tc, &fit_config_to(&LanternConfig::desk(0, 0, 0), &ds.manifest))?;

    let dir = std::env::temp_dir().join("lantern-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.lntn");
    save_checkpoint(&path, &outcome.model, &outcome.adam, &tc)?;
    let restored = load_checkpoint(&path)?;
    println!(
        "{}: {} bytes, {} {} parameters, Adam step {}",
        path.display(),
        std::fs::metadata(&path)?.len(),
        restored.model.parameter_count(),
        restored.model.variant,
        restored.adam.step
    );

    let batch = Batch::gather(&ds, &[0, 1, 2, 3])?;
    let a = outcome.model.predict(&batch.x_s, &batch.x_e)?;
    let b = restored.model.predict(&batch.x_s, &batch.x_e)?;
    let identical = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("predictions identical after reload: {identical}");

    let bytes = checkpoint_bytes(&outcome.model, &outcome.adam, &tc)?;
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    for (what, data) in [
        ("bad magic", &bad_magic[..]),
        ("unknown version", &bad_version[..]),
        ("truncated", &bytes[..bytes.len() - 3]),
    ] {
        match parse_checkpoint(data) {
            Ok(_) => println!("{what}: unexpectedly accepted"),
            Err(e) => println!("{what}: {e}"),
        }
    }
    Ok(())
}
