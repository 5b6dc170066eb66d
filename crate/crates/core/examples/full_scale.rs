//! Build the full-size configuration (512-wide embeddings, 2048-unit
//! projections viewed as 64 tokens of 32, eight heads, three layers), run a
//! two-user forward pass and break the parameter count down by component.
//!
//! cargo run --release --example full_scale

use std::collections::BTreeMap;

use lantern::autodiff::{Tape, Tensor};
use lantern::model::{ForwardOptions, Lantern, LanternConfig, Variant};
use lantern::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let cfg = LanternConfig::full_scale(1024, 1024, 2500);
    let model = Lantern::new(cfg.clone(), Variant::Fused, 0)?;

    let mut by_component: BTreeMap<&str, usize> = BTreeMap::new();
    for (name, t) in model.params.iter() {
        let component = name.split('.').next().unwrap_or(name);
        *by_component.entry(component).or_default() += t.len();
    }
    for (component, n) in &by_component {
        println!("{component:>16}: {n:>10}");
    }
    println!("{:>16}: {:>10}", "total", model.parameter_count());

    let xs = Tensor::full(&[2, cfg.survey_dim], 0.1);
    let xe = Tensor::full(&[2, cfg.external_dim], -0.1);
    let mut tape = Tape::new();
    let (out, _) = model.forward(&mut tape, &xs, &xe, false, &ForwardOptions::eval(), &mut ChaCha8Rng::seed_from_u64(0))?;
    for (label, shape) in &out.trace {
        println!("{label:>10}: {shape:?}");
    }
    Ok(())
}
