//! Run the fused network forward on a few users and follow the tensor shapes
//! through encoders, tokenisation, cross-attention and the gated fusion.
//!
//! cargo run --example cross_attention

use lantern::autodiff::{Tape, Tensor};
use lantern::model::{ForwardOptions, Lantern, LanternConfig, Variant};
use lantern::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let cfg = LanternConfig::desk(24, 40, 100);
    let model = Lantern::new(cfg.clone(), Variant::Fused, 0)?;
    println!(
        "D={} projected to {} = {} tokens x {}, {} heads x {} layers, {} parameters",
        cfg.d_embed,
        cfg.d_proj,
        cfg.n_tokens,
        cfg.d_token,
        cfg.n_heads,
        cfg.n_layers,
        model.parameter_count()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 4;
    let mut random = |w: usize| Tensor::new(vec![n, w], (0..n * w).map(|_| rng.random_range(-1.0..1.0)).collect());
    let (xs, xe) = (random(cfg.survey_dim)?, random(cfg.external_dim)?);

    let mut tape = Tape::new();
    let (out, _) = model.forward(&mut tape, &xs, &xe, false, &ForwardOptions::eval(), &mut ChaCha8Rng::seed_from_u64(0))?;
    for (label, shape) in &out.trace {
        println!("{label:>10}: {shape:?}");
    }

    let gate = tape.value(out.gate.expect("fused model has a gate"));
    let y = tape.value(out.y_hat);
    for u in 0..n {
        let g = &gate.data()[u * cfg.d_embed..(u + 1) * cfg.d_embed];
        let p = &y.data()[u * cfg.n_keys..(u + 1) * cfg.n_keys];
        println!(
            "user {u}: mean gate {:.3}, first scores {:.3?}",
            g.iter().sum::<f64>() / g.len() as f64,
            &p[..5]
        );
    }
    Ok(())
}
