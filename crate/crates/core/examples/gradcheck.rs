//! Record a small two-layer network on a tape, backpropagate a masked loss and
//! confirm every gradient against central finite differences.
//!
//! cargo run --example gradcheck

use lantern::autodiff::{grad_check, Tape, Tensor, Var};
use lantern::Result;

fn mlp(tape: &mut Tape, x: Var, p: &[Var]) -> Result<Var> {
    let h = tape.matmul(x, p[0])?;
    let h = tape.add(h, p[1])?;
    let h = tape.tanh(h);
    let o = tape.matmul(h, p[2])?;
    Ok(tape.sigmoid(o))
}

fn main() -> Result<()> {
    let x = Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.25, -0.75]])?;
    let mask = [1, 0, -1, -1, 1, 0];
    let params = vec![
        ("w1".to_string(), Tensor::from_rows(&[vec![0.1, -0.2], vec![0.4, 0.3], vec![-0.5, 0.2]])?),
        ("b1".to_string(), Tensor::vector(vec![0.05, -0.1])),
        ("w2".to_string(), Tensor::from_rows(&[vec![0.3, -0.6, 0.9], vec![-0.2, 0.7, 0.1]])?),
    ];

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let xv = tape.constant(x.clone());
    let y = mlp(&mut tape, xv, &vars)?;
    let loss = tape.masked_bce(y, &mask)?;
    tape.backward(loss)?;
    println!("loss = {:.6}", tape.value(loss).item());
    for ((name, _), v) in params.iter().zip(&vars) {
        println!("d loss / d {name} = {:?}", tape.grad(*v).unwrap());
    }

    let report = grad_check(
        |tape, p| {
            let xv = tape.constant(x.clone());
            let y = mlp(tape, xv, p)?;
            tape.masked_bce(y, &mask)
        },
        &params,
        1e-6,
        1e-6,
    )?;
    for e in &report.entries {
        println!("{:>3}: max rel error {:.2e}", e.name, e.max_rel_error);
    }
    println!("gradient check {}", if report.passed() { "passed" } else { "FAILED" });
    Ok(())
}
