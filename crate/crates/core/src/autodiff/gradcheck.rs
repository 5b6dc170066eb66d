use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Per-parameter outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the element with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| !e.flagged)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| e.flagged)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar program against central finite
/// differences, one parameter element at a time.
///
/// `f` receives a fresh tape with `params` recorded as leaves (in order) and
/// must return the scalar loss. It is called `1 + 2 * total_elements` times and
/// must be deterministic.
pub fn grad_check<F>(f: F, params: &[(String, Tensor)], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be > 0, got {eps}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("leaf gradient").to_vec())
        .collect();

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut entries = Vec::with_capacity(params.len());
    for (p, (name, _)) in params.iter().enumerate() {
        let mut worst = (0.0, 0usize, 0.0, 0.0);
        for (i, &a) in analytic[p].iter().enumerate() {
            let orig = values[p].data()[i];
            values[p].data_mut()[i] = orig + eps;
            let plus = eval(&values)?;
            values[p].data_mut()[i] = orig - eps;
            let minus = eval(&values)?;
            values[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(a, numeric);
            if err > worst.0 || i == 0 {
                worst = (err, i, a, numeric);
            }
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            analytic: worst.2,
            numeric: worst.3,
            flagged: !(worst.0 < tol),
        });
    }
    Ok(GradCheckReport {
        tolerance: tol,
        entries,
    })
}
