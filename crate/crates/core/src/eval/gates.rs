use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 50;

/// Equal-width histogram of gate activations over [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct GateHistogram {
    /// `n_bins + 1` edges from 0 to 1.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean: f64,
    /// Share of values below 0.1.
    pub frac_low: f64,
    /// Share of values above 0.9.
    pub frac_high: f64,
}

impl GateHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `bin_left,bin_right,count`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_left,bin_right,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        s
    }
}

/// Bins gate values, which must lie strictly inside (0, 1).
pub fn gate_histogram(values: &[f64], n_bins: usize) -> Result<GateHistogram> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {n_bins}")));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("no gate values to bin".into()));
    }
    let mut counts = vec![0u64; n_bins];
    let (mut sum, mut low, mut high) = (0.0, 0usize, 0usize);
    for (i, &v) in values.iter().enumerate() {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidArgument(format!("gate value {v} at {i} is outside (0, 1)")));
        }
        counts[((v * n_bins as f64) as usize).min(n_bins - 1)] += 1;
        sum += v;
        low += usize::from(v < 0.1);
        high += usize::from(v > 0.9);
    }
    let n = values.len() as f64;
    Ok(GateHistogram {
        edges: (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect(),
        counts,
        mean: sum / n,
        frac_low: low as f64 / n,
        frac_high: high as f64 / n,
    })
}
