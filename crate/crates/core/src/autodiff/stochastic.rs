use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Random regulariser kinds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StochasticOp {
    /// Inverted dropout: kept units are divided by `1 - rate`.
    Dropout(f64),
    /// Adds independent `N(0, sigma^2)` noise to every element.
    GaussianNoise(f64),
}

impl StochasticOp {
    pub fn validate(self) -> Result<()> {
        match self {
            Self::Dropout(rate) if !(0.0..1.0).contains(&rate) => Err(Error::InvalidArgument(
                format!("dropout rate must lie in [0, 1), got {rate}"),
            )),
            Self::GaussianNoise(sigma) if !(sigma >= 0.0) || !sigma.is_finite() => Err(
                Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")),
            ),
            _ => Ok(()),
        }
    }
}

impl Tape {
    /// Applies `op` when `training` is set. In eval mode, or when the op is a
    /// no-op (rate or sigma of zero), `x` itself is returned.
    ///
    /// The random draw is recorded as a constant, so gradients treat the
    /// dropout mask and the noise sample as fixed.
    pub fn stochastic<R: Rng + ?Sized>(
        &mut self,
        op: StochasticOp,
        x: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        op.validate()?;
        if !training {
            return Ok(x);
        }
        let shape = self.shape(x).to_vec();
        let n = self.value(x).len();
        match op {
            StochasticOp::Dropout(rate) => {
                if rate == 0.0 {
                    return Ok(x);
                }
                let keep = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..n)
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                let m = self.constant(Tensor::new(shape, mask)?);
                self.mul(x, m)
            }
            StochasticOp::GaussianNoise(sigma) => {
                if sigma == 0.0 {
                    return Ok(x);
                }
                let normal = Normal::new(0.0, sigma).expect("validated sigma");
                let noise: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
                let e = self.constant(Tensor::new(shape, noise)?);
                self.add(x, e)
            }
        }
    }

    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        self.stochastic(StochasticOp::Dropout(rate), x, training, rng)
    }

    pub fn gaussian_noise<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        sigma: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        self.stochastic(StochasticOp::GaussianNoise(sigma), x, training, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input(tape: &mut Tape) -> Var {
        tape.leaf(Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, -0.25, 1.5]).unwrap())
    }

    #[test]
    fn eval_mode_is_identity() {
        let mut tape = Tape::new();
        let x = input(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = tape.dropout(x, 0.5, false, &mut rng).unwrap();
        let n = tape.gaussian_noise(x, 0.1, false, &mut rng).unwrap();
        assert_eq!(d, x);
        assert_eq!(n, x);
        assert_eq!(tape.value(d), tape.value(x));
    }

    #[test]
    fn zero_rate_dropout_in_training_is_identity() {
        let mut tape = Tape::new();
        let x = input(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = tape.dropout(x, 0.0, true, &mut rng).unwrap();
        assert_eq!(tape.value(d), tape.value(x));
    }

    #[test]
    fn rate_of_one_is_rejected() {
        let mut tape = Tape::new();
        let x = input(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
        assert!(tape.dropout(x, 1.5, false, &mut rng).is_err());
        assert!(tape.gaussian_noise(x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn noise_is_reproducible_from_seed() {
        let run = || {
            let mut tape = Tape::new();
            let x = input(&mut tape);
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let y = tape.gaussian_noise(x, 0.1, true, &mut rng).unwrap();
            tape.value(y).clone()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        let mut tape = Tape::new();
        let x = input(&mut tape);
        assert_ne!(&a, tape.value(x));
    }

    #[test]
    fn dropout_scales_kept_units() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1000]));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = tape.dropout(x, 0.2, true, &mut rng).unwrap();
        let vals = tape.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
        let kept = vals.iter().filter(|&&v| v > 0.0).count();
        assert!((700..900).contains(&kept), "kept {kept}");
    }
}
