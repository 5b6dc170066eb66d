use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LanternConfig, Variant};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Glorot,
    Zeros,
    Ones,
}

/// Name, shape and initialiser of one learned tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn dense(out: &mut Vec<ParamSpec>, prefix: &str, w: &str, b: &str, fan_in: usize, fan_out: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.{w}"),
        shape: vec![fan_in, fan_out],
        init: Init::Glorot,
    });
    out.push(ParamSpec {
        name: format!("{prefix}.{b}"),
        shape: vec![fan_out],
        init: Init::Zeros,
    });
}

fn norm(out: &mut Vec<ParamSpec>, prefix: &str, width: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.gamma"),
        shape: vec![width],
        init: Init::Ones,
    });
    out.push(ParamSpec {
        name: format!("{prefix}.beta"),
        shape: vec![width],
        init: Init::Zeros,
    });
}

/// Every tensor the given variant learns, fully determined by `cfg`.
pub fn param_specs(cfg: &LanternConfig, variant: Variant) -> Vec<ParamSpec> {
    let d = cfg.d_embed;
    let mut out = Vec::new();
    let encoder = |out: &mut Vec<ParamSpec>, prefix: &str, input: usize| {
        dense(out, prefix, "w1", "b1", input, d);
        dense(out, prefix, "w2", "b2", d, d);
    };
    if variant != Variant::ExternalOnly {
        encoder(&mut out, "survey_encoder", cfg.survey_dim);
    }
    if variant != Variant::SurveyOnly {
        encoder(&mut out, "external_encoder", cfg.external_dim);
    }
    if variant == Variant::Fused {
        dense(&mut out, "survey_proj", "w", "b", d, cfg.d_proj);
        dense(&mut out, "external_proj", "w", "b", d, cfg.d_proj);
        let t = cfg.d_token;
        for l in 0..cfg.n_layers {
            let p = format!("layer{l}");
            for proj in ["q", "v", "o"] {
                dense(&mut out, &p, &format!("w{proj}"), &format!("b{proj}"), t, t);
            }
            out.push(ParamSpec {
                name: format!("{p}.wk"),
                shape: vec![t, t],
                init: Init::Glorot,
            });
            norm(&mut out, &format!("{p}.ln1"), t);
            dense(&mut out, &format!("{p}.ffn"), "w1", "b1", t, cfg.d_ffn);
            dense(&mut out, &format!("{p}.ffn"), "w2", "b2", cfg.d_ffn, t);
            norm(&mut out, &format!("{p}.ln2"), t);
        }
        dense(&mut out, "collapse", "w", "b", cfg.d_proj, d);
        dense(&mut out, "gate", "w", "b", 2 * d, d);
    }
    norm(&mut out, "post_norm", d);
    dense(&mut out, "head", "w", "b", d, cfg.n_keys);
    out
}

/// FNV-1a, used to give every tensor its own random stream.
fn name_stream(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Learned weights, keyed by dotted name (`survey_encoder.w1`, `layer0.wq`, ...).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LanternParams {
    tensors: BTreeMap<String, Tensor>,
}

impl LanternParams {
    /// Draws every tensor of `variant`. Each tensor's values depend only on
    /// `(seed, name)`, so variants initialised with the same seed share the
    /// weights of the modules they have in common.
    pub fn init(cfg: &LanternConfig, variant: Variant, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let tensors = param_specs(cfg, variant)
            .into_iter()
            .map(|spec| {
                let t = match spec.init {
                    Init::Zeros => Tensor::zeros(&spec.shape),
                    Init::Ones => Tensor::ones(&spec.shape),
                    Init::Glorot => {
                        let (fan_in, fan_out) = (spec.shape[0], spec.shape[1]);
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(name_stream(&spec.name));
                        let data = (0..fan_in * fan_out)
                            .map(|_| rng.random_range(-limit..limit))
                            .collect();
                        Tensor::new(spec.shape.clone(), data).expect("spec shape")
                    }
                };
                (spec.name, t)
            })
            .collect();
        Ok(Self { tensors })
    }

    pub fn from_tensors(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar weights.
    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// `(name, tensor)` pairs in name order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Records every tensor on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }
}

/// Tape handles for a bound [`LanternParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Pairs names with tensors already recorded on a tape.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Accumulated gradients of every bound tensor after a backward pass.
    pub fn gradients(&self, tape: &Tape) -> BTreeMap<String, Vec<f64>> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = tape
                    .grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.value(v).len()]);
                (name.clone(), g)
            })
            .collect()
    }
}
