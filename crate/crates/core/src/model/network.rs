use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LanternConfig, Variant};
use super::params::{BoundParams, LanternParams};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Switches inside the attention stack, used to isolate pieces in tests.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockHooks {
    /// Skip the query/key/value/output projections.
    pub identity_projections: bool,
    pub residual: bool,
    pub layer_norm: bool,
    pub ffn: bool,
    /// Divide attention scores by sqrt(head_dim).
    pub scale_scores: bool,
}

impl Default for BlockHooks {
    fn default() -> Self {
        Self {
            identity_projections: false,
            residual: true,
            layer_norm: true,
            ffn: true,
            scale_scores: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hooks {
    /// Replace the learned gate with a constant.
    pub force_gate: Option<f64>,
    /// Dropout, layer norm and Gaussian noise after fusion.
    pub regularizers: bool,
    pub block: BlockHooks,
}

impl Default for Hooks {
    fn default() -> Self {
        Self {
            force_gate: None,
            regularizers: true,
            block: BlockHooks::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ForwardOptions {
    pub training: bool,
    pub hooks: Hooks,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self::default()
    }

    pub fn train() -> Self {
        Self {
            training: true,
            ..Self::default()
        }
    }

    pub fn with_hooks(mut self, hooks: Hooks) -> Self {
        self.hooks = hooks;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Survey,
    External,
}

impl Branch {
    fn prefix(self) -> &'static str {
        match self {
            Branch::Survey => "survey_encoder",
            Branch::External => "external_encoder",
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

/// Tanh approximation of GELU. Smooth everywhere, so finite-difference checks
/// never straddle a kink.
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

pub(crate) fn activation(tape: &mut Tape, x: Var) -> Var {
    tape.map(x, gelu, gelu_deriv)
}

/// `x · w + b` where `x` may carry extra leading axes.
fn linear(tape: &mut Tape, p: &BoundParams, x: Var, w: &str, b: &str) -> Result<Var> {
    let y = tape.matmul(x, p.get(w)?)?;
    tape.add(y, p.get(b)?)
}

/// Two dense layers with a GELU between them, mapping `(N, F)` to `(N, D)`.
pub fn encode(tape: &mut Tape, p: &BoundParams, cfg: &LanternConfig, branch: Branch, x: Var) -> Result<Var> {
    let expected = match branch {
        Branch::Survey => cfg.survey_dim,
        Branch::External => cfg.external_dim,
    };
    let shape = tape.shape(x);
    if shape.len() != 2 || shape[1] != expected {
        return Err(Error::shape("encode", shape, &[shape[0], expected]));
    }
    let pre = branch.prefix();
    let h = linear(tape, p, x, &format!("{pre}.w1"), &format!("{pre}.b1"))?;
    let h = activation(tape, h);
    linear(tape, p, h, &format!("{pre}.w2"), &format!("{pre}.b2"))
}

/// Multi-head attention with queries from `queries` and keys/values from
/// `context`, both `(N, T, d_token)`.
pub fn multi_head_attention(
    tape: &mut Tape,
    p: &BoundParams,
    layer: usize,
    queries: Var,
    context: Var,
    n_heads: usize,
    hooks: &BlockHooks,
) -> Result<Var> {
    let l = format!("layer{layer}");
    let (q, k, v) = if hooks.identity_projections {
        (queries, context, context)
    } else {
        (
            linear(tape, p, queries, &format!("{l}.wq"), &format!("{l}.bq"))?,
            // No key bias: it shifts every score of a query equally, which
            // softmax ignores.
            tape.matmul(context, p.get(&format!("{l}.wk"))?)?,
            linear(tape, p, context, &format!("{l}.wv"), &format!("{l}.bv"))?,
        )
    };
    let width = *tape.shape(q).last().unwrap();
    if !width.is_multiple_of(n_heads) {
        return Err(Error::InvalidArgument(format!(
            "token width {width} not divisible by {n_heads} heads"
        )));
    }
    let dh = width / n_heads;
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = tape.slice_last(q, h * dh, dh)?;
        let kh = tape.slice_last(k, h * dh, dh)?;
        let vh = tape.slice_last(v, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let mut scores = tape.matmul(qh, kt)?;
        if hooks.scale_scores {
            scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        }
        let weights = tape.softmax(scores);
        heads.push(tape.matmul(weights, vh)?);
    }
    let merged = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_last(&heads)?
    };
    if hooks.identity_projections {
        Ok(merged)
    } else {
        linear(tape, p, merged, &format!("{l}.wo"), &format!("{l}.bo"))
    }
}

/// One post-norm layer: cross-attention, residual + norm, per-token FFN,
/// residual + norm.
pub fn cross_attention_layer(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &LanternConfig,
    layer: usize,
    x: Var,
    context: Var,
    hooks: &BlockHooks,
) -> Result<Var> {
    let l = format!("layer{layer}");
    let eps = cfg.layer_norm_eps;
    let attn = multi_head_attention(tape, p, layer, x, context, cfg.n_heads, hooks)?;
    let mut x = if hooks.residual { tape.add(x, attn)? } else { attn };
    if hooks.layer_norm {
        x = tape.layer_norm(x, p.get(&format!("{l}.ln1.gamma"))?, p.get(&format!("{l}.ln1.beta"))?, eps)?;
    }
    if !hooks.ffn {
        return Ok(x);
    }
    let f = linear(tape, p, x, &format!("{l}.ffn.w1"), &format!("{l}.ffn.b1"))?;
    let f = activation(tape, f);
    let f = linear(tape, p, f, &format!("{l}.ffn.w2"), &format!("{l}.ffn.b2"))?;
    let mut y = if hooks.residual { tape.add(x, f)? } else { f };
    if hooks.layer_norm {
        y = tape.layer_norm(y, p.get(&format!("{l}.ln2.gamma"))?, p.get(&format!("{l}.ln2.beta"))?, eps)?;
    }
    Ok(y)
}

/// Shapes of intermediate values, recorded by [`cross_attention_block`].
pub type ShapeTrace = Vec<(&'static str, Vec<usize>)>;

/// Survey embeddings attend over external embeddings. Both are projected to
/// `d_proj`, viewed as `(N, n_tokens, d_token)`, passed through the layer
/// stack, flattened and collapsed back to `(N, D)`.
pub fn cross_attention_block(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &LanternConfig,
    h_s: Var,
    h_e: Var,
    hooks: &BlockHooks,
    trace: &mut ShapeTrace,
) -> Result<Var> {
    let (ss, se) = (tape.shape(h_s).to_vec(), tape.shape(h_e).to_vec());
    if ss.len() != 2 || ss != se || ss[1] != cfg.d_embed {
        return Err(Error::shape("cross_attention_block", &ss, &se));
    }
    let n = ss[0];
    let ps = linear(tape, p, h_s, "survey_proj.w", "survey_proj.b")?;
    let pe = linear(tape, p, h_e, "external_proj.w", "external_proj.b")?;
    trace.push(("projected", tape.shape(ps).to_vec()));
    let mut x = tape.reshape(ps, &[n, cfg.n_tokens, cfg.d_token])?;
    let context = tape.reshape(pe, &[n, cfg.n_tokens, cfg.d_token])?;
    trace.push(("tokens", tape.shape(x).to_vec()));
    for layer in 0..cfg.n_layers {
        x = cross_attention_layer(tape, p, cfg, layer, x, context, hooks)?;
    }
    let flat = tape.reshape(x, &[n, cfg.d_proj])?;
    let h_t = linear(tape, p, flat, "collapse.w", "collapse.b")?;
    trace.push(("h_t", tape.shape(h_t).to_vec()));
    Ok(h_t)
}

/// Values produced by [`gated_fusion`].
#[derive(Clone, Copy, Debug)]
pub struct Fusion {
    /// `h_s + g ⊙ (h_t - h_s)`, before any regulariser.
    pub mixed: Var,
    /// `mixed` after dropout, layer norm and noise.
    pub output: Var,
    pub gate: Var,
}

/// Dropout, layer norm and (training only) Gaussian noise, as configured.
fn regularize<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &LanternConfig,
    h: Var,
    opts: &ForwardOptions,
    noise: bool,
    rng: &mut R,
) -> Result<Var> {
    if !opts.hooks.regularizers {
        return Ok(h);
    }
    let h = tape.dropout(h, cfg.dropout_rate, opts.training, rng)?;
    let h = tape.layer_norm(h, p.get("post_norm.gamma")?, p.get("post_norm.beta")?, cfg.layer_norm_eps)?;
    if noise {
        tape.gaussian_noise(h, cfg.noise_sigma, opts.training, rng)
    } else {
        Ok(h)
    }
}

/// Gated residual interpolation between the survey anchor and the attended
/// representation. The gate `sigmoid([h_s ‖ h_t] · W + b)` has one value per
/// user and embedding dimension.
pub fn gated_fusion<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &LanternConfig,
    h_s: Var,
    h_t: Var,
    opts: &ForwardOptions,
    rng: &mut R,
) -> Result<Fusion> {
    if tape.shape(h_s) != tape.shape(h_t) {
        return Err(Error::shape("gated_fusion", tape.shape(h_s), tape.shape(h_t)));
    }
    let gate = match opts.hooks.force_gate {
        Some(g) => tape.constant(Tensor::full(tape.shape(h_s), g)),
        None => {
            let both = tape.concat_last(&[h_s, h_t])?;
            let logits = linear(tape, p, both, "gate.w", "gate.b")?;
            tape.sigmoid(logits)
        }
    };
    // (1 - g) ⊙ h_s + g ⊙ h_t is the same interpolation, written so that
    // g = 0 and g = 1 reproduce h_s and h_t exactly.
    let keep = tape.map(gate, |g| 1.0 - g, |_| -1.0);
    let anchor = tape.mul(keep, h_s)?;
    let attended = tape.mul(gate, h_t)?;
    let mixed = tape.add(anchor, attended)?;
    let output = regularize(tape, p, cfg, mixed, opts, true, rng)?;
    Ok(Fusion { mixed, output, gate })
}

/// Dense layer to one logit per response key, squashed by a sigmoid.
pub fn output_head(tape: &mut Tape, p: &BoundParams, h: Var) -> Result<Var> {
    let logits = linear(tape, p, h, "head.w", "head.b")?;
    Ok(tape.sigmoid(logits))
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `(N, n_keys)` probabilities.
    pub y_hat: Var,
    /// `(N, D)` gate activations; fused variant only.
    pub gate: Option<Var>,
    pub trace: ShapeTrace,
}

/// Runs `variant` on a batch already recorded on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn forward_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &LanternConfig,
    variant: Variant,
    x_s: Var,
    x_e: Var,
    opts: &ForwardOptions,
    rng: &mut R,
) -> Result<ForwardOutput> {
    let mut trace = ShapeTrace::new();
    let (features, gate) = match variant {
        Variant::SurveyOnly | Variant::ExternalOnly => {
            let (branch, x) = if variant == Variant::SurveyOnly {
                (Branch::Survey, x_s)
            } else {
                (Branch::External, x_e)
            };
            let h = encode(tape, p, cfg, branch, x)?;
            trace.push(("embedding", tape.shape(h).to_vec()));
            (regularize(tape, p, cfg, h, opts, false, rng)?, None)
        }
        Variant::Fused => {
            let n = tape.shape(x_s)[0];
            if tape.shape(x_e).first() != Some(&n) {
                return Err(Error::shape("forward", tape.shape(x_s), tape.shape(x_e)));
            }
            let h_s = encode(tape, p, cfg, Branch::Survey, x_s)?;
            let h_e = encode(tape, p, cfg, Branch::External, x_e)?;
            trace.push(("embedding", tape.shape(h_s).to_vec()));
            let h_t = cross_attention_block(tape, p, cfg, h_s, h_e, &opts.hooks.block, &mut trace)?;
            let fusion = gated_fusion(tape, p, cfg, h_s, h_t, opts, rng)?;
            (fusion.output, Some(fusion.gate))
        }
    };
    let y_hat = output_head(tape, p, features)?;
    trace.push(("y_hat", tape.shape(y_hat).to_vec()));
    Ok(ForwardOutput { y_hat, gate, trace })
}

/// Mask-aware binary cross-entropy: mean over entries with a non-zero mask.
pub fn masked_bce_loss(tape: &mut Tape, y_hat: Var, mask: &[i8]) -> Result<Var> {
    tape.masked_bce(y_hat, mask)
}

/// A configured network together with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Lantern {
    pub config: LanternConfig,
    pub variant: Variant,
    pub params: LanternParams,
}

impl Lantern {
    pub fn new(config: LanternConfig, variant: Variant, seed: u64) -> Result<Self> {
        let params = LanternParams::init(&config, variant, seed)?;
        Ok(Self {
            config,
            variant,
            params,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    /// Binds the weights and inputs to `tape` and runs the forward pass.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        x_s: &Tensor,
        x_e: &Tensor,
        trainable: bool,
        opts: &ForwardOptions,
        rng: &mut R,
    ) -> Result<(ForwardOutput, BoundParams)> {
        let bound = self.params.bind(tape, trainable);
        let xs = tape.constant(x_s.clone());
        let xe = tape.constant(x_e.clone());
        let out = forward_on_tape(tape, &bound, &self.config, self.variant, xs, xe, opts, rng)?;
        Ok((out, bound))
    }

    /// Eval-mode probabilities, `(N, n_keys)`.
    pub fn predict(&self, x_s: &Tensor, x_e: &Tensor) -> Result<Tensor> {
        self.predict_with(x_s, x_e, &ForwardOptions::eval())
    }

    pub fn predict_with(&self, x_s: &Tensor, x_e: &Tensor, opts: &ForwardOptions) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = self.forward(&mut tape, x_s, x_e, false, opts, &mut rng)?;
        Ok(tape.value(out.y_hat).clone())
    }

    /// All `N × D` eval-mode gate activations in row-major order.
    pub fn gate_values(&self, x_s: &Tensor, x_e: &Tensor) -> Result<Vec<f64>> {
        if self.variant != Variant::Fused {
            return Err(Error::InvalidArgument(format!(
                "{} model has no gate",
                self.variant
            )));
        }
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = self.forward(&mut tape, x_s, x_e, false, &ForwardOptions::eval(), &mut rng)?;
        Ok(tape.value(out.gate.expect("fused gate")).data().to_vec())
    }
}
