use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which inputs feed the output head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Survey and external encoders joined by cross-attention and the gate.
    Fused,
    /// Survey encoder straight into the head.
    SurveyOnly,
    /// External encoder straight into the head.
    ExternalOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::SurveyOnly, Variant::ExternalOnly, Variant::Fused];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Fused => "fused",
            Variant::SurveyOnly => "survey_only",
            Variant::ExternalOnly => "external_only",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(Variant::Fused),
            "survey_only" => Ok(Variant::SurveyOnly),
            "external_only" => Ok(Variant::ExternalOnly),
            _ => Err(Error::Config(format!(
                "variant must be fused, survey_only or external_only, got `{s}`"
            ))),
        }
    }
}

/// Network dimensions and regulariser strengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanternConfig {
    pub survey_dim: usize,
    pub external_dim: usize,
    /// Embedding width produced by each encoder.
    pub d_embed: usize,
    /// Width each embedding is projected to before tokenisation.
    pub d_proj: usize,
    pub n_tokens: usize,
    pub d_token: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Hidden width of the per-token feed-forward network.
    pub d_ffn: usize,
    /// Number of response keys scored by the head.
    pub n_keys: usize,
    pub dropout_rate: f64,
    pub noise_sigma: f64,
    pub layer_norm_eps: f64,
}

impl LanternConfig {
    /// Small dimensions that train in seconds on a CPU.
    pub fn desk(survey_dim: usize, external_dim: usize, n_keys: usize) -> Self {
        Self {
            survey_dim,
            external_dim,
            d_embed: 32,
            d_proj: 64,
            n_tokens: 8,
            d_token: 8,
            n_heads: 2,
            n_layers: 2,
            d_ffn: 128,
            n_keys,
            dropout_rate: 0.1,
            noise_sigma: 0.1,
            layer_norm_eps: 1e-5,
        }
    }

    /// 512-wide embeddings projected to 2048 and viewed as 64 tokens of 32,
    /// eight heads, three layers.
    pub fn full_scale(survey_dim: usize, external_dim: usize, n_keys: usize) -> Self {
        Self {
            d_embed: 512,
            d_proj: 2048,
            n_tokens: 64,
            d_token: 32,
            n_heads: 8,
            n_layers: 3,
            d_ffn: 4096,
            ..Self::desk(survey_dim, external_dim, n_keys)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_token / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for (name, v) in [
            ("survey_dim", self.survey_dim),
            ("external_dim", self.external_dim),
            ("d_embed", self.d_embed),
            ("d_proj", self.d_proj),
            ("n_tokens", self.n_tokens),
            ("d_token", self.d_token),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ffn", self.d_ffn),
            ("n_keys", self.n_keys),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.n_tokens * self.d_token != self.d_proj {
            return bad(format!(
                "n_tokens * d_token = {} * {} must equal d_proj = {}",
                self.n_tokens, self.d_token, self.d_proj
            ));
        }
        if !self.d_token.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_token = {} is not divisible by n_heads = {}",
                self.d_token, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad(format!("layer_norm_eps must be > 0, got {}", self.layer_norm_eps));
        }
        Ok(())
    }
}
