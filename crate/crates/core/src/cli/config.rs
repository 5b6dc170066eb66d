//! Flat `key = value` run configuration.
//!
//! One file covers generation, the network, training and evaluation. Blank
//! lines and `#` comments are ignored; a key may appear at most once per file.
//! Later sources override earlier ones: defaults, then the file, then
//! `--set` and the dedicated flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{Averaging, DEFAULT_BINS, DEFAULT_THRESHOLD, DEFAULT_THRESHOLDS};
use crate::model::{LanternConfig, Variant};
use crate::synth::{GeneratorConfig, ResponseCount};
use crate::train::TrainConfig;

/// Evaluation settings shared by `evaluate`, `ablate`, `sweep` and `gate-report`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub threshold: f64,
    pub grid: Vec<f64>,
    pub averaging: Averaging,
    pub gate_bins: usize,
    /// Keys per frequency bucket; 0 picks a quarter of the key space.
    pub bucket_size: usize,
    pub bucket_by: ResponseCount,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            grid: DEFAULT_THRESHOLDS.to_vec(),
            averaging: Averaging::Micro,
            gate_bins: DEFAULT_BINS,
            bucket_size: 0,
            bucket_by: ResponseCount::Served,
        }
    }
}

impl EvalOptions {
    /// Catches bad thresholds and grids before any training is done.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let in_unit = |t: f64| t > 0.0 && t < 1.0;
        if !in_unit(self.threshold) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if self.grid.is_empty() {
            return bad("grid is empty".into());
        }
        if let Some(t) = self.grid.iter().find(|&&t| !in_unit(t)) {
            return bad(format!("grid thresholds must lie in (0, 1), got {t}"));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return bad(format!("grid must be strictly increasing, got {:?}", self.grid));
        }
        if self.gate_bins < 2 {
            return bad(format!("gate_bins must be >= 2, got {}", self.gate_bins));
        }
        Ok(())
    }
}

/// Input artifacts a command may read. Unset paths are generated or
/// trained in-process from the rest of the config.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Inputs {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub old_manifest: Option<PathBuf>,
    pub new_manifest: Option<PathBuf>,
}

/// Every setting of a run. Data-dependent model dimensions (input widths,
/// key count) are taken from the dataset, not from here.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Training seed; also the generator seed unless `generator_seed` is set.
    pub seed: u64,
    pub generator_seed: Option<u64>,
    pub generator: GeneratorConfig,
    pub model: LanternConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub inputs: Inputs,
}

impl Default for RunConfig {
    fn default() -> Self {
        let generator = GeneratorConfig::default();
        let model = LanternConfig::desk(generator.survey_dim, generator.external_dim, 1);
        Self {
            seed: 0,
            generator_seed: None,
            generator,
            model,
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            inputs: Inputs::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_with<T>(key: &str, value: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<T> {
    f(value).map_err(|e| Error::Config(format!("`{key}`: {e}")))
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

/// Comma-separated thresholds, e.g. `0.3,0.5,0.7`.
pub fn parse_grid(value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| parse::<f64>("grid", s))
        .collect()
}

fn bucket_by_str(r: ResponseCount) -> &'static str {
    match r {
        ResponseCount::Served => "served",
        ResponseCount::Favorable => "favorable",
    }
}

fn averaging_str(a: Averaging) -> &'static str {
    match a {
        Averaging::Micro => "micro",
        Averaging::Macro => "macro",
    }
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Seed handed to the generator.
    pub fn effective_generator_seed(&self) -> u64 {
        self.generator_seed.unwrap_or(self.seed)
    }

    /// Generator settings with the effective seed applied.
    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            seed: self.effective_generator_seed(),
            ..self.generator.clone()
        }
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (g, m, t, e, i) = (
            &mut self.generator,
            &mut self.model,
            &mut self.train,
            &mut self.eval,
            &mut self.inputs,
        );
        match key {
            "seed" => self.seed = parse(key, value)?,
            "generator_seed" => {
                self.generator_seed = if value.is_empty() { None } else { Some(parse(key, value)?) }
            }

            "n_users" => g.n_users = parse(key, value)?,
            "latent_dim" => g.latent_dim = parse(key, value)?,
            "n_binary" => g.n_binary = parse(key, value)?,
            "n_single" => g.n_single = parse(key, value)?,
            "n_multi" => g.n_multi = parse(key, value)?,
            "min_options" => g.min_options = parse(key, value)?,
            "max_options" => g.max_options = parse(key, value)?,
            "survey_dim" => g.survey_dim = parse(key, value)?,
            "external_dim" => g.external_dim = parse(key, value)?,
            "survey_noise_sigma" => g.survey_noise_sigma = parse(key, value)?,
            "external_noise_sigma" => g.external_noise_sigma = parse(key, value)?,
            "external_informative_fraction" => g.external_informative_fraction = parse(key, value)?,
            "survey_latent_fraction" => g.survey_latent_fraction = parse(key, value)?,
            "common_serve_probability" => g.common_serve_probability = parse(key, value)?,
            "rare_serve_probability" => g.rare_serve_probability = parse(key, value)?,
            "rare_key_fraction" => g.rare_key_fraction = parse(key, value)?,
            "rare_key_survey_alignment" => g.rare_key_survey_alignment = parse(key, value)?,
            "cycle_id" => g.cycle_id = parse(key, value)?,

            "d_embed" => m.d_embed = parse(key, value)?,
            "d_proj" => m.d_proj = parse(key, value)?,
            "n_tokens" => m.n_tokens = parse(key, value)?,
            "d_token" => m.d_token = parse(key, value)?,
            "n_heads" => m.n_heads = parse(key, value)?,
            "n_layers" => m.n_layers = parse(key, value)?,
            "d_ffn" => m.d_ffn = parse(key, value)?,
            "dropout_rate" => m.dropout_rate = parse(key, value)?,
            "noise_sigma" => m.noise_sigma = parse(key, value)?,
            "layer_norm_eps" => m.layer_norm_eps = parse(key, value)?,

            "learning_rate" => t.learning_rate = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "epsilon" => t.epsilon = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "steps_per_epoch" => t.steps_per_epoch = parse(key, value)?,
            "validation_steps" => t.validation_steps = parse(key, value)?,
            "validation_fraction" => t.validation_fraction = parse(key, value)?,
            "variant" => t.variant = parse_with(key, value, Variant::from_str)?,

            "threshold" => e.threshold = parse(key, value)?,
            "grid" => e.grid = parse_with(key, value, parse_grid)?,
            "averaging" => e.averaging = parse_with(key, value, Averaging::from_str)?,
            "gate_bins" => e.gate_bins = parse(key, value)?,
            "bucket_size" => e.bucket_size = parse(key, value)?,
            "bucket_by" => e.bucket_by = parse_with(key, value, ResponseCount::from_str)?,

            "dataset" => i.dataset = parse_path(value),
            "checkpoint" => i.checkpoint = parse_path(value),
            "old_manifest" => i.old_manifest = parse_path(value),
            "new_manifest" => i.new_manifest = parse_path(value),

            _ => return Err(Error::UnknownConfigKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies a `key=value` override as given to `--set`.
    pub fn set_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not of the form key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Applies every setting in a config file's text. `origin` names the
    /// source in error messages.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
            if line.is_empty() {
                continue;
            }
            let malformed = |message: String| Error::MalformedLine {
                path: origin.to_path_buf(),
                line: n + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| malformed(format!("expected `key = value`, got `{line}`")))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(malformed(format!("`{k}` is set twice")));
            }
            self.set(k, v.trim()).map_err(|e| match e {
                Error::Config(message) => malformed(message),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Every key with its resolved value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (g, m, t, e, i) = (&self.generator, &self.model, &self.train, &self.eval, &self.inputs);
        let grid = e.grid.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("seed", self.seed.to_string()),
            ("generator_seed", self.generator_seed.map(|s| s.to_string()).unwrap_or_default()),
            ("n_users", g.n_users.to_string()),
            ("latent_dim", g.latent_dim.to_string()),
            ("n_binary", g.n_binary.to_string()),
            ("n_single", g.n_single.to_string()),
            ("n_multi", g.n_multi.to_string()),
            ("min_options", g.min_options.to_string()),
            ("max_options", g.max_options.to_string()),
            ("survey_dim", g.survey_dim.to_string()),
            ("external_dim", g.external_dim.to_string()),
            ("survey_noise_sigma", g.survey_noise_sigma.to_string()),
            ("external_noise_sigma", g.external_noise_sigma.to_string()),
            ("external_informative_fraction", g.external_informative_fraction.to_string()),
            ("survey_latent_fraction", g.survey_latent_fraction.to_string()),
            ("common_serve_probability", g.common_serve_probability.to_string()),
            ("rare_serve_probability", g.rare_serve_probability.to_string()),
            ("rare_key_fraction", g.rare_key_fraction.to_string()),
            ("rare_key_survey_alignment", g.rare_key_survey_alignment.to_string()),
            ("cycle_id", g.cycle_id.to_string()),
            ("d_embed", m.d_embed.to_string()),
            ("d_proj", m.d_proj.to_string()),
            ("n_tokens", m.n_tokens.to_string()),
            ("d_token", m.d_token.to_string()),
            ("n_heads", m.n_heads.to_string()),
            ("n_layers", m.n_layers.to_string()),
            ("d_ffn", m.d_ffn.to_string()),
            ("dropout_rate", m.dropout_rate.to_string()),
            ("noise_sigma", m.noise_sigma.to_string()),
            ("layer_norm_eps", m.layer_norm_eps.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("epsilon", t.epsilon.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("epochs", t.epochs.to_string()),
            ("steps_per_epoch", t.steps_per_epoch.to_string()),
            ("validation_steps", t.validation_steps.to_string()),
            ("validation_fraction", t.validation_fraction.to_string()),
            ("variant", t.variant.to_string()),
            ("threshold", e.threshold.to_string()),
            ("grid", grid),
            ("averaging", averaging_str(e.averaging).to_string()),
            ("gate_bins", e.gate_bins.to_string()),
            ("bucket_size", e.bucket_size.to_string()),
            ("bucket_by", bucket_by_str(e.bucket_by).to_string()),
            ("dataset", path_str(&i.dataset)),
            ("checkpoint", path_str(&i.checkpoint)),
            ("old_manifest", path_str(&i.old_manifest)),
            ("new_manifest", path_str(&i.new_manifest)),
        ]
    }

    /// The resolved config in the same format [`RunConfig::load`] reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
