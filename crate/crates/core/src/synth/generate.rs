use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use super::manifest::{Dataset, DatasetManifest, QuestionSpec, QuestionType, UserRecord};
use crate::error::{Error, Result};

/// Parameters of the latent-factor survey population.
///
/// Each user draws latent traits `z ~ N(0, I)`. Survey features load on the
/// first `survey_latent_fraction` of the traits, informative external features
/// load on all of them, and every response key is a thresholded linear
/// function of `z`. Questions are served independently per user.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub n_users: usize,
    pub latent_dim: usize,
    pub n_binary: usize,
    pub n_single: usize,
    pub n_multi: usize,
    /// Options per single/multi-choice question are drawn from this range.
    pub min_options: usize,
    pub max_options: usize,
    pub survey_dim: usize,
    pub external_dim: usize,
    pub survey_noise_sigma: f64,
    pub external_noise_sigma: f64,
    /// Fraction of external features driven by latent traits; the rest are noise.
    pub external_informative_fraction: f64,
    /// Fraction of latent traits visible to the survey features.
    pub survey_latent_fraction: f64,
    pub common_serve_probability: f64,
    pub rare_serve_probability: f64,
    /// Fraction of keys (assigned whole questions at a time) served rarely.
    pub rare_key_fraction: f64,
    /// How strongly rare keys depend on survey-visible traits only
    /// (1 = exclusively, 0 = like any other key).
    pub rare_key_survey_alignment: f64,
    pub seed: u64,
    pub cycle_id: u32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_users: 5_000,
            latent_dim: 8,
            n_binary: 60,
            n_single: 25,
            n_multi: 25,
            min_options: 3,
            max_options: 5,
            survey_dim: 32,
            external_dim: 32,
            survey_noise_sigma: 0.3,
            external_noise_sigma: 1.0,
            external_informative_fraction: 0.5,
            survey_latent_fraction: 0.75,
            common_serve_probability: 0.9,
            rare_serve_probability: 0.15,
            rare_key_fraction: 0.3,
            rare_key_survey_alignment: 0.6,
            seed: 7,
            cycle_id: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for (name, v) in [
            ("n_users", self.n_users),
            ("latent_dim", self.latent_dim),
            ("survey_dim", self.survey_dim),
            ("external_dim", self.external_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.n_binary + self.n_single + self.n_multi == 0 {
            return bad("the survey needs at least one question".into());
        }
        if self.n_single + self.n_multi > 0
            && (self.min_options < 2 || self.max_options < self.min_options)
        {
            return bad(format!(
                "option range {}..={} must satisfy 2 <= min <= max",
                self.min_options, self.max_options
            ));
        }
        for (name, v) in [
            ("external_informative_fraction", self.external_informative_fraction),
            ("survey_latent_fraction", self.survey_latent_fraction),
            ("rare_key_fraction", self.rare_key_fraction),
            ("rare_key_survey_alignment", self.rare_key_survey_alignment),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("common_serve_probability", self.common_serve_probability),
            ("rare_serve_probability", self.rare_serve_probability),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("survey_noise_sigma", self.survey_noise_sigma),
            ("external_noise_sigma", self.external_noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        Ok(())
    }

    fn covered_latents(&self) -> usize {
        ((self.survey_latent_fraction * self.latent_dim as f64).round() as usize).min(self.latent_dim)
    }

    fn informative_external(&self) -> usize {
        ((self.external_informative_fraction * self.external_dim as f64).round() as usize)
            .min(self.external_dim)
    }
}

/// How a key turns latent traits into a label.
struct KeyModel {
    weights: Vec<f64>,
    bias: f64,
}

/// Everything shared by all users: loadings, key models and question layout.
struct Population {
    survey_loadings: Vec<Vec<f64>>,
    external_loadings: Vec<Vec<f64>>,
    keys: Vec<KeyModel>,
    questions: Vec<(QuestionType, Vec<usize>, f64)>,
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| gauss(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Samples a population and its users. Deterministic in `cfg.seed`; each
/// user's draws depend only on `(seed, user_id)`.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (manifest, population) = sample_population(cfg, &mut rng)?;
    let records = (0..cfg.n_users as u64)
        .map(|uid| sample_user(cfg, &population, uid))
        .collect();
    Dataset::new(manifest, records)
}

fn sample_population(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<(DatasetManifest, Population)> {
    let latent = cfg.latent_dim;
    let covered = cfg.covered_latents();

    let mut types: Vec<QuestionType> = std::iter::repeat_n(QuestionType::Binary, cfg.n_binary)
        .chain(std::iter::repeat_n(QuestionType::SingleChoice, cfg.n_single))
        .chain(std::iter::repeat_n(QuestionType::MultiChoice, cfg.n_multi))
        .collect();
    types.shuffle(rng);
    let n_options: Vec<usize> = types
        .iter()
        .map(|t| match t {
            QuestionType::Binary => 1,
            _ => rng.random_range(cfg.min_options..=cfg.max_options),
        })
        .collect();
    let d_s: usize = n_options.iter().sum();

    // Rare questions are picked whole until they cover the requested key share.
    let mut order: Vec<usize> = (0..types.len()).collect();
    order.shuffle(rng);
    let rare_target = (cfg.rare_key_fraction * d_s as f64).round() as usize;
    let mut rare = vec![false; types.len()];
    let mut rare_keys = 0;
    for q in order {
        if rare_keys >= rare_target {
            break;
        }
        rare[q] = true;
        rare_keys += n_options[q];
    }

    let specs: Vec<QuestionSpec> = types
        .iter()
        .enumerate()
        .map(|(q, &question_type)| QuestionSpec {
            question_id: q as u32,
            question_type,
            n_options: n_options[q],
            serve_probability: if rare[q] {
                cfg.rare_serve_probability
            } else {
                cfg.common_serve_probability
            },
        })
        .collect();
    let manifest = DatasetManifest::from_questions(
        cfg.survey_dim,
        cfg.external_dim,
        &specs,
        cfg.seed,
        cfg.cycle_id,
    )?;

    let survey_loadings = (0..cfg.survey_dim)
        .map(|_| {
            let mut row = normal_vec(rng, latent);
            row[covered..].iter_mut().for_each(|x| *x = 0.0);
            normalize(&mut row);
            row
        })
        .collect();
    let external_loadings = (0..cfg.informative_external())
        .map(|_| {
            let mut row = normal_vec(rng, latent);
            normalize(&mut row);
            row
        })
        .collect();

    let std_normal = StatNormal::standard();
    let mut keys = Vec::with_capacity(d_s);
    let mut questions = Vec::with_capacity(specs.len());
    for (q, spec) in specs.iter().enumerate() {
        let first = keys.len();
        for _ in 0..spec.n_keys() {
            let mut w = normal_vec(rng, latent);
            if rare[q] {
                let damp = 1.0 - cfg.rare_key_survey_alignment;
                w[covered..].iter_mut().for_each(|x| *x *= damp);
            }
            normalize(&mut w);
            let bias = match spec.question_type {
                // Unit-norm weights make w·z standard normal, so this bias
                // yields a marginal favourable rate of `rate`.
                QuestionType::Binary | QuestionType::MultiChoice => {
                    let rate: f64 = rng.random_range(0.05..0.5);
                    -std_normal.inverse_cdf(1.0 - rate)
                }
                QuestionType::SingleChoice => 0.5 * gauss(rng),
            };
            keys.push(KeyModel { weights: w, bias });
        }
        questions.push((
            spec.question_type,
            (first..keys.len()).collect(),
            spec.serve_probability,
        ));
    }

    Ok((
        manifest,
        Population {
            survey_loadings,
            external_loadings,
            keys,
            questions,
        },
    ))
}

fn sample_user(cfg: &GeneratorConfig, pop: &Population, user_id: u64) -> UserRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(user_id + 1);
    let z = normal_vec(&mut rng, cfg.latent_dim);

    let x_s = pop
        .survey_loadings
        .iter()
        .map(|row| dot(row, &z) + cfg.survey_noise_sigma * gauss(&mut rng))
        .collect();
    // Noise features get the same marginal variance as informative ones.
    let noise_scale = (1.0 + cfg.external_noise_sigma.powi(2)).sqrt();
    let x_e = (0..cfg.external_dim)
        .map(|j| {
            let eps = gauss(&mut rng);
            match pop.external_loadings.get(j) {
                Some(row) => dot(row, &z) + cfg.external_noise_sigma * eps,
                None => noise_scale * eps,
            }
        })
        .collect();

    let mut mask = vec![0i8; pop.keys.len()];
    for (qtype, key_ids, serve_p) in &pop.questions {
        let served = rng.random::<f64>() < *serve_p;
        if !served {
            continue;
        }
        let score = |k: usize| dot(&pop.keys[k].weights, &z) + pop.keys[k].bias;
        match qtype {
            QuestionType::SingleChoice => {
                let best = key_ids
                    .iter()
                    .copied()
                    .max_by(|&a, &b| score(a).total_cmp(&score(b)))
                    .expect("single choice has options");
                for &k in key_ids {
                    mask[k] = if k == best { 1 } else { -1 };
                }
            }
            _ => {
                for &k in key_ids {
                    mask[k] = if score(k) > 0.0 { 1 } else { -1 };
                }
            }
        }
    }

    UserRecord {
        user_id,
        x_s,
        x_e,
        mask,
    }
}
