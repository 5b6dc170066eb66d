use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    /// Yes/no question; only the favourable option is modelled, as one key.
    Binary,
    /// Exactly one option is selected when served.
    SingleChoice,
    /// Any subset of options may be selected.
    MultiChoice,
}

/// One answer option of a survey question, modelled as an independent binary label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseKey {
    pub key_id: usize,
    pub question_id: u32,
    pub question_type: QuestionType,
    pub serve_probability: f64,
}

/// Response-key metadata of one survey cycle. Serialized as `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub survey_dim: usize,
    pub external_dim: usize,
    pub cycle_id: u32,
    pub generator_seed: u64,
    pub keys: Vec<ResponseKey>,
}

/// One user: survey features, external features and the response mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: u64,
    pub x_s: Vec<f64>,
    pub x_e: Vec<f64>,
    /// `+1` favourable, `-1` non-favourable, `0` not asked.
    pub mask: Vec<i8>,
}

/// Question-level description used to assemble a manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct QuestionSpec {
    pub question_id: u32,
    pub question_type: QuestionType,
    /// Number of answer options; ignored for binary questions.
    pub n_options: usize,
    pub serve_probability: f64,
}

impl QuestionSpec {
    pub fn n_keys(&self) -> usize {
        match self.question_type {
            QuestionType::Binary => 1,
            _ => self.n_options,
        }
    }
}

/// A question's keys, in key-id order.
#[derive(Clone, Debug, PartialEq)]
pub struct QuestionGroup {
    pub question_id: u32,
    pub question_type: QuestionType,
    pub key_ids: Vec<usize>,
}

impl DatasetManifest {
    /// Lays out keys question by question, assigning dense key ids.
    pub fn from_questions(
        survey_dim: usize,
        external_dim: usize,
        questions: &[QuestionSpec],
        generator_seed: u64,
        cycle_id: u32,
    ) -> Result<Self> {
        let mut keys = Vec::new();
        for q in questions {
            for _ in 0..q.n_keys() {
                keys.push(ResponseKey {
                    key_id: keys.len(),
                    question_id: q.question_id,
                    question_type: q.question_type,
                    serve_probability: q.serve_probability,
                });
            }
        }
        let m = Self {
            survey_dim,
            external_dim,
            cycle_id,
            generator_seed,
            keys,
        };
        m.validate()?;
        Ok(m)
    }

    /// Number of response keys (`d_s`).
    pub fn n_keys(&self) -> usize {
        self.keys.len()
    }

    /// Keys grouped by question, ordered by first key id.
    pub fn questions(&self) -> Vec<QuestionGroup> {
        let mut order: Vec<u32> = Vec::new();
        let mut groups: BTreeMap<u32, QuestionGroup> = BTreeMap::new();
        for k in &self.keys {
            groups
                .entry(k.question_id)
                .or_insert_with(|| {
                    order.push(k.question_id);
                    QuestionGroup {
                        question_id: k.question_id,
                        question_type: k.question_type,
                        key_ids: Vec::new(),
                    }
                })
                .key_ids
                .push(k.key_id);
        }
        order.into_iter().map(|q| groups.remove(&q).unwrap()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let inv = |invariant, detail: String| Err(Error::Invariant { invariant, detail });
        if self.survey_dim == 0 || self.external_dim == 0 {
            return inv("positive_dims", format!(
                "survey_dim={} external_dim={}",
                self.survey_dim, self.external_dim
            ));
        }
        if self.keys.is_empty() {
            return inv("nonempty_keys", "manifest has no response keys".into());
        }
        for (i, k) in self.keys.iter().enumerate() {
            if k.key_id != i {
                return inv("dense_key_ids", format!("key at position {i} has key_id {}", k.key_id));
            }
            if !(k.serve_probability > 0.0 && k.serve_probability <= 1.0) {
                return inv("serve_probability", format!(
                    "key {i} has serve_probability {}",
                    k.serve_probability
                ));
            }
        }
        for q in self.questions() {
            let types_agree = q
                .key_ids
                .iter()
                .all(|&k| self.keys[k].question_type == q.question_type);
            if !types_agree {
                return inv("question_type_consistency", format!(
                    "question {} mixes question types",
                    q.question_id
                ));
            }
            let arity_ok = match q.question_type {
                QuestionType::Binary => q.key_ids.len() == 1,
                _ => q.key_ids.len() >= 2,
            };
            if !arity_ok {
                return inv("question_arity", format!(
                    "{:?} question {} has {} keys",
                    q.question_type,
                    q.question_id,
                    q.key_ids.len()
                ));
            }
        }
        Ok(())
    }

    /// Checks a record's vector lengths, mask values and mask structure.
    pub fn validate_record(&self, r: &UserRecord) -> Result<()> {
        self.validate_record_with(r, &self.questions())
    }

    pub(crate) fn validate_record_with(&self, r: &UserRecord, questions: &[QuestionGroup]) -> Result<()> {
        let inv = |invariant, detail: String| Err(Error::Invariant { invariant, detail });
        if r.x_s.len() != self.survey_dim {
            return inv("survey_dim", format!(
                "user {}: x_s has length {}, expected F_s = {}",
                r.user_id,
                r.x_s.len(),
                self.survey_dim
            ));
        }
        if r.x_e.len() != self.external_dim {
            return inv("external_dim", format!(
                "user {}: x_e has length {}, expected F_e = {}",
                r.user_id,
                r.x_e.len(),
                self.external_dim
            ));
        }
        if r.mask.len() != self.keys.len() {
            return inv("mask_length", format!(
                "user {}: mask has length {}, expected d_s = {}",
                r.user_id,
                r.mask.len(),
                self.keys.len()
            ));
        }
        crate::autodiff::validate_mask(&r.mask)?;
        if r.x_s.iter().chain(&r.x_e).any(|v| !v.is_finite()) {
            return inv("finite_features", format!("user {} has non-finite features", r.user_id));
        }
        for q in questions {
            let vals: Vec<i8> = q.key_ids.iter().map(|&k| r.mask[k]).collect();
            let zeros = vals.iter().filter(|&&m| m == 0).count();
            if zeros != 0 && zeros != vals.len() {
                return inv("mask_structure", format!(
                    "user {}: question {} is partially served",
                    r.user_id, q.question_id
                ));
            }
            if zeros == 0 && q.question_type == QuestionType::SingleChoice {
                let positives = vals.iter().filter(|&&m| m == 1).count();
                if positives != 1 {
                    return inv("mask_structure", format!(
                        "user {}: single-choice question {} has {positives} selected options",
                        r.user_id, q.question_id
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A manifest together with its user records.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<UserRecord>,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, records: Vec<UserRecord>) -> Result<Self> {
        manifest.validate()?;
        let qs = manifest.questions();
        for r in &records {
            manifest.validate_record_with(r, &qs)?;
        }
        Ok(Self { manifest, records })
    }

    pub fn n_users(&self) -> usize {
        self.records.len()
    }

    pub fn n_keys(&self) -> usize {
        self.manifest.n_keys()
    }
}
