use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::config::TrainConfig;
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{masked_bce_loss, ForwardOptions, Lantern, LanternConfig, Variant};
use crate::synth::{Dataset, DatasetManifest, UserRecord};

// Independent random streams derived from the training seed.
const SPLIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const VALIDATION_STREAM: u64 = 3;
const NOISE_STREAM: u64 = 4;

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stacked inputs and mask for a set of users.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x_s: Tensor,
    pub x_e: Tensor,
    /// Row-major `(N, d_s)` mask.
    pub mask: Vec<i8>,
}

impl Batch {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a UserRecord>) -> Result<Self> {
        let (mut xs, mut xe, mut mask, mut n) = (Vec::new(), Vec::new(), Vec::new(), 0);
        let mut widths = None;
        for r in records {
            let w = (r.x_s.len(), r.x_e.len(), r.mask.len());
            let first = *widths.get_or_insert(w);
            if first != w {
                return Err(Error::shape("batch", &[first.0, first.1, first.2], &[w.0, w.1, w.2]));
            }
            xs.extend_from_slice(&r.x_s);
            xe.extend_from_slice(&r.x_e);
            mask.extend_from_slice(&r.mask);
            n += 1;
        }
        let (fs, fe, _) = widths.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        Ok(Self {
            x_s: Tensor::new(vec![n, fs], xs)?,
            x_e: Tensor::new(vec![n, fe], xe)?,
            mask,
        })
    }

    /// Users of `dataset` at `indices`, in that order.
    pub fn gather(dataset: &Dataset, indices: &[usize]) -> Result<Self> {
        Self::from_records(indices.iter().map(|&i| &dataset.records[i]))
    }

    pub fn len(&self) -> usize {
        self.x_s.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Endless stream of mini-batches over a fixed index set. Each pass visits
/// every index once in a fresh shuffled order; batches run across pass
/// boundaries, so any number of steps can be drawn.
#[derive(Clone, Debug)]
pub struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    pub fn new(indices: Vec<usize>, rng: ChaCha8Rng) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("batch stream over no users".into()));
        }
        let mut s = Self {
            order: indices,
            pos: 0,
            rng,
        };
        s.order.shuffle(&mut s.rng);
        Ok(s)
    }

    pub fn next_indices(&mut self, batch_size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch_size);
        while out.len() < batch_size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Users assigned to training and to validation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Seeded user-level split. Validation gets `round(fraction * n)` users,
/// clamped so neither side is empty.
pub fn split_users(n_users: usize, validation_fraction: f64, seed: u64) -> Result<Split> {
    if n_users < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 users to split, got {n_users}"
        )));
    }
    let mut order: Vec<usize> = (0..n_users).collect();
    order.shuffle(&mut seeded(seed, SPLIT_STREAM));
    let n_val = ((validation_fraction * n_users as f64).round() as usize).clamp(1, n_users - 1);
    let mut validation = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    validation.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, validation })
}

/// A fresh model of `variant` whose dimensions come from `cfg`.
pub fn build_variant(variant: Variant, cfg: &LanternConfig, seed: u64) -> Result<Lantern> {
    Lantern::new(cfg.clone(), variant, seed)
}

/// Overrides the data-dependent dimensions of `cfg` with those of `manifest`.
pub fn fit_config_to(cfg: &LanternConfig, manifest: &DatasetManifest) -> LanternConfig {
    LanternConfig {
        survey_dim: manifest.survey_dim,
        external_dim: manifest.external_dim,
        n_keys: manifest.n_keys(),
        ..cfg.clone()
    }
}

/// Training-mode forward, masked loss, backward and one Adam update.
/// Returns the batch loss before the update.
pub fn train_step(
    model: &mut Lantern,
    batch: &Batch,
    state: &mut AdamState,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (out, bound) = model.forward(&mut tape, &batch.x_s, &batch.x_e, true, &ForwardOptions::train(), rng)?;
    let loss = masked_bce_loss(&mut tape, out.y_hat, &batch.mask)?;
    tape.backward(loss)?;
    let grads = bound.gradients(&tape);
    adam_step(&mut model.params, &grads, state, cfg)?;
    Ok(tape.value(loss).item())
}

/// Eval-mode masked loss on one batch.
pub fn batch_loss(model: &Lantern, batch: &Batch) -> Result<f64> {
    let y = model.predict(&batch.x_s, &batch.x_e)?;
    let mut tape = Tape::new();
    let yv = tape.constant(y);
    let loss = masked_bce_loss(&mut tape, yv, &batch.mask)?;
    Ok(tape.value(loss).item())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's steps.
    pub train_loss: f64,
    /// Mean eval-mode loss over the validation batches.
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Validation loss of the freshly initialised model.
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// `epoch,train_loss,val_loss` with one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        s
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_loss)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Lantern,
    pub adam: AdamState,
    pub log: TrainLog,
    pub split: Split,
}

/// Mean eval-mode loss over `steps` batches. The validation stream restarts
/// from the same seed on every call, so successive calls score the same users.
fn validation_loss(model: &Lantern, dataset: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<f64> {
    let mut stream = BatchStream::new(split.validation.clone(), seeded(cfg.seed, VALIDATION_STREAM))?;
    let batch_size = cfg.batch_size.min(split.validation.len());
    let mut total = 0.0;
    for _ in 0..cfg.validation_steps {
        let batch = Batch::gather(dataset, &stream.next_indices(batch_size))?;
        total += batch_loss(model, &batch)?;
    }
    Ok(total / cfg.validation_steps as f64)
}

/// Trains `train_cfg.variant` on a seeded user split of `dataset`.
///
/// The data-dependent dimensions of `model_cfg` must match the dataset.
/// `(dataset, train_cfg, model_cfg)` fully determine the result.
pub fn train(dataset: &Dataset, train_cfg: &TrainConfig, model_cfg: &LanternConfig) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    if dataset.records.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let m = &dataset.manifest;
    if (model_cfg.survey_dim, model_cfg.external_dim, model_cfg.n_keys) != (m.survey_dim, m.external_dim, m.n_keys()) {
        return Err(Error::shape(
            "train",
            &[model_cfg.survey_dim, model_cfg.external_dim, model_cfg.n_keys],
            &[m.survey_dim, m.external_dim, m.n_keys()],
        ));
    }

    let split = split_users(dataset.n_users(), train_cfg.validation_fraction, train_cfg.seed)?;
    let mut model = build_variant(train_cfg.variant, model_cfg, train_cfg.seed)?;
    let mut adam = AdamState::new(&model.params);
    let mut stream = BatchStream::new(split.train.clone(), seeded(train_cfg.seed, TRAIN_STREAM))?;
    let mut noise = seeded(train_cfg.seed, NOISE_STREAM);

    let mut log = TrainLog {
        initial_val_loss: validation_loss(&model, dataset, &split, train_cfg)?,
        epochs: Vec::with_capacity(train_cfg.epochs),
    };
    for epoch in 1..=train_cfg.epochs {
        let mut total = 0.0;
        for _ in 0..train_cfg.steps_per_epoch {
            let batch = Batch::gather(dataset, &stream.next_indices(train_cfg.batch_size))?;
            total += train_step(&mut model, &batch, &mut adam, train_cfg, &mut noise)?;
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss: total / train_cfg.steps_per_epoch as f64,
            val_loss: validation_loss(&model, dataset, &split, train_cfg)?,
        });
    }
    Ok(TrainOutcome {
        model,
        adam,
        log,
        split,
    })
}
