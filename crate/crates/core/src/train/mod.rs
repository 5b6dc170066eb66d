//! Mini-batch Adam training with shuffle-and-repeat batching, seeded user
//! splits, per-epoch loss logging and a binary checkpoint format.

mod adam;
mod checkpoint;
mod config;
mod fit;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC,
};
pub use config::TrainConfig;
pub use fit::{
    batch_loss, build_variant, fit_config_to, split_users, train, train_step, Batch, BatchStream, EpochLog,
    Split, TrainLog, TrainOutcome,
};

#[cfg(test)]
mod tests;
