//! Synthetic adaptive-survey populations and their on-disk format.
//!
//! A [`Dataset`] pairs a [`DatasetManifest`] (one entry per response key) with
//! per-user [`UserRecord`]s holding survey features, external features and a
//! `{-1, 0, +1}` response mask.

mod buckets;
mod drift;
mod generate;
mod io;
mod manifest;

pub use buckets::{buckets_from_counts, frequency_buckets, response_counts, FrequencyBuckets, ResponseCount};
pub use drift::{key_identities, label_space_diff, KeyIdentity, LabelSpaceDiff};
pub use generate::{generate_dataset, GeneratorConfig};
pub use io::{
    dataset_digest, load_dataset, load_manifest, manifest_bytes, records_bytes, save_dataset,
    MANIFEST_FILE, RECORDS_FILE,
};
pub use manifest::{
    Dataset, DatasetManifest, QuestionGroup, QuestionSpec, QuestionType, ResponseKey, UserRecord,
};

#[cfg(test)]
mod tests;
