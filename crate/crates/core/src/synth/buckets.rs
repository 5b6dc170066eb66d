use std::collections::BTreeSet;

use super::manifest::UserRecord;
use crate::error::{Error, Result};

/// What counts as a "response" when ranking keys by frequency.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ResponseCount {
    /// Times the key was served (mask != 0).
    #[default]
    Served,
    /// Times the key was answered favourably (mask == +1).
    Favorable,
}

impl std::str::FromStr for ResponseCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "served" => Ok(Self::Served),
            "favorable" => Ok(Self::Favorable),
            _ => Err(Error::Config(format!(
                "response count must be `served` or `favorable`, got `{s}`"
            ))),
        }
    }
}

pub fn response_counts(records: &[UserRecord], n_keys: usize, by: ResponseCount) -> Vec<usize> {
    let mut counts = vec![0; n_keys];
    for r in records {
        for (c, &m) in counts.iter_mut().zip(&r.mask) {
            let hit = match by {
                ResponseCount::Served => m != 0,
                ResponseCount::Favorable => m == 1,
            };
            *c += hit as usize;
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyBuckets {
    pub rare: BTreeSet<usize>,
    pub frequent: BTreeSet<usize>,
}

/// The `k` least and `k` most responded keys. Keys are ranked by
/// `(count, key_id)` ascending, so ties resolve deterministically.
pub fn buckets_from_counts(counts: &[usize], k: usize) -> Result<FrequencyBuckets> {
    if 2 * k > counts.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot take {k} rare and {k} frequent keys out of {}",
            counts.len()
        )));
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| (counts[i], i));
    Ok(FrequencyBuckets {
        rare: order[..k].iter().copied().collect(),
        frequent: order[order.len() - k..].iter().copied().collect(),
    })
}

pub fn frequency_buckets(
    records: &[UserRecord],
    n_keys: usize,
    k: usize,
    by: ResponseCount,
) -> Result<FrequencyBuckets> {
    buckets_from_counts(&response_counts(records, n_keys, by), k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn hand_sorted_example() {
        let b = buckets_from_counts(&[5, 1, 9, 1, 7, 3], 2).unwrap();
        assert_eq!(b.rare, set(&[1, 3]));
        assert_eq!(b.frequent, set(&[2, 4]));
    }

    #[test]
    fn ties_resolve_by_key_id() {
        let b = buckets_from_counts(&[4; 6], 1).unwrap();
        assert_eq!(b.rare, set(&[0]));
        assert_eq!(b.frequent, set(&[5]));
    }

    #[test]
    fn too_many_keys_requested() {
        assert!(buckets_from_counts(&[1, 2, 3], 2).is_err());
    }

    #[test]
    fn full_scale_bucket_size() {
        let counts: Vec<usize> = (0..2500).map(|i| (i * 7919) % 3001).collect();
        let b = buckets_from_counts(&counts, 1000).unwrap();
        assert_eq!(b.rare.len(), 1000);
        assert_eq!(b.frequent.len(), 1000);
        assert!(b.rare.is_disjoint(&b.frequent));
        let max_rare = b.rare.iter().map(|&k| counts[k]).max().unwrap();
        let min_freq = b.frequent.iter().map(|&k| counts[k]).min().unwrap();
        assert!(max_rare <= min_freq);
    }

    #[test]
    fn counts_follow_definition() {
        let r = |mask: Vec<i8>| UserRecord {
            user_id: 0,
            x_s: vec![],
            x_e: vec![],
            mask,
        };
        let recs = [r(vec![1, -1, 0]), r(vec![-1, 0, 0]), r(vec![1, 1, 0])];
        assert_eq!(response_counts(&recs, 3, ResponseCount::Served), vec![3, 2, 0]);
        assert_eq!(response_counts(&recs, 3, ResponseCount::Favorable), vec![2, 1, 0]);
    }
}
