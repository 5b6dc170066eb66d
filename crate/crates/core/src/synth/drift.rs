use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::manifest::DatasetManifest;

/// Identity of a response key that is stable across survey cycles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyIdentity {
    pub question_id: u32,
    /// Position of the key among its question's options.
    pub position: usize,
}

impl fmt::Display for KeyIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}#{}", self.question_id, self.position)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelSpaceDiff {
    pub added: BTreeSet<KeyIdentity>,
    pub removed: BTreeSet<KeyIdentity>,
    pub retained: BTreeSet<KeyIdentity>,
}

impl LabelSpaceDiff {
    /// A head trained on the old key set cannot serve the new one.
    pub fn misaligned(&self) -> bool {
        !self.added.is_empty() || !self.removed.is_empty()
    }

    /// True when nothing was added or removed.
    pub fn is_empty(&self) -> bool {
        !self.misaligned()
    }
}

impl fmt::Display for LabelSpaceDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |s: &BTreeSet<KeyIdentity>| {
            s.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
        };
        writeln!(f, "added ({}): {}", self.added.len(), list(&self.added))?;
        writeln!(f, "removed ({}): {}", self.removed.len(), list(&self.removed))?;
        writeln!(f, "retained: {}", self.retained.len())?;
        if self.misaligned() {
            writeln!(f, "status: MISALIGNED - output head must be retrained for the new key set")
        } else {
            writeln!(f, "status: aligned")
        }
    }
}

pub fn key_identities(m: &DatasetManifest) -> BTreeSet<KeyIdentity> {
    let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
    m.keys
        .iter()
        .map(|k| {
            let pos = seen.entry(k.question_id).or_insert(0);
            let id = KeyIdentity {
                question_id: k.question_id,
                position: *pos,
            };
            *pos += 1;
            id
        })
        .collect()
}

/// Set difference between the key spaces of two survey cycles.
pub fn label_space_diff(a: &DatasetManifest, b: &DatasetManifest) -> LabelSpaceDiff {
    let (ka, kb) = (key_identities(a), key_identities(b));
    LabelSpaceDiff {
        added: kb.difference(&ka).copied().collect(),
        removed: ka.difference(&kb).copied().collect(),
        retained: ka.intersection(&kb).copied().collect(),
    }
}
