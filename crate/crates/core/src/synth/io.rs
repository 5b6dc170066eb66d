use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::manifest::{Dataset, DatasetManifest, UserRecord};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";

pub fn manifest_bytes(manifest: &DatasetManifest) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    out.push(b'\n');
    out
}

/// One compact JSON object per line. Floats use the shortest representation
/// that parses back to the same bits.
pub fn records_bytes(records: &[UserRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    out
}

/// SHA-256 over the serialized manifest followed by the serialized records.
pub fn dataset_digest(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(manifest_bytes(&dataset.manifest));
    h.update(records_bytes(&dataset.records));
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `manifest.json` and `records.jsonl` into `dir`, creating it if needed.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mp = dir.join(MANIFEST_FILE);
    fs::write(&mp, manifest_bytes(&dataset.manifest)).map_err(|e| Error::io(&mp, e))?;
    let rp = dir.join(RECORDS_FILE);
    fs::write(&rp, records_bytes(&dataset.records)).map_err(|e| Error::io(&rp, e))?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::MalformedLine {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    manifest.validate()?;
    Ok(manifest)
}

/// Reads a dataset directory written by [`save_dataset`], validating every
/// record against the manifest.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(&dir.join(MANIFEST_FILE))?;
    let questions = manifest.questions();
    let rp = dir.join(RECORDS_FILE);
    let file = fs::File::open(&rp).map_err(|e| Error::io(&rp, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&rp, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: UserRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: rp.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        manifest
            .validate_record_with(&record, &questions)
            .map_err(|e| match e {
                Error::Invariant { invariant, detail } => Error::Invariant {
                    invariant,
                    detail: format!("{}:{}: {detail}", rp.display(), i + 1),
                },
                other => other,
            })?;
        records.push(record);
    }
    Ok(Dataset { manifest, records })
}
