//! Newline-delimited JSON manifests of dataset records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::validation(format!("unknown split '{s}' (train, val, test)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SdriSt,
    Selected,
    SynthSplice,
    SynthCopymove,
    SynthRemoval,
}

impl Provenance {
    pub const ALL: [Provenance; 5] =
        [Provenance::SdriSt, Provenance::Selected, Provenance::SynthSplice, Provenance::SynthCopymove, Provenance::SynthRemoval];

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::SdriSt => "sdri_st",
            Provenance::Selected => "selected",
            Provenance::SynthSplice => "synth_splice",
            Provenance::SynthCopymove => "synth_copymove",
            Provenance::SynthRemoval => "synth_removal",
        }
    }
}

/// One (authentic, manipulated, mask, edge) quadruple. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub authentic_path: String,
    pub manipulated_path: String,
    pub mask_path: String,
    pub edge_path: String,
    pub split: Split,
    pub provenance: Provenance,
}

/// Parses one record per non-blank line.
pub fn parse_manifest(text: &str) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(line)
            .map_err(|e| Error::validation(format!("manifest line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    validate_records(&out)?;
    Ok(out)
}

/// Rejects duplicate `(split, manipulated_path)` pairs and any image path used in two splits.
pub fn validate_records(records: &[DatasetRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    let mut home: BTreeMap<&str, Split> = BTreeMap::new();
    for r in records {
        ensure(seen.insert((r.split, r.manipulated_path.as_str())), || {
            format!("duplicate record for split {} and manipulated image {}", r.split, r.manipulated_path)
        })?;
        for p in [r.authentic_path.as_str(), r.manipulated_path.as_str()] {
            let s = *home.entry(p).or_insert(r.split);
            ensure(s == r.split, || format!("image {p} appears in both {s} and {} splits", r.split))?;
        }
    }
    Ok(())
}

/// Canonical text: compact JSON per record in field order, each line newline-terminated.
pub fn to_ndjson(records: &[DatasetRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records serialize"));
        s.push('\n');
    }
    s
}

pub fn read_manifest(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text).map_err(|e| match e {
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_manifest(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    validate_records(records)?;
    std::fs::write(path, to_ndjson(records)).map_err(|e| Error::io(path, e))
}

/// Input to synthesis: an authentic image with its salient mask, and optionally an
/// existing manipulation of it with ground truth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub image: String,
    pub salient_mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manipulated: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

pub fn read_sources(path: &Path) -> Result<Vec<SourceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: SourceRecord = serde_json::from_str(line)
            .map_err(|e| Error::validation(format!("{} line {}: {e}", path.display(), i + 1)))?;
        ensure(rec.manipulated.is_some() == rec.mask.is_some(), || {
            format!("{} line {}: 'manipulated' and 'mask' must be given together", path.display(), i + 1)
        })?;
        out.push(rec);
    }
    Ok(out)
}
