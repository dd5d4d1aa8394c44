use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds::content_id;

pub const REAL_METHOD: &str = "real";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Binary target: fake is the positive class.
    pub fn target(&self) -> f64 {
        match self {
            Label::Real => 0.0,
            Label::Fake => 1.0,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

/// One labeled video: an ordered directory of face-crop frames.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub split: Split,
    pub label: Label,
    /// Generation method of a fake, `"real"` for real videos.
    pub method: String,
    /// Frame directory relative to the manifest's directory.
    pub frame_dir: String,
    pub n_frames: usize,
    /// Real video a fake was derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

impl VideoRecord {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("duplicate video id {0}")]
    DuplicateId(String),
    #[error("record {id}: {msg}")]
    BadRecord { id: String, msg: String },
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The labeled records of one corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusManifest {
    pub records: Vec<VideoRecord>,
    /// Generation seed, when known.
    pub seed: Option<u64>,
}

impl CorpusManifest {
    pub fn new(records: Vec<VideoRecord>, seed: Option<u64>) -> Result<Self, ManifestError> {
        let m = Self { records, seed };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut seen = BTreeSet::new();
        let by_id: BTreeMap<&str, &VideoRecord> = self.records.iter().map(|r| (r.id.as_str(), r)).collect();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(ManifestError::DuplicateId(r.id.clone()));
            }
            let bad = |msg: &str| ManifestError::BadRecord { id: r.id.clone(), msg: msg.to_string() };
            match r.label {
                Label::Real if r.method != REAL_METHOD => return Err(bad("real records must carry method \"real\"")),
                Label::Fake if r.method == REAL_METHOD || r.method.is_empty() => {
                    return Err(bad("fake records must name their method"))
                }
                _ => {}
            }
            if let Some(src) = &r.source {
                if let Some(s) = by_id.get(src.as_str()) {
                    if s.split != r.split {
                        return Err(bad("fake and its source real video are in different splits"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&VideoRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Fake-generation methods present anywhere in the manifest, sorted.
    pub fn methods(&self) -> Vec<String> {
        let set: BTreeSet<&str> =
            self.records.iter().filter(|r| r.label == Label::Fake).map(|r| r.method.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Removes fakes of the given methods from the train and val splits only;
    /// the test split is untouched.
    pub fn exclude_methods(&self, methods: &[String]) -> Self {
        let records = self
            .records
            .iter()
            .filter(|r| r.split == Split::Test || r.label == Label::Real || !methods.contains(&r.method))
            .cloned()
            .collect();
        Self { records, seed: self.seed }
    }

    /// Keeps only records carrying `tag`.
    pub fn with_tag(&self, tag: &str) -> Self {
        Self { records: self.records.iter().filter(|r| r.has_tag(tag)).cloned().collect(), seed: self.seed }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// Content hash of the serialized records.
    pub fn id(&self) -> String {
        content_id(self.to_jsonl().as_bytes())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), ManifestError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, ManifestError> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut records = Vec::new();
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|source| ManifestError::Parse { line: i + 1, source })?);
        }
        Self::new(records, None)
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}
