//! In-memory datasets and the JSON-lines manifest that describes them.
//!
//! A manifest holds one JSON object per line, either a video record
//! `{"video_id": ..., "features": path}` or a text record
//! `{"text_id": ..., "video_id": ..., "features": path}`. Paths are relative
//! to the manifest's directory. A split file assigns videos to splits, one
//! `{"video_id": ..., "split": "train" | "val" | "test"}` per line; texts
//! follow their video.
//!
//! Opening a manifest checks ids, references, file existence and every
//! feature header. Payloads are read only when a split is loaded.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::uemf::{read_uemf, read_uemf_header};
use crate::encoders::{FrameSequence, TokenSequence};
use crate::error::{Error, Result};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Videos and their captions, fully loaded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub videos: Vec<FrameSequence>,
    pub texts: Vec<TokenSequence>,
}

impl Dataset {
    /// Checks unique ids, that every text's video is present, and that
    /// feature widths agree within each modality.
    pub fn new(videos: Vec<FrameSequence>, texts: Vec<TokenSequence>) -> Result<Self> {
        let mut seen = HashSet::new();
        for v in &videos {
            if !seen.insert(v.video_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate video_id {:?}", v.video_id)));
            }
        }
        let mut text_ids = HashSet::new();
        for t in &texts {
            if !text_ids.insert(t.text_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate text_id {:?}", t.text_id)));
            }
            if !seen.contains(t.video_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "text {:?} refers to unknown video {:?}",
                    t.text_id, t.video_id
                )));
            }
        }
        let widths = |cols: Vec<usize>, what: &str| -> Result<()> {
            match cols.windows(2).find(|w| w[0] != w[1]) {
                Some(w) => Err(Error::Manifest(format!("{what} features have mixed widths {} and {}", w[0], w[1]))),
                None => Ok(()),
            }
        };
        widths(videos.iter().map(|v| v.features.cols()).collect(), "video")?;
        widths(texts.iter().map(|t| t.embeddings.cols()).collect(), "text")?;
        Ok(Self { videos, texts })
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn video(&self, id: &str) -> Option<&FrameSequence> {
        self.videos.iter().find(|v| v.video_id == id)
    }

    /// text_id -> video_id
    pub fn ground_truth(&self) -> HashMap<String, String> {
        self.texts
            .iter()
            .map(|t| (t.text_id.clone(), t.video_id.clone()))
            .collect()
    }

    pub fn mean_frame_count(&self) -> f64 {
        if self.videos.is_empty() {
            return 0.0;
        }
        self.videos.iter().map(|v| v.len()).sum::<usize>() as f64 / self.videos.len() as f64
    }

    /// Feature widths `(text, video)`; `None` for an empty modality.
    pub fn dims(&self) -> (Option<usize>, Option<usize>) {
        (
            self.texts.first().map(|t| t.embeddings.cols()),
            self.videos.first().map(|v| v.features.cols()),
        )
    }

    /// Keeps the listed videos and their texts.
    pub fn restrict(&self, keep: &HashSet<String>) -> Self {
        Self {
            videos: self.videos.iter().filter(|v| keep.contains(&v.video_id)).cloned().collect(),
            texts: self.texts.iter().filter(|t| keep.contains(&t.video_id)).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifestRecord {
    Text {
        text_id: String,
        video_id: String,
        features: String,
    },
    Video {
        video_id: String,
        features: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRecord {
    pub video_id: String,
    pub split: String,
}

#[derive(Debug, Clone)]
struct Entry {
    id: String,
    video_id: String,
    path: PathBuf,
    rows: usize,
}

/// A validated manifest whose payloads have not been read yet.
#[derive(Debug, Clone)]
pub struct Manifest {
    path: PathBuf,
    videos: Vec<Entry>,
    texts: Vec<Entry>,
    splits: Option<BTreeMap<String, String>>,
    text_dim: Option<usize>,
    video_dim: Option<usize>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

impl Manifest {
    /// Parses and validates a manifest. When `dims = Some((text, video))`,
    /// every feature file's width must match.
    pub fn open(path: &Path, dims: Option<(usize, usize)>) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let records: Vec<ManifestRecord> = read_jsonl(path)?;
        let mut videos = Vec::new();
        let mut texts = Vec::new();
        let mut video_ids = HashSet::new();
        let mut text_ids = HashSet::new();
        let mut widths: [Option<usize>; 2] = [None, None];

        for rec in records {
            let (id, video_id, rel, is_text) = match rec {
                ManifestRecord::Video { video_id, features } => (video_id.clone(), video_id, features, false),
                ManifestRecord::Text {
                    text_id,
                    video_id,
                    features,
                } => (text_id, video_id, features, true),
            };
            let fresh = if is_text {
                text_ids.insert(id.clone())
            } else {
                video_ids.insert(id.clone())
            };
            if !fresh {
                let kind = if is_text { "text_id" } else { "video_id" };
                return Err(Error::Manifest(format!("duplicate {kind} {id:?}")));
            }
            let file = base.join(&rel);
            let header = read_uemf_header(&file)?;
            let slot = usize::from(!is_text);
            if let Some(expected) = dims.map(|(t, v)| if is_text { t } else { v }) {
                if header.cols != expected {
                    return Err(Error::DimensionMismatch {
                        path: file,
                        expected,
                        found: header.cols,
                    });
                }
            }
            match widths[slot] {
                Some(w) if w != header.cols => {
                    return Err(Error::DimensionMismatch {
                        path: file,
                        expected: w,
                        found: header.cols,
                    })
                }
                _ => widths[slot] = Some(header.cols),
            }
            let entry = Entry {
                id,
                video_id,
                path: file,
                rows: header.rows,
            };
            if is_text {
                texts.push(entry);
            } else {
                videos.push(entry);
            }
        }
        for t in &texts {
            if !video_ids.contains(&t.video_id) {
                return Err(Error::Manifest(format!(
                    "text {:?} refers to unknown video {:?}",
                    t.id, t.video_id
                )));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            videos,
            texts,
            splits: None,
            text_dim: widths[0],
            video_dim: widths[1],
        })
    }

    /// Attaches a split file. Every listed video must be in the manifest.
    pub fn with_splits(mut self, path: &Path) -> Result<Self> {
        let records: Vec<SplitRecord> = read_jsonl(path)?;
        let known: HashSet<&str> = self.videos.iter().map(|v| v.id.as_str()).collect();
        let mut map = BTreeMap::new();
        for r in records {
            if !SPLITS.contains(&r.split.as_str()) {
                return Err(Error::Manifest(format!("unknown split {:?} for video {:?}", r.split, r.video_id)));
            }
            if !known.contains(r.video_id.as_str()) {
                return Err(Error::Manifest(format!("split file lists unknown video {:?}", r.video_id)));
            }
            if map.insert(r.video_id.clone(), r.split).is_some() {
                return Err(Error::Manifest(format!("video {:?} listed twice in split file", r.video_id)));
            }
        }
        self.splits = Some(map);
        Ok(self)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn video_count(&self) -> usize {
        self.videos.len()
    }

    pub fn text_count(&self) -> usize {
        self.texts.len()
    }

    pub fn text_dim(&self) -> Option<usize> {
        self.text_dim
    }

    pub fn video_dim(&self) -> Option<usize> {
        self.video_dim
    }

    /// Row count of every video, from the headers.
    pub fn frame_counts(&self) -> Vec<(String, usize)> {
        self.videos.iter().map(|v| (v.id.clone(), v.rows)).collect()
    }

    /// Reads the payloads of one split, or of everything for `None`.
    pub fn load(&self, split: Option<&str>) -> Result<Dataset> {
        let keep = |video_id: &str| -> Result<bool> {
            match (split, &self.splits) {
                (None, _) => Ok(true),
                (Some(s), _) if !SPLITS.contains(&s) => {
                    Err(Error::Manifest(format!("unknown split {s:?} (expected train, val or test)")))
                }
                (Some(s), Some(map)) => Ok(map.get(video_id).is_some_and(|v| v == s)),
                (Some(s), None) => Err(Error::Manifest(format!("split {s:?} requested but no split file given"))),
            }
        };
        let mut videos = Vec::new();
        for v in &self.videos {
            if keep(&v.id)? {
                videos.push(FrameSequence::new(v.id.clone(), read_uemf(&v.path)?)?);
            }
        }
        let mut texts = Vec::new();
        for t in &self.texts {
            if keep(&t.video_id)? {
                texts.push(TokenSequence::new(t.id.clone(), t.video_id.clone(), read_uemf(&t.path)?)?);
            }
        }
        Dataset::new(videos, texts)
    }
}

/// Writes a manifest whose records point at `features/<id>.uemf` files.
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn write_splits(path: &Path, records: &[SplitRecord]) -> Result<()> {
    write_jsonl(path, records)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
