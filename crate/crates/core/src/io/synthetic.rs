//! Synthetic videos with planted events.
//!
//! Each video gets `k` unit anchor directions: an orthonormal set from
//! Gram-Schmidt, blended with one shared direction so that anchors are
//! correlated but still far apart. Every frame of event `j` lies within an
//! angle `theta = acos(floor) / 2` of anchor `j`, so any two frames of one
//! event have cosine at least `floor`. Anchors are separated by at least
//! `acos(ceiling) + 2 theta`, so frames of different events have cosine at
//! most `ceiling`. Each event gets one caption whose tokens are noisy copies
//! of the event's anchor.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{write_manifest, write_splits, Dataset, ManifestRecord, SplitRecord};
use super::uemf::write_uemf;
use crate::encoders::{FrameSequence, TokenSequence};
use crate::error::{Error, Result};
use crate::segmentation::{segmentation_line, Span};
use crate::tensor::{cosine, dot, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub videos: usize,
    pub min_events: usize,
    pub max_events: usize,
    pub min_frames_per_event: usize,
    pub max_frames_per_event: usize,
    /// Lower bound on the cosine between two frames of one event.
    pub within_cosine_floor: f64,
    /// Upper bound on the cosine between frames of different events.
    pub between_cosine_ceiling: f64,
    pub dim: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Largest angle (radians) between a caption token and its anchor.
    pub token_angle: f64,
    /// Every frame and token is multiplied by this.
    pub feature_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            videos: 100,
            min_events: 2,
            max_events: 6,
            min_frames_per_event: 3,
            max_frames_per_event: 12,
            within_cosine_floor: 0.99,
            between_cosine_ceiling: 0.3,
            dim: 32,
            min_tokens: 3,
            max_tokens: 8,
            token_angle: 0.3,
            feature_scale: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Half the widest angle allowed inside one event.
    pub fn frame_angle(&self) -> f64 {
        self.within_cosine_floor.clamp(-1.0, 1.0).acos() / 2.0
    }

    /// Largest pairwise anchor cosine that keeps events apart.
    pub fn max_anchor_cosine(&self) -> f64 {
        (self.between_cosine_ceiling.clamp(-1.0, 1.0).acos() + 2.0 * self.frame_angle()).cos()
    }

    /// Pairwise anchor cosine actually used: half the allowed maximum.
    pub fn anchor_cosine(&self) -> f64 {
        (self.max_anchor_cosine() / 2.0).max(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SyntheticSpec(m));
        if self.videos == 0 {
            return bad("need at least one video".into());
        }
        if self.min_events == 0 || self.min_events > self.max_events {
            return bad(format!("bad event range [{}, {}]", self.min_events, self.max_events));
        }
        if self.min_frames_per_event == 0 || self.min_frames_per_event > self.max_frames_per_event {
            return bad(format!(
                "bad frames-per-event range [{}, {}]",
                self.min_frames_per_event, self.max_frames_per_event
            ));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad(format!("bad token range [{}, {}]", self.min_tokens, self.max_tokens));
        }
        let (floor, ceiling) = (self.within_cosine_floor, self.between_cosine_ceiling);
        if !(floor > ceiling) || !(-1.0..=1.0).contains(&floor) || !(-1.0..=1.0).contains(&ceiling) {
            return bad(format!("need -1 <= ceiling ({ceiling}) < floor ({floor}) <= 1"));
        }
        if self.max_events > 1 && self.max_anchor_cosine() < 0.0 {
            return bad(format!(
                "ceiling {ceiling} with floor {floor} needs anchors more than orthogonal"
            ));
        }
        let shared = usize::from(self.anchor_cosine() > 0.0);
        if self.max_events + shared > self.dim {
            return bad(format!(
                "{} events need {} orthogonal directions but dim is {}",
                self.max_events,
                self.max_events + shared,
                self.dim
            ));
        }
        if !(self.token_angle >= 0.0 && self.token_angle < std::f64::consts::FRAC_PI_2) {
            return bad(format!("token_angle must be in [0, pi/2), got {}", self.token_angle));
        }
        if !(self.feature_scale > 0.0 && self.feature_scale.is_finite()) {
            return bad(format!("feature_scale must be positive, got {}", self.feature_scale));
        }
        Ok(())
    }
}

/// Caption provenance: which event of which video it describes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionTruth {
    pub text_id: String,
    pub video_id: String,
    pub event: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    /// Planted spans per video.
    pub truth: BTreeMap<String, Vec<Span>>,
    pub captions: Vec<CaptionTruth>,
    /// Per video, the unit anchor of each event.
    pub anchors: BTreeMap<String, Vec<Vec<f64>>>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    n
}

/// Draws `count` orthonormal vectors by Gram-Schmidt on Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, dim);
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        if normalize(&mut v) > 1e-6 {
            basis.push(v);
        }
    }
    basis
}

/// Unit vector at angle `phi` from unit `axis`, in a random direction.
fn tilt(rng: &mut ChaCha8Rng, axis: &[f64], phi: f64) -> Vec<f64> {
    loop {
        let mut w = gaussian(rng, axis.len());
        let p = dot(&w, axis);
        w.iter_mut().zip(axis).for_each(|(x, a)| *x -= p * a);
        if normalize(&mut w) > 1e-6 {
            let (c, s) = (phi.cos(), phi.sin());
            return axis.iter().zip(&w).map(|(a, b)| c * a + s * b).collect();
        }
    }
}

/// Rounds to the f32 grid so the in-memory set equals what a reload sees.
fn as_stored(x: f64) -> f64 {
    x as f32 as f64
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let theta = spec.frame_angle();
    let rho = spec.anchor_cosine();
    let width = (spec.videos.max(1) - 1).to_string().len();

    let mut videos = Vec::with_capacity(spec.videos);
    let mut texts = Vec::new();
    let mut truth = BTreeMap::new();
    let mut captions = Vec::new();
    let mut all_anchors = BTreeMap::new();

    for vi in 0..spec.videos {
        let video_id = format!("vid{vi:0width$}");
        let k = rng.random_range(spec.min_events..=spec.max_events);
        let shared = usize::from(rho > 0.0);
        let basis = orthonormal(&mut rng, spec.dim, k + shared);
        let anchors: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                if shared == 0 {
                    return basis[j].clone();
                }
                let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
                basis[j].iter().zip(&basis[k]).map(|(u, s)| b * u + a * s).collect()
            })
            .collect();

        let mut rows: Vec<f64> = Vec::new();
        let mut spans = Vec::with_capacity(k);
        let mut start = 0;
        for (j, anchor) in anchors.iter().enumerate() {
            let len = rng.random_range(spec.min_frames_per_event..=spec.max_frames_per_event);
            for _ in 0..len {
                let phi = rng.random_range(0.0..=theta);
                rows.extend(tilt(&mut rng, anchor, phi).into_iter().map(|x| as_stored(x * spec.feature_scale)));
            }
            spans.push(Span::new(start, start + len - 1));
            start += len;

            let text_id = format!("{video_id}_e{j}");
            let n_tok = rng.random_range(spec.min_tokens..=spec.max_tokens);
            let mut tok = Vec::with_capacity(n_tok * spec.dim);
            for _ in 0..n_tok {
                let phi = rng.random_range(0.0..=spec.token_angle);
                tok.extend(tilt(&mut rng, anchor, phi).into_iter().map(|x| as_stored(x * spec.feature_scale)));
            }
            texts.push(TokenSequence::new(
                text_id.clone(),
                video_id.clone(),
                Tensor::new([n_tok, spec.dim], tok)?,
            )?);
            captions.push(CaptionTruth {
                text_id,
                video_id: video_id.clone(),
                event: j,
            });
        }
        videos.push(FrameSequence::new(video_id.clone(), Tensor::new([start, spec.dim], rows)?)?);
        truth.insert(video_id.clone(), spans);
        all_anchors.insert(video_id, anchors);
    }

    let out = SyntheticDataset {
        dataset: Dataset::new(videos, texts)?,
        truth,
        captions,
        anchors: all_anchors,
    };
    let (within, between) = out.measured_cosines();
    if within < spec.within_cosine_floor - 1e-9 || between > spec.between_cosine_ceiling + 1e-9 {
        return Err(Error::SyntheticSpec(format!(
            "generated data violates its spec: min within-event cosine {within}, max between-event cosine {between}"
        )));
    }
    Ok(out)
}

impl SyntheticDataset {
    /// `(min cosine within any event, max cosine across events)` over all
    /// frame pairs of each video.
    pub fn measured_cosines(&self) -> (f64, f64) {
        let mut within = f64::INFINITY;
        let mut between = f64::NEG_INFINITY;
        for v in &self.dataset.videos {
            let spans = &self.truth[&v.video_id];
            let event_of: Vec<usize> = spans
                .iter()
                .enumerate()
                .flat_map(|(j, s)| std::iter::repeat_n(j, s.len()))
                .collect();
            let f = &v.features;
            for a in 0..f.rows() {
                for b in a + 1..f.rows() {
                    let c = cosine(f.row(a), f.row(b)).unwrap_or(0.0);
                    if event_of[a] == event_of[b] {
                        within = within.min(c);
                    } else {
                        between = between.max(c);
                    }
                }
            }
        }
        (within, between)
    }

    /// Writes `features/`, `manifest.jsonl`, `splits.jsonl`,
    /// `captions.jsonl` and `truth.seg` under `dir`.
    ///
    /// Splits assign video `i` to train for `i % 10 < 8`, then val, then test.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let feat = dir.join("features");
        fs::create_dir_all(&feat).map_err(|e| Error::io(&feat, e))?;
        let mut records = Vec::new();
        let mut splits = Vec::new();
        for (i, v) in self.dataset.videos.iter().enumerate() {
            let rel = format!("features/{}.uemf", v.video_id);
            write_uemf(&dir.join(&rel), &v.features)?;
            records.push(ManifestRecord::Video {
                video_id: v.video_id.clone(),
                features: rel,
            });
            let split = match i % 10 {
                0..=7 => "train",
                8 => "val",
                _ => "test",
            };
            splits.push(SplitRecord {
                video_id: v.video_id.clone(),
                split: split.into(),
            });
        }
        for t in &self.dataset.texts {
            let rel = format!("features/{}.uemf", t.text_id);
            write_uemf(&dir.join(&rel), &t.embeddings)?;
            records.push(ManifestRecord::Text {
                text_id: t.text_id.clone(),
                video_id: t.video_id.clone(),
                features: rel,
            });
        }
        write_manifest(&dir.join("manifest.jsonl"), &records)?;
        write_splits(&dir.join("splits.jsonl"), &splits)?;

        let mut caps = String::new();
        for c in &self.captions {
            caps.push_str(&serde_json::to_string(c)?);
            caps.push('\n');
        }
        let cap_path = dir.join("captions.jsonl");
        fs::write(&cap_path, caps).map_err(|e| Error::io(&cap_path, e))?;

        let mut seg = String::new();
        for (id, spans) in &self.truth {
            seg.push_str(&segmentation_line(id, spans));
            seg.push('\n');
        }
        let seg_path = dir.join("truth.seg");
        fs::write(&seg_path, seg).map_err(|e| Error::io(&seg_path, e))
    }
}
