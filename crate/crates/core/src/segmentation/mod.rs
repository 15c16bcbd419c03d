//! Temporal event segmentation of frame-embedding sequences.
//!
//! [`pgvs_segment`] is the streaming, threshold-driven grouping used by the
//! model. [`equal_division_segment`] and [`kmeans_segment`] are the
//! fixed-count baselines it is compared against.

mod baselines;
mod format;
mod pgvs;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

pub use baselines::{equal_division_segment, kmeans_segment, KMEANS_MAX_ITERS};
pub use format::{parse_segmentation_line, read_segmentations, segmentation_line, write_segmentations};
pub use pgvs::pgvs_segment;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inclusive frame range `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

/// Ordered, contiguous events covering every frame of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSegmentation {
    pub video_id: String,
    pub spans: Vec<Span>,
    /// One representative vector per span. For PGVS this is the final
    /// running center; for the baselines it is a centroid.
    pub centers: Vec<Vec<f64>>,
}

impl EventSegmentation {
    pub fn with_video_id(mut self, id: impl Into<String>) -> Self {
        self.video_id = id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Frame count covered by the spans.
    pub fn frame_count(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end + 1)
    }

    /// Internal cut positions: the start index of every span but the first.
    pub fn cuts(&self) -> BTreeSet<usize> {
        cut_positions(&self.spans)
    }

    pub fn centers_tensor(&self) -> Result<Tensor> {
        Tensor::from_rows(&self.centers)
    }

    /// Checks that spans partition `0..n_frames` in order.
    pub fn validate(&self, n_frames: usize) -> Result<()> {
        validate_spans(&self.spans, n_frames)?;
        if self.centers.len() != self.spans.len() {
            return Err(Error::SegmentationFormat(format!(
                "{} centers for {} spans",
                self.centers.len(),
                self.spans.len()
            )));
        }
        Ok(())
    }
}

pub fn cut_positions(spans: &[Span]) -> BTreeSet<usize> {
    spans.iter().skip(1).map(|s| s.start).collect()
}

pub fn validate_spans(spans: &[Span], n_frames: usize) -> Result<()> {
    let mut next = 0;
    for s in spans {
        if s.start != next || s.end < s.start {
            return Err(Error::SegmentationFormat(format!(
                "span {s} does not continue at frame {next}"
            )));
        }
        next = s.end + 1;
    }
    if next != n_frames || spans.is_empty() {
        return Err(Error::SegmentationFormat(format!(
            "spans cover {next} frames, expected {n_frames}"
        )));
    }
    Ok(())
}

/// Boundary F1 between a predicted segmentation and ground-truth spans,
/// computed over the sets of internal cut positions.
///
/// Two segmentations with no internal cuts agree perfectly (F1 = 1).
pub fn boundary_f1(predicted: &EventSegmentation, truth: &[Span]) -> Result<f64> {
    let n = predicted.frame_count();
    validate_spans(&predicted.spans, n)?;
    validate_spans(truth, n).map_err(|_| {
        Error::SegmentationFormat(format!(
            "ground truth for {:?} does not cover the predicted {n} frames",
            predicted.video_id
        ))
    })?;
    let pred = predicted.cuts();
    let gold = cut_positions(truth);
    if pred.is_empty() && gold.is_empty() {
        return Ok(1.0);
    }
    let hits = pred.intersection(&gold).count() as f64;
    if hits == 0.0 {
        return Ok(0.0);
    }
    let precision = hits / pred.len() as f64;
    let recall = hits / gold.len() as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Which segmentation algorithm to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentationMethod {
    Pgvs { epsilon: f64 },
    Equal { k: usize },
    KMeans { k: usize, seed: u64 },
}

impl SegmentationMethod {
    /// Segments `frames`. K-means clamps `k` to the frame count so that a
    /// fixed `k` can be applied across videos of any length.
    pub fn segment(&self, frames: &Tensor) -> Result<EventSegmentation> {
        match *self {
            Self::Pgvs { epsilon } => pgvs_segment(frames, epsilon),
            Self::Equal { k } => equal_division_segment(frames, k),
            Self::KMeans { k, seed } => kmeans_segment(frames, k.min(frames.rows()), seed, KMEANS_MAX_ITERS),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Pgvs { .. } => "pgvs",
            Self::Equal { .. } => "equal",
            Self::KMeans { .. } => "kmeans",
        }
    }
}

impl fmt::Display for SegmentationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Pgvs { epsilon } => write!(f, "pgvs@{epsilon}"),
            Self::Equal { k } => write!(f, "equal:{k}"),
            Self::KMeans { k, .. } => write!(f, "kmeans:{k}"),
        }
    }
}

/// Parses `pgvs`, `equal:K` or `kmeans:K`. PGVS takes its threshold and
/// k-means its seed from the defaults here; callers override as needed.
impl FromStr for SegmentationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_k = |k: &str| -> Result<usize> {
            match k.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(k),
                _ => Err(Error::Parameter(format!("invalid cluster count {k:?} in {s:?}"))),
            }
        };
        match s.split_once(':') {
            None if s == "pgvs" => Ok(Self::Pgvs { epsilon: 0.9 }),
            Some(("equal", k)) => Ok(Self::Equal { k: parse_k(k)? }),
            Some(("kmeans", k)) => Ok(Self::KMeans { k: parse_k(k)?, seed: 0 }),
            _ => Err(Error::Parameter(format!(
                "unknown segmentation method {s:?} (expected pgvs, equal:K or kmeans:K)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(spans: &[(usize, usize)]) -> EventSegmentation {
        EventSegmentation {
            video_id: "v".into(),
            spans: spans.iter().map(|&(a, b)| Span::new(a, b)).collect(),
            centers: vec![vec![1.0]; spans.len()],
        }
    }

    fn spans(s: &[(usize, usize)]) -> Vec<Span> {
        s.iter().map(|&(a, b)| Span::new(a, b)).collect()
    }

    #[test]
    fn f1_identical_is_one() {
        let p = seg(&[(0, 2), (3, 9)]);
        assert_eq!(boundary_f1(&p, &p.spans).unwrap(), 1.0);
    }

    #[test]
    fn f1_no_cuts_against_cuts_is_zero() {
        let p = seg(&[(0, 9)]);
        assert_eq!(boundary_f1(&p, &spans(&[(0, 4), (5, 9)])).unwrap(), 0.0);
        assert_eq!(boundary_f1(&p, &spans(&[(0, 9)])).unwrap(), 1.0);
    }

    #[test]
    fn f1_hand_count() {
        let p = seg(&[(0, 2), (3, 7), (8, 9)]);
        let truth = spans(&[(0, 2), (3, 6), (7, 9)]);
        assert_eq!(boundary_f1(&p, &truth).unwrap(), 0.5);
    }

    #[test]
    fn f1_coverage_mismatch_errors() {
        let p = seg(&[(0, 9)]);
        assert!(boundary_f1(&p, &spans(&[(0, 8)])).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("equal:3".parse::<SegmentationMethod>().unwrap(), SegmentationMethod::Equal { k: 3 });
        assert!(matches!("kmeans:4".parse(), Ok(SegmentationMethod::KMeans { k: 4, .. })));
        assert!(matches!("pgvs".parse(), Ok(SegmentationMethod::Pgvs { .. })));
        assert!("equal:0".parse::<SegmentationMethod>().is_err());
        assert!("spectral:2".parse::<SegmentationMethod>().is_err());
    }
}
