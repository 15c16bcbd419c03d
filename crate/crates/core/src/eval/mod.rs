//! Ranking a corpus per query, recall metrics, and the threshold-sweep and
//! ablation harnesses.
//!
//! ```
//! use uem::eval::metrics_from_ranks;
//!
//! let m = metrics_from_ranks(&[1, 3, 7, 50]).unwrap();
//! assert_eq!((m.r1, m.r5, m.r10, m.r100), (25.0, 50.0, 75.0, 100.0));
//! assert_eq!(m.sumr, 250.0);
//! ```

mod report;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::FrameSequence;
use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::model::{EncodedQuery, EncodedVideo, PipelineVariant, UemModel};
use crate::segmentation::{boundary_f1, SegmentationMethod, Span};

pub use report::{ablation_csv, ablation_table, metrics_table, sweep_csv, sweep_table};

pub const RECALL_KS: [usize; 4] = [1, 5, 10, 100];

/// Equal-division event count used when progressive grouping is ablated.
pub const ABLATION_EQUAL_K: usize = 32;
/// Cluster count of the k-means event baseline.
pub const ABLATION_KMEANS_K: usize = 32;

/// One query's corpus ordering, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub text_id: String,
    pub ranking: Vec<(String, f64)>,
}

impl RankingResult {
    /// Sorts by descending score; equal scores go in ascending video id order.
    pub fn from_scores(text_id: impl Into<String>, mut scores: Vec<(String, f64)>) -> Self {
        scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
        Self {
            text_id: text_id.into(),
            ranking: scores,
        }
    }

    /// 1-based rank of `video_id`.
    pub fn rank_of(&self, video_id: &str) -> Option<usize> {
        self.ranking.iter().position(|(v, _)| v == video_id).map(|i| i + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub r100: f64,
    pub sumr: f64,
    pub query_count: usize,
}

fn percent_within(ranks: &[usize], k: usize) -> f64 {
    100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Metrics from the 1-based rank of each query's ground-truth video.
pub fn metrics_from_ranks(ranks: &[usize]) -> Result<MetricsReport> {
    if ranks.is_empty() {
        return Err(Error::Eval("no queries to evaluate".into()));
    }
    let [r1, r5, r10, r100] = RECALL_KS.map(|k| percent_within(ranks, k));
    Ok(MetricsReport {
        r1,
        r5,
        r10,
        r100,
        sumr: r1 + r5 + r10 + r100,
        query_count: ranks.len(),
    })
}

/// Rank of each query's ground-truth video, in `rankings` order.
pub fn ground_truth_ranks(rankings: &[RankingResult], truth: &HashMap<String, String>) -> Result<Vec<usize>> {
    rankings
        .iter()
        .map(|r| {
            let video = truth
                .get(&r.text_id)
                .ok_or_else(|| Error::Eval(format!("no ground-truth video for query {:?}", r.text_id)))?;
            r.rank_of(video).ok_or_else(|| {
                Error::Eval(format!(
                    "ground-truth video {video:?} of query {:?} is not in its ranking",
                    r.text_id
                ))
            })
        })
        .collect()
}

/// Percentage of queries whose ground-truth video ranks within the top `k`.
pub fn recall_at_k(rankings: &[RankingResult], truth: &HashMap<String, String>, k: usize) -> Result<f64> {
    let ranks = ground_truth_ranks(rankings, truth)?;
    if ranks.is_empty() {
        return Err(Error::Eval("no queries to evaluate".into()));
    }
    Ok(percent_within(&ranks, k))
}

pub fn metrics(rankings: &[RankingResult], truth: &HashMap<String, String>) -> Result<MetricsReport> {
    metrics_from_ranks(&ground_truth_ranks(rankings, truth)?)
}

/// Encodes and segments every video once.
pub fn prepare_corpus(model: &UemModel, videos: &[FrameSequence], variant: &PipelineVariant) -> Result<Vec<EncodedVideo>> {
    videos.par_iter().map(|v| model.prepare_video(v, variant)).collect()
}

/// Scores `query` against every prepared video and sorts.
pub fn rank_corpus(model: &UemModel, query: &EncodedQuery, corpus: &[EncodedVideo]) -> Result<RankingResult> {
    if corpus.is_empty() {
        return Err(Error::Eval("cannot rank against an empty corpus".into()));
    }
    let scores = corpus
        .iter()
        .map(|v| Ok((v.video_id.clone(), model.score_prepared(query, v)?.score)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RankingResult::from_scores(query.text_id.clone(), scores))
}

/// Result of evaluating one pipeline variant on a dataset.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub rankings: Vec<RankingResult>,
    pub corpus: Vec<EncodedVideo>,
}

impl Evaluation {
    pub fn mean_event_count(&self) -> f64 {
        self.corpus.iter().map(|v| v.segmentation.len()).sum::<usize>() as f64 / self.corpus.len() as f64
    }

    /// Mean boundary F1 of the corpus segmentations against planted spans.
    pub fn boundary_f1(&self, truth: &BTreeMap<String, Vec<Span>>) -> Result<f64> {
        let mut total = 0.0;
        for v in &self.corpus {
            let t = truth
                .get(&v.video_id)
                .ok_or_else(|| Error::Eval(format!("no planted segmentation for video {:?}", v.video_id)))?;
            total += boundary_f1(&v.segmentation, t)?;
        }
        Ok(total / self.corpus.len() as f64)
    }
}

/// Ranks every text of `dataset` against all of its videos.
pub fn evaluate(model: &UemModel, dataset: &Dataset, variant: &PipelineVariant) -> Result<Evaluation> {
    if dataset.videos.is_empty() || dataset.texts.is_empty() {
        return Err(Error::Eval(format!(
            "dataset has {} videos and {} texts; evaluation needs at least one of each",
            dataset.videos.len(),
            dataset.texts.len()
        )));
    }
    let corpus = prepare_corpus(model, &dataset.videos, variant)?;
    evaluate_prepared(model, dataset, corpus, variant.refine)
}

fn evaluate_prepared(model: &UemModel, dataset: &Dataset, corpus: Vec<EncodedVideo>, refine: bool) -> Result<Evaluation> {
    let rankings = dataset
        .texts
        .par_iter()
        .map(|t| rank_corpus(model, &model.prepare_query(t, refine)?, &corpus))
        .collect::<Result<Vec<_>>>()?;
    let report = metrics(&rankings, &dataset.ground_truth())?;
    Ok(Evaluation {
        report,
        rankings,
        corpus,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    #[serde(flatten)]
    pub report: MetricsReport,
    pub mean_event_count: f64,
    /// Mean boundary F1 against planted spans, when known.
    pub boundary_f1: Option<f64>,
}

/// Full-pipeline evaluation at each threshold, re-segmenting every time.
pub fn sweep_epsilon(
    model: &UemModel,
    dataset: &Dataset,
    grid: &[f64],
    truth: Option<&BTreeMap<String, Vec<Span>>>,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Parameter("threshold grid is empty".into()));
    }
    grid.iter()
        .map(|&epsilon| {
            let variant = PipelineVariant {
                segmentation: SegmentationMethod::Pgvs { epsilon },
                refine: true,
            };
            let e = evaluate(model, dataset, &variant)?;
            Ok(SweepRow {
                epsilon,
                report: e.report,
                mean_event_count: e.mean_event_count(),
                boundary_f1: truth.map(|t| e.boundary_f1(t)).transpose()?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub segmentation: String,
    pub refine: bool,
    #[serde(flatten)]
    pub report: MetricsReport,
    pub mean_event_count: f64,
    pub boundary_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTables {
    /// Progressive grouping on/off crossed with refinement on/off.
    pub components: Vec<AblationRow>,
    /// Event construction methods, all without refinement.
    pub methods: Vec<AblationRow>,
}

fn ablation_row(
    model: &UemModel,
    dataset: &Dataset,
    label: &str,
    variant: PipelineVariant,
    truth: Option<&BTreeMap<String, Vec<Span>>>,
) -> Result<AblationRow> {
    let e = evaluate(model, dataset, &variant)?;
    Ok(AblationRow {
        label: label.to_string(),
        segmentation: variant.segmentation.to_string(),
        refine: variant.refine,
        report: e.report,
        mean_event_count: e.mean_event_count(),
        boundary_f1: truth.map(|t| e.boundary_f1(t)).transpose()?,
    })
}

/// Evaluates the component grid and the event-construction comparison.
pub fn ablation_matrix(
    model: &UemModel,
    dataset: &Dataset,
    truth: Option<&BTreeMap<String, Vec<Span>>>,
    kmeans_seed: u64,
) -> Result<AblationTables> {
    let pgvs = SegmentationMethod::Pgvs {
        epsilon: model.config.epsilon,
    };
    let equal = SegmentationMethod::Equal { k: ABLATION_EQUAL_K };
    let kmeans = SegmentationMethod::KMeans {
        k: ABLATION_KMEANS_K,
        seed: kmeans_seed,
    };
    let v = |segmentation, refine| PipelineVariant { segmentation, refine };
    let components = [
        ("1", v(equal, false)),
        ("2", v(pgvs, false)),
        ("3", v(equal, true)),
        ("4", v(pgvs, true)),
    ]
    .into_iter()
    .map(|(label, variant)| ablation_row(model, dataset, label, variant, truth))
    .collect::<Result<Vec<_>>>()?;
    let methods = [
        ("equal division", v(equal, false)),
        ("k-means cluster", v(kmeans, false)),
        ("pgvs", v(pgvs, false)),
    ]
    .into_iter()
    .map(|(label, variant)| ablation_row(model, dataset, label, variant, truth))
    .collect::<Result<Vec<_>>>()?;
    Ok(AblationTables { components, methods })
}
