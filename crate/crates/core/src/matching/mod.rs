//! Training objective: a triplet ranking loss plus an InfoNCE term over the
//! in-batch similarity matrix, and the optimizer loop that minimizes it.
//!
//! The similarity matrix has one row per distinct video in the batch and one
//! column per query. Each query has exactly one positive row. For a positive
//! pair `(v, q)` the negative texts are the queries whose video is not `v`,
//! and the negative videos are all other rows.

mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use train::{train, Adam, EpochLog, TrainReport};

/// How the InfoNCE ratio treats raw similarities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NceForm {
    /// `exp(S / tau)` in place of `S`: the usual softmax cross-entropy.
    #[default]
    Exponentiated,
    /// Raw cosines divided directly; undefined when any term is nonpositive.
    Verbatim,
}

impl fmt::Display for NceForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exponentiated => "exponentiated",
            Self::Verbatim => "verbatim",
        })
    }
}

impl FromStr for NceForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponentiated" => Ok(Self::Exponentiated),
            "verbatim" => Ok(Self::Verbatim),
            _ => Err(Error::Config(format!(
                "unknown nce_form {s:?} (expected exponentiated or verbatim)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub margin: f64,
    /// Weight of the InfoNCE term.
    pub lambda: f64,
    /// Epochs trained with random negatives before switching to the hardest.
    pub hard_negative_start_epoch: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub temperature: f64,
    pub nce_form: NceForm,
    /// Multiplier applied to the learning rate on a validation plateau.
    pub lr_decay_factor: f64,
    /// Epochs without validation SumR improvement before decaying.
    pub lr_decay_patience: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            lambda: 0.02,
            hard_negative_start_epoch: 20,
            learning_rate: 2e-4,
            batch_size: 64,
            epochs: 100,
            temperature: 1.0,
            nce_form: NceForm::Exponentiated,
            lr_decay_factor: 0.1,
            lr_decay_patience: 3,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be >= 0, got {}", self.margin));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!("lr_decay_factor must be in (0, 1], got {}", self.lr_decay_factor));
        }
        if self.lr_decay_patience == 0 {
            return bad("lr_decay_patience must be at least 1".into());
        }
        Ok(())
    }
}

/// Similarity matrix `[n_videos, n_queries]` on a tape plus, per query,
/// the row of its positive video.
#[derive(Debug, Clone)]
pub struct BatchSimilarities {
    pub scores: Var,
    pub positives: Vec<usize>,
    n_videos: usize,
}

impl BatchSimilarities {
    pub fn new(tape: &Tape, scores: Var, positives: Vec<usize>) -> Result<Self> {
        let shape = tape.shape(scores);
        if shape.len() != 2 || shape[1] != positives.len() || shape[1] == 0 {
            return Err(Error::Shape {
                op: "batch_similarities",
                detail: format!("scores {shape:?} for {} queries", positives.len()),
            });
        }
        let n_videos = shape[0];
        if let Some(q) = positives.iter().position(|&v| v >= n_videos) {
            return Err(Error::Shape {
                op: "batch_similarities",
                detail: format!("query {q} points at video row {} of {n_videos}", positives[q]),
            });
        }
        Ok(Self {
            scores,
            positives,
            n_videos,
        })
    }

    pub fn n_videos(&self) -> usize {
        self.n_videos
    }

    pub fn n_queries(&self) -> usize {
        self.positives.len()
    }

    /// Queries that are not positives of video row `v`.
    pub fn negative_texts(&self, v: usize) -> Vec<usize> {
        (0..self.n_queries()).filter(|&q| self.positives[q] != v).collect()
    }

    /// Video rows other than query `q`'s positive.
    pub fn negative_videos(&self, q: usize) -> Vec<usize> {
        (0..self.n_videos).filter(|&v| v != self.positives[q]).collect()
    }

    fn flat(&self, v: usize, q: usize) -> usize {
        v * self.n_queries() + q
    }
}

/// Negative choice for the triplet loss.
pub enum NegativePolicy<'a> {
    /// Uniform over the candidates, drawn from the given generator.
    Random(&'a mut ChaCha8Rng),
    /// Highest-scoring candidate; ties go to the lowest index.
    Hardest,
}

/// Candidate with the highest score; ties go to the earliest candidate.
pub fn hardest_negative(candidates: &[usize], score: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &c in candidates {
        let s = score(c);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    best.map(|(c, _)| c)
}

/// Mean over positive pairs of
/// `max(0, m + S(v, q-) - S(v, q)) + max(0, m + S(v-, q) - S(v, q))`.
pub fn triplet_loss(tape: &mut Tape, s: &BatchSimilarities, margin: f64, mut policy: NegativePolicy<'_>) -> Result<Var> {
    let values: Tensor = tape.value(s.scores).clone();
    let mut hinges = Vec::with_capacity(2 * s.n_queries());
    for q in 0..s.n_queries() {
        let v = s.positives[q];
        let texts = s.negative_texts(v);
        let videos = s.negative_videos(q);
        if texts.is_empty() || videos.is_empty() {
            return Err(Error::NoNegatives { pair: q });
        }
        let (q_neg, v_neg) = match &mut policy {
            NegativePolicy::Random(rng) => {
                let a = texts[rng.random_range(0..texts.len())];
                let b = videos[rng.random_range(0..videos.len())];
                (a, b)
            }
            NegativePolicy::Hardest => (
                hardest_negative(&texts, |qq| values.get2(v, qq)).expect("non-empty"),
                hardest_negative(&videos, |vv| values.get2(vv, q)).expect("non-empty"),
            ),
        };
        let pos = tape.index(s.scores, s.flat(v, q))?;
        for neg_idx in [s.flat(v, q_neg), s.flat(v_neg, q)] {
            let neg = tape.index(s.scores, neg_idx)?;
            let diff = tape.sub(neg, pos)?;
            let shifted = tape.add_scalar(diff, margin)?;
            hinges.push(tape.relu(shifted)?);
        }
    }
    let stacked = tape.stack(&hinges)?;
    let total = tape.sum(stacked)?;
    tape.scale(total, 1.0 / s.n_queries() as f64)
}

/// `log(x_0 / sum_i x_i)` where the first index is the positive.
fn log_ratio(tape: &mut Tape, s: &BatchSimilarities, flat: &[usize], tau: f64, form: NceForm, pair: (usize, usize)) -> Result<Var> {
    let entries = flat.iter().map(|&i| tape.index(s.scores, i)).collect::<Result<Vec<_>>>()?;
    let xs = tape.stack(&entries)?;
    match form {
        NceForm::Exponentiated => {
            let logits = tape.scale(xs, 1.0 / tau)?;
            // log-sum-exp shifted by a constant max keeps exp in range
            let shift = tape.value(logits).data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let centered = tape.add_scalar(logits, -shift)?;
            let e = tape.exp(centered)?;
            let z = tape.sum(e)?;
            let log_z = tape.log(z)?;
            let pos = tape.index(centered, 0)?;
            tape.sub(pos, log_z)
        }
        NceForm::Verbatim => {
            let vals = tape.value(xs).data();
            let denom: f64 = vals.iter().sum();
            if vals[0] <= 0.0 || denom <= 0.0 {
                return Err(Error::Domain(format!(
                    "verbatim InfoNCE needs positive similarities: pair (video {}, query {}) has numerator {} and denominator {}",
                    pair.0, pair.1, vals[0], denom
                )));
            }
            let z = tape.sum(xs)?;
            let pos = tape.index(xs, 0)?;
            let ratio = tape.div(pos, z)?;
            tape.log(ratio)
        }
    }
}

/// `-(1/n) sum over positive pairs of [log ratio over negative texts +
/// log ratio over negative videos]`.
pub fn infonce_loss(tape: &mut Tape, s: &BatchSimilarities, tau: f64, form: NceForm) -> Result<Var> {
    let mut terms = Vec::with_capacity(2 * s.n_queries());
    for q in 0..s.n_queries() {
        let v = s.positives[q];
        let mut by_text = vec![s.flat(v, q)];
        by_text.extend(s.negative_texts(v).into_iter().map(|qq| s.flat(v, qq)));
        terms.push(log_ratio(tape, s, &by_text, tau, form, (v, q))?);
        let mut by_video = vec![s.flat(v, q)];
        by_video.extend(s.negative_videos(q).into_iter().map(|vv| s.flat(vv, q)));
        terms.push(log_ratio(tape, s, &by_video, tau, form, (v, q))?);
    }
    let stacked = tape.stack(&terms)?;
    let total = tape.sum(stacked)?;
    tape.scale(total, -1.0 / s.n_queries() as f64)
}

/// Loss components on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub triplet: Var,
    pub nce: Var,
}

/// `triplet + lambda * infonce`.
pub fn total_loss(tape: &mut Tape, s: &BatchSimilarities, cfg: &TrainingConfig, policy: NegativePolicy<'_>) -> Result<LossParts> {
    let triplet = triplet_loss(tape, s, cfg.margin, policy)?;
    let nce = infonce_loss(tape, s, cfg.temperature, cfg.nce_form)?;
    let weighted = tape.scale(nce, cfg.lambda)?;
    let total = tape.add(triplet, weighted)?;
    Ok(LossParts { total, triplet, nce })
}
