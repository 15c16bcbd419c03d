//! Text-conditioned event refinement.
//!
//! Events are first summarized by the arithmetic mean of their frames (the
//! coarse representation). The query's sentence vector picks the most
//! similar event by cosine, and a single-head cross-attention from the
//! sentence vector onto that event's frames produces the refined event
//! vector:
//!
//! ```text
//! Q_t = LN_t(t) W_Q          [1, D_p]
//! K_e = LN_e(frames) W_K     [n_e, D_p]
//! V_e = LN_e(frames) W_V     [n_e, D_p]
//! e_ref = MLP(softmax(Q_t K_eᵀ / sqrt(D_p)) V_e)
//! ```
//!
//! The selection is a hard argmax: gradients reach only the selected
//! event's frames, never the choice itself.

use crate::autograd::{Tape, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::{LayerNorm, Mlp};
use crate::params::{Bound, ParamBuilder, ParamId};
use crate::segmentation::EventSegmentation;
use crate::tensor::{self, Tensor};

/// Mean of the frames in each span, one row per event.
///
/// This is distinct from the running centers that progressive grouping
/// reports.
pub fn coarse_event_reps(frames: &Tensor, seg: &EventSegmentation) -> Result<Tensor> {
    seg.validate(frames.rows())?;
    let d = frames.cols();
    let mut out = Vec::with_capacity(seg.len() * d);
    for span in &seg.spans {
        let mut m = vec![0.0; d];
        for i in span.indices() {
            for (acc, x) in m.iter_mut().zip(frames.row(i)) {
                *acc += x;
            }
        }
        let inv = 1.0 / span.len() as f64;
        out.extend(m.into_iter().map(|v| v * inv));
    }
    Tensor::new([seg.len(), d], out)
}

/// Index of the event most cosine-similar to `t`; ties go to the lowest index.
pub fn select_event(coarse: &Tensor, t: &[f64]) -> Result<usize> {
    if coarse.rows() == 0 || coarse.rank() != 2 {
        return Err(Error::Shape {
            op: "select_event",
            detail: format!("need at least one event, got shape {:?}", coarse.shape()),
        });
    }
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (j, row) in coarse.row_iter().enumerate() {
        let s = tensor::cosine(row, t).map_err(|_| Error::DegenerateVector {
            what: format!("event {j} or query during event selection"),
            floor: tensor::NORM_FLOOR,
        })?;
        if s > best_sim {
            best_sim = s;
            best = j;
        }
    }
    Ok(best)
}

/// Parameter handles of the refinement head.
#[derive(Debug, Clone)]
pub struct CaerParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub ln_t: LayerNorm,
    pub ln_e: LayerNorm,
    pub mlp: Mlp,
}

/// Refinement outputs on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Refinement {
    /// Attention over the event's frames, `[n_e]`.
    pub attention: Var,
    /// Attention-weighted values before the MLP, `[1, D_p]`.
    pub context: Var,
    /// Refined event vector, `[d]`.
    pub e_ref: Var,
}

/// Result of refining one event for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedEvent {
    pub video_id: String,
    pub text_id: String,
    pub selected_event_index: usize,
    pub attention_weights: Vec<f64>,
    pub e_ref: Vec<f64>,
}

impl CaerParams {
    pub(crate) fn init(b: &mut ParamBuilder<'_>, cfg: &ModelConfig) -> Self {
        Self {
            w_q: b.uniform("caer.w_q".into(), &[cfg.d, cfg.d_p], cfg.d),
            w_k: b.uniform("caer.w_k".into(), &[cfg.d, cfg.d_p], cfg.d),
            w_v: b.uniform("caer.w_v".into(), &[cfg.d, cfg.d_p], cfg.d),
            ln_t: LayerNorm::init(b, "caer.ln_t", cfg.d),
            ln_e: LayerNorm::init(b, "caer.ln_e", cfg.d),
            mlp: Mlp::init(b, "caer.mlp", cfg.d_p, cfg.d_p, cfg.d),
        }
    }

    /// `LN_t(t) W_Q` as a `[1, D_p]` row.
    pub fn project_query(&self, tape: &mut Tape, p: &Bound, cfg: &ModelConfig, t: Var) -> Result<Var> {
        let t_row = tape.reshape(t, [1, cfg.d])?;
        let t_norm = self.ln_t.forward(tape, p, t_row, cfg.ln_eps)?;
        tape.matmul(t_norm, p[self.w_q])
    }

    /// Keys and values for every row of `frames: [n, d]`. Layer norm acts
    /// per row, so slicing these to an event equals projecting the event.
    pub fn project_frames(&self, tape: &mut Tape, p: &Bound, cfg: &ModelConfig, frames: Var) -> Result<(Var, Var)> {
        let e_norm = self.ln_e.forward(tape, p, frames, cfg.ln_eps)?;
        let k = tape.matmul(e_norm, p[self.w_k])?;
        let v = tape.matmul(e_norm, p[self.w_v])?;
        Ok((k, v))
    }

    /// Attention of a projected query over an event's keys and values.
    pub fn attend(&self, tape: &mut Tape, p: &Bound, cfg: &ModelConfig, q: Var, keys: Var, values: Var) -> Result<Refinement> {
        let n_e = tape.shape(keys)[0];
        let kt = tape.transpose(keys)?;
        let logits = tape.matmul(q, kt)?;
        let logits = tape.scale(logits, 1.0 / (cfg.d_p as f64).sqrt())?;
        let alpha = tape.softmax(logits)?;
        let context = tape.matmul(alpha, values)?;
        let out = self.mlp.forward(tape, p, context)?;
        Ok(Refinement {
            attention: tape.reshape(alpha, [n_e])?,
            context,
            e_ref: tape.reshape(out, [cfg.d])?,
        })
    }

    /// Cross-attends from `t: [d]` onto `event_frames: [n_e, d]`.
    pub fn refine(&self, tape: &mut Tape, p: &Bound, cfg: &ModelConfig, t: Var, event_frames: Var) -> Result<Refinement> {
        let q = self.project_query(tape, p, cfg, t)?;
        let (k, v) = self.project_frames(tape, p, cfg, event_frames)?;
        self.attend(tape, p, cfg, q, k, v)
    }
}
