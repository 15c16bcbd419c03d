//! Text and video towers.
//!
//! The text tower maps word features to contextual word embeddings `Q` and
//! pools them into one sentence vector `t` with a learned attention vector:
//!
//! ```text
//! Q = Transformer(ReLU(FC(words)) + PE[0..n_t])
//! a = softmax(omega · Qᵀ)
//! t = Σ a_i q_i
//! ```
//!
//! The video tower contextualizes frame features without the ReLU:
//! `v_f = Transformer(FC(frames) + PE[0..n_v])`.

use crate::autograd::{Tape, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::{Linear, TransformerLayer};
use crate::params::{Bound, ParamBuilder, ParamId};
use crate::tensor::Tensor;

fn validate_features(what: &str, id: &str, features: &Tensor) -> Result<()> {
    if features.rank() != 2 {
        return Err(Error::Ingestion(format!(
            "{what} {id}: expected a matrix, got shape {:?}",
            features.shape()
        )));
    }
    if features.rows() == 0 {
        return Err(Error::Ingestion(format!("{what} {id}: empty sequence")));
    }
    if let Some(i) = features.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Ingestion(format!(
            "{what} {id}: non-finite value in row {}",
            i / features.cols().max(1)
        )));
    }
    Ok(())
}

/// Per-word features of one caption.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub text_id: String,
    pub video_id: String,
    pub embeddings: Tensor,
}

impl TokenSequence {
    pub fn new(text_id: impl Into<String>, video_id: impl Into<String>, embeddings: Tensor) -> Result<Self> {
        let text_id = text_id.into();
        validate_features("text", &text_id, &embeddings)?;
        Ok(Self {
            text_id,
            video_id: video_id.into(),
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-frame features of one video, in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub video_id: String,
    pub features: Tensor,
}

impl FrameSequence {
    pub fn new(video_id: impl Into<String>, features: Tensor) -> Result<Self> {
        let video_id = video_id.into();
        validate_features("video", &video_id, &features)?;
        Ok(Self { video_id, features })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Source rows kept when a video longer than `max_len` is subsampled:
/// `round(i · (n - 1) / (max_len - 1))` for `i in 0..max_len`.
pub fn subsample_indices(n: usize, max_len: usize) -> Vec<usize> {
    if n <= max_len {
        return (0..n).collect();
    }
    if max_len == 1 {
        return vec![0];
    }
    (0..max_len)
        .map(|i| ((i * (n - 1)) as f64 / (max_len - 1) as f64).round() as usize)
        .collect()
}

/// One tower: input projection, positional table, transformer stack.
#[derive(Debug, Clone)]
pub struct Tower {
    pub fc: Linear,
    pub pos: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub relu_after_fc: bool,
}

impl Tower {
    fn init(b: &mut ParamBuilder<'_>, name: &str, input_dim: usize, cfg: &ModelConfig, relu: bool) -> Self {
        let fc = Linear::init(b, &format!("{name}.fc"), input_dim, cfg.d, true);
        let pos = b.normal(format!("{name}.pos"), &[cfg.max_len, cfg.d], 0.02);
        let layers = (0..cfg.layers)
            .map(|l| TransformerLayer::init(b, &format!("{name}.layer{l}"), cfg.d, cfg.heads))
            .collect();
        Self {
            fc,
            pos,
            layers,
            relu_after_fc: relu,
        }
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, input: &Tensor, eps: f64) -> Result<Var> {
        let n = input.rows();
        let x = tape.constant(input.clone());
        let mut h = self.fc.forward(tape, p, x)?;
        if self.relu_after_fc {
            h = tape.relu(h)?;
        }
        let pe = tape.slice(p[self.pos], 0, 0, n)?;
        h = tape.add(h, pe)?;
        for layer in &self.layers {
            h = layer.forward(tape, p, h, eps)?;
        }
        Ok(h)
    }
}

/// Parameter handles of both towers plus the pooling vector.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub text: Tower,
    pub omega: ParamId,
    pub video: Tower,
}

/// Text tower outputs on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TextEncoding {
    /// Contextual word embeddings `Q`, `[n_t, d]`.
    pub contextual: Var,
    /// Pooling weights, `[n_t]`.
    pub weights: Var,
    /// Sentence vector `t`, `[d]`.
    pub sentence: Var,
}

impl EncoderParams {
    pub(crate) fn init(b: &mut ParamBuilder<'_>, cfg: &ModelConfig) -> Self {
        let text = Tower::init(b, "text", cfg.text_dim, cfg, true);
        let omega = b.normal("text.omega".into(), &[cfg.d], 0.02);
        let video = Tower::init(b, "video", cfg.video_dim, cfg, false);
        Self { text, omega, video }
    }

    pub fn encode_text(&self, tape: &mut Tape, p: &Bound, cfg: &ModelConfig, tokens: &Tensor) -> Result<TextEncoding> {
        validate_features("text", "input", tokens)?;
        let n = tokens.rows();
        if n > cfg.max_len {
            return Err(Error::SequenceTooLong {
                len: n,
                max_len: cfg.max_len,
            });
        }
        let q = self.text.forward(tape, p, tokens, cfg.ln_eps)?;
        let omega = tape.reshape(p[self.omega], [cfg.d, 1])?;
        let logits = tape.matmul(q, omega)?;
        let logits = tape.reshape(logits, [1, n])?;
        let a = tape.softmax(logits)?;
        let t = tape.matmul(a, q)?;
        let sentence = tape.reshape(t, [cfg.d])?;
        let weights = tape.reshape(a, [n])?;
        Ok(TextEncoding {
            contextual: q,
            weights,
            sentence,
        })
    }

    /// Encodes frames, subsampling to `max_len` rows first when needed.
    pub fn encode_video(&self, tape: &mut Tape, p: &Bound, cfg: &ModelConfig, frames: &Tensor) -> Result<Var> {
        validate_features("video", "input", frames)?;
        if frames.rows() > cfg.max_len {
            let kept = frames.select_rows(&subsample_indices(frames.rows(), cfg.max_len));
            self.video.forward(tape, p, &kept, cfg.ln_eps)
        } else {
            self.video.forward(tape, p, frames, cfg.ln_eps)
        }
    }
}
