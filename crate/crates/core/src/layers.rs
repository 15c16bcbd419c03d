//! Building blocks shared by both towers and the refinement head.

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::params::{Bound, ParamBuilder, ParamId};

/// `y = x W (+ b)` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub(crate) fn init(b: &mut ParamBuilder<'_>, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let weight = b.uniform(format!("{name}.weight"), &[fan_in, fan_out], fan_in);
        let bias = bias.then(|| b.uniform(format!("{name}.bias"), &[fan_out], fan_in));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.weight])?;
        match self.bias {
            Some(b) => tape.add_row(y, p[b]),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub(crate) fn init(b: &mut ParamBuilder<'_>, name: &str, dim: usize) -> Self {
        Self {
            gamma: b.constant(format!("{name}.gamma"), &[dim], 1.0),
            beta: b.constant(format!("{name}.beta"), &[dim], 0.0),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, eps: f64) -> Result<Var> {
        tape.layer_norm(x, p[self.gamma], p[self.beta], eps)
    }
}

/// Pre-LN transformer encoder layer: multi-head self-attention and a ReLU
/// feedforward block, each wrapped in a residual connection.
///
/// ```text
/// h   = x + MHA(LN1(x))
/// out = h + W2 · relu(W1 · LN2(h))
/// ```
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub heads: usize,
    pub ln_attn: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub ln_ff: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

impl TransformerLayer {
    pub(crate) fn init(b: &mut ParamBuilder<'_>, name: &str, dim: usize, heads: usize) -> Self {
        let ff = 4 * dim;
        Self {
            heads,
            ln_attn: LayerNorm::init(b, &format!("{name}.ln_attn"), dim),
            query: Linear::init(b, &format!("{name}.attn.query"), dim, dim, true),
            key: Linear::init(b, &format!("{name}.attn.key"), dim, dim, true),
            value: Linear::init(b, &format!("{name}.attn.value"), dim, dim, true),
            out: Linear::init(b, &format!("{name}.attn.out"), dim, dim, true),
            ln_ff: LayerNorm::init(b, &format!("{name}.ln_ff"), dim),
            ff_in: Linear::init(b, &format!("{name}.ff.in"), dim, ff, true),
            ff_out: Linear::init(b, &format!("{name}.ff.out"), ff, dim, true),
        }
    }

    /// `x: [n, d]` to `[n, d]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, eps: f64) -> Result<Var> {
        let d = tape.shape(x)[1];
        let head_dim = d / self.heads;
        let normed = self.ln_attn.forward(tape, p, x, eps)?;
        let q = self.query.forward(tape, p, normed)?;
        let k = self.key.forward(tape, p, normed)?;
        let v = self.value.forward(tape, p, normed)?;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let start = h * head_dim;
            let qh = tape.slice(q, 1, start, head_dim)?;
            let kh = tape.slice(k, 1, start, head_dim)?;
            let vh = tape.slice(v, 1, start, head_dim)?;
            let kt = tape.transpose(kh)?;
            let logits = tape.matmul(qh, kt)?;
            let logits = tape.scale(logits, scale)?;
            let attn = tape.softmax(logits)?;
            heads.push(tape.matmul(attn, vh)?);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat(&heads, 1)?
        };
        let attended = self.out.forward(tape, p, merged)?;
        let h = tape.add(x, attended)?;

        let normed = self.ln_ff.forward(tape, p, h, eps)?;
        let hidden = self.ff_in.forward(tape, p, normed)?;
        let hidden = tape.relu(hidden)?;
        let ff = self.ff_out.forward(tape, p, hidden)?;
        tape.add(h, ff)
    }
}

/// Two affine layers with a ReLU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub(crate) fn init(b: &mut ParamBuilder<'_>, name: &str, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            hidden: Linear::init(b, &format!("{name}.0"), input, hidden, true),
            output: Linear::init(b, &format!("{name}.1"), hidden, output, true),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, p, x)?;
        let h = tape.relu(h)?;
        self.output.forward(tape, p, h)
    }
}
