//! The full retrieval pipeline with its parameters.
//!
//! Scoring a (query, video) pair runs: encode both sides, segment the
//! encoded frames, pick the event whose mean is closest to the sentence
//! vector, refine it by cross-attention, and take the cosine of the refined
//! event with the sentence vector.
//!
//! Everything that depends on only one side of the pair is computed once and
//! kept in [`EncodedVideo`] / [`EncodedQuery`], so ranking a corpus costs one
//! cross-attention per pair.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::config::ModelConfig;
use crate::encoders::{EncoderParams, FrameSequence, TokenSequence};
use crate::error::{Error, Result};
use crate::params::{Bound, ModelParams, ParamBuilder};
use crate::refinement::{coarse_event_reps, select_event, CaerParams, RefinedEvent};
use crate::segmentation::{EventSegmentation, SegmentationMethod};
use crate::tensor::{self, Tensor};

/// Which segmentation feeds event selection, and whether the selected event
/// is refined or used as its plain frame mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineVariant {
    pub segmentation: SegmentationMethod,
    pub refine: bool,
}

impl PipelineVariant {
    /// Progressive grouping at the configured threshold, with refinement.
    pub fn full(cfg: &ModelConfig) -> Self {
        Self {
            segmentation: SegmentationMethod::Pgvs { epsilon: cfg.epsilon },
            refine: true,
        }
    }
}

/// Per-video state reused across every query.
#[derive(Debug, Clone)]
pub struct EncodedVideo {
    pub video_id: String,
    /// Encoded frames, `[n_v, d]`.
    pub frames: Tensor,
    pub segmentation: EventSegmentation,
    /// Mean of each event's encoded frames, `[n_events, d]`.
    pub coarse: Tensor,
    /// Attention keys and values for every frame, present when refining.
    pub keys: Option<Tensor>,
    pub values: Option<Tensor>,
}

/// Per-query state reused across every video.
#[derive(Debug, Clone)]
pub struct EncodedQuery {
    pub text_id: String,
    pub video_id: String,
    pub sentence: Vec<f64>,
    /// Projected query row for the cross-attention, present when refining.
    pub query: Option<Tensor>,
}

/// Text tower outputs as plain values.
#[derive(Debug, Clone)]
pub struct TextEmbedding {
    pub contextual: Tensor,
    pub weights: Vec<f64>,
    pub sentence: Vec<f64>,
}

/// Score of one pair plus the event that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub score: f64,
    pub selected_event_index: usize,
    /// Present when the variant refines.
    pub refined: Option<RefinedEvent>,
}

#[derive(Debug, Clone)]
pub struct UemModel {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub encoders: EncoderParams,
    pub caer: CaerParams,
}

impl UemModel {
    /// Freshly initialized model; the same seed always gives the same weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder {
            store: &mut params,
            rng: &mut rng,
        };
        let encoders = EncoderParams::init(&mut b, &config);
        let caer = CaerParams::init(&mut b, &config);
        Ok(Self {
            config,
            params,
            encoders,
            caer,
        })
    }

    /// Rebuilds a model around stored weights. Names and shapes must match
    /// what `config` would create, in order.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if named.len() != model.params.len() {
            return Err(Error::Parameter(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                named.len()
            )));
        }
        let mut values = Vec::with_capacity(named.len());
        for ((name, value), (want, init)) in named.into_iter().zip(model.params.iter()) {
            if name != want {
                return Err(Error::Parameter(format!("expected parameter {want:?}, found {name:?}")));
            }
            if value.shape() != init.shape() {
                return Err(Error::Parameter(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.shape(),
                    init.shape()
                )));
            }
            values.push(value);
        }
        model.params.set_all(values);
        Ok(model)
    }

    fn frozen(&self) -> (Tape, Bound) {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        (tape, bound)
    }

    /// Encoded frames `[n_v, d]` (after subsampling to `max_len`).
    pub fn encode_video(&self, frames: &Tensor) -> Result<Tensor> {
        let (mut tape, p) = self.frozen();
        let v = self.encoders.encode_video(&mut tape, &p, &self.config, frames)?;
        Ok(tape.value(v).clone())
    }

    pub fn encode_text(&self, tokens: &Tensor) -> Result<TextEmbedding> {
        let (mut tape, p) = self.frozen();
        let enc = self.encoders.encode_text(&mut tape, &p, &self.config, tokens)?;
        Ok(TextEmbedding {
            contextual: tape.value(enc.contextual).clone(),
            weights: tape.value(enc.weights).data().to_vec(),
            sentence: tape.value(enc.sentence).data().to_vec(),
        })
    }

    pub fn prepare_video(&self, video: &FrameSequence, variant: &PipelineVariant) -> Result<EncodedVideo> {
        let (mut tape, p) = self.frozen();
        let v = self.encoders.encode_video(&mut tape, &p, &self.config, &video.features)?;
        let frames = tape.value(v).clone();
        let segmentation = variant.segmentation.segment(&frames)?.with_video_id(&video.video_id);
        let coarse = coarse_event_reps(&frames, &segmentation)?;
        let (keys, values) = if variant.refine {
            let (k, val) = self.caer.project_frames(&mut tape, &p, &self.config, v)?;
            (Some(tape.value(k).clone()), Some(tape.value(val).clone()))
        } else {
            (None, None)
        };
        Ok(EncodedVideo {
            video_id: video.video_id.clone(),
            frames,
            segmentation,
            coarse,
            keys,
            values,
        })
    }

    pub fn prepare_query(&self, text: &TokenSequence, refine: bool) -> Result<EncodedQuery> {
        let (mut tape, p) = self.frozen();
        let enc = self.encoders.encode_text(&mut tape, &p, &self.config, &text.embeddings)?;
        let query = if refine {
            let q = self.caer.project_query(&mut tape, &p, &self.config, enc.sentence)?;
            Some(tape.value(q).clone())
        } else {
            None
        };
        Ok(EncodedQuery {
            text_id: text.text_id.clone(),
            video_id: text.video_id.clone(),
            sentence: tape.value(enc.sentence).data().to_vec(),
            query,
        })
    }

    /// Scores one prepared pair. Refines iff both sides carry projections.
    pub fn score_prepared(&self, query: &EncodedQuery, video: &EncodedVideo) -> Result<PairScore> {
        let j = select_event(&video.coarse, &query.sentence)?;
        let (q, k, v) = match (&query.query, &video.keys, &video.values) {
            (Some(q), Some(k), Some(v)) => (q, k, v),
            _ => {
                let score = tensor::cosine(video.coarse.row(j), &query.sentence)?;
                return Ok(PairScore {
                    score,
                    selected_event_index: j,
                    refined: None,
                });
            }
        };
        let span = video.segmentation.spans[j];
        let (mut tape, p) = self.frozen();
        let qv = tape.constant(q.clone());
        let kv = tape.constant(k.clone());
        let vv = tape.constant(v.clone());
        let ke = tape.slice(kv, 0, span.start, span.len())?;
        let ve = tape.slice(vv, 0, span.start, span.len())?;
        let r = self.caer.attend(&mut tape, &p, &self.config, qv, ke, ve)?;
        let e_ref = tape.value(r.e_ref).data().to_vec();
        let score = tensor::cosine(&e_ref, &query.sentence)?;
        Ok(PairScore {
            score,
            selected_event_index: j,
            refined: Some(RefinedEvent {
                video_id: video.video_id.clone(),
                text_id: query.text_id.clone(),
                selected_event_index: j,
                attention_weights: tape.value(r.attention).data().to_vec(),
                e_ref,
            }),
        })
    }

    /// Default-pipeline score of one (query, video) pair.
    pub fn score(&self, text: &TokenSequence, video: &FrameSequence) -> Result<f64> {
        let variant = PipelineVariant::full(&self.config);
        let v = self.prepare_video(video, &variant)?;
        let q = self.prepare_query(text, true)?;
        Ok(self.score_prepared(&q, &v)?.score)
    }

    /// Batch similarity matrix on a tape, `[n_videos, n_queries]`, for training.
    ///
    /// Segmentation and event selection read values only; gradients flow
    /// through the encoders and the refinement of each selected event.
    pub fn similarity_matrix(
        &self,
        tape: &mut Tape,
        p: &Bound,
        videos: &[&Tensor],
        texts: &[&Tensor],
    ) -> Result<Var> {
        let cfg = &self.config;
        let method = SegmentationMethod::Pgvs { epsilon: cfg.epsilon };
        let mut video_side = Vec::with_capacity(videos.len());
        for frames in videos {
            let v = self.encoders.encode_video(tape, p, cfg, frames)?;
            let value = tape.value(v).clone();
            let seg = method.segment(&value)?;
            let coarse = coarse_event_reps(&value, &seg)?;
            let (k, val) = self.caer.project_frames(tape, p, cfg, v)?;
            video_side.push((seg, coarse, k, val));
        }
        let mut text_side = Vec::with_capacity(texts.len());
        for tokens in texts {
            let enc = self.encoders.encode_text(tape, p, cfg, tokens)?;
            let q = self.caer.project_query(tape, p, cfg, enc.sentence)?;
            text_side.push((enc.sentence, tape.value(enc.sentence).data().to_vec(), q));
        }
        let mut scores = Vec::with_capacity(videos.len() * texts.len());
        for (seg, coarse, k, val) in &video_side {
            for (t, t_value, q) in &text_side {
                let span = seg.spans[select_event(coarse, t_value)?];
                let ke = tape.slice(*k, 0, span.start, span.len())?;
                let ve = tape.slice(*val, 0, span.start, span.len())?;
                let r = self.caer.attend(tape, p, cfg, *q, ke, ve)?;
                scores.push(tape.cosine(r.e_ref, *t)?);
            }
        }
        let flat = tape.stack(&scores)?;
        tape.reshape(flat, [videos.len(), texts.len()])
    }
}
