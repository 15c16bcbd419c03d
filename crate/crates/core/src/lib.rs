//! Text-to-video retrieval where only part of a video matches the query.
//!
//! Frame features are grouped into variable-length events by a streaming
//! similarity threshold. For each query, the event closest to the query is
//! refined by cross-attention from the query onto its frames, and the
//! cosine between the refined event and the query scores the video.
//!
//! The crate carries its own reverse-mode autodiff ([`autograd`]) so the
//! whole pipeline can be trained and gradient-checked in `f64`.

pub mod autograd;
pub mod config;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod io;
pub mod layers;
pub mod matching;
pub mod model;
pub mod params;
pub mod refinement;
pub mod segmentation;
pub mod tensor;

pub use config::{ModelConfig, RunConfig};
pub use error::{Error, ErrorClass, Result};
pub use model::{PipelineVariant, UemModel};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/events.md")]
    mod events {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
