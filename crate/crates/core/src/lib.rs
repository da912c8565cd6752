//! Multimodal dynamic fusion network for emotion recognition in
//! conversations.
//!
//! Utterance features from up to three modalities are encoded with
//! context and speaker recurrences, joined into a conversation graph and
//! refined by a gated graph-convolution stack before classification. The
//! crate carries its own reverse-mode tape, a finite-difference checker, a
//! training harness and the `mmdfn` command line. See the guide under
//! `book/` for a walk-through.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convgraph;
pub mod data;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};

// Compiles and runs every snippet of the guide as a doc-test.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/encoders.md")]
    mod encoders {}
    #[doc = include_str!("../../../book/src/graph.md")]
    mod graph {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/ablations.md")]
    mod ablations {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
