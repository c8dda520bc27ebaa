//! Speech enhancement and acoustic-to-articulatory inversion on a shared
//! backbone: corpus building, models, training, and evaluation.
//!
//! The guide in `book/` walks through each part; its code listings run as
//! doctests of this crate.

pub mod augment;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod nn;
pub mod scenario;
pub mod seed;
pub mod signal;
pub mod track;
pub mod train;

pub use error::{Error, Result};

// Compiles and runs every listing in the book.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/signal.md")]
    mod signal {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
