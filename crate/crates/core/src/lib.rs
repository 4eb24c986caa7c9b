//! Two-phase self-supervised representation learning with ensemble fuzzy
//! pseudo-labels.
//!
//! Phase 1 trains `m` identically initialized encoders on their own pairs of
//! augmented views with one of six sample-level objectives. The ensemble then
//! votes on every raw sample to produce hard or soft pseudo-labels, and the
//! block that best fits those labels is trained further on them with the
//! early backbone layers frozen.

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod protocol;
pub mod seed;

pub use error::{Error, Result};
pub use numerics::Matrix;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    pub mod objectives {}
    #[doc = include_str!("../../../book/src/whitening.md")]
    pub mod whitening {}
    #[doc = include_str!("../../../book/src/ensemble.md")]
    pub mod ensemble {}
    #[doc = include_str!("../../../book/src/pseudo-labels.md")]
    pub mod pseudo_labels {}
    #[doc = include_str!("../../../book/src/phase2.md")]
    pub mod phase2 {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    pub mod reproducibility {}
}
