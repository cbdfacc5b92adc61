//! Differential face morph attack detection by conditional identity
//! disentanglement.

pub mod cli;
pub mod comparator;
pub mod corpus;
pub mod demorph;
pub mod detector;
pub mod error;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod translator;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/translator.md")]
    mod translator {}
    #[doc = include_str!("../../../book/src/comparator.md")]
    mod comparator {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/demorph.md")]
    mod demorph {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
