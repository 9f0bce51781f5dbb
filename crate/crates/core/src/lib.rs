//! Cluster-weighted modeling: joint mixtures of a covariate law and a linear
//! regression, with the nested mixture families, EM/ECM fitting, robust
//! trimming, classification metrics and decision-surface tracing.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod densities;
pub mod em;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod robust;
pub mod special;
pub mod surfaces;

pub use error::{CwmError, Result};
pub use model::{Component, Conditional, CwmModel, Dataset, Gate, Label, Marginal, Variant};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/robust.md")]
    mod robust {}
    #[doc = include_str!("../../../book/src/surfaces.md")]
    mod surfaces {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/reproduction.md")]
    mod reproduction {}
}
