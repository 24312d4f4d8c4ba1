//! Online Bayesian changepoint detection with Stein variational particle transport.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blstm;
pub mod bocpd;
pub mod error;
pub mod experiments;
pub mod hawkes;
pub mod ingest;
pub mod mcmc;
pub mod model;
pub mod numeric;
pub mod smc;
pub mod svn;

pub use error::{Error, Result};
pub use model::{ClosedForm, GaussianMeanModel, GaussianPrior, Model, ParamVector, Segment};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/detection.md")]
    mod detection {}
    #[doc = include_str!("../../../book/src/transport.md")]
    mod transport {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
