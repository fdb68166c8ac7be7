//! Uncertainty estimation for dense flow regression.
//!
//! The crate covers the full pipeline from probabilistic training losses to
//! evaluation:
//!
//! * [`fields`]: flow, uncertainty and error grids, validity masks and
//!   hypothesis sets.
//! * [`losses`]: endpoint-error loss, factorized Laplace negative
//!   log-likelihood and the winner-takes-all multi-hypothesis loss, all with
//!   analytic gradients.
//! * [`ensembles`]: empirical and predictive (law of total variance) merging,
//!   cosine schedules with warm restarts and per-member data subsets.
//! * [`evalmetrics`]: sparsification curves, AUSE, oracle EPE and entropy maps.
//! * [`io`]: `.flo` and KITTI flow files, color-wheel and heatmap rendering,
//!   CSV curves and JSON reports.
//! * [`toytrain`]: a small per-pixel network trained on synthetic ambiguous
//!   flow, used to exercise the losses end to end.
//! * [`cli`]: the `flowuq` command line.

pub mod cli;
pub mod ensembles;
pub mod error;
pub mod evalmetrics;
pub mod fields;
pub mod io;
pub mod losses;
pub mod toytrain;

pub use error::{Error, Result};
pub use fields::{ErrorField, FlowField, Hypothesis, HypothesisSet, UncertaintyField, ValidMask};
