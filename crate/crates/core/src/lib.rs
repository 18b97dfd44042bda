//! Distributionally robust optimization over unmeasured variables.
//!
//! Training data is augmented with samples of an unmeasured variable `c`
//! (ground truth in simulations, or embeddings of human annotations), and a
//! model that only looks at the observed features is trained to minimize the
//! worst-case risk over subpopulations of `(x, c)` of size at least `alpha`.
//! The worst case is estimated through a Lipschitz-smoothed dual whose
//! variables are a transport matrix `B` and a cutoff `eta`:
//!
//! ```text
//! inf_{B >= 0, eta >= 0}  (1/alpha) * sqrt( mean_i [ l_i - sum_j (B_ij - B_ji) - eta ]_+^2 )
//!                         + (L/n) * sum_ij (|x_i - x_j| + |c_i - c_j|) * B_ij + eta
//! ```
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the experiment
//! harness and the command line live in the `uvdro` crate.
//!
//! Layout:
//! - [`model`]: linear / softmax models, per-example losses and metrics.
//! - [`objectives`]: ERM, CVaR, covariate-shift and UV-DRO objectives, the
//!   exact cutoff solver, analytic gradients, a fixed-model dual minimizer
//!   and a primal oracle used to check duality.
//! - [`optimizer`]: batch AdaGrad over model parameters and the transport matrix.
//! - [`distances`]: feature / annotation distance matrices, shuffling and a 1-D
//!   Wasserstein diagnostic.
//! - [`datagen`]: seeded generators for the simulated experiments.

#![cfg_attr(not(any(test, feature = "std")), no_std)]
// `!(x >= 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod data;
pub mod datagen;
pub mod distances;
pub mod error;
pub mod math;
pub mod matrix;
pub mod model;
pub mod objectives;
pub mod optimizer;
pub mod rng;

pub use data::{Dataset, Labels, UvOracle};
pub use distances::DistanceMatrix;
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use model::{LossKind, Metrics, ModelParams};
pub use objectives::{DualState, Objective, ObjectiveValue, PrimalWitness, RobustnessConfig};
pub use optimizer::{TrainConfig, TrainTrace};
