//! Reconstruction of binary classifiers from one-sided counterfactual queries.
//!
//! The crate is `no_std` (with `alloc`) and contains only the numerical
//! pieces: exact discrete optimal transport ([`ot`]), counterfactual-aware
//! free-support barycenters ([`barycenter`]), the query-protected target
//! ([`oracle`]), counterfactual generators ([`counterfactual`]) and the
//! surrogate models plus fidelity ([`surrogate`]). File formats, data
//! loading and the experiment harness live in the `proto-extract` crate.
#![no_std]
// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod barycenter;
pub mod counterfactual;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod ot;
pub mod surrogate;

pub use barycenter::{fit_prototypes, PrototypeFitConfig, PrototypePair};
pub use counterfactual::{CfConfig, CfCost};
pub use error::{Error, Result};
pub use oracle::{Label, LinearModel, Oracle, QueryResponse, Target, TrainConfig};
pub use ot::{DiscreteDistribution, TransportPlan};
pub use surrogate::{Classifier, PrototypeSurrogate, QueryDataset};

/// A point in feature space.
pub type Point = alloc::vec::Vec<f64>;
