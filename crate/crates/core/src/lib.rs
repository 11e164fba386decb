//! Geometry-aware stochastic gradient descent on ensembles of products of
//! embedded kernel submanifolds.
//!
//! The crate is organised bottom-up:
//!
//! * [`manifold`] – sphere, oblique, Stiefel and Euclidean kernel manifolds.
//! * [`product`] – products of those manifolds with summed metric and curvature.
//! * [`ensemble`] – PI / PO / PIO assignment of a layer's kernels to products.
//! * [`gsgd`] – the projected, curvature-regularised SGD step and training loop.
//! * [`harness`] – small differentiable objectives and datasets to train on.
//!
//! With the default `parallel` feature, independent products and independent
//! samples are processed with rayon; see [`Execution`].

pub mod ensemble;
pub mod exec;
pub mod gsgd;
pub mod harness;
pub mod manifold;
pub mod product;

pub use ensemble::{EnsemblePlan, KernelCoord, LayerShape, ManifoldChoice, Strategy};
pub use exec::Execution;
pub use gsgd::train::{Ensemble, TraceRecord, Trainer};
pub use gsgd::{
    DenominatorRule, GsgdConfig, OptimizerState, RhoPolicy, ScheduleConfig, ScheduleMode,
};
pub use harness::{Batch, Objective};
pub use manifold::{ManifoldKind, ManifoldSpec};
pub use product::ProductManifold;
