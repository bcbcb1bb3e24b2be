//! Late temporal pooling heads for action recognition over 3D-CNN features.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`graph`],
//! [`ops`]), the layers built on it ([`nn`]), every pooling head compared in
//! the ablations ([`pool`]), a toy 3D-convolutional backbone with feature
//! reduction blocks ([`backbone`]), optimisers and a training loop
//! ([`optim`], [`train`]), exact parameter/FLOP accounting ([`profile`]) and
//! synthetic order-sensitive datasets with a binary container ([`data`]).
//! Finite-difference validation lives in [`gradcheck`] and [`suites`].

pub mod ablation;
pub mod backbone;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod ops;
pub mod params;
pub mod pool;
pub mod profile;
pub mod suites;
pub mod tensor;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{derive_seed, derive_seed_str, GradientMap, Init, ParamId, ParamStore};
pub use pool::{ClassifierOutput, TemporalFeatures, TwoStreamFeatures};
pub use tensor::{Dtype, Scalar, Tensor};
pub use train::{Model, Sample};
