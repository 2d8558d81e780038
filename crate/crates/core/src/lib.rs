//! Core library for a small federated semantic-segmentation testbed:
//! a from-scratch convolutional network, dataset plumbing, evaluation
//! metrics, and the client/server federation protocol.

pub mod data;
pub mod error;
pub mod fedproto;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod transport;

pub use error::{DataError, MetricsError, NnError, ProtoError, TransportError};
pub use fedproto::{Aggregation, FedMessage, Hyperparams, LocalUpdate};
pub use params::{AnyParamSet, Gradients, ParamSet};
pub use tensor::{Dtype, Element, Tensor};
