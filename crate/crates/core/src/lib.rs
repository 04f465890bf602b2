//! Earth Mover's Distance similarity between convolutional feature maps,
//! solved with Sinkhorn-Knopp scaling under attention-derived marginals, plus
//! a small momentum-encoder training harness built on it.

pub mod encoder;
pub mod error;
pub mod io;
pub mod loss;
pub mod ot;
pub mod pyramid;
pub mod types;

pub use error::{Error, Result};
pub use loss::{emd_loss, EmdOptions, Solver, WeightScheme};
pub use ot::{exact_ot, sinkhorn, transport_cost, SinkhornConfig};
pub use pyramid::{pyramid_nodes, PyramidSpec};
pub use types::{CostMatrix, EmbeddingVector, FeatureMap, MarginalWeights, NodeSet, TransportPlan};
