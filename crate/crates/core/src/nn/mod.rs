//! Parameters, declarative layer specs and the network executor.

mod network;
mod params;
mod spec;

pub use network::{Layer, Network, BN_EPS, BN_MOMENTUM, LRELU_SLOPE};
pub use params::{init_uniform, BufferId, Bound, NamedTensor, ParamId, ParamStore};
pub use spec::{LayerSpec, NetworkSpec};
