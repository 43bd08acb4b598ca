//! Message-passing graph network scoring one kernel instance.
//!
//! Each node starts from an embedding of its encoding (appearance descriptor
//! plus normalized pixel position). For `layers` synchronous rounds, every
//! directed edge produces a message from (sender, receiver) states, messages
//! are summed per receiver, and a GRU cell updates each node. The readout MLP
//! consumes the sum of final node states, so the score does not depend on node
//! order and any node count works. Edges carry whether both ends belong to the
//! same geometric entity, which is how groupings such as `p | (a, b, c)` and
//! `(p, a, b) | c` stay distinguishable.

mod graph;
mod net;
mod params;

use thiserror::Error;

pub use graph::{Edge, KernelGraph};
pub use net::{aggregate, backward, embed, forward, forward_cached, gru_update, message, ForwardCache};
pub use params::{NetParams, ParamBlock};

/// Default hidden width.
pub const DEFAULT_HIDDEN: usize = 32;
/// Default number of message-passing rounds.
pub const DEFAULT_LAYERS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("message passing needs at least one layer")]
    NoLayers,
    #[error("malformed parameter file: {0}")]
    Params(String),
}
