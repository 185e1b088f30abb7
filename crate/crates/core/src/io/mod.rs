//! Text formats: model specifications, data tables and adjacency graphs.

mod data;
mod spec;

pub use data::{read_graph, DataTable};
pub use spec::{ComponentSpec, HyperRef, LikelihoodSpec, ModelSpec, ValueRef};
