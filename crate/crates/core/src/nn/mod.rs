//! Minimal differentiable building blocks: a recording graph, parameter
//! storage, recurrent and dense layers, and the AdamW optimizer.

mod adamw;
pub mod gradcheck;
mod graph;
mod layers;
mod params;

pub use adamw::{AdamW, AdamWConfig};
pub use graph::{Graph, Var};
pub use layers::{BiGru, BiGruStack, Dense};
pub use params::{Param, ParamGroup, ParamId, ParamStore};
pub(crate) use params::hex;
