//! Dense tensors, reverse-mode autodiff, AdamW and checkpoints.

mod checkpoint;
mod graph;
mod optim;
mod params;
mod value;

pub use checkpoint::{
    load_checkpoint, read_manifest, save_checkpoint, CheckpointManifest, ParamEntry, CHECKPOINT_FORMAT_VERSION,
};
pub use graph::{Activation, Gradients, Graph, Var};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Param, ParamGroup, ParamId, ParamStore};
pub use value::Tensor;
