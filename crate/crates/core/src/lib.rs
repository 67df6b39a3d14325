pub mod classifier;
pub mod corpus;
pub mod dynamic_graph;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod node_transformer;
pub mod scalar;
pub mod static_graph;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Graph = tensor::Graph<f64>;
pub type ParamStore = tensor::ParamStore<f64>;
pub type Model = model::GraphEre<f64>;
pub type PreparedDoc = model::PreparedDoc<f64>;
pub type FrozenEmbeddings = embedding::FrozenEmbeddings<f64>;
pub type SynthBundle = synthetic::SynthBundle<f64>;
