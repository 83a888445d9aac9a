pub mod config;
pub mod constituency;
pub mod corpus;
pub mod depgraph;
pub mod diagnostics;
pub mod encoder;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod scalar;
pub mod synthetic;
pub mod train;
pub mod util;

pub use config::Config;
pub use model::Model;

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tape64 = numerics::Tape<f64>;
pub type ParamStore64 = numerics::ParamStore<f64>;
pub type Model64 = model::Model<f64>;
