//! Multi-scale spatio-temporal graph neural network for epidemic forecasting
//! at county (micro) and state (macro) resolution.

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod forecaster;
pub mod graph_learning;
pub mod multiscale_gcn;
pub mod parallel;
pub mod params;
pub mod synthetic;
pub mod temporal_encoder;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
pub use tensor::Matrix;
