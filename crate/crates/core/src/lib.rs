//! Graph-level clustering with multi-relation views, message-passing
//! encoders, and graph kernels.

pub mod autodiff;
pub mod config;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod objectives;
pub mod pooling;
pub mod relations;
pub mod report;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, GraphDataset, Partition};
