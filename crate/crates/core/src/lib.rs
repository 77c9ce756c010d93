pub mod annotate;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod tensor;
pub mod train;
pub mod typesys;
