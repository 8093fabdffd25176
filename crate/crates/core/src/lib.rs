pub mod linalg;
pub mod data;
pub mod model;
pub mod coreset;
pub mod bounds;
pub mod metrics;
pub mod continual;
pub mod cli;
