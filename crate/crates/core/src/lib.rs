pub mod adversary;
pub mod cli;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod shard;
