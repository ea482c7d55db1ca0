//! Update streams, generators, push/pull runs and benchmarks over
//! `dynjoin-core`.

pub mod bench;
pub mod gen;
pub mod hist;
pub mod naive;
pub mod plan;
pub mod run;
pub mod stream;
pub mod workload;
