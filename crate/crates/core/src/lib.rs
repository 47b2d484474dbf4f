pub mod cox;
pub mod data;
pub mod error;
pub mod metrics;
pub mod mixed;
pub mod pipeline;
pub mod rng;
pub mod simulation;
pub mod validation;
