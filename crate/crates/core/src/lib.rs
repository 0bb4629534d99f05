pub mod linalg;
pub mod whitening;
pub mod constraints;
pub mod norm;
pub mod metrics;
pub mod checks;
pub mod harness;
pub mod cli;
