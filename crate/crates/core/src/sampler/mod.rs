//! Metropolis-Hastings sampling on the reduced coordinates.

pub mod chain;
pub mod sumtree;

pub use chain::{
    initialize, run_chain, valid_perturbations, Chain, ChainConfig, ChainOutput, ChainStats, Coherence,
    FinalStatistics, StepOutcome, DEFAULT_INIT_STALL,
};
pub use sumtree::SumTree;
