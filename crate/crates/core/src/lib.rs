pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod eval;
pub mod model;
pub mod opt;
pub mod pf;
pub mod pt;
pub mod risk;
pub mod rng;
