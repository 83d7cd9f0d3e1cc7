pub mod cli;
pub mod dynamics;
pub mod engine;
pub mod estimators;
pub mod measure;
pub mod rng;
