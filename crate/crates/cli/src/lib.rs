//! Configuration, training, evaluation and verification behind the `imh` binary.

pub mod config;
pub mod eval;
pub mod run;
pub mod train;
pub mod verify;
