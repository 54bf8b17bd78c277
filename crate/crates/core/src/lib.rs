//! Implicit Metropolis-Hastings: sampling from a proposal model through a
//! learned discriminator, plus exact verification of the total-variation
//! bounds such a sampler satisfies on finite state spaces.

pub mod bounds;
pub mod discriminator;
pub mod distributions;
pub mod error;
pub mod losses;
pub mod proposals;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
