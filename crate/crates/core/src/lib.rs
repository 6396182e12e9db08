//! Synthesis of wireless channel datasets with a conditional GAN trained by
//! first-order meta learning, plus the tooling to measure how useful the
//! synthesized data is for a downstream channel estimator.

pub mod baselines;
pub mod cgan;
pub mod chanmodel;
pub mod dataio;
pub mod error;
pub mod estimator;
pub mod metatrain;
pub mod metrics;
pub mod ndnet;
pub mod rng;

pub use error::{Error, Result};
