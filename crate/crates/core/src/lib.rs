//! Joint receive-antenna selection and partially connected hybrid precoding
//! for mmWave MIMO: channel simulation, classical baselines, a CNN engine,
//! dataset tooling and a Monte Carlo evaluation harness.

pub mod channel;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod exec;
pub mod linalg;
pub mod nn;
pub mod precoder;
pub mod selection;

pub use error::{Error, Result};
