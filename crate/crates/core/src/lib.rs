//! Pitch-accent estimation for Japanese words from their written form and
//! reading.

pub mod dictgen;
pub mod error;
pub mod features;
pub mod lattice;
pub mod lexicon;
pub mod metrics;
pub mod model;
pub mod mora;
pub mod sagisaka;
pub mod train;

pub use error::{Error, Result};
