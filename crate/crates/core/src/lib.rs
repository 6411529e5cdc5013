//! Multi-domain learning experiments: hard-parameter-sharing classifiers
//! trained jointly across image domains, sample-wise transfer and
//! interference scores, linear CKA similarity and the statistics built on
//! top of them.

pub mod analysis;
pub mod data;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod seed;
pub mod similarity;
pub mod stats;
pub mod train;
pub mod weighting;

pub use error::{Error, Result};
