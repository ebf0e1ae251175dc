//! Interactive text-to-image retrieval: a ranker over region features, a
//! learned candidate-object policy and the propose/confirm loop that ties
//! them together.

pub mod cli;
pub mod encoders;
pub mod error;
pub mod gallery;
pub mod interaction;
pub mod learning;
pub mod linalg;
pub mod policy;
pub mod ranker;
pub mod service;

pub use error::{Error, Result};
