//! Extractive data augmentation and contrastive ranking losses for
//! training small cross-encoder re-rankers.

pub mod augment;
pub mod autodiff;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod losses;
pub mod optim;
pub mod params;
pub mod ranker;
pub mod retrieval;
pub mod selectors;
pub mod synthetic;
pub mod text;
pub mod training;
pub mod trec;

pub use error::{Error, LossTerm, Result};
