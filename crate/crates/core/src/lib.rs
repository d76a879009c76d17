//! Multi-objective re-ranking of candidate lists with NSGA-II search and
//! preference knowledge transferred across users through a shared scorer.

pub mod baseline;
pub mod config;
pub mod data;
pub mod domain;
pub mod error;
pub mod evolution;
pub mod metrics;
pub mod pipeline;
pub mod preference;
pub mod report;
pub mod rng;
pub mod scorer;
pub mod selection;
pub mod transfer;

pub use domain::{
    CandidateSet, Catalog, CategoryId, ItemId, ItemMeta, ObjectiveVector, SolutionList, UserId,
};
pub use error::{Error, Result};
