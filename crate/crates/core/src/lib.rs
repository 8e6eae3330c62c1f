//! Short-text topic modelling toolkit.
//!
//! The pipeline fragments seven-question interviews into short documents,
//! standardizes them, builds BoW, TFIDF or CluWords document-term matrices,
//! extracts topics with NMF, scores topic spaces with modularity and
//! silhouettes, and aggregates fragment projections into patient profiles.

pub mod analysis;
pub mod corpus;
pub mod factorization;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod representations;
pub mod synthetic;
