//! Collaborative filtering over the full rating spectrum.
//!
//! Ratings are treated as a categorical third mode of a binary
//! `user × item × rating-level` tensor. A Tucker decomposition of that tensor
//! (computed with higher-order orthogonal iterations) yields item and
//! rating-level subspaces; projecting a new user's sparse preference matrix
//! onto them ("folding-in") produces an `item × rating-level` matrix of
//! relevance scores without refitting anything.
//!
//! The crate also carries the matrix baselines (PureSVD, user-kNN, most
//! popular, random guess), a negativity-aware metric suite (precision,
//! recall, FPR, nDCG and nDCL with the ignore-unrated rule) and a
//! cross-validation harness for cold-start scenarios.

pub mod error;
pub mod harness;
pub mod ingest;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod persist;
pub mod tensor;

pub use error::{Error, Result};
pub use ingest::{RatingScale, RatingTable, RawRating};
pub use linalg::TruncatedSvd;
pub use models::{RankedList, ShadesMatrix};
pub use tensor::{SparseTensor, TuckerModel};
