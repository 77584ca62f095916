//! Measuring political greenwashing in online ads.
//!
//! The pipeline screens an ad corpus for climate content, codes each ad on a
//! set of binary indicators (keyword matches plus annotator judgements), fits
//! a Bayesian ideal-point model to score every ad, and then aggregates,
//! networks and regresses those scores.

pub mod aggregate;
pub mod annotate;
pub mod cli;
pub mod error;
pub mod filter;
pub mod ingest;
pub mod irt;
pub mod manifest;
pub mod matrix;
pub mod network;
pub mod seed;
pub mod simulate;
pub mod stats;

pub use error::{Error, ErrorCategory, Result};
pub use matrix::{IndicatorMatrix, ItemDescriptor, ItemSource, Response};
