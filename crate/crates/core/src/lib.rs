//! Mining upgrade lineages of smart contracts deployed behind proxies.
//!
//! The pipeline ingests delegatecall traces and contract metadata, groups the
//! implementations each proxy delegated to into ordered lineages, pairs
//! successive versions at file and function level, fingerprints sources for
//! similarity search, scores that search against the lineages, and tracks
//! detector warnings across versions.

pub mod address;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod fingerprint;
pub mod ingest;
pub mod lifecycle;
pub mod lineage;
pub mod pairing;
pub mod stats;

pub use address::{Address, Selector};
pub use error::{Error, Result};
