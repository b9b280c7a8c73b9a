//! IPv6 hitlist toolchain: ingest passive and active address sources,
//! run the filtering cascade, probe targets at fixed intervals after first
//! sighting, and compute coverage and interface-identifier statistics.

pub mod addr;
pub mod analytics;
pub mod artifact;
pub mod filter;
pub mod ingest;
pub mod probe;
pub mod report;

pub use addr::{Address128, Iid64, IidClass, IidClassifier, Mac48, Prefix};
