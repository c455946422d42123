//! Indoor point-of-interest extraction from crowdsensed Wi-Fi scan logs.
//!
//! The pipeline runs per user and day: scans are clustered with a
//! cosine-similarity DBSCAN ([`clustering`]), each cluster becomes a POI
//! fingerprint that is matched against the user's known POI ([`registry`]),
//! and POI from many users are grouped with Louvain community detection
//! ([`community`]). [`ingest`] covers the scan-log wire format, gzip batches
//! and the raw observation store; [`simgen`] generates synthetic buildings and
//! itineraries with ground truth.

pub mod clustering;
pub mod community;
pub mod ingest;
pub mod model;
pub mod registry;
pub mod simgen;
pub mod similarity;

#[cfg(any(test, feature = "oracles"))]
pub mod oracle;

pub use clustering::{dbscan, segment_visits, ClusterId, ClusterLabel, VisitInterval};
pub use model::{ClusterParams, Fingerprint, MacAddress, Rssi, ScanLog, ScanResult};
pub use similarity::{cosine_similarity, SimilarityScore};
