//! Audit engine for brick-kiln inventories.
//!
//! Oriented-box detections come in from label files, are deduplicated and
//! reprojected into Web Mercator, reviewed by hand, and then audited against
//! per-state siting distances. The same inventory drives emission and
//! population-exposure estimates and comparisons with district surveys.

pub mod compliance;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod geo;
pub mod impact;
pub mod ingest;
pub mod obb;
pub mod planar;
pub mod survey;
pub mod tiling;
pub mod workflow;

pub use error::{Error, FeatureIssue, Result};
pub use geo::{GeoPoint, Geometry, MercatorPoint};
pub use ingest::{ComplianceRuleSet, Criterion, FeatureCategory, FeatureLayer, KilnRecord, PopulationGrid, ValidationState};
pub use obb::{Detection, Frame, KilnClass, NmsConfig, OrientedBox};
