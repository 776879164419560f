//! Assemble, measure and compact test suites for packages published in a
//! package registry.
//!
//! The pipeline has four stages that each live in their own module:
//!
//! * [`registry`] fetches metadata, release tarballs and the ranked list of
//!   dependent packages;
//! * [`repo`] finds the maintainers' tests in the development repository and
//!   patches the checkout so that it matches the published release;
//! * [`dependents`] harvests black-box tests from dependent packages;
//! * [`compaction`] picks the cheapest subset of the resulting suite that keeps
//!   every covered element covered.
//!
//! Tests are executed through [`sandbox`], coverage arithmetic lives in
//! [`coverage`], external dynamic analyses are driven by [`analysis`], and
//! [`orchestrator`] ties everything together and writes the reports.

pub mod analysis;
pub mod compaction;
pub mod coverage;
pub mod dependents;
pub mod hash;
pub mod orchestrator;
pub mod registry;
pub mod repo;
pub mod sandbox;

pub use coverage::{CoverageKind, CoverageRatio, CoverageReport, ElementId, ElementUniverse};
pub use registry::{FileManifest, PackageRef};
