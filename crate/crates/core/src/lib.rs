//! Heart-failure telemonitoring core.
//!
//! - [`model`]: telemetry and patient types, units, device-fault screening
//! - [`store`]: append-only per-(patient, metric) series on JSON lines
//! - [`rules`]: clinical thresholds, multimarker score, alert lifecycle
//! - [`stratify`]: two-specialist stacked classifier and its metrics
//! - [`fhir`]: HL7 FHIR R4 Observation/Bundle export and validation
//! - [`sim`]: deterministic cohort and telemetry generation
//!
//! The stratification math is generic over [`Scalar`]; the aliases below pin
//! it to `f64`, which is what the rest of the crate uses.

pub mod fhir;
pub mod model;
pub mod rules;
pub mod scalar;
pub mod sim;
pub mod store;
pub mod stratify;

pub use scalar::Scalar;

pub type Metrics = stratify::Metrics<f64>;
pub type SpecialistModel = stratify::SpecialistModel<f64>;
pub type MetaModel = stratify::MetaModel<f64>;
pub type StackedModel = stratify::StackedModel<f64>;
pub type FeatureMatrix = stratify::FeatureMatrix<f64>;

pub type Metrics32 = stratify::Metrics<f32>;
pub type StackedModel32 = stratify::StackedModel<f32>;
