//! Deterministic synthetic data: patient cohorts with a planted risk signal,
//! and telemetry traces with injected decompensation episodes.

pub mod cohort;
pub mod trace;

use thiserror::Error;

pub use cohort::{gen_cohort, gen_cohort_with, Cohort, CohortSpec, PlantedSignal, PlantedTerm};
pub use trace::{gen_trace, Cadence, EpisodeKind, EpisodeSpec, TraceSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

/// Mean-reverting random walk clamped to `[lo, hi]`.
#[derive(Debug, Clone)]
pub(crate) struct Walk {
    pub value: f64,
    pub mean: f64,
    pub pull: f64,
    pub step_sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Walk {
    pub fn new(mean: f64, step_sd: f64, lo: f64, hi: f64) -> Self {
        Walk { value: mean, mean, pull: 0.1, step_sd, lo, hi }
    }

    pub fn step(&mut self, rng: &mut impl rand::Rng) -> f64 {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        self.value += self.pull * (self.mean - self.value) + self.step_sd * z;
        self.value = self.value.clamp(self.lo, self.hi);
        self.value
    }
}

pub(crate) fn round_to(v: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (v * f).round() / f
}
