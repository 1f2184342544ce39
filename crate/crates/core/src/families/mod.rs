//! Explicit test-function families: Knapp caps, the subcritical exponent
//! algebra and the log-weighted counterexample with its oscillatory kernel.

pub mod exponents;
pub mod knapp;
pub mod oscillatory;
pub mod sogge;

use thiserror::Error;

use crate::extension::ExtensionError;
use crate::gauge::GaugeError;
use crate::measure::MeasureError;

pub use exponents::{dyadic_min_optimize, subcritical_exponents, DyadicOptimum, ExponentPair, Subcritical};
pub use knapp::{critical_q, knapp_cap, knapp_scan, KnappCap, KnappParams, KnappScan, KnappScanOptions};
pub use oscillatory::{oscillatory_g, stationary_phase_check, GValue, PhaseSign, StationaryPhaseReport};
pub use sogge::{sogge_divergence_scan, DivergenceScan, GraphCurve, SoggeFamily, SoggeParams};

#[derive(Debug, Error)]
pub enum FamilyError {
    #[error("bad exponent: {0}")]
    BadExponent(String),
    #[error("(p, q) = ({p}, {q}) is off the critical line q = p'/({k}+1)")]
    OffCritical { p: f64, q: f64, k: u32 },
    #[error("exponent identity failed: {0}")]
    Identity(String),
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("graph parametrization: {0}")]
    Graph(String),
    #[error("fit rejected: {0}")]
    FitRejected(String),
    #[error(transparent)]
    Gauge(#[from] GaugeError),
    #[error(transparent)]
    Extension(#[from] ExtensionError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}
