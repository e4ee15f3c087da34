//! Seeded synthetic data with known ground truth.
//!
//! Every generator is a pure function of its spec. Record `i` draws from its
//! own [`rng::Stream`], so output never depends on generation order.

pub mod pheno;
pub mod rng;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::ThresholdGrid;
use crate::model::{decide, PredictionRecord};
use rng::Stream;

pub use pheno::{generate_synthetic_phenology, PhenoSpec, SpeciesSpec, SyntheticPhenology, SyntheticSpecimen};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("bad spec: {0}")]
    BadSpec(String),
    #[error("no closed form for {0}")]
    Intractable(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// How the probability of a correct label relates to confidence `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibrationKind {
    /// P(correct) = c
    PerfectlyCalibrated,
    /// P(correct) = c^gamma, below c for gamma > 1
    Overconfident { gamma: f64 },
    /// P(correct) = c^(1/gamma), above c for gamma > 1
    Underconfident { gamma: f64 },
}

impl CalibrationKind {
    /// Exponent `e` with P(correct) = c^e.
    pub fn exponent(&self) -> f64 {
        match *self {
            CalibrationKind::PerfectlyCalibrated => 1.0,
            CalibrationKind::Overconfident { gamma } => gamma,
            CalibrationKind::Underconfident { gamma } => 1.0 / gamma,
        }
    }

    pub fn p_correct(&self, confidence: f64) -> f64 {
        libm::pow(confidence, self.exponent()).clamp(0.0, 1.0)
    }
}

/// Confidence is uniform on (`lo`, `hi`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    #[serde(flatten)]
    pub kind: CalibrationKind,
    pub lo: f64,
    pub hi: f64,
    pub classes: usize,
    pub n: usize,
    pub seed: u64,
}

impl CalibrationSpec {
    pub fn calibrated(lo: f64, hi: f64, classes: usize, n: usize, seed: u64) -> Self {
        CalibrationSpec {
            kind: CalibrationKind::PerfectlyCalibrated,
            lo,
            hi,
            classes,
            n,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(SynthError::BadSpec(format!("need at least 2 classes, got {}", self.classes)));
        }
        let floor = 1.0 / self.classes as f64;
        if !(self.lo >= floor && self.lo < self.hi && self.hi <= 1.0) {
            return Err(SynthError::BadSpec(format!(
                "confidence range ({}, {}) must satisfy 1/K = {floor} <= lo < hi <= 1",
                self.lo, self.hi
            )));
        }
        match self.kind {
            CalibrationKind::Overconfident { gamma } | CalibrationKind::Underconfident { gamma }
                if !(gamma > 0.0 && gamma.is_finite()) =>
            {
                Err(SynthError::BadSpec(format!("gamma must be positive, got {gamma}")))
            }
            _ => Ok(()),
        }
    }
}

/// Record `i` has confidence `c` on a uniformly chosen class, the remaining
/// mass split evenly over the others, and a true label equal to the
/// prediction with probability `P(correct | c)`, otherwise uniform over the
/// other classes.
pub fn generate_synthetic_predictions(spec: &CalibrationSpec) -> Result<Vec<PredictionRecord>> {
    spec.validate()?;
    let k = spec.classes;
    let width = spec.n.max(1).to_string().len();
    (0..spec.n)
        .map(|i| {
            let mut s = Stream::new(spec.seed, i as u64);
            let c = spec.lo + (spec.hi - spec.lo) * s.open_uniform();
            let top = s.below(k as u64) as usize;
            let rest = (1.0 - c) / (k - 1) as f64;
            let mut probs = vec![rest; k];
            probs[top] = c;
            let predicted = decide(&probs)
                .map_err(|e| SynthError::BadSpec(e.to_string()))?
                .predicted_class;
            let label = if s.uniform() < spec.kind.p_correct(c) {
                predicted
            } else {
                let other = s.below((k - 1) as u64) as usize;
                if other >= predicted {
                    other + 1
                } else {
                    other
                }
            };
            PredictionRecord::new(format!("r{i:0width$}"), probs, Some(label), None)
                .map_err(|e| SynthError::BadSpec(e.to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedPoint {
    pub threshold: f64,
    /// E[P(correct | c) | c >= t]; `None` when nothing is accepted.
    pub accuracy: Option<f64>,
    /// P(c >= t)
    pub coverage: f64,
    pub rejection_rate: f64,
}

/// Exact expected accuracy and coverage at each grid threshold.
///
/// With c uniform on (lo, hi) and P(correct | c) = c^e, for a = max(t, lo) < hi:
/// coverage = (hi - a) / (hi - lo) and
/// accuracy = (hi^(e+1) - a^(e+1)) / ((e + 1)(hi - a)).
pub fn analytic_curve_oracle(spec: &CalibrationSpec, grid: &ThresholdGrid) -> Result<Vec<ExpectedPoint>> {
    spec.validate()?;
    let e = spec.kind.exponent();
    if !e.is_finite() {
        return Err(SynthError::Intractable(format!("{:?}", spec.kind)));
    }
    let (lo, hi) = (spec.lo, spec.hi);
    Ok(grid
        .values()
        .iter()
        .map(|&t| {
            if t >= hi {
                return ExpectedPoint {
                    threshold: t,
                    accuracy: None,
                    coverage: 0.0,
                    rejection_rate: 1.0,
                };
            }
            let a = t.max(lo);
            let coverage = ((hi - a) / (hi - lo)).clamp(0.0, 1.0);
            let accuracy = (libm::pow(hi, e + 1.0) - libm::pow(a, e + 1.0)) / ((e + 1.0) * (hi - a));
            ExpectedPoint {
                threshold: t,
                accuracy: Some(accuracy),
                coverage,
                rejection_rate: 1.0 - coverage,
            }
        })
        .collect())
}

pub fn write_oracle_csv<W: Write>(points: &[ExpectedPoint], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["threshold", "accuracy", "coverage", "rejection_rate"])?;
    for p in points {
        wtr.write_record([
            format!("{:?}", p.threshold),
            p.accuracy.map(|a| format!("{a:?}")).unwrap_or_default(),
            format!("{:?}", p.coverage),
            format!("{:?}", p.rejection_rate),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::GridSpec;

    #[test]
    fn oracle_uniform_tail() {
        let spec = CalibrationSpec::calibrated(0.5, 1.0, 2, 0, 1);
        let grid = ThresholdGrid::from_values(vec![0.5, 0.9, 1.0]).unwrap();
        let pts = analytic_curve_oracle(&spec, &grid).unwrap();
        assert_eq!(pts[0].coverage, 1.0);
        assert!((pts[0].accuracy.unwrap() - 0.75).abs() < 1e-15);
        assert!((pts[1].accuracy.unwrap() - 0.95).abs() < 1e-15);
        assert!((pts[1].coverage - 0.2).abs() < 1e-15);
        assert_eq!((pts[2].coverage, pts[2].accuracy), (0.0, None));
    }

    #[test]
    fn bad_specs() {
        let mut spec = CalibrationSpec::calibrated(0.3, 1.0, 2, 10, 1);
        assert!(matches!(generate_synthetic_predictions(&spec), Err(SynthError::BadSpec(_))));
        spec.lo = 0.6;
        spec.hi = 0.6;
        assert!(spec.validate().is_err());
        spec.hi = 1.0;
        spec.kind = CalibrationKind::Overconfident { gamma: 0.0 };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = CalibrationSpec {
            kind: CalibrationKind::Overconfident { gamma: 2.0 },
            lo: 0.25,
            hi: 0.9,
            classes: 4,
            n: 500,
            seed: 99,
        };
        let a = generate_synthetic_predictions(&spec).unwrap();
        let b = generate_synthetic_predictions(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| {
            let c = r.decision().confidence;
            c > 0.25 && c < 0.9
        }));
        assert!(generate_synthetic_predictions(&CalibrationSpec { n: 0, ..spec }).unwrap().is_empty());
        let grid = ThresholdGrid::from_spec(GridSpec::default_for_classes(4)).unwrap();
        assert!(analytic_curve_oracle(&CalibrationSpec { n: 0, ..spec.clone() }, &grid).is_ok());
    }
}
