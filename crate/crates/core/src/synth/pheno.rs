//! Two-class phenology annotations with planted species means, trends and
//! label noise.
//!
//! Each specimen is "event present" (class 1) or "absent" (class 0). Present
//! specimens have DoY = mean + slope * (year - midpoint) + N(0, sd); absent
//! ones are collected uniformly over [`ABSENT_DOY_RANGE`]. The model
//! annotation flips the true class with probability `label_noise_rate`.
//!
//! Confidence model, with `u` an open uniform draw:
//! - correct annotations: `c = 1 - 0.5 * u^3.25`, so P(c >= 0.99) = 0.02^(1/3.25) ~ 0.30
//! - flipped annotations: with probability rho = (1 - r) / (5 - r) the same
//!   distribution as correct ones, otherwise `0.5 + 0.49 * u`, capped below 0.99
//!
//! Among annotations accepted at 0.99 the expected flip rate is then exactly r / 5.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::rng::Stream;
use super::{Result, SynthError};
use crate::model::{CollectionDate, GrowthForm, Nativity, PredictionRecord, SpecimenMeta, WetlandStatus};
use crate::phenology::{
    species_mean_doy, write_reference_csv, EventObservation, SpeciesDoYEstimate, EVENT_PRESENT_CLASS,
};

pub const ABSENT_DOY_RANGE: (f64, f64) = (152.0, 334.0);
pub const CORRECT_CONFIDENCE_SHAPE: f64 = 3.25;
pub const HIGH_CONFIDENCE: f64 = 0.99;
/// Largest double strictly below [`HIGH_CONFIDENCE`].
const LOW_TAIL_MAX: f64 = 0.989_999_999_999_999_9;

fn default_absent_fraction() -> f64 {
    0.5
}

fn default_year_range() -> (i32, i32) {
    (1900, 2020)
}

/// One species, or `count` species named `{name}-001`, `{name}-002`, ...
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesSpec {
    pub name: String,
    pub true_mean_doy: f64,
    /// Days per year.
    #[serde(default)]
    pub true_slope: f64,
    pub doy_noise_std: f64,
    pub samples: usize,
    #[serde(default)]
    pub year_range: Option<(i32, i32)>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub nativity: Option<Nativity>,
    #[serde(default)]
    pub growth_form: Option<GrowthForm>,
    #[serde(default)]
    pub wetland: Option<WetlandStatus>,
}

impl SpeciesSpec {
    pub fn new(name: impl Into<String>, true_mean_doy: f64, true_slope: f64, doy_noise_std: f64, samples: usize) -> Self {
        SpeciesSpec {
            name: name.into(),
            true_mean_doy,
            true_slope,
            doy_noise_std,
            samples,
            year_range: None,
            count: None,
            nativity: None,
            growth_form: None,
            wetland: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenoSpec {
    pub species: Vec<SpeciesSpec>,
    pub label_noise_rate: f64,
    /// Share of specimens without the phenophase.
    #[serde(default = "default_absent_fraction")]
    pub absent_fraction: f64,
    /// Inclusive; species may override.
    #[serde(default = "default_year_range")]
    pub year_range: (i32, i32),
    pub seed: u64,
}

impl PhenoSpec {
    pub fn new(species: Vec<SpeciesSpec>, label_noise_rate: f64, seed: u64) -> Self {
        PhenoSpec {
            species,
            label_noise_rate,
            absent_fraction: default_absent_fraction(),
            year_range: default_year_range(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::BadSpec(m));
        if !(0.0..0.5).contains(&self.label_noise_rate) {
            return bad(format!("label_noise_rate {} outside [0, 0.5)", self.label_noise_rate));
        }
        if !(0.0..1.0).contains(&self.absent_fraction) {
            return bad(format!("absent_fraction {} outside [0, 1)", self.absent_fraction));
        }
        for s in &self.species {
            let (y0, y1) = s.year_range.unwrap_or(self.year_range);
            if y0 > y1 || CollectionDate::new(y0, 1, 1).is_err() || CollectionDate::new(y1, 12, 31).is_err() {
                return bad(format!("species {:?}: bad year range ({y0}, {y1})", s.name));
            }
            if !(s.doy_noise_std >= 0.0) || !s.true_mean_doy.is_finite() || !s.true_slope.is_finite() {
                return bad(format!("species {:?}: non-finite or negative parameters", s.name));
            }
            if s.count == Some(0) {
                return bad(format!("species {:?}: count must be positive", s.name));
            }
        }
        Ok(())
    }
}

/// A specimen with its hidden truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpecimen {
    pub record: PredictionRecord,
    pub year: i32,
    /// Unrounded DoY; the record's date is this rounded to a calendar day.
    pub true_doy: f64,
    pub present: bool,
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedSpecies {
    pub name: String,
    pub true_mean_doy: f64,
    pub true_slope: f64,
    pub nativity: Option<Nativity>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPhenology {
    pub species: Vec<ResolvedSpecies>,
    pub specimens: Vec<SyntheticSpecimen>,
}

struct Expanded<'a> {
    name: String,
    spec: &'a SpeciesSpec,
}

fn expand(spec: &PhenoSpec) -> Vec<Expanded<'_>> {
    let mut out = Vec::new();
    for s in &spec.species {
        match s.count {
            Some(count) if count > 1 => {
                let width = count.to_string().len().max(3);
                for i in 1..=count {
                    out.push(Expanded {
                        name: format!("{}-{i:0width$}", s.name),
                        spec: s,
                    });
                }
            }
            _ => out.push(Expanded {
                name: s.name.clone(),
                spec: s,
            }),
        }
    }
    out
}

fn flipped_confidence(s: &mut Stream, rho: f64) -> f64 {
    let branch = s.uniform();
    let u = s.open_uniform();
    if branch < rho {
        correct_confidence(u)
    } else {
        (0.5 + 0.49 * u).min(LOW_TAIL_MAX)
    }
}

fn correct_confidence(u: f64) -> f64 {
    1.0 - 0.5 * libm::pow(u, CORRECT_CONFIDENCE_SHAPE)
}

fn date_for(year: i32, doy: f64) -> Result<CollectionDate> {
    let last = if CollectionDate::new(year, 2, 29).is_ok() { 366 } else { 365 };
    let ordinal = libm::round(doy).clamp(1.0, f64::from(last)) as u32;
    CollectionDate::from_ordinal(year, ordinal).map_err(|e| SynthError::BadSpec(e.to_string()))
}

pub fn generate_synthetic_phenology(spec: &PhenoSpec) -> Result<SyntheticPhenology> {
    spec.validate()?;
    let r = spec.label_noise_rate;
    let rho = (1.0 - r) / (5.0 - r);
    let expanded = expand(spec);
    let total: usize = expanded.iter().map(|e| e.spec.samples).sum();
    let mut specimens = Vec::with_capacity(total);
    let mut species = Vec::with_capacity(expanded.len());

    for (si, e) in expanded.iter().enumerate() {
        let sp = e.spec;
        let (y0, y1) = sp.year_range.unwrap_or(spec.year_range);
        let midpoint = (f64::from(y0) + f64::from(y1)) / 2.0;
        let span = (y1 - y0 + 1) as u64;
        for j in 0..sp.samples {
            let mut s = Stream::new(spec.seed, ((si as u64) << 32) | j as u64);
            let year = y0 + s.below(span) as i32;
            let present = s.uniform() >= spec.absent_fraction;
            let noise = s.normal();
            let absent_u = s.uniform();
            let true_doy = if present {
                sp.true_mean_doy + sp.true_slope * (f64::from(year) - midpoint) + sp.doy_noise_std * noise
            } else {
                ABSENT_DOY_RANGE.0 + (ABSENT_DOY_RANGE.1 - ABSENT_DOY_RANGE.0) * absent_u
            };
            let flipped = s.uniform() < r;
            let confidence = if flipped {
                flipped_confidence(&mut s, rho)
            } else {
                correct_confidence(s.open_uniform())
            };
            let truth = if present { EVENT_PRESENT_CLASS } else { 1 - EVENT_PRESENT_CLASS };
            let predicted = if flipped { 1 - truth } else { truth };
            let mut probs = vec![1.0 - confidence; 2];
            probs[predicted] = confidence;

            let mut meta = SpecimenMeta::new(e.name.clone(), date_for(year, true_doy)?);
            meta.nativity = sp.nativity;
            meta.growth_form = sp.growth_form;
            meta.wetland_status = sp.wetland;
            let record = PredictionRecord::new(format!("s{si:04}-{j:06}"), probs, Some(truth), Some(meta))
                .map_err(|e| SynthError::BadSpec(e.to_string()))?;
            specimens.push(SyntheticSpecimen {
                record,
                year,
                true_doy,
                present,
                flipped,
            });
        }
        species.push(ResolvedSpecies {
            name: e.name.clone(),
            true_mean_doy: sp.true_mean_doy,
            true_slope: sp.true_slope,
            nativity: sp.nativity,
        });
    }
    Ok(SyntheticPhenology { species, specimens })
}

impl SyntheticPhenology {
    pub fn records(&self) -> Vec<PredictionRecord> {
        self.specimens.iter().map(|s| s.record.clone()).collect()
    }

    pub fn species_names(&self) -> Vec<String> {
        self.species.iter().map(|s| s.name.clone()).collect()
    }

    /// Present specimens with their unrounded DoY.
    pub fn ground_truth_observations(&self) -> Vec<EventObservation> {
        self.specimens
            .iter()
            .filter(|s| s.present)
            .map(|s| EventObservation {
                species: s.record.specimen().map(|m| m.species.clone()).unwrap_or_default(),
                year: s.year,
                doy: s.true_doy,
                source_record_id: s.record.record_id().to_string(),
            })
            .collect()
    }

    /// Per-species ground-truth means; plays the role of a reference study.
    pub fn reference_estimates(&self) -> Vec<SpeciesDoYEstimate> {
        species_mean_doy(self.species_names(), &self.ground_truth_observations())
    }

    pub fn grouping(&self) -> BTreeMap<String, Nativity> {
        self.species
            .iter()
            .filter_map(|s| Some((s.name.clone(), s.nativity?)))
            .collect()
    }

    pub fn write_truth_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["id", "species", "year", "true_doy", "present", "flipped"])?;
        for s in &self.specimens {
            wtr.write_record([
                s.record.record_id().to_string(),
                s.record.specimen().map(|m| m.species.clone()).unwrap_or_default(),
                s.year.to_string(),
                format!("{:?}", s.true_doy),
                s.present.to_string(),
                s.flipped.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_reference_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let grouping = self.grouping();
        write_reference_csv(&self.reference_estimates(), &grouping, out)
    }
}
