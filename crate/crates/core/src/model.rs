//! Prediction records, specimen metadata, and the argmax decision rule.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probability vectors must sum to one within this tolerance.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

/// Sums further than this from one are rescaled on ingestion. Anything
/// closer is left untouched so that re-ingesting a stored record is exact.
const RENORMALIZE_THRESHOLD: f64 = 1e-12;

pub const MIN_YEAR: i32 = 1700;
pub const MAX_YEAR: i32 = 2100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid probability vector: {0}")]
    InvalidVector(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid date: {0}")]
    InvalidDate(String),
    #[error("incomplete specimen: {0}")]
    IncompleteSpecimen(String),
    #[error("unknown {field} value {value:?}")]
    UnknownTrait { field: &'static str, value: String },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Argmax of a probability vector with its confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub predicted_class: usize,
    pub confidence: f64,
}

fn check_vector(probabilities: &[f64]) -> Result<f64> {
    if probabilities.len() < 2 {
        return Err(ModelError::InvalidVector(format!(
            "need at least 2 classes, got {}",
            probabilities.len()
        )));
    }
    let mut sum = 0.0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p.is_nan() {
            return Err(ModelError::InvalidVector(format!("entry {i} is NaN")));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(ModelError::InvalidVector(format!("entry {i} = {p} outside [0, 1]")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
        return Err(ModelError::InvalidVector(format!("probabilities sum to {sum}")));
    }
    Ok(sum)
}

/// Picks the most probable class. Ties go to the lowest index.
pub fn decide(probabilities: &[f64]) -> Result<Decision> {
    check_vector(probabilities)?;
    Ok(argmax(probabilities))
}

fn argmax(probabilities: &[f64]) -> Decision {
    let mut best = 0;
    for (i, &p) in probabilities.iter().enumerate().skip(1) {
        if p > probabilities[best] {
            best = i;
        }
    }
    Decision {
        predicted_class: best,
        confidence: probabilities[best],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nativity {
    Native,
    Introduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthForm {
    ForbHerb,
    TreeShrubSubshrub,
    Vine,
    Woody,
    Herbaceous,
}

/// National Wetland Plant List indicator status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WetlandStatus {
    Obl,
    Facw,
    Fac,
    Facu,
    Upl,
}

impl Nativity {
    pub fn as_str(self) -> &'static str {
        match self {
            Nativity::Native => "native",
            Nativity::Introduced => "introduced",
        }
    }
}

impl FromStr for Nativity {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "native" => Ok(Nativity::Native),
            "introduced" | "invasive" | "non-native" | "nonnative" => Ok(Nativity::Introduced),
            _ => Err(ModelError::UnknownTrait {
                field: "nativity",
                value: s.to_string(),
            }),
        }
    }
}

impl GrowthForm {
    pub fn as_str(self) -> &'static str {
        match self {
            GrowthForm::ForbHerb => "forb_herb",
            GrowthForm::TreeShrubSubshrub => "tree_shrub_subshrub",
            GrowthForm::Vine => "vine",
            GrowthForm::Woody => "woody",
            GrowthForm::Herbaceous => "herbaceous",
        }
    }
}

impl FromStr for GrowthForm {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == '/' || c == '-' || c == ' ' { '_' } else { c })
            .collect();
        match norm.as_str() {
            "forb_herb" => Ok(GrowthForm::ForbHerb),
            "tree_shrub_subshrub" => Ok(GrowthForm::TreeShrubSubshrub),
            "vine" => Ok(GrowthForm::Vine),
            "woody" => Ok(GrowthForm::Woody),
            "herbaceous" => Ok(GrowthForm::Herbaceous),
            _ => Err(ModelError::UnknownTrait {
                field: "growth_form",
                value: s.to_string(),
            }),
        }
    }
}

impl WetlandStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            WetlandStatus::Obl => "OBL",
            WetlandStatus::Facw => "FACW",
            WetlandStatus::Fac => "FAC",
            WetlandStatus::Facu => "FACU",
            WetlandStatus::Upl => "UPL",
        }
    }
}

impl FromStr for WetlandStatus {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "OBL" => Ok(WetlandStatus::Obl),
            "FACW" => Ok(WetlandStatus::Facw),
            "FAC" => Ok(WetlandStatus::Fac),
            "FACU" => Ok(WetlandStatus::Facu),
            "UPL" => Ok(WetlandStatus::Upl),
            _ => Err(ModelError::UnknownTrait {
                field: "wetland",
                value: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for Nativity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for GrowthForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for WetlandStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A Gregorian calendar date with year in [1700, 2100].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CollectionDate(NaiveDate);

impl CollectionDate {
    pub fn new(year: i32, month: u32, day: u32) -> Result<Self> {
        if !(MIN_YEAR..=MAX_YEAR).contains(&year) {
            return Err(ModelError::InvalidDate(format!(
                "year {year} outside [{MIN_YEAR}, {MAX_YEAR}]"
            )));
        }
        NaiveDate::from_ymd_opt(year, month, day)
            .map(CollectionDate)
            .ok_or_else(|| ModelError::InvalidDate(format!("{year:04}-{month:02}-{day:02}")))
    }

    /// Date for the given ordinal day of `year` (1-based).
    pub fn from_ordinal(year: i32, ordinal: u32) -> Result<Self> {
        let date = NaiveDate::from_yo_opt(year, ordinal)
            .ok_or_else(|| ModelError::InvalidDate(format!("day {ordinal} of {year}")))?;
        Self::new(date.year(), date.month(), date.day())
    }

    pub fn year(&self) -> i32 {
        self.0.year()
    }

    pub fn month(&self) -> u32 {
        self.0.month()
    }

    pub fn day(&self) -> u32 {
        self.0.day()
    }

    /// Calendar day of year, 1 = January 1st.
    pub fn ordinal(&self) -> u32 {
        self.0.ordinal()
    }
}

impl FromStr for CollectionDate {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || ModelError::InvalidDate(s.to_string());
        let mut parts = s.trim().splitn(3, '-');
        let year = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let month = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let day = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        Self::new(year, month, day)
    }
}

impl fmt::Display for CollectionDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}-{:02}", self.year(), self.month(), self.day())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecimenMeta {
    pub species: String,
    pub collection_date: CollectionDate,
    pub nativity: Option<Nativity>,
    pub growth_form: Option<GrowthForm>,
    pub wetland_status: Option<WetlandStatus>,
}

impl SpecimenMeta {
    pub fn new(species: impl Into<String>, collection_date: CollectionDate) -> Self {
        SpecimenMeta {
            species: species.into(),
            collection_date,
            nativity: None,
            growth_form: None,
            wetland_status: None,
        }
    }
}

/// One specimen's class-probability vector, with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    record_id: String,
    probabilities: Vec<f64>,
    true_label: Option<usize>,
    specimen: Option<SpecimenMeta>,
}

impl PredictionRecord {
    /// Validates the vector and label. Vectors whose sum is within tolerance
    /// but visibly off one are rescaled.
    pub fn new(
        record_id: impl Into<String>,
        mut probabilities: Vec<f64>,
        true_label: Option<usize>,
        specimen: Option<SpecimenMeta>,
    ) -> Result<Self> {
        let sum = check_vector(&probabilities)?;
        if (sum - 1.0).abs() > RENORMALIZE_THRESHOLD {
            for p in &mut probabilities {
                *p = (*p / sum).min(1.0);
            }
        }
        let classes = probabilities.len();
        if let Some(label) = true_label {
            if label >= classes {
                return Err(ModelError::LabelOutOfRange { label, classes });
            }
        }
        Ok(PredictionRecord {
            record_id: record_id.into(),
            probabilities,
            true_label,
            specimen,
        })
    }

    pub fn record_id(&self) -> &str {
        &self.record_id
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn class_count(&self) -> usize {
        self.probabilities.len()
    }

    pub fn true_label(&self) -> Option<usize> {
        self.true_label
    }

    pub fn specimen(&self) -> Option<&SpecimenMeta> {
        self.specimen.as_ref()
    }

    pub fn decision(&self) -> Decision {
        argmax(&self.probabilities)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decide_examples() {
        assert_eq!(
            decide(&[0.3, 0.7]).unwrap(),
            Decision { predicted_class: 1, confidence: 0.7 }
        );
        assert_eq!(
            decide(&[0.5, 0.5]).unwrap(),
            Decision { predicted_class: 0, confidence: 0.5 }
        );
        let k = 8142;
        let uniform = vec![1.0 / k as f64; k];
        let d = decide(&uniform).unwrap();
        assert_eq!(d.predicted_class, 0);
        assert_eq!(d.confidence, 1.0 / k as f64);
    }

    #[test]
    fn decide_rejects_bad_vectors() {
        assert!(matches!(decide(&[f64::NAN, 1.0]), Err(ModelError::InvalidVector(_))));
        assert!(matches!(decide(&[-0.1, 1.1]), Err(ModelError::InvalidVector(_))));
        assert!(matches!(decide(&[0.3, 0.5]), Err(ModelError::InvalidVector(_))));
        assert!(matches!(decide(&[1.0]), Err(ModelError::InvalidVector(_))));
    }

    #[test]
    fn record_renormalizes_within_tolerance() {
        let r = PredictionRecord::new("a", vec![0.3000004, 0.7], None, None).unwrap();
        let sum: f64 = r.probabilities().iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
        assert!(PredictionRecord::new("b", vec![0.2, 0.6], None, None).is_err());
        assert_eq!(
            PredictionRecord::new("c", vec![0.2, 0.8], Some(2), None),
            Err(ModelError::LabelOutOfRange { label: 2, classes: 2 })
        );
    }

    #[test]
    fn dates_are_validated() {
        assert!(CollectionDate::new(2020, 2, 29).is_ok());
        assert!(CollectionDate::new(2019, 2, 29).is_err());
        assert!(CollectionDate::new(1699, 6, 1).is_err());
        assert!(CollectionDate::new(2101, 6, 1).is_err());
        let d: CollectionDate = "1987-06-29".parse().unwrap();
        assert_eq!(d.ordinal(), 180);
        assert_eq!(d.to_string(), "1987-06-29");
        assert!("1987-13-01".parse::<CollectionDate>().is_err());
        assert!("junk".parse::<CollectionDate>().is_err());
    }

    #[test]
    fn trait_parsing() {
        assert_eq!("invasive".parse::<Nativity>().unwrap(), Nativity::Introduced);
        assert_eq!("tree/shrub/subshrub".parse::<GrowthForm>().unwrap(), GrowthForm::TreeShrubSubshrub);
        assert_eq!("facw".parse::<WetlandStatus>().unwrap(), WetlandStatus::Facw);
        assert!("swamp".parse::<WetlandStatus>().is_err());
    }
}
