//! Day-of-year phenology: per-species estimates, replication against a
//! reference study, flowering-shift regressions with sample filters, trait
//! categorization and subset comparisons.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CollectionDate, GrowthForm, Nativity, PredictionRecord, SpecimenMeta, WetlandStatus};
use crate::stats::{linear_regression, welch_t_test};

mod tables;

pub use tables::{
    read_reference_csv, read_shift_csv, read_traits_csv, write_reference_csv, write_shift_csv, write_traits_csv,
};

/// Class index meaning "phenophase present" in two-class annotation files.
pub const EVENT_PRESENT_CLASS: usize = 1;
/// Days added to January/February fruiting dates, which are attributed to
/// the previous season.
pub const PREVIOUS_SEASON_OFFSET: f64 = 365.0;
/// Species with mean flowering DoY at or below this are early-season.
pub const EARLY_SEASON_MAX_DOY: f64 = 180.0;
/// Species with flowering duration at or below this are narrow-duration.
pub const NARROW_DURATION_MAX_DAYS: f64 = 28.0;
/// Flowering duration is approximated as this multiple of the DoY std.
pub const DURATION_STD_MULTIPLIER: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhenologyError {
    #[error("invalid date: {0}")]
    InvalidDate(String),
    #[error("no species in common between the two estimate sets")]
    NoOverlap,
    #[error("reference estimates are empty")]
    EmptyReference,
    #[error("{source_name}:{line}: {message}")]
    Table {
        source_name: String,
        line: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, PhenologyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventTask {
    Flowering,
    FruitingReplication,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventObservation {
    pub species: String,
    pub year: i32,
    /// May exceed 365 for fruits attributed to the previous season.
    pub doy: f64,
    pub source_record_id: String,
}

/// DoY of an event collected on `date`, or `None` when the task discards it.
///
/// Fruiting replication follows the reference protocol: January and
/// February fruits belong to the previous season (+365 days) and anything
/// collected March through May is dropped.
pub fn event_doy(date: &CollectionDate, task: EventTask) -> Option<f64> {
    let ordinal = f64::from(date.ordinal());
    match task {
        EventTask::Flowering => Some(ordinal),
        EventTask::FruitingReplication => match date.month() {
            1 | 2 => Some(ordinal + PREVIOUS_SEASON_OFFSET),
            3..=5 => None,
            _ => Some(ordinal),
        },
    }
}

pub fn event_doy_from_parts(year: i32, month: u32, day: u32, task: EventTask) -> Result<Option<f64>> {
    let date = CollectionDate::new(year, month, day).map_err(|e| PhenologyError::InvalidDate(e.to_string()))?;
    Ok(event_doy(&date, task))
}

pub fn to_event_doy(record_id: &str, specimen: &SpecimenMeta, task: EventTask) -> Option<EventObservation> {
    event_doy(&specimen.collection_date, task).map(|doy| EventObservation {
        species: specimen.species.clone(),
        year: specimen.collection_date.year(),
        doy,
        source_record_id: record_id.to_string(),
    })
}

/// Observations from records the model labels `event_class` with confidence
/// at or above `threshold`. Records without specimen metadata are skipped.
pub fn accepted_event_observations(
    records: &[PredictionRecord],
    threshold: f64,
    event_class: usize,
    task: EventTask,
) -> Vec<EventObservation> {
    records
        .iter()
        .filter(|r| {
            let d = r.decision();
            d.predicted_class == event_class && d.confidence >= threshold
        })
        .filter_map(|r| to_event_doy(r.record_id(), r.specimen()?, task))
        .collect()
}

/// Observations from records whose ground-truth label is `event_class`.
pub fn labeled_event_observations(
    records: &[PredictionRecord],
    event_class: usize,
    task: EventTask,
) -> Vec<EventObservation> {
    records
        .iter()
        .filter(|r| r.true_label() == Some(event_class))
        .filter_map(|r| to_event_doy(r.record_id(), r.specimen()?, task))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesDoYEstimate {
    pub species: String,
    pub mean_doy: Option<f64>,
    /// Sample standard deviation of the observations; needs n >= 2.
    pub std_doy: Option<f64>,
    pub n: usize,
}

impl SpeciesDoYEstimate {
    pub fn from_values(species: impl Into<String>, values: &[f64]) -> Self {
        let n = values.len();
        let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
        let std = match mean {
            Some(m) if n >= 2 => {
                Some((values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt())
            }
            _ => None,
        };
        SpeciesDoYEstimate {
            species: species.into(),
            mean_doy: mean,
            std_doy: std,
            n,
        }
    }
}

fn group_by_species(observations: &[EventObservation]) -> BTreeMap<&str, Vec<&EventObservation>> {
    let mut groups: BTreeMap<&str, Vec<&EventObservation>> = BTreeMap::new();
    for obs in observations {
        groups.entry(obs.species.as_str()).or_default().push(obs);
    }
    groups
}

/// Mean and spread per species, sorted by name. Every species in `universe`
/// gets an entry, empty ones included.
pub fn species_mean_doy<S: AsRef<str>>(
    universe: impl IntoIterator<Item = S>,
    observations: &[EventObservation],
) -> Vec<SpeciesDoYEstimate> {
    let mut values: BTreeMap<String, Vec<f64>> = universe
        .into_iter()
        .map(|s| (s.as_ref().to_string(), Vec::new()))
        .collect();
    for obs in observations {
        values.entry(obs.species.clone()).or_default().push(obs.doy);
    }
    values
        .iter()
        .map(|(species, v)| SpeciesDoYEstimate::from_values(species.clone(), v))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeciesComparison {
    pub species: String,
    pub model_mean_doy: Option<f64>,
    pub reference_mean_doy: Option<f64>,
    pub reference_std_doy: Option<f64>,
    pub model_n: usize,
    pub abs_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationReport {
    /// Mean absolute per-species DoY error over species estimated by both.
    pub mean_abs_doy_error: f64,
    pub overlap_count: usize,
    /// Reference species left without any accepted model observation.
    pub empty_count: usize,
    /// Mean of introduced species means minus mean of native species means.
    pub group_difference_days: Option<f64>,
    pub reference_group_difference_days: Option<f64>,
    pub species: Vec<SpeciesComparison>,
}

fn group_difference(estimates: &[SpeciesDoYEstimate], grouping: &BTreeMap<String, Nativity>) -> Option<f64> {
    let mut native = Vec::new();
    let mut introduced = Vec::new();
    for e in estimates {
        let (Some(mean), Some(group)) = (e.mean_doy, grouping.get(&e.species)) else {
            continue;
        };
        match group {
            Nativity::Native => native.push(mean),
            Nativity::Introduced => introduced.push(mean),
        }
    }
    if native.is_empty() || introduced.is_empty() {
        return None;
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Some(avg(&introduced) - avg(&native))
}

pub fn replication_report(
    model: &[SpeciesDoYEstimate],
    reference: &[SpeciesDoYEstimate],
    grouping: &BTreeMap<String, Nativity>,
) -> Result<ReplicationReport> {
    if reference.is_empty() {
        return Err(PhenologyError::EmptyReference);
    }
    let by_species: BTreeMap<&str, &SpeciesDoYEstimate> = model.iter().map(|e| (e.species.as_str(), e)).collect();

    let mut species = Vec::with_capacity(reference.len());
    let mut error_sum = 0.0;
    let mut overlap_count = 0;
    let mut empty_count = 0;
    for r in reference {
        let m = by_species.get(r.species.as_str());
        let model_mean = m.and_then(|m| m.mean_doy);
        let model_n = m.map_or(0, |m| m.n);
        if model_n == 0 {
            empty_count += 1;
        }
        let abs_error = match (model_mean, r.mean_doy) {
            (Some(a), Some(b)) => Some((a - b).abs()),
            _ => None,
        };
        if let Some(err) = abs_error {
            error_sum += err;
            overlap_count += 1;
        }
        species.push(SpeciesComparison {
            species: r.species.clone(),
            model_mean_doy: model_mean,
            reference_mean_doy: r.mean_doy,
            reference_std_doy: r.std_doy,
            model_n,
            abs_error,
        });
    }
    if overlap_count == 0 {
        return Err(PhenologyError::NoOverlap);
    }
    Ok(ReplicationReport {
        mean_abs_doy_error: error_sum / overlap_count as f64,
        overlap_count,
        empty_count,
        group_difference_days: group_difference(model, grouping),
        reference_group_difference_days: group_difference(reference, grouping),
        species,
    })
}

/// Sample-size requirements for a species to enter the shift analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftFilters {
    pub min_samples: usize,
    /// Required on each side of `era_boundary`.
    pub min_per_era: usize,
    /// Years strictly below this are "pre", the rest "post".
    pub era_boundary: i32,
    pub alpha: f64,
}

impl Default for ShiftFilters {
    fn default() -> Self {
        ShiftFilters {
            min_samples: 75,
            min_per_era: 37,
            era_boundary: 1950,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftClass {
    Earlier,
    Later,
    None,
    Filtered,
}

impl ShiftClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ShiftClass::Earlier => "earlier",
            ShiftClass::Later => "later",
            ShiftClass::None => "none",
            ShiftClass::Filtered => "filtered",
        }
    }
}

impl FromStr for ShiftClass {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "earlier" => Ok(ShiftClass::Earlier),
            "later" => Ok(ShiftClass::Later),
            "none" => Ok(ShiftClass::None),
            "filtered" => Ok(ShiftClass::Filtered),
            other => Err(format!("unknown shift class {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesShiftEstimate {
    pub species: String,
    pub slope_days_per_year: Option<f64>,
    pub slope_days_per_decade: Option<f64>,
    pub p_value: Option<f64>,
    pub n: usize,
    pub n_pre: usize,
    pub n_post: usize,
    pub classification: ShiftClass,
}

impl SpeciesShiftEstimate {
    pub fn is_analyzed(&self) -> bool {
        self.classification != ShiftClass::Filtered
    }
}

fn classify(slope: f64, p_value: f64, alpha: f64) -> ShiftClass {
    if p_value >= alpha {
        ShiftClass::None
    } else if slope < 0.0 {
        ShiftClass::Earlier
    } else if slope > 0.0 {
        ShiftClass::Later
    } else {
        ShiftClass::None
    }
}

/// Regresses DoY on year for one species after applying the sample filters.
pub fn species_shift(species: &str, observations: &[EventObservation], filters: &ShiftFilters) -> SpeciesShiftEstimate {
    let n = observations.len();
    let n_pre = observations.iter().filter(|o| o.year < filters.era_boundary).count();
    let n_post = n - n_pre;
    let mut estimate = SpeciesShiftEstimate {
        species: species.to_string(),
        slope_days_per_year: None,
        slope_days_per_decade: None,
        p_value: None,
        n,
        n_pre,
        n_post,
        classification: ShiftClass::Filtered,
    };
    if n < filters.min_samples || n_pre < filters.min_per_era || n_post < filters.min_per_era {
        return estimate;
    }
    let years: Vec<f64> = observations.iter().map(|o| f64::from(o.year)).collect();
    let doys: Vec<f64> = observations.iter().map(|o| o.doy).collect();
    let Ok(fit) = linear_regression(&years, &doys) else {
        return estimate;
    };
    estimate.slope_days_per_year = Some(fit.slope);
    estimate.slope_days_per_decade = Some(10.0 * fit.slope);
    estimate.p_value = Some(fit.p_value);
    estimate.classification = classify(fit.slope, fit.p_value, filters.alpha);
    estimate
}

/// [`species_shift`] for every species in `universe` or `observations`,
/// sorted by name. Species without observations come out filtered.
pub fn shifts_by_species<S: AsRef<str>>(
    universe: impl IntoIterator<Item = S>,
    observations: &[EventObservation],
    filters: &ShiftFilters,
) -> Vec<SpeciesShiftEstimate> {
    let mut groups: BTreeMap<String, Vec<EventObservation>> = universe
        .into_iter()
        .map(|s| (s.as_ref().to_string(), Vec::new()))
        .collect();
    for obs in observations {
        groups.entry(obs.species.clone()).or_default().push(obs.clone());
    }
    groups
        .iter()
        .map(|(species, obs)| species_shift(species, obs, filters))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanOver {
    AllAnalyzed,
    SignificantOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremeShift {
    pub species: String,
    pub days_per_year: f64,
    pub days_per_decade: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftAggregate {
    pub n_species: usize,
    pub n_analyzed: usize,
    pub n_filtered: usize,
    pub n_significant: usize,
    pub n_earlier: usize,
    pub n_later: usize,
    pub n_none: usize,
    pub mean_over: MeanOver,
    pub mean_shift_days_per_year: Option<f64>,
    pub mean_shift_days_per_decade: Option<f64>,
    pub most_negative: Option<ExtremeShift>,
    pub most_positive: Option<ExtremeShift>,
}

pub fn aggregate_shifts(estimates: &[SpeciesShiftEstimate], mean_over: MeanOver) -> ShiftAggregate {
    let mut agg = ShiftAggregate {
        n_species: estimates.len(),
        n_analyzed: 0,
        n_filtered: 0,
        n_significant: 0,
        n_earlier: 0,
        n_later: 0,
        n_none: 0,
        mean_over,
        mean_shift_days_per_year: None,
        mean_shift_days_per_decade: None,
        most_negative: None,
        most_positive: None,
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut lo: Option<(&str, f64)> = None;
    let mut hi: Option<(&str, f64)> = None;
    for e in estimates {
        match e.classification {
            ShiftClass::Filtered => {
                agg.n_filtered += 1;
                continue;
            }
            ShiftClass::Earlier => agg.n_earlier += 1,
            ShiftClass::Later => agg.n_later += 1,
            ShiftClass::None => agg.n_none += 1,
        }
        agg.n_analyzed += 1;
        let Some(slope) = e.slope_days_per_year else { continue };
        let significant = matches!(e.classification, ShiftClass::Earlier | ShiftClass::Later);
        if mean_over == MeanOver::AllAnalyzed || significant {
            sum += slope;
            count += 1;
        }
        if lo.is_none_or(|(_, v)| slope < v) {
            lo = Some((&e.species, slope));
        }
        if hi.is_none_or(|(_, v)| slope > v) {
            hi = Some((&e.species, slope));
        }
    }
    agg.n_significant = agg.n_earlier + agg.n_later;
    if count > 0 {
        let mean = sum / count as f64;
        agg.mean_shift_days_per_year = Some(mean);
        agg.mean_shift_days_per_decade = Some(10.0 * mean);
    }
    let extreme = |(species, slope): (&str, f64)| ExtremeShift {
        species: species.to_string(),
        days_per_year: slope,
        days_per_decade: 10.0 * slope,
    };
    agg.most_negative = lo.map(extreme);
    agg.most_positive = hi.map(extreme);
    agg
}

/// Per-species attributes used for subset analyses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesTraits {
    pub species: String,
    pub n: usize,
    pub mean_doy: Option<f64>,
    pub std_doy: Option<f64>,
    pub nativity: Option<Nativity>,
    pub growth_form: Option<GrowthForm>,
    pub wetland: Option<WetlandStatus>,
}

fn majority<T: Ord + Copy>(counts: &BTreeMap<T, usize>) -> Option<T> {
    let mut best: Option<(T, usize)> = None;
    for (&k, &c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k)
}

/// Species traits from specimen metadata (majority vote per species, ties to
/// the first variant) combined with DoY statistics of `observations`.
pub fn collect_species_traits<'a>(
    specimens: impl IntoIterator<Item = &'a SpecimenMeta>,
    observations: &[EventObservation],
) -> Vec<SpeciesTraits> {
    #[derive(Default)]
    struct Votes {
        nativity: BTreeMap<Nativity, usize>,
        growth_form: BTreeMap<GrowthForm, usize>,
        wetland: BTreeMap<WetlandStatus, usize>,
    }
    let mut votes: BTreeMap<String, Votes> = BTreeMap::new();
    for meta in specimens {
        let v = votes.entry(meta.species.clone()).or_default();
        if let Some(x) = meta.nativity {
            *v.nativity.entry(x).or_default() += 1;
        }
        if let Some(x) = meta.growth_form {
            *v.growth_form.entry(x).or_default() += 1;
        }
        if let Some(x) = meta.wetland_status {
            *v.wetland.entry(x).or_default() += 1;
        }
    }
    for obs in observations {
        votes.entry(obs.species.clone()).or_default();
    }
    let estimates = species_mean_doy(votes.keys(), observations);
    estimates
        .into_iter()
        .map(|e| {
            let v = &votes[&e.species];
            SpeciesTraits {
                nativity: majority(&v.nativity),
                growth_form: majority(&v.growth_form),
                wetland: majority(&v.wetland),
                species: e.species,
                n: e.n,
                mean_doy: e.mean_doy,
                std_doy: e.std_doy,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Characteristic {
    GrowthForm,
    Nativity,
    Wetland,
    SeasonalTiming,
    FloweringDuration,
}

impl Characteristic {
    pub const ALL: [Characteristic; 5] = [
        Characteristic::GrowthForm,
        Characteristic::Nativity,
        Characteristic::Wetland,
        Characteristic::SeasonalTiming,
        Characteristic::FloweringDuration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Characteristic::GrowthForm => "growth_form",
            Characteristic::Nativity => "nativity",
            Characteristic::Wetland => "wetland",
            Characteristic::SeasonalTiming => "seasonal_timing",
            Characteristic::FloweringDuration => "flowering_duration",
        }
    }
}

impl fmt::Display for Characteristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Characteristic {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Characteristic::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown characteristic {s:?}"))
    }
}

pub fn seasonal_category(mean_doy: f64) -> &'static str {
    if mean_doy <= EARLY_SEASON_MAX_DOY {
        "early"
    } else {
        "late"
    }
}

/// Flowering-duration proxy: twice the standard deviation of flowering DoY.
pub fn flowering_duration(std_doy: f64) -> f64 {
    DURATION_STD_MULTIPLIER * std_doy
}

pub fn duration_category(duration_days: f64) -> &'static str {
    if duration_days <= NARROW_DURATION_MAX_DAYS {
        "narrow"
    } else {
        "broad"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryAssignment {
    pub characteristic: Characteristic,
    pub categories: BTreeMap<String, String>,
    /// Species without the trait or derived quantity.
    pub excluded: Vec<String>,
}

pub fn categorize_species(traits: &[SpeciesTraits], characteristic: Characteristic) -> CategoryAssignment {
    let mut categories = BTreeMap::new();
    let mut excluded = Vec::new();
    for t in traits {
        let category = match characteristic {
            Characteristic::GrowthForm => t.growth_form.map(|g| g.as_str().to_string()),
            Characteristic::Nativity => t.nativity.map(|n| n.as_str().to_string()),
            Characteristic::Wetland => t.wetland.map(|w| w.as_str().to_string()),
            Characteristic::SeasonalTiming => t.mean_doy.map(|m| seasonal_category(m).to_string()),
            Characteristic::FloweringDuration => t
                .std_doy
                .map(|s| duration_category(flowering_duration(s)).to_string()),
        };
        match category {
            Some(c) => {
                categories.insert(t.species.clone(), c);
            }
            None => excluded.push(t.species.clone()),
        }
    }
    CategoryAssignment {
        characteristic,
        categories,
        excluded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Earlier,
    Later,
    Same,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Earlier => "earlier",
            Direction::Later => "later",
            Direction::Same => "same",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategorySummary {
    pub category: String,
    pub n: usize,
    pub mean_shift_days_per_year: f64,
    pub mean_shift_days_per_decade: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairComparison {
    pub characteristic: Characteristic,
    /// "`category_a` vs `category_b`"
    pub comparison: String,
    pub category_a: String,
    pub category_b: String,
    /// How `category_a` shifts relative to `category_b`.
    pub direction: Direction,
    /// |mean_a - mean_b| in days/year.
    pub magnitude: f64,
    pub magnitude_days_per_decade: f64,
    pub p: f64,
    pub t: f64,
    pub df: f64,
    pub n_a: usize,
    pub n_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedPair {
    pub category_a: String,
    pub category_b: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetReport {
    pub characteristic: Characteristic,
    pub excluded_species: usize,
    pub categories: Vec<CategorySummary>,
    pub comparisons: Vec<PairComparison>,
    pub skipped: Vec<SkippedPair>,
}

/// Averages per-species slopes inside each category and runs Welch's test on
/// every pair of categories. Pairs with fewer than two species on a side are
/// skipped and listed.
pub fn subset_welch_table(estimates: &[SpeciesShiftEstimate], assignment: &CategoryAssignment) -> SubsetReport {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut excluded = assignment.excluded.len();
    for e in estimates.iter().filter(|e| e.is_analyzed()) {
        let Some(slope) = e.slope_days_per_year else { continue };
        match assignment.categories.get(&e.species) {
            Some(cat) => groups.entry(cat.as_str()).or_default().push(slope),
            None => excluded += usize::from(!assignment.excluded.contains(&e.species)),
        }
    }

    let categories: Vec<CategorySummary> = groups
        .iter()
        .map(|(cat, slopes)| {
            let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
            CategorySummary {
                category: cat.to_string(),
                n: slopes.len(),
                mean_shift_days_per_year: mean,
                mean_shift_days_per_decade: 10.0 * mean,
            }
        })
        .collect();

    let mut comparisons = Vec::new();
    let mut skipped = Vec::new();
    for (i, a) in categories.iter().enumerate() {
        for b in &categories[i + 1..] {
            let skip = |reason: String| SkippedPair {
                category_a: a.category.clone(),
                category_b: b.category.clone(),
                reason,
            };
            if a.n < 2 || b.n < 2 {
                skipped.push(skip(format!("too few species ({} vs {})", a.n, b.n)));
                continue;
            }
            match welch_t_test(&groups[a.category.as_str()], &groups[b.category.as_str()]) {
                Ok(w) => {
                    let diff = a.mean_shift_days_per_year - b.mean_shift_days_per_year;
                    let direction = if diff < 0.0 {
                        Direction::Earlier
                    } else if diff > 0.0 {
                        Direction::Later
                    } else {
                        Direction::Same
                    };
                    comparisons.push(PairComparison {
                        characteristic: assignment.characteristic,
                        comparison: format!("{} vs {}", a.category, b.category),
                        category_a: a.category.clone(),
                        category_b: b.category.clone(),
                        direction,
                        magnitude: diff.abs(),
                        magnitude_days_per_decade: 10.0 * diff.abs(),
                        p: w.p_value,
                        t: w.t_stat,
                        df: w.df,
                        n_a: a.n,
                        n_b: b.n,
                    });
                }
                Err(e) => skipped.push(skip(e.to_string())),
            }
        }
    }
    SubsetReport {
        characteristic: assignment.characteristic,
        excluded_species: excluded,
        categories,
        comparisons,
        skipped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendErrorRow {
    pub threshold: f64,
    pub species: String,
    /// Model observations used for the model regression.
    pub n_samples: usize,
    pub human_slope: Option<f64>,
    pub model_slope: Option<f64>,
    pub slope_error: Option<f64>,
}

fn slope_of(observations: &[&EventObservation]) -> Option<f64> {
    let years: Vec<f64> = observations.iter().map(|o| f64::from(o.year)).collect();
    let doys: Vec<f64> = observations.iter().map(|o| o.doy).collect();
    linear_regression(&years, &doys).ok().map(|r| r.slope)
}

/// For every threshold and species, |model slope - human slope| of DoY on
/// year. Slopes that cannot be fitted leave the error empty.
pub fn per_threshold_trend_comparison(
    human: &[EventObservation],
    model_by_threshold: &[(f64, Vec<EventObservation>)],
    species: &[String],
) -> Result<Vec<TrendErrorRow>> {
    let human_groups = group_by_species(human);
    if !species.iter().any(|s| human_groups.contains_key(s.as_str())) {
        return Err(PhenologyError::NoOverlap);
    }
    let human_slopes: BTreeMap<&str, Option<f64>> = species
        .iter()
        .map(|s| {
            let slope = human_groups.get(s.as_str()).and_then(|obs| slope_of(obs));
            (s.as_str(), slope)
        })
        .collect();

    let mut rows = Vec::with_capacity(model_by_threshold.len() * species.len());
    for (threshold, model) in model_by_threshold {
        let model_groups = group_by_species(model);
        for s in species {
            let obs = model_groups.get(s.as_str());
            let model_slope = obs.and_then(|o| slope_of(o));
            let human_slope = human_slopes[s.as_str()];
            let slope_error = match (model_slope, human_slope) {
                (Some(m), Some(h)) => Some((m - h).abs()),
                _ => None,
            };
            rows.push(TrendErrorRow {
                threshold: *threshold,
                species: s.clone(),
                n_samples: obs.map_or(0, Vec::len),
                human_slope,
                model_slope,
                slope_error,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> CollectionDate {
        CollectionDate::new(y, m, d).unwrap()
    }

    fn obs(species: &str, year: i32, doy: f64) -> EventObservation {
        EventObservation {
            species: species.into(),
            year,
            doy,
            source_record_id: String::new(),
        }
    }

    #[test]
    fn fruiting_previous_season_rule() {
        assert_eq!(event_doy(&date(1990, 1, 15), EventTask::FruitingReplication), Some(380.0));
        assert_eq!(event_doy(&date(1990, 4, 10), EventTask::FruitingReplication), None);
        assert_eq!(event_doy(&date(1990, 3, 1), EventTask::FruitingReplication), None);
        assert_eq!(event_doy(&date(1990, 5, 31), EventTask::FruitingReplication), None);
        assert_eq!(event_doy(&date(1990, 6, 1), EventTask::FruitingReplication), Some(152.0));
        assert_eq!(event_doy(&date(1990, 4, 10), EventTask::Flowering), Some(100.0));
        assert_eq!(event_doy(&date(1990, 6, 29), EventTask::Flowering), Some(180.0));
        assert!(matches!(
            event_doy_from_parts(1990, 2, 30, EventTask::Flowering),
            Err(PhenologyError::InvalidDate(_))
        ));
    }

    #[test]
    fn species_means() {
        let observations = vec![obs("a", 2000, 200.0), obs("a", 2001, 210.0), obs("a", 2002, 220.0)];
        let est = species_mean_doy(["a", "b"], &observations);
        assert_eq!(est.len(), 2);
        assert_eq!(est[0].mean_doy, Some(210.0));
        assert_eq!(est[0].std_doy, Some(10.0));
        assert_eq!(est[1], SpeciesDoYEstimate { species: "b".into(), mean_doy: None, std_doy: None, n: 0 });
        let single = SpeciesDoYEstimate::from_values("c", &[5.0]);
        assert_eq!((single.mean_doy, single.std_doy), (Some(5.0), None));
    }

    fn est(species: &str, mean: Option<f64>, n: usize) -> SpeciesDoYEstimate {
        SpeciesDoYEstimate {
            species: species.into(),
            mean_doy: mean,
            std_doy: None,
            n,
        }
    }

    #[test]
    fn replication_of_itself_has_zero_error() {
        let reference = vec![est("a", Some(230.0), 10), est("b", Some(260.0), 12), est("c", Some(240.0), 8)];
        let grouping: BTreeMap<String, Nativity> = [
            ("a".to_string(), Nativity::Native),
            ("b".to_string(), Nativity::Introduced),
            ("c".to_string(), Nativity::Native),
        ]
        .into();
        let r = replication_report(&reference, &reference, &grouping).unwrap();
        assert_eq!(r.mean_abs_doy_error, 0.0);
        assert_eq!(r.group_difference_days, Some(25.0));
        assert_eq!(r.group_difference_days, r.reference_group_difference_days);
        assert_eq!(r.empty_count, 0);
    }

    #[test]
    fn replication_counts_empty_species() {
        let reference = vec![est("a", Some(230.0), 10), est("b", Some(260.0), 12)];
        let model = vec![est("a", Some(236.0), 3), est("b", None, 0)];
        let r = replication_report(&model, &reference, &BTreeMap::new()).unwrap();
        assert_eq!(r.mean_abs_doy_error, 6.0);
        assert_eq!(r.empty_count, 1);
        assert_eq!(r.overlap_count, 1);
        assert_eq!(r.group_difference_days, None);

        let disjoint = vec![est("z", Some(1.0), 1)];
        assert_eq!(replication_report(&disjoint, &reference, &BTreeMap::new()), Err(PhenologyError::NoOverlap));
        assert_eq!(replication_report(&model, &[], &BTreeMap::new()), Err(PhenologyError::EmptyReference));
    }

    fn balanced(n: usize, pre: usize) -> Vec<EventObservation> {
        (0..n)
            .map(|i| {
                let year = if i < pre { 1900 + (i % 50) as i32 } else { 1950 + (i % 60) as i32 };
                obs("s", year, 150.0 + (i % 7) as f64)
            })
            .collect()
    }

    #[test]
    fn shift_filters() {
        let f = ShiftFilters::default();
        assert_eq!(species_shift("s", &balanced(74, 37), &f).classification, ShiftClass::Filtered);
        let short_pre = species_shift("s", &balanced(80, 36), &f);
        assert_eq!(short_pre.classification, ShiftClass::Filtered);
        assert_eq!((short_pre.n_pre, short_pre.n_post), (36, 44));
        let ok = species_shift("s", &balanced(80, 40), &f);
        assert_ne!(ok.classification, ShiftClass::Filtered);
        assert_eq!(ok.slope_days_per_decade, ok.slope_days_per_year.map(|s| 10.0 * s));
    }

    #[test]
    fn shift_units() {
        // DoY falls by 0.0248 per year exactly
        let observations: Vec<_> = (0..100)
            .map(|i| {
                let year = 1900 + i;
                obs("s", year, 200.0 - 0.0248 * f64::from(i) + if i % 2 == 0 { 0.5 } else { -0.5 })
            })
            .collect();
        let e = species_shift("s", &observations, &ShiftFilters::default());
        let slope = e.slope_days_per_year.unwrap();
        assert!((slope + 0.0248).abs() < 1e-3);
        assert_eq!(e.slope_days_per_decade.unwrap(), 10.0 * slope);
        assert_eq!(e.classification, ShiftClass::Earlier);
    }

    fn shift(species: &str, slope: f64, p: f64) -> SpeciesShiftEstimate {
        SpeciesShiftEstimate {
            species: species.into(),
            slope_days_per_year: Some(slope),
            slope_days_per_decade: Some(10.0 * slope),
            p_value: Some(p),
            n: 100,
            n_pre: 50,
            n_post: 50,
            classification: classify(slope, p, 0.05),
        }
    }

    #[test]
    fn aggregate_counts_and_extremes() {
        let mut estimates = vec![
            shift("a", -0.1, 0.01),
            shift("b", 0.2, 0.04),
            shift("c", -0.3, 0.5),
            shift("d", 0.05, 0.9),
        ];
        estimates.push(SpeciesShiftEstimate {
            classification: ShiftClass::Filtered,
            slope_days_per_year: None,
            slope_days_per_decade: None,
            p_value: None,
            ..shift("e", 0.0, 1.0)
        });
        let agg = aggregate_shifts(&estimates, MeanOver::AllAnalyzed);
        assert_eq!((agg.n_analyzed, agg.n_filtered, agg.n_significant), (4, 1, 2));
        assert_eq!((agg.n_earlier, agg.n_later, agg.n_none), (1, 1, 2));
        assert!((agg.mean_shift_days_per_year.unwrap() - (-0.15 / 4.0)).abs() < 1e-15);
        assert_eq!(agg.most_negative.as_ref().unwrap().species, "c");
        assert_eq!(agg.most_positive.as_ref().unwrap().species, "b");
        let sig = aggregate_shifts(&estimates, MeanOver::SignificantOnly);
        assert!((sig.mean_shift_days_per_year.unwrap() - 0.05).abs() < 1e-15);

        let none_sig = aggregate_shifts(&[shift("x", 0.1, 0.2), shift("y", -0.1, 0.3)], MeanOver::AllAnalyzed);
        assert_eq!((none_sig.n_significant, none_sig.n_earlier, none_sig.n_later), (0, 0, 0));
    }

    fn traits(species: &str, mean: Option<f64>, std: Option<f64>) -> SpeciesTraits {
        SpeciesTraits {
            species: species.into(),
            n: 10,
            mean_doy: mean,
            std_doy: std,
            nativity: None,
            growth_form: None,
            wetland: None,
        }
    }

    #[test]
    fn categorization_boundaries() {
        let t = vec![
            traits("a", Some(180.0), Some(14.0)),
            traits("b", Some(181.0), Some(14.5)),
            traits("c", None, None),
        ];
        let season = categorize_species(&t, Characteristic::SeasonalTiming);
        assert_eq!(season.categories["a"], "early");
        assert_eq!(season.categories["b"], "late");
        assert_eq!(season.excluded, vec!["c".to_string()]);
        let duration = categorize_species(&t, Characteristic::FloweringDuration);
        assert_eq!(duration.categories["a"], "narrow");
        assert_eq!(duration.categories["b"], "broad");
        assert_eq!(duration_category(28.0), "narrow");
        let nat = categorize_species(&t, Characteristic::Nativity);
        assert_eq!(nat.excluded.len(), 3);
    }

    #[test]
    fn majority_traits() {
        let mut m1 = SpecimenMeta::new("a", date(1950, 6, 1));
        m1.nativity = Some(Nativity::Introduced);
        let mut m2 = m1.clone();
        m2.nativity = Some(Nativity::Native);
        let m3 = m1.clone();
        let t = collect_species_traits([&m1, &m2, &m3], &[obs("a", 1950, 152.0), obs("b", 1951, 160.0)]);
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].nativity, Some(Nativity::Introduced));
        assert_eq!(t[0].mean_doy, Some(152.0));
        assert_eq!(t[1].species, "b");
        assert_eq!(t[1].nativity, None);
    }

    #[test]
    fn identical_categories_give_p_one() {
        let estimates = vec![
            shift("a1", 0.01, 0.5),
            shift("a2", 0.03, 0.5),
            shift("b1", 0.01, 0.5),
            shift("b2", 0.03, 0.5),
            shift("c1", 0.02, 0.5),
        ];
        let categories: BTreeMap<String, String> = [
            ("a1", "x"),
            ("a2", "x"),
            ("b1", "y"),
            ("b2", "y"),
            ("c1", "z"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        let assignment = CategoryAssignment {
            characteristic: Characteristic::GrowthForm,
            categories,
            excluded: vec![],
        };
        let report = subset_welch_table(&estimates, &assignment);
        assert_eq!(report.comparisons.len(), 1);
        assert_eq!(report.comparisons[0].p, 1.0);
        assert_eq!(report.comparisons[0].direction, Direction::Same);
        assert_eq!(report.skipped.len(), 2);
    }

    #[test]
    fn trend_comparison_identical_sources() {
        let human: Vec<_> = (0..20).map(|i| obs("a", 1900 + i * 5, 150.0 + f64::from(i % 3))).collect();
        let model = vec![(0.5, human.clone()), (0.75, human.clone()), (0.9, human.clone()), (0.99, human.clone())];
        let rows = per_threshold_trend_comparison(&human, &model, &["a".to_string()]).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.slope_error == Some(0.0)));
        assert_eq!(
            per_threshold_trend_comparison(&human, &model, &["zz".to_string()]),
            Err(PhenologyError::NoOverlap)
        );
    }
}
