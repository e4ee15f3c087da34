//! Confidence-threshold rejection: per-threshold evaluation, accuracy/coverage
//! curve sweeps, threshold selection, and applying a policy to new records.
//!
//! A record is accepted at threshold `t` when its confidence (the largest
//! class probability) is `>= t`. Accepted sets are therefore nested: raising
//! the threshold can only remove records.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Decision, PredictionRecord};

/// Default spacing of the threshold grid.
pub const DEFAULT_GRID_STEP: f64 = 0.001;

// Grid values are rounded to this many decimals so that written thresholds
// read back as the same doubles.
const GRID_DECIMALS: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("record {0:?} has no true label")]
    UnlabeledRecord(String),
    #[error("bad grid: {0}")]
    BadGrid(String),
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("bad objective: {0}")]
    BadObjective(String),
    #[error("no grid threshold satisfies {0}")]
    Unreachable(String),
    #[error("curve table line {line}: {message}")]
    CurveFormat { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, EngineError>;

/// Counts and rates at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub threshold: f64,
    pub accepted_count: usize,
    pub correct_count: usize,
    pub total_count: usize,
    /// `None` when nothing is accepted.
    pub accuracy: Option<f64>,
    pub coverage: f64,
    pub rejection_rate: f64,
}

impl EvalPoint {
    fn from_counts(threshold: f64, accepted_count: usize, correct_count: usize, total_count: usize) -> Self {
        let accuracy = (accepted_count > 0).then(|| correct_count as f64 / accepted_count as f64);
        let coverage = accepted_count as f64 / total_count as f64;
        EvalPoint {
            threshold,
            accepted_count,
            correct_count,
            total_count,
            accuracy,
            coverage,
            rejection_rate: 1.0 - coverage,
        }
    }
}

/// Strictly increasing list of thresholds in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdGrid(Vec<f64>);

/// `start:stop:step` description of an evenly spaced grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridSpec {
    /// Default grid for `K` classes: from 1/K to 1 in steps of 0.001.
    pub fn default_for_classes(classes: usize) -> Self {
        GridSpec {
            start: round_grid(1.0 / classes as f64),
            stop: 1.0,
            step: DEFAULT_GRID_STEP,
        }
    }
}

impl std::str::FromStr for GridSpec {
    type Err = EngineError;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let parse = |p: &str| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| EngineError::BadGrid(format!("cannot parse {p:?} in {s:?}")))
        };
        match parts.as_slice() {
            [a, b, c] => Ok(GridSpec {
                start: parse(a)?,
                stop: parse(b)?,
                step: parse(c)?,
            }),
            _ => Err(EngineError::BadGrid(format!("expected start:stop:step, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.step)
    }
}

fn round_grid(v: f64) -> f64 {
    (v * GRID_DECIMALS).round() / GRID_DECIMALS
}

impl ThresholdGrid {
    pub fn from_spec(spec: GridSpec) -> Result<Self> {
        let GridSpec { start, stop, step } = spec;
        if !(step > 0.0) || !step.is_finite() {
            return Err(EngineError::BadGrid(format!("step must be positive, got {step}")));
        }
        if !(start < stop) {
            return Err(EngineError::BadGrid(format!("start {start} must be below stop {stop}")));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        let values = (0..count).map(|i| round_grid(start + i as f64 * step)).collect();
        Self::from_values(values)
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(EngineError::BadGrid(format!("need at least 2 points, got {}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(EngineError::BadGrid(format!("threshold {v} outside [0, 1]")));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EngineError::BadGrid("thresholds must be strictly increasing".into()));
        }
        Ok(ThresholdGrid(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One evaluation point per grid threshold, ascending.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveTable {
    pub total_count: usize,
    pub points: Vec<EvalPoint>,
}

impl CurveTable {
    pub fn thresholds(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.threshold)
    }

    pub fn point_at(&self, threshold: f64) -> Option<&EvalPoint> {
        self.points.iter().find(|p| p.threshold == threshold)
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(EngineError::BadThreshold(threshold))
    }
}

/// (confidence, correct) for every record, requiring labels.
fn scored(records: &[PredictionRecord]) -> Result<Vec<(f64, bool)>> {
    if records.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    records
        .iter()
        .map(|r| {
            let label = r
                .true_label()
                .ok_or_else(|| EngineError::UnlabeledRecord(r.record_id().to_string()))?;
            let d = r.decision();
            Ok((d.confidence, d.predicted_class == label))
        })
        .collect()
}

pub fn evaluate_at_threshold(records: &[PredictionRecord], threshold: f64) -> Result<EvalPoint> {
    check_threshold(threshold)?;
    let scores = scored(records)?;
    let mut accepted = 0;
    let mut correct = 0;
    for &(confidence, is_correct) in &scores {
        if confidence >= threshold {
            accepted += 1;
            correct += usize::from(is_correct);
        }
    }
    Ok(EvalPoint::from_counts(threshold, accepted, correct, scores.len()))
}

/// Evaluates every grid threshold in one pass: records are sorted by
/// descending confidence and the grid is walked from the top, so each
/// threshold only extends the accepted prefix of the previous one.
pub fn sweep_curve(records: &[PredictionRecord], grid: &ThresholdGrid) -> Result<CurveTable> {
    let mut scores = scored(records)?;
    scores.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total = scores.len();

    let mut points = Vec::with_capacity(grid.len());
    let mut accepted = 0;
    let mut correct = 0;
    for &threshold in grid.values().iter().rev() {
        while accepted < total && scores[accepted].0 >= threshold {
            correct += usize::from(scores[accepted].1);
            accepted += 1;
        }
        points.push(EvalPoint::from_counts(threshold, accepted, correct, total));
    }
    points.reverse();
    Ok(CurveTable {
        total_count: total,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Objective {
    TargetAccuracy(f64),
    MinCoverage(f64),
    Fixed(f64),
}

/// A chosen threshold together with how it was chosen and, when selected
/// from a validation curve, the point it achieved there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub threshold: f64,
    pub objective: Objective,
    pub achieved: Option<EvalPoint>,
}

impl ThresholdPolicy {
    pub fn fixed(threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        Ok(ThresholdPolicy {
            threshold,
            objective: Objective::Fixed(threshold),
            achieved: None,
        })
    }
}

/// Smallest grid threshold whose accuracy reaches `target_accuracy`, which
/// is the largest coverage meeting the constraint.
pub fn select_threshold_for_accuracy(curve: &CurveTable, target_accuracy: f64) -> Result<ThresholdPolicy> {
    if !(target_accuracy > 0.0 && target_accuracy <= 1.0) {
        return Err(EngineError::BadObjective(format!(
            "target accuracy must lie in (0, 1], got {target_accuracy}"
        )));
    }
    let point = curve
        .points
        .iter()
        .find(|p| p.accuracy.is_some_and(|a| a >= target_accuracy))
        .ok_or_else(|| EngineError::Unreachable(format!("accuracy >= {target_accuracy}")))?;
    Ok(ThresholdPolicy {
        threshold: point.threshold,
        objective: Objective::TargetAccuracy(target_accuracy),
        achieved: Some(*point),
    })
}

/// Most accurate grid threshold keeping at least `min_coverage` of the data;
/// ties go to the larger threshold.
pub fn select_threshold_for_coverage(curve: &CurveTable, min_coverage: f64) -> Result<ThresholdPolicy> {
    if !(min_coverage > 0.0 && min_coverage <= 1.0) {
        return Err(EngineError::BadObjective(format!(
            "minimum coverage must lie in (0, 1], got {min_coverage}"
        )));
    }
    let mut best: Option<(&EvalPoint, f64)> = None;
    for p in curve.points.iter().filter(|p| p.coverage >= min_coverage) {
        let Some(acc) = p.accuracy else { continue };
        if best.is_none_or(|(_, b)| acc >= b) {
            best = Some((p, acc));
        }
    }
    let (point, _) = best.ok_or_else(|| EngineError::Unreachable(format!("coverage >= {min_coverage}")))?;
    Ok(ThresholdPolicy {
        threshold: point.threshold,
        objective: Objective::MinCoverage(min_coverage),
        achieved: Some(*point),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationStatus {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationDecision {
    pub record_id: String,
    pub decision: Decision,
    pub status: AnnotationStatus,
}

impl AnnotationDecision {
    pub fn is_accepted(&self) -> bool {
        self.status == AnnotationStatus::Accepted
    }
}

pub fn annotate(record: &PredictionRecord, threshold: f64) -> AnnotationDecision {
    let decision = record.decision();
    let status = if decision.confidence >= threshold {
        AnnotationStatus::Accepted
    } else {
        AnnotationStatus::Rejected
    };
    AnnotationDecision {
        record_id: record.record_id().to_string(),
        decision,
        status,
    }
}

/// Decisions for every record, in input order.
pub fn apply_threshold(records: &[PredictionRecord], policy: &ThresholdPolicy) -> Vec<AnnotationDecision> {
    records.iter().map(|r| annotate(r, policy.threshold)).collect()
}

#[derive(Serialize)]
struct AnnotationRow<'a> {
    id: &'a str,
    class: usize,
    confidence: f64,
    status: AnnotationStatus,
}

pub fn write_annotations_jsonl<W: Write>(decisions: &[AnnotationDecision], mut out: W) -> std::io::Result<()> {
    for d in decisions {
        let row = AnnotationRow {
            id: &d.record_id,
            class: d.decision.predicted_class,
            confidence: d.decision.confidence,
            status: d.status,
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    threshold: f64,
    accepted: usize,
    correct: usize,
    accuracy: Option<f64>,
    coverage: f64,
    rejection_rate: f64,
}

/// Writes `threshold,accepted,correct,accuracy,coverage,rejection_rate`;
/// undefined accuracy is an empty cell.
pub fn write_curve_csv<W: Write>(curve: &CurveTable, out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for p in &curve.points {
        wtr.serialize(CurveRow {
            threshold: p.threshold,
            accepted: p.accepted_count,
            correct: p.correct_count,
            accuracy: p.accuracy,
            coverage: p.coverage,
            rejection_rate: p.rejection_rate,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a curve written by [`write_curve_csv`]. The dataset size is
/// recovered from any row with non-zero coverage.
pub fn read_curve_csv<R: Read>(input: R) -> Result<CurveTable> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (i, row) in rdr.deserialize::<CurveRow>().enumerate() {
        let row = row.map_err(|e| EngineError::CurveFormat {
            line: i + 2,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    let total_count = rows
        .iter()
        .find(|r| r.coverage > 0.0)
        .map(|r| (r.accepted as f64 / r.coverage).round() as usize)
        .ok_or(EngineError::EmptyDataset)?;
    let thresholds: Vec<f64> = rows.iter().map(|r| r.threshold).collect();
    ThresholdGrid::from_values(thresholds)?;
    let mut points = Vec::with_capacity(rows.len());
    for (i, r) in rows.into_iter().enumerate() {
        if r.correct > r.accepted || r.accepted > total_count {
            return Err(EngineError::CurveFormat {
                line: i + 2,
                message: "counts are inconsistent".into(),
            });
        }
        points.push(EvalPoint::from_counts(r.threshold, r.accepted, r.correct, total_count));
    }
    Ok(CurveTable { total_count, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, p1: f64, label: usize) -> PredictionRecord {
        PredictionRecord::new(id, vec![1.0 - p1, p1], Some(label), None).unwrap()
    }

    /// Ten binary records: six with confidence >= 0.9 (five correct), four below.
    fn ten_fixture() -> Vec<PredictionRecord> {
        vec![
            rec("a", 0.95, 1),
            rec("b", 0.92, 1),
            rec("c", 0.05, 0),
            rec("d", 0.99, 1),
            rec("e", 0.90, 0),
            rec("f", 0.08, 0),
            rec("g", 0.7, 1),
            rec("h", 0.4, 1),
            rec("i", 0.65, 0),
            rec("j", 0.55, 1),
        ]
    }

    #[test]
    fn ten_record_fixture_at_point_nine() {
        let p = evaluate_at_threshold(&ten_fixture(), 0.9).unwrap();
        assert_eq!((p.accepted_count, p.correct_count, p.total_count), (6, 5, 10));
        assert_eq!(p.accuracy, Some(5.0 / 6.0));
        assert_eq!(p.coverage, 0.6);
    }

    #[test]
    fn nothing_accepted_leaves_accuracy_undefined() {
        let records = vec![rec("a", 0.999, 1), rec("b", 0.2, 0)];
        let p = evaluate_at_threshold(&records, 1.0).unwrap();
        assert_eq!(p.accepted_count, 0);
        assert_eq!(p.accuracy, None);
        assert_eq!(p.rejection_rate, 1.0);
    }

    #[test]
    fn half_threshold_on_binary_is_top1() {
        let records = ten_fixture();
        let p = evaluate_at_threshold(&records, 0.5).unwrap();
        assert_eq!(p.coverage, 1.0);
        assert_eq!(p.accuracy, Some(0.7));
    }

    #[test]
    fn evaluation_errors() {
        assert_eq!(evaluate_at_threshold(&[], 0.5), Err(EngineError::EmptyDataset));
        let unlabeled = vec![PredictionRecord::new("u", vec![0.5, 0.5], None, None).unwrap()];
        assert_eq!(
            evaluate_at_threshold(&unlabeled, 0.5),
            Err(EngineError::UnlabeledRecord("u".into()))
        );
        assert_eq!(evaluate_at_threshold(&ten_fixture(), 1.5), Err(EngineError::BadThreshold(1.5)));
    }

    #[test]
    fn grid_construction() {
        let g = ThresholdGrid::from_spec(GridSpec::default_for_classes(2)).unwrap();
        assert_eq!(g.len(), 501);
        assert_eq!(g.values()[400], 0.9);
        assert_eq!(*g.values().last().unwrap(), 1.0);
        assert!(ThresholdGrid::from_spec(GridSpec { start: 0.5, stop: 0.5, step: 0.1 }).is_err());
        assert!(ThresholdGrid::from_spec(GridSpec { start: 0.5, stop: 0.9, step: 0.0 }).is_err());
        assert!(ThresholdGrid::from_values(vec![0.5]).is_err());
        assert!(ThresholdGrid::from_values(vec![0.5, 0.4]).is_err());
        let spec: GridSpec = "0.5:1.0:0.001".parse().unwrap();
        assert_eq!(spec.step, 0.001);
        assert!("0.5:1.0".parse::<GridSpec>().is_err());
    }

    #[test]
    fn single_record_two_point_grid() {
        let records = vec![rec("a", 0.8, 1)];
        let grid = ThresholdGrid::from_values(vec![0.5, 0.75]).unwrap();
        let curve = sweep_curve(&records, &grid).unwrap();
        assert_eq!(curve.points.len(), 2);
        assert_eq!(curve.points[0].accepted_count, 1);
        assert_eq!(curve.points[1].accepted_count, 1);
    }

    #[test]
    fn accuracy_selection() {
        let records = ten_fixture();
        let grid = ThresholdGrid::from_values(vec![0.5, 0.6, 0.9, 0.95, 1.0]).unwrap();
        let curve = sweep_curve(&records, &grid).unwrap();
        let low = select_threshold_for_accuracy(&curve, 0.5).unwrap();
        assert_eq!(low.threshold, 0.5);
        // 0.95 accepts {a, c, d}, all correct
        let top = select_threshold_for_accuracy(&curve, 1.0).unwrap();
        assert_eq!(top.threshold, 0.95);
        assert_eq!(top.achieved.unwrap().threshold, top.threshold);

        let wrong_at_top = vec![rec("x", 0.99, 0), rec("y", 0.6, 1)];
        let curve = sweep_curve(&wrong_at_top, &grid).unwrap();
        assert!(matches!(
            select_threshold_for_accuracy(&curve, 1.0),
            Err(EngineError::Unreachable(_))
        ));
        assert!(matches!(
            select_threshold_for_accuracy(&curve, 0.0),
            Err(EngineError::BadObjective(_))
        ));
    }

    #[test]
    fn coverage_selection_prefers_accuracy_bump() {
        // Accuracy by grid point (brute-force count):
        //   0.5 -> 5/10, 0.6 -> 5/8, 0.7 -> 3/6, 0.8 -> 2/4, 0.9 -> 1/2
        let records = vec![
            rec("a", 0.95, 1),
            rec("b", 0.92, 0),
            rec("c", 0.85, 1),
            rec("d", 0.82, 0),
            rec("e", 0.75, 1),
            rec("f", 0.72, 0),
            rec("g", 0.65, 1),
            rec("h", 0.62, 1),
            rec("i", 0.55, 0),
            rec("j", 0.45, 1),
        ];
        let grid = ThresholdGrid::from_values(vec![0.5, 0.6, 0.7, 0.8, 0.9]).unwrap();
        let curve = sweep_curve(&records, &grid).unwrap();
        let accs: Vec<_> = curve.points.iter().map(|p| p.accuracy.unwrap()).collect();
        assert_eq!(accs, vec![0.5, 0.625, 0.5, 0.5, 0.5]);
        let policy = select_threshold_for_coverage(&curve, 0.2).unwrap();
        assert_eq!(policy.threshold, 0.6);
        let all = select_threshold_for_coverage(&curve, 1.0).unwrap();
        assert_eq!(all.threshold, 0.5);
    }

    #[test]
    fn coverage_selection_tie_goes_to_larger_threshold() {
        let records = vec![rec("a", 0.95, 1), rec("b", 0.85, 1), rec("c", 0.65, 0), rec("d", 0.6, 1)];
        let grid = ThresholdGrid::from_values(vec![0.5, 0.8, 0.9]).unwrap();
        let curve = sweep_curve(&records, &grid).unwrap();
        // 0.8 and 0.9 both have accuracy 1
        let policy = select_threshold_for_coverage(&curve, 0.25).unwrap();
        assert_eq!(policy.threshold, 0.9);
    }

    #[test]
    fn coverage_unreachable_on_truncated_grid() {
        let records = ten_fixture();
        let grid = ThresholdGrid::from_values(vec![0.9, 0.95]).unwrap();
        let curve = sweep_curve(&records, &grid).unwrap();
        assert!(matches!(
            select_threshold_for_coverage(&curve, 0.9),
            Err(EngineError::Unreachable(_))
        ));
    }

    #[test]
    fn apply_extremes() {
        let records = ten_fixture();
        let all = apply_threshold(&records, &ThresholdPolicy::fixed(0.0).unwrap());
        assert!(all.iter().all(AnnotationDecision::is_accepted));
        let none = apply_threshold(&records, &ThresholdPolicy::fixed(1.0).unwrap());
        assert!(none.iter().all(|d| !d.is_accepted()));
        assert_eq!(all[3].record_id, "d");
    }

    #[test]
    fn curve_csv_round_trip() {
        let grid = ThresholdGrid::from_spec(GridSpec::default_for_classes(2)).unwrap();
        let curve = sweep_curve(&ten_fixture(), &grid).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&curve, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("threshold,accepted,correct,accuracy,coverage,rejection_rate\n"));
        assert!(text.lines().last().unwrap().starts_with("1.0,0,0,,0.0,1.0"));
        let back = read_curve_csv(buf.as_slice()).unwrap();
        assert_eq!(back, curve);
    }

    #[test]
    fn annotation_jsonl_layout() {
        let records = vec![rec("a", 0.8, 1)];
        let decisions = apply_threshold(&records, &ThresholdPolicy::fixed(0.9).unwrap());
        let mut buf = Vec::new();
        write_annotations_jsonl(&decisions, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"id\":\"a\",\"class\":1,\"confidence\":0.8,\"status\":\"rejected\"}\n"
        );
    }
}
