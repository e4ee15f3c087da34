use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    data_err, reproduction_command, AnnotateArgs, CliError, CurveArgs, ReplicateArgs, SelectArgs, ShiftArgs,
    SubsetsArgs, SynthArgs,
};
use crate::chart::render_curve_svg;
use crate::engine::{
    apply_threshold, read_curve_csv, select_threshold_for_accuracy, select_threshold_for_coverage, sweep_curve,
    write_annotations_jsonl, write_curve_csv, EngineError, GridSpec, ThresholdGrid, ThresholdPolicy,
};
use crate::ingest::{ingest_path, write_jsonl, Dataset};
use crate::phenology::{
    accepted_event_observations, aggregate_shifts, categorize_species, collect_species_traits, read_reference_csv,
    read_shift_csv, read_traits_csv, replication_report, shifts_by_species, species_mean_doy, subset_welch_table,
    write_shift_csv, write_traits_csv, EventTask, MeanOver, PhenologyError, ShiftFilters,
};
use crate::synth::{
    analytic_curve_oracle, generate_synthetic_phenology, generate_synthetic_predictions, write_oracle_csv,
    CalibrationSpec, PhenoSpec,
};

/// Default acceptance threshold for shift analyses.
const DEFAULT_SHIFT_THRESHOLD: f64 = 0.5;

pub(super) struct Outcome {
    pub summary: Vec<String>,
    pub written: Vec<PathBuf>,
    pub command: String,
}

type CmdResult = Result<Outcome, CliError>;

struct Output {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| data_err(format!("{}: {e}", dir.display())))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    /// Pretty JSON with the effective config and reproduction command added.
    fn write_json<A: Serialize>(&mut self, name: &str, command: &str, config: &A, body: Value) -> Result<(), CliError> {
        let mut doc = match body {
            Value::Object(map) => map,
            other => {
                let mut map = serde_json::Map::new();
                map.insert("result".into(), other);
                map
            }
        };
        doc.insert("command".into(), Value::String(command.to_string()));
        doc.insert("config".into(), serde_json::to_value(config).map_err(data_err)?);
        let mut text = serde_json::to_string_pretty(&Value::Object(doc)).map_err(data_err)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn finish(self, command: String, summary: Vec<String>) -> CmdResult {
        Ok(Outcome {
            summary,
            written: self.written,
            command,
        })
    }
}

fn load(path: &Path) -> Result<Dataset, CliError> {
    ingest_path(path).map_err(data_err)
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn check_threshold(flag: &str, t: f64) -> Result<f64, CliError> {
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(CliError::Usage(format!("{flag}: threshold {t} outside [0, 1]")))
    }
}

fn policy_threshold(path: &Path) -> Result<f64, CliError> {
    let doc: Value = serde_json::from_reader(open(path)?).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    let t = doc
        .get("threshold")
        .and_then(Value::as_f64)
        .ok_or_else(|| data_err(format!("{}: no numeric `threshold` field", path.display())))?;
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(data_err(format!("{}: threshold {t} outside [0, 1]", path.display())))
    }
}

fn engine_err(context: &Path, e: EngineError) -> CliError {
    match e {
        EngineError::BadObjective(_) | EngineError::BadThreshold(_) | EngineError::BadGrid(_) => {
            CliError::Usage(e.to_string())
        }
        other => data_err(format!("{}: {other}", context.display())),
    }
}

fn malformed_note(ds: &Dataset) -> Option<String> {
    let first = ds.report.malformed.first()?;
    Some(format!(
        "skipped {} malformed line(s); first at line {}: {}",
        ds.report.malformed_count, first.line, first.reason
    ))
}

pub(super) fn curve(a: CurveArgs) -> CmdResult {
    let command = reproduction_command("curve", &a);
    let ds = load(&a.input)?;
    let spec = match &a.grid {
        Some(g) => g
            .parse::<GridSpec>()
            .map_err(|e| CliError::Usage(format!("--grid: {e}")))?,
        None => GridSpec::default_for_classes(ds.report.class_count),
    };
    let grid = ThresholdGrid::from_spec(spec).map_err(|e| CliError::Usage(format!("--grid: {e}")))?;
    let curve = sweep_curve(&ds.records, &grid).map_err(|e| engine_err(&a.input, e))?;

    let mut out = Output::new(&a.out)?;
    let mut csv = Vec::new();
    write_curve_csv(&curve, &mut csv).map_err(data_err)?;
    out.write("curve.csv", &csv)?;
    out.write("curve.svg", render_curve_svg(&curve, &a.title).as_bytes())?;
    out.write_json(
        "curve.json",
        &command,
        &a,
        json!({
            "grid": spec.to_string(),
            "points": curve.points.len(),
            "dataset": ds.report,
        }),
    )?;
    let mut summary = vec![format!(
        "{} records, {} classes, {} thresholds",
        ds.report.record_count,
        ds.report.class_count,
        curve.points.len()
    )];
    summary.extend(malformed_note(&ds));
    out.finish(command, summary)
}

fn describe_policy(policy: &ThresholdPolicy) -> String {
    match policy.achieved {
        Some(p) => format!(
            "threshold {} accuracy {} coverage {:.4} rejection {:.4}",
            p.threshold,
            p.accuracy.map_or("undefined".to_string(), |a| format!("{a:.4}")),
            p.coverage,
            p.rejection_rate
        ),
        None => format!("threshold {}", policy.threshold),
    }
}

pub(super) fn select(a: SelectArgs) -> CmdResult {
    let command = reproduction_command("select", &a);
    let curve = read_curve_csv(open(&a.curve)?).map_err(|e| engine_err(&a.curve, e))?;
    let o = &a.objective;
    let policy = match (o.target_accuracy, o.min_coverage, o.threshold) {
        (Some(acc), _, _) => select_threshold_for_accuracy(&curve, acc),
        (_, Some(cov), _) => select_threshold_for_coverage(&curve, cov),
        (_, _, Some(t)) => ThresholdPolicy::fixed(t).map(|mut p| {
            p.achieved = curve.point_at(t).copied();
            p
        }),
        _ => return Err(CliError::Usage("one of --target-accuracy, --min-coverage, --threshold is required".into())),
    }
    .map_err(|e| engine_err(&a.curve, e))?;

    let mut out = Output::new(&a.out)?;
    out.write_json("policy.json", &command, &a, serde_json::to_value(policy).map_err(data_err)?)?;
    out.finish(command, vec![describe_policy(&policy)])
}

pub(super) fn annotate(a: AnnotateArgs) -> CmdResult {
    let command = reproduction_command("annotate", &a);
    let threshold = match (&a.policy.policy, a.policy.threshold) {
        (Some(path), _) => policy_threshold(path)?,
        (None, Some(t)) => check_threshold("--threshold", t)?,
        (None, None) => return Err(CliError::Usage("one of --policy, --threshold is required".into())),
    };
    let ds = load(&a.input)?;
    let policy = ThresholdPolicy::fixed(threshold).map_err(|e| engine_err(&a.input, e))?;
    let decisions = apply_threshold(&ds.records, &policy);
    let accepted = decisions.iter().filter(|d| d.is_accepted()).count();
    let total = decisions.len();

    let mut out = Output::new(&a.out)?;
    let mut jsonl = Vec::new();
    write_annotations_jsonl(&decisions, &mut jsonl).map_err(data_err)?;
    out.write("annotations.jsonl", &jsonl)?;
    out.write_json(
        "annotate_summary.json",
        &command,
        &a,
        json!({
            "threshold": threshold,
            "records": total,
            "accepted": accepted,
            "rejected": total - accepted,
            "coverage": accepted as f64 / total as f64,
            "dataset": ds.report,
        }),
    )?;
    let mut summary = vec![format!(
        "threshold {threshold}: accepted {accepted} of {total}, rejected {}",
        total - accepted
    )];
    summary.extend(malformed_note(&ds));
    out.finish(command, summary)
}

fn specimen_species(ds: &Dataset) -> BTreeSet<String> {
    ds.records
        .iter()
        .filter_map(|r| r.specimen().map(|s| s.species.clone()))
        .collect()
}

pub(super) fn replicate(a: ReplicateArgs) -> CmdResult {
    let command = reproduction_command("replicate", &a);
    let ds = load(&a.input)?;
    let source = a.reference.display().to_string();
    let (reference, mut grouping) = read_reference_csv(open(&a.reference)?, &source).map_err(data_err)?;
    if reference.is_empty() {
        return Err(data_err(PhenologyError::EmptyReference));
    }
    for t in collect_species_traits(ds.records.iter().filter_map(|r| r.specimen()), &[]) {
        if let Some(n) = t.nativity {
            grouping.entry(t.species).or_insert(n);
        }
    }
    let task: EventTask = a.task.into();
    let universe: Vec<&str> = reference.iter().map(|e| e.species.as_str()).collect();

    let mut results = Vec::new();
    let mut summary = Vec::new();
    for &t in &a.thresholds.0 {
        let obs = accepted_event_observations(&ds.records, t, a.event_class, task);
        let estimates = species_mean_doy(universe.iter().copied(), &obs);
        match replication_report(&estimates, &reference, &grouping) {
            Ok(report) => {
                let fmt_opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}"));
                summary.push(format!(
                    "threshold {t}: mean abs error {:.2} days over {} species, {} empty, group difference {} (reference {})",
                    report.mean_abs_doy_error,
                    report.overlap_count,
                    report.empty_count,
                    fmt_opt(report.group_difference_days),
                    fmt_opt(report.reference_group_difference_days),
                ));
                results.push(json!({"threshold": t, "observations": obs.len(), "report": report, "error": null}));
            }
            Err(e @ PhenologyError::NoOverlap) => {
                summary.push(format!("threshold {t}: {e}"));
                results.push(json!({"threshold": t, "observations": obs.len(), "report": null, "error": e.to_string()}));
            }
            Err(e) => return Err(data_err(e)),
        }
    }
    let mut out = Output::new(&a.out)?;
    out.write_json(
        "replication.json",
        &command,
        &a,
        json!({
            "reference_species": reference.len(),
            "results": results,
            "dataset": ds.report,
        }),
    )?;
    out.finish(command, summary)
}

pub(super) fn shift(a: ShiftArgs) -> CmdResult {
    let threshold = match (&a.policy, a.threshold) {
        (Some(path), _) => policy_threshold(path)?,
        (None, t) => check_threshold("--threshold", t.unwrap_or(DEFAULT_SHIFT_THRESHOLD))?,
    };
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha: {} outside (0, 1)", a.alpha)));
    }
    let mut a = a;
    if a.policy.is_none() {
        a.threshold = Some(threshold);
    }
    let command = reproduction_command("shift", &a);
    let filters = ShiftFilters {
        min_samples: a.min_samples,
        min_per_era: a.min_per_era,
        era_boundary: a.era,
        alpha: a.alpha,
    };
    let mean_over = if a.significant_only {
        MeanOver::SignificantOnly
    } else {
        MeanOver::AllAnalyzed
    };

    let ds = load(&a.input)?;
    let obs = accepted_event_observations(&ds.records, threshold, a.event_class, EventTask::Flowering);
    let estimates = shifts_by_species(specimen_species(&ds), &obs, &filters);
    let aggregate = aggregate_shifts(&estimates, mean_over);
    let traits = collect_species_traits(ds.records.iter().filter_map(|r| r.specimen()), &obs);

    let mut out = Output::new(&a.out)?;
    let mut buf = Vec::new();
    write_shift_csv(&estimates, &mut buf).map_err(data_err)?;
    out.write("shifts.csv", &buf)?;
    buf.clear();
    write_traits_csv(&traits, &mut buf).map_err(data_err)?;
    out.write("species_traits.csv", &buf)?;
    out.write_json(
        "shift_summary.json",
        &command,
        &a,
        json!({
            "threshold": threshold,
            "observations": obs.len(),
            "filters": filters,
            "n_filtered": aggregate.n_filtered,
            "aggregate": aggregate,
            "dataset": ds.report,
        }),
    )?;
    let mean = aggregate
        .mean_shift_days_per_decade
        .map_or("n/a".to_string(), |m| format!("{m:.4} days/decade"));
    let summary = vec![
        format!(
            "{} species: {} analyzed, {} filtered",
            aggregate.n_species, aggregate.n_analyzed, aggregate.n_filtered
        ),
        format!(
            "{} significant ({} earlier, {} later), {} without shift; mean shift {mean}",
            aggregate.n_significant, aggregate.n_earlier, aggregate.n_later, aggregate.n_none
        ),
    ];
    out.finish(command, summary)
}

pub(super) fn subsets(a: SubsetsArgs) -> CmdResult {
    let command = reproduction_command("subsets", &a);
    let shifts = read_shift_csv(open(&a.shifts)?, &a.shifts.display().to_string()).map_err(data_err)?;
    let traits = read_traits_csv(open(&a.traits)?, &a.traits.display().to_string()).map_err(data_err)?;
    let reports: Vec<_> = a
        .characteristics
        .0
        .iter()
        .map(|&c| subset_welch_table(&shifts, &categorize_species(&traits, c)))
        .collect();
    let mut summary = Vec::new();
    for r in &reports {
        for c in &r.comparisons {
            summary.push(format!(
                "{}: {} {} by {:.4} days/year, p = {:.3e}",
                c.characteristic,
                c.comparison,
                c.direction.as_str(),
                c.magnitude,
                c.p
            ));
        }
        for s in &r.skipped {
            summary.push(format!(
                "{}: {} vs {} skipped ({})",
                r.characteristic, s.category_a, s.category_b, s.reason
            ));
        }
    }
    let mut out = Output::new(&a.out)?;
    out.write_json("subsets.json", &command, &a, json!({ "reports": reports }))?;
    out.finish(command, summary)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthFile {
    calibration: Option<CalibrationSpec>,
    phenology: Option<PhenoSpec>,
}

pub(super) fn synth(a: SynthArgs) -> CmdResult {
    let source = a.spec.display().to_string();
    let text = std::fs::read_to_string(&a.spec).map_err(|e| data_err(format!("{source}: {e}")))?;
    let mut spec: SynthFile = toml::from_str(&text).map_err(|e| data_err(format!("{source}: {e}")))?;
    if spec.calibration.is_none() && spec.phenology.is_none() {
        return Err(data_err(format!("{source}: needs a [calibration] or [phenology] table")));
    }
    let mut a = a;
    match a.seed {
        Some(seed) => {
            if let Some(c) = spec.calibration.as_mut() {
                c.seed = seed;
            }
            if let Some(p) = spec.phenology.as_mut() {
                p.seed = seed;
            }
        }
        None => {
            let seeds: BTreeSet<u64> = spec
                .calibration
                .iter()
                .map(|c| c.seed)
                .chain(spec.phenology.iter().map(|p| p.seed))
                .collect();
            if seeds.len() == 1 {
                a.seed = seeds.into_iter().next();
            }
        }
    }
    let mut command = reproduction_command("synth", &a);
    if a.seed.is_none() {
        let c = spec.calibration.as_ref().map_or(0, |c| c.seed);
        let p = spec.phenology.as_ref().map_or(0, |p| p.seed);
        command.push_str(&format!("  # seeds: calibration {c}, phenology {p}"));
    }

    let mut out = Output::new(&a.out)?;
    let mut counts = BTreeMap::new();
    let mut summary = Vec::new();
    let mut buf = Vec::new();
    if let Some(c) = &spec.calibration {
        let records = generate_synthetic_predictions(c).map_err(|e| data_err(format!("{source}: {e}")))?;
        write_jsonl(&records, &mut buf).map_err(data_err)?;
        out.write("calibration_predictions.jsonl", &buf)?;
        buf.clear();
        let grid = ThresholdGrid::from_spec(GridSpec::default_for_classes(c.classes)).map_err(data_err)?;
        let oracle = analytic_curve_oracle(c, &grid).map_err(|e| data_err(format!("{source}: {e}")))?;
        write_oracle_csv(&oracle, &mut buf).map_err(data_err)?;
        out.write("calibration_oracle.csv", &buf)?;
        buf.clear();
        counts.insert("calibration_records", records.len());
        summary.push(format!("calibration: {} records, seed {}", records.len(), c.seed));
    }
    if let Some(p) = &spec.phenology {
        let data = generate_synthetic_phenology(p).map_err(|e| data_err(format!("{source}: {e}")))?;
        write_jsonl(&data.records(), &mut buf).map_err(data_err)?;
        out.write("phenology_predictions.jsonl", &buf)?;
        buf.clear();
        data.write_truth_csv(&mut buf).map_err(data_err)?;
        out.write("phenology_truth.csv", &buf)?;
        buf.clear();
        data.write_reference_csv(&mut buf).map_err(data_err)?;
        out.write("phenology_reference.csv", &buf)?;
        buf.clear();
        counts.insert("phenology_records", data.specimens.len());
        counts.insert("phenology_species", data.species.len());
        summary.push(format!(
            "phenology: {} records over {} species, seed {}",
            data.specimens.len(),
            data.species.len(),
            p.seed
        ));
    }
    out.write_json("synth.json", &command, &a, json!({ "spec": spec, "counts": counts }))?;
    out.finish(command, summary)
}
