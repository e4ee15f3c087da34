//! Line-oriented ingestion and serialization of prediction records.
//!
//! Two interchangeable encodings are supported. JSONL carries one object per
//! line:
//!
//! ```text
//! {"id": "s1", "probs": [0.2, 0.8], "label": 1, "species": "Acer rubrum",
//!  "date": "1931-05-02", "nativity": "native", "growth_form": null, "wetland": "FAC"}
//! ```
//!
//! CSV has a mandatory header `id,prob_0,..,prob_{K-1},label,species,date,nativity,growth_form,wetland`;
//! empty cells are nulls.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    CollectionDate, GrowthForm, ModelError, Nativity, PredictionRecord, SpecimenMeta, WetlandStatus,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{source_name}: no well-formed records")]
    EmptyInput { source_name: String },
    #[error("{source_name}:{line}: expected {expected} probabilities, found {found}")]
    InconsistentClassCount {
        source_name: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{source_name}: bad header: {message}")]
    BadHeader { source_name: String, message: String },
    #[error("{source_name}: {source}")]
    Io {
        source_name: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}: {source}")]
    Csv {
        source_name: String,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl InputFormat {
    /// `.csv` means CSV, anything else JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Jsonl,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub format: InputFormat,
    /// Used to prefix error messages.
    pub source_name: String,
}

impl IngestConfig {
    pub fn jsonl(source_name: impl Into<String>) -> Self {
        IngestConfig {
            format: InputFormat::Jsonl,
            source_name: source_name.into(),
        }
    }

    pub fn csv(source_name: impl Into<String>) -> Self {
        IngestConfig {
            format: InputFormat::Csv,
            source_name: source_name.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MalformedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetReport {
    pub record_count: usize,
    pub class_count: usize,
    pub labeled_count: usize,
    pub malformed_count: usize,
    pub malformed: Vec<MalformedLine>,
    /// Count of true labels per class index.
    pub label_histogram: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<PredictionRecord>,
    pub report: DatasetReport,
}

#[derive(Debug, Deserialize)]
struct JsonRecord {
    id: String,
    probs: Vec<f64>,
    #[serde(default)]
    label: Option<usize>,
    #[serde(default)]
    species: Option<String>,
    #[serde(default)]
    date: Option<String>,
    #[serde(default)]
    nativity: Option<String>,
    #[serde(default)]
    growth_form: Option<String>,
    #[serde(default)]
    wetland: Option<String>,
}

#[derive(Serialize)]
struct JsonRecordOut<'a> {
    id: &'a str,
    probs: &'a [f64],
    label: Option<usize>,
    species: Option<&'a str>,
    date: Option<String>,
    nativity: Option<&'static str>,
    growth_form: Option<&'static str>,
    wetland: Option<&'static str>,
}

struct RawFields<'a> {
    species: Option<&'a str>,
    date: Option<&'a str>,
    nativity: Option<&'a str>,
    growth_form: Option<&'a str>,
    wetland: Option<&'a str>,
}

fn build_specimen(raw: RawFields<'_>) -> Result<Option<SpecimenMeta>, ModelError> {
    let Some(species) = raw.species else {
        if raw.date.is_some() || raw.nativity.is_some() || raw.growth_form.is_some() || raw.wetland.is_some() {
            return Err(ModelError::IncompleteSpecimen("specimen fields given without species".into()));
        }
        return Ok(None);
    };
    let date: CollectionDate = raw
        .date
        .ok_or_else(|| ModelError::IncompleteSpecimen(format!("species {species:?} has no date")))?
        .parse()?;
    let mut meta = SpecimenMeta::new(species, date);
    meta.nativity = raw.nativity.map(str::parse::<Nativity>).transpose()?;
    meta.growth_form = raw.growth_form.map(str::parse::<GrowthForm>).transpose()?;
    meta.wetland_status = raw.wetland.map(str::parse::<WetlandStatus>).transpose()?;
    Ok(Some(meta))
}

struct Collector {
    source_name: String,
    class_count: Option<usize>,
    records: Vec<PredictionRecord>,
    malformed: Vec<MalformedLine>,
}

impl Collector {
    fn new(source_name: &str) -> Self {
        Collector {
            source_name: source_name.to_string(),
            class_count: None,
            records: Vec::new(),
            malformed: Vec::new(),
        }
    }

    fn check_width(&mut self, line: usize, found: usize) -> Result<(), IngestError> {
        match self.class_count {
            Some(expected) if expected != found => Err(IngestError::InconsistentClassCount {
                source_name: self.source_name.clone(),
                line,
                expected,
                found,
            }),
            _ => Ok(()),
        }
    }

    fn accept(&mut self, record: PredictionRecord) {
        self.class_count.get_or_insert(record.class_count());
        self.records.push(record);
    }

    fn reject(&mut self, line: usize, reason: impl ToString) {
        self.malformed.push(MalformedLine {
            line,
            reason: reason.to_string(),
        });
    }

    fn finish(self) -> Result<Dataset, IngestError> {
        let Some(class_count) = self.class_count else {
            return Err(IngestError::EmptyInput {
                source_name: self.source_name,
            });
        };
        let mut label_histogram = vec![0; class_count];
        let mut labeled_count = 0;
        for label in self.records.iter().filter_map(PredictionRecord::true_label) {
            label_histogram[label] += 1;
            labeled_count += 1;
        }
        let report = DatasetReport {
            record_count: self.records.len(),
            class_count,
            labeled_count,
            malformed_count: self.malformed.len(),
            malformed: self.malformed,
            label_histogram,
        };
        Ok(Dataset {
            records: self.records,
            report,
        })
    }
}

/// Reads every record from `reader`. Malformed lines are skipped and listed
/// in the report; a vector whose length disagrees with the first record's is
/// a hard error.
pub fn ingest_predictions<R: BufRead>(reader: R, config: &IngestConfig) -> Result<Dataset, IngestError> {
    match config.format {
        InputFormat::Jsonl => ingest_jsonl(reader, &config.source_name),
        InputFormat::Csv => ingest_csv(reader, &config.source_name),
    }
}

pub fn ingest_path(path: &Path) -> Result<Dataset, IngestError> {
    let source_name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        source_name: source_name.clone(),
        source,
    })?;
    let config = IngestConfig {
        format: InputFormat::from_path(path),
        source_name,
    };
    ingest_predictions(std::io::BufReader::new(file), &config)
}

fn ingest_jsonl<R: BufRead>(mut reader: R, source_name: &str) -> Result<Dataset, IngestError> {
    let mut collector = Collector::new(source_name);
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let read = reader.read_line(&mut buf).map_err(|source| IngestError::Io {
            source_name: source_name.to_string(),
            source,
        })?;
        if read == 0 {
            break;
        }
        line_no += 1;
        let text = buf.trim();
        if text.is_empty() {
            continue;
        }
        let raw: JsonRecord = match serde_json::from_str(text) {
            Ok(raw) => raw,
            Err(e) => {
                collector.reject(line_no, e);
                continue;
            }
        };
        collector.check_width(line_no, raw.probs.len())?;
        let specimen = build_specimen(RawFields {
            species: raw.species.as_deref(),
            date: raw.date.as_deref(),
            nativity: raw.nativity.as_deref(),
            growth_form: raw.growth_form.as_deref(),
            wetland: raw.wetland.as_deref(),
        });
        match specimen.and_then(|s| PredictionRecord::new(raw.id, raw.probs, raw.label, s)) {
            Ok(record) => collector.accept(record),
            Err(e) => collector.reject(line_no, e),
        }
    }
    collector.finish()
}

struct CsvLayout {
    id: usize,
    probs: Vec<usize>,
    label: Option<usize>,
    species: Option<usize>,
    date: Option<usize>,
    nativity: Option<usize>,
    growth_form: Option<usize>,
    wetland: Option<usize>,
}

impl CsvLayout {
    fn from_header(header: &csv::StringRecord, source_name: &str) -> Result<Self, IngestError> {
        let bad = |message: String| IngestError::BadHeader {
            source_name: source_name.to_string(),
            message,
        };
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let id = find("id").ok_or_else(|| bad("missing `id` column".into()))?;
        let mut probs = Vec::new();
        while let Some(idx) = find(&format!("prob_{}", probs.len())) {
            probs.push(idx);
        }
        if probs.len() < 2 {
            return Err(bad(format!("need prob_0 and prob_1 columns, found {}", probs.len())));
        }
        Ok(CsvLayout {
            id,
            probs,
            label: find("label"),
            species: find("species"),
            date: find("date"),
            nativity: find("nativity"),
            growth_form: find("growth_form"),
            wetland: find("wetland"),
        })
    }
}

fn cell(row: &csv::StringRecord, idx: Option<usize>) -> Option<&str> {
    idx.and_then(|i| row.get(i)).map(str::trim).filter(|s| !s.is_empty())
}

fn parse_csv_row(row: &csv::StringRecord, layout: &CsvLayout) -> Result<PredictionRecord, String> {
    let id = cell(row, Some(layout.id)).ok_or("empty id")?;
    let probs = layout
        .probs
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            cell(row, Some(i))
                .ok_or_else(|| format!("empty prob_{k}"))?
                .parse::<f64>()
                .map_err(|e| format!("prob_{k}: {e}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let label = cell(row, layout.label)
        .map(|s| s.parse::<usize>().map_err(|e| format!("label: {e}")))
        .transpose()?;
    let specimen = build_specimen(RawFields {
        species: cell(row, layout.species),
        date: cell(row, layout.date),
        nativity: cell(row, layout.nativity),
        growth_form: cell(row, layout.growth_form),
        wetland: cell(row, layout.wetland),
    })
    .map_err(|e| e.to_string())?;
    PredictionRecord::new(id, probs, label, specimen).map_err(|e| e.to_string())
}

fn ingest_csv<R: BufRead>(reader: R, source_name: &str) -> Result<Dataset, IngestError> {
    let csv_err = |source| IngestError::Csv {
        source_name: source_name.to_string(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.is_empty() {
        return Err(IngestError::EmptyInput {
            source_name: source_name.to_string(),
        });
    }
    let layout = CsvLayout::from_header(&header, source_name)?;
    let mut collector = Collector::new(source_name);
    for row in rdr.records() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    return Err(csv_err(e));
                }
                collector.reject(line, e);
                continue;
            }
        };
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if row.len() != header.len() {
            collector.reject(line, format!("expected {} fields, found {}", header.len(), row.len()));
            continue;
        }
        match parse_csv_row(&row, &layout) {
            Ok(record) => collector.accept(record),
            Err(reason) => collector.reject(line, reason),
        }
    }
    collector.finish()
}

pub fn write_jsonl<W: Write>(records: &[PredictionRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        let spec = r.specimen();
        let row = JsonRecordOut {
            id: r.record_id(),
            probs: r.probabilities(),
            label: r.true_label(),
            species: spec.map(|s| s.species.as_str()),
            date: spec.map(|s| s.collection_date.to_string()),
            nativity: spec.and_then(|s| s.nativity).map(Nativity::as_str),
            growth_form: spec.and_then(|s| s.growth_form).map(GrowthForm::as_str),
            wetland: spec.and_then(|s| s.wetland_status).map(WetlandStatus::as_str),
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_csv<W: Write>(records: &[PredictionRecord], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let classes = records.first().map_or(2, PredictionRecord::class_count);
    let mut header = vec!["id".to_string()];
    header.extend((0..classes).map(|k| format!("prob_{k}")));
    header.extend(["label", "species", "date", "nativity", "growth_form", "wetland"].map(String::from));
    wtr.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for r in records {
        row.clear();
        row.push(r.record_id().to_string());
        row.extend(r.probabilities().iter().map(|p| format!("{p:?}")));
        row.push(r.true_label().map(|l| l.to_string()).unwrap_or_default());
        let spec = r.specimen();
        row.push(spec.map(|s| s.species.clone()).unwrap_or_default());
        row.push(spec.map(|s| s.collection_date.to_string()).unwrap_or_default());
        row.push(spec.and_then(|s| s.nativity).map(|v| v.to_string()).unwrap_or_default());
        row.push(spec.and_then(|s| s.growth_form).map(|v| v.to_string()).unwrap_or_default());
        row.push(spec.and_then(|s| s.wetland_status).map(|v| v.to_string()).unwrap_or_default());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
