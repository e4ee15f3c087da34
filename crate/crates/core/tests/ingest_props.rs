use proptest::prelude::*;
use selcov::ingest::{ingest_predictions, write_csv, write_jsonl, IngestConfig, IngestError};
use selcov::model::{CollectionDate, GrowthForm, Nativity, PredictionRecord, SpecimenMeta, WetlandStatus};

fn specimen_strategy() -> impl Strategy<Value = Option<SpecimenMeta>> {
    let traits = (
        prop::option::of(prop_oneof![Just(Nativity::Native), Just(Nativity::Introduced)]),
        prop::option::of(prop_oneof![
            Just(GrowthForm::ForbHerb),
            Just(GrowthForm::TreeShrubSubshrub),
            Just(GrowthForm::Vine),
            Just(GrowthForm::Woody),
            Just(GrowthForm::Herbaceous),
        ]),
        prop::option::of(prop_oneof![
            Just(WetlandStatus::Obl),
            Just(WetlandStatus::Facw),
            Just(WetlandStatus::Fac),
            Just(WetlandStatus::Facu),
            Just(WetlandStatus::Upl),
        ]),
    );
    prop::option::of(("[A-Z][a-z]{2,8} [a-z]{3,10}", 1800i32..2024, 1u32..=365, traits).prop_map(
        |(species, year, ordinal, (nativity, growth_form, wetland_status))| {
            let mut meta = SpecimenMeta::new(species, CollectionDate::from_ordinal(year, ordinal).unwrap());
            meta.nativity = nativity;
            meta.growth_form = growth_form;
            meta.wetland_status = wetland_status;
            meta
        },
    ))
}

fn records_strategy() -> impl Strategy<Value = Vec<PredictionRecord>> {
    (2usize..6).prop_flat_map(|k| {
        prop::collection::vec(
            (
                prop::collection::vec(0.001f64..1.0, k),
                prop::option::of(0..k),
                specimen_strategy(),
            ),
            1..30,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (weights, label, specimen))| {
                    let total: f64 = weights.iter().sum();
                    let probs = weights.iter().map(|w| w / total).collect();
                    PredictionRecord::new(format!("id-{i}"), probs, label, specimen).unwrap()
                })
                .collect()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn jsonl_round_trip(records in records_strategy()) {
        let mut buf = Vec::new();
        write_jsonl(&records, &mut buf).unwrap();
        let ds = ingest_predictions(buf.as_slice(), &IngestConfig::jsonl("mem")).unwrap();
        prop_assert_eq!(ds.report.malformed_count, 0);
        prop_assert_eq!(ds.report.record_count, records.len());
        prop_assert_eq!(ds.records, records);
    }

    #[test]
    fn csv_round_trip(records in records_strategy()) {
        let mut buf = Vec::new();
        write_csv(&records, &mut buf).unwrap();
        let ds = ingest_predictions(buf.as_slice(), &IngestConfig::csv("mem")).unwrap();
        prop_assert_eq!(ds.report.malformed_count, 0);
        prop_assert_eq!(ds.records, records);
    }

    #[test]
    fn label_histogram_counts_labels(records in records_strategy()) {
        let mut buf = Vec::new();
        write_jsonl(&records, &mut buf).unwrap();
        let ds = ingest_predictions(buf.as_slice(), &IngestConfig::jsonl("mem")).unwrap();
        let labeled = records.iter().filter(|r| r.true_label().is_some()).count();
        prop_assert_eq!(ds.report.labeled_count, labeled);
        prop_assert_eq!(ds.report.label_histogram.iter().sum::<usize>(), labeled);
        prop_assert_eq!(ds.report.class_count, records[0].class_count());
    }
}

#[test]
fn malformed_lines_are_counted_with_line_numbers() {
    let text = concat!(
        "{\"id\":\"a\",\"probs\":[0.7,0.3],\"label\":0}\n",
        "not json\n",
        "{\"id\":\"b\",\"probs\":[0.7,0.2],\"label\":0}\n",
        "\n",
        "{\"id\":\"c\",\"probs\":[0.1,0.9],\"label\":5}\n",
        "{\"id\":\"d\",\"probs\":[0.5,0.5],\"species\":\"x\",\"date\":\"2001-02-29\"}\n",
        "{\"id\":\"e\",\"probs\":[0.4,0.6]}\n",
    );
    let ds = ingest_predictions(text.as_bytes(), &IngestConfig::jsonl("in.jsonl")).unwrap();
    assert_eq!(ds.report.record_count, 2);
    let lines: Vec<usize> = ds.report.malformed.iter().map(|m| m.line).collect();
    assert_eq!(lines, vec![2, 3, 5, 6]);
    assert_eq!(ds.report.malformed_count, 4);
}

#[test]
fn class_count_mismatch_is_fatal() {
    let text = "{\"id\":\"a\",\"probs\":[0.7,0.3]}\n{\"id\":\"b\",\"probs\":[0.7,0.2,0.1]}\n";
    match ingest_predictions(text.as_bytes(), &IngestConfig::jsonl("in.jsonl")) {
        Err(IngestError::InconsistentClassCount { line, expected, found, .. }) => {
            assert_eq!((line, expected, found), (2, 2, 3));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        ingest_predictions("garbage\n".as_bytes(), &IngestConfig::jsonl("x")),
        Err(IngestError::EmptyInput { .. })
    ));
}

#[test]
fn leap_days_are_valid() {
    let text = "id,prob_0,prob_1,label,species,date\na,0.2,0.8,1,Acer rubrum,2000-02-29\n";
    let ds = ingest_predictions(text.as_bytes(), &IngestConfig::csv("in.csv")).unwrap();
    let date = ds.records[0].specimen().unwrap().collection_date;
    assert_eq!((date.year(), date.ordinal()), (2000, 60));
}
