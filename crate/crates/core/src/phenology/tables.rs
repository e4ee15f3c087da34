//! CSV encodings of the species-level tables.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{PhenologyError, Result, ShiftClass, SpeciesDoYEstimate, SpeciesShiftEstimate, SpeciesTraits};
use crate::model::Nativity;

fn table_error(source_name: &str, line: usize, message: impl ToString) -> PhenologyError {
    PhenologyError::Table {
        source_name: source_name.to_string(),
        line,
        message: message.to_string(),
    }
}

fn float_cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:?}")).unwrap_or_default()
}

fn read_rows<T: for<'de> Deserialize<'de>, R: Read>(input: R, source_name: &str) -> Result<Vec<(usize, T)>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in rdr.deserialize::<T>() {
        match row {
            Ok(r) => rows.push((rows.len() + 2, r)),
            Err(e) => {
                let line = e.position().map_or(rows.len() + 2, |p| p.line() as usize);
                return Err(table_error(source_name, line, e));
            }
        }
    }
    Ok(rows)
}

#[derive(Serialize, Deserialize)]
struct ShiftRow {
    species: String,
    slope_dpy: Option<f64>,
    slope_dpd: Option<f64>,
    p: Option<f64>,
    n: usize,
    n_pre: usize,
    n_post: usize,
    class: String,
}

/// Header `species,slope_dpy,slope_dpd,p,n,n_pre,n_post,class`.
pub fn write_shift_csv<W: Write>(estimates: &[SpeciesShiftEstimate], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["species", "slope_dpy", "slope_dpd", "p", "n", "n_pre", "n_post", "class"])?;
    for e in estimates {
        wtr.write_record([
            e.species.clone(),
            float_cell(e.slope_days_per_year),
            float_cell(e.slope_days_per_decade),
            float_cell(e.p_value),
            e.n.to_string(),
            e.n_pre.to_string(),
            e.n_post.to_string(),
            e.classification.as_str().to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a shift table. Rows with a slope but no per-decade value get one
/// derived; a non-filtered row must carry slope and p.
pub fn read_shift_csv<R: Read>(input: R, source_name: &str) -> Result<Vec<SpeciesShiftEstimate>> {
    read_rows::<ShiftRow, R>(input, source_name)?
        .into_iter()
        .map(|(line, r)| {
            let classification: ShiftClass = r.class.trim().parse().map_err(|e| table_error(source_name, line, e))?;
            if classification != ShiftClass::Filtered && (r.slope_dpy.is_none() || r.p.is_none()) {
                return Err(table_error(source_name, line, "analyzed species needs slope_dpy and p"));
            }
            Ok(SpeciesShiftEstimate {
                species: r.species,
                slope_days_per_year: r.slope_dpy,
                slope_days_per_decade: r.slope_dpd.or(r.slope_dpy.map(|s| 10.0 * s)),
                p_value: r.p,
                n: r.n,
                n_pre: r.n_pre,
                n_post: r.n_post,
                classification,
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct TraitsRow {
    species: String,
    n: usize,
    mean_doy: Option<f64>,
    std_doy: Option<f64>,
    nativity: Option<String>,
    growth_form: Option<String>,
    wetland: Option<String>,
}

/// Header `species,n,mean_doy,std_doy,nativity,growth_form,wetland`.
pub fn write_traits_csv<W: Write>(traits: &[SpeciesTraits], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["species", "n", "mean_doy", "std_doy", "nativity", "growth_form", "wetland"])?;
    for t in traits {
        wtr.write_record([
            t.species.clone(),
            t.n.to_string(),
            float_cell(t.mean_doy),
            float_cell(t.std_doy),
            t.nativity.map(|v| v.as_str().to_string()).unwrap_or_default(),
            t.growth_form.map(|v| v.as_str().to_string()).unwrap_or_default(),
            t.wetland.map(|v| v.as_str().to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_traits_csv<R: Read>(input: R, source_name: &str) -> Result<Vec<SpeciesTraits>> {
    read_rows::<TraitsRow, R>(input, source_name)?
        .into_iter()
        .map(|(line, r)| {
            let err = |e: crate::model::ModelError| table_error(source_name, line, e);
            Ok(SpeciesTraits {
                species: r.species,
                n: r.n,
                mean_doy: r.mean_doy,
                std_doy: r.std_doy,
                nativity: r.nativity.as_deref().map(str::parse).transpose().map_err(err)?,
                growth_form: r.growth_form.as_deref().map(str::parse).transpose().map_err(err)?,
                wetland: r.wetland.as_deref().map(str::parse).transpose().map_err(err)?,
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct ReferenceRow {
    species: String,
    mean_doy: Option<f64>,
    std_doy: Option<f64>,
    n: Option<usize>,
    #[serde(default)]
    group: Option<String>,
}

/// Header `species,mean_doy,std_doy,n,group`; `group` is a nativity value.
pub fn write_reference_csv<W: Write>(
    estimates: &[SpeciesDoYEstimate],
    grouping: &BTreeMap<String, Nativity>,
    out: W,
) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["species", "mean_doy", "std_doy", "n", "group"])?;
    for e in estimates {
        wtr.write_record([
            e.species.clone(),
            float_cell(e.mean_doy),
            float_cell(e.std_doy),
            e.n.to_string(),
            grouping.get(&e.species).map(|g| g.as_str().to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reference estimates with the species grouping found in the `group`
/// column. A missing `n` counts as one observation when a mean is given.
pub fn read_reference_csv<R: Read>(
    input: R,
    source_name: &str,
) -> Result<(Vec<SpeciesDoYEstimate>, BTreeMap<String, Nativity>)> {
    let mut estimates = Vec::new();
    let mut grouping = BTreeMap::new();
    for (line, r) in read_rows::<ReferenceRow, R>(input, source_name)? {
        if let Some(g) = r.group.as_deref() {
            let nativity: Nativity = g.parse().map_err(|e| table_error(source_name, line, e))?;
            grouping.insert(r.species.clone(), nativity);
        }
        estimates.push(SpeciesDoYEstimate {
            n: r.n.unwrap_or(usize::from(r.mean_doy.is_some())),
            species: r.species,
            mean_doy: r.mean_doy,
            std_doy: r.std_doy,
        });
    }
    Ok((estimates, grouping))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_table_round_trip() {
        let rows = vec![
            SpeciesShiftEstimate {
                species: "Acer rubrum".into(),
                slope_days_per_year: Some(-0.0248),
                slope_days_per_decade: Some(-0.248),
                p_value: Some(0.001),
                n: 120,
                n_pre: 50,
                n_post: 70,
                classification: ShiftClass::Earlier,
            },
            SpeciesShiftEstimate {
                species: "b".into(),
                slope_days_per_year: None,
                slope_days_per_decade: None,
                p_value: None,
                n: 74,
                n_pre: 37,
                n_post: 37,
                classification: ShiftClass::Filtered,
            },
        ];
        let mut buf = Vec::new();
        write_shift_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("species,slope_dpy,slope_dpd,p,n,n_pre,n_post,class\n"));
        assert!(text.contains("b,,,,74,37,37,filtered"));
        assert_eq!(read_shift_csv(buf.as_slice(), "t").unwrap(), rows);
    }

    #[test]
    fn shift_table_errors_name_the_line() {
        let text = "species,slope_dpy,slope_dpd,p,n,n_pre,n_post,class\na,0.1,1.0,0.2,80,40,40,none\nb,0.1,1.0,0.2,80,40,40,sideways\n";
        match read_shift_csv(text.as_bytes(), "s.csv") {
            Err(PhenologyError::Table { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reference_groups() {
        let text = "species,mean_doy,std_doy,n,group\na,230.5,10.0,12,native\nb,250,,3,invasive\nc,,,0,\n";
        let (est, grouping) = read_reference_csv(text.as_bytes(), "r").unwrap();
        assert_eq!(est.len(), 3);
        assert_eq!(est[1].mean_doy, Some(250.0));
        assert_eq!(grouping["b"], Nativity::Introduced);
        assert!(!grouping.contains_key("c"));
    }
}
