//! Long-format CSV ingestion and export.
//!
//! One row per subject-time. Times are re-indexed to consecutive integers
//! in sorted order; the original values are kept as labels. A missing
//! outcome is marked by the schema sentinel (treatment and covariates must
//! always be present). Rows absent for some (subject, time) pair get a
//! zero mask and zero-filled time-varying covariates.

use super::{ColumnSchema, PanelDataset, PanelParts};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::collections::HashMap;
use std::path::Path;

struct RawRow<F> {
    line: u64,
    subject: usize,
    time: usize,
    y: Option<F>,
    a: u8,
    z: Vec<F>,
    x: Vec<F>,
    u: Vec<F>,
}

/// Load a panel from a long-format CSV file.
pub fn load_panel_csv<F: Scalar>(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<PanelDataset<F>> {
    schema.validate()?;
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;

    let headers = reader.headers()?.clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::schema(format!("missing column `{name}` in {}", path.display())))
    };

    let idx_subject = col_index(&schema.subject)?;
    let idx_time = col_index(&schema.time)?;
    let idx_outcome = col_index(&schema.outcome)?;
    let idx_treatment = col_index(&schema.treatment)?;
    let idx_z: Vec<usize> = schema.baseline.iter().map(|c| col_index(c)).collect::<Result<_>>()?;
    let idx_x: Vec<usize> = schema.modifiers.iter().map(|c| col_index(c)).collect::<Result<_>>()?;
    let idx_u: Vec<usize> = schema.prognostic.iter().map(|c| col_index(c)).collect::<Result<_>>()?;

    let mut subject_ids: Vec<String> = Vec::new();
    let mut subject_lookup: HashMap<String, usize> = HashMap::new();
    let mut time_values: Vec<f64> = Vec::new();
    let mut rows: Vec<RawRow<F>> = Vec::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);

        let sid = record.get(idx_subject).unwrap_or("").to_string();
        if sid.is_empty() {
            return Err(Error::data(format!("empty subject id at row {line}")));
        }
        let next_id = subject_lookup.len();
        let subject = *subject_lookup.entry(sid.clone()).or_insert(next_id);
        if subject == subject_ids.len() {
            subject_ids.push(sid);
        }

        let time_raw = record.get(idx_time).unwrap_or("");
        let time_val: f64 = time_raw
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("unparseable time `{time_raw}` at row {line}")))?;
        let time = match time_values.iter().position(|&v| v == time_val) {
            Some(k) => k,
            None => {
                time_values.push(time_val);
                time_values.len() - 1
            }
        };

        let outcome_raw = record.get(idx_outcome).unwrap_or("").trim();
        let y = if outcome_raw == schema.missing_sentinel {
            None
        } else {
            let v: f64 = outcome_raw
                .parse()
                .map_err(|_| Error::data(format!("unparseable outcome `{outcome_raw}` at row {line}")))?;
            Some(F::cast(v))
        };

        let a_raw = record.get(idx_treatment).unwrap_or("").trim();
        let a = match a_raw {
            "0" => 0u8,
            "1" => 1u8,
            _ => {
                // Accept numeric encodings of 0/1 as well.
                match a_raw.parse::<f64>() {
                    Ok(v) if v == 0.0 => 0u8,
                    Ok(v) if v == 1.0 => 1u8,
                    _ => return Err(Error::data(format!("non-binary treatment at row {line}"))),
                }
            }
        };

        let parse_cell = |idx: usize, name: &str| -> Result<F> {
            let raw = record.get(idx).unwrap_or("").trim();
            if raw.is_empty() || raw == schema.missing_sentinel {
                return Err(Error::data(format!("missing covariate {name} at row {line}")));
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::data(format!("unparseable covariate {name} at row {line}")))?;
            Ok(F::cast(v))
        };

        let z: Vec<F> = idx_z
            .iter()
            .zip(&schema.baseline)
            .map(|(&i, n)| parse_cell(i, n))
            .collect::<Result<_>>()?;
        let x: Vec<F> = idx_x
            .iter()
            .zip(&schema.modifiers)
            .map(|(&i, n)| parse_cell(i, n))
            .collect::<Result<_>>()?;
        let u: Vec<F> = idx_u
            .iter()
            .zip(&schema.prognostic)
            .map(|(&i, n)| parse_cell(i, n))
            .collect::<Result<_>>()?;

        rows.push(RawRow { line, subject, time, y, a, z, x, u });
    }

    if rows.is_empty() {
        return Err(Error::data(format!("no data rows in {}", path.display())));
    }

    // Re-index times to 1..T in sorted order.
    let mut sorted_times = time_values.clone();
    sorted_times.sort_by(|a, b| a.partial_cmp(b).expect("finite time values"));
    let time_rank: Vec<usize> = time_values
        .iter()
        .map(|v| sorted_times.iter().position(|s| s == v).expect("present"))
        .collect();

    let n = subject_ids.len();
    let n_times = sorted_times.len();
    let d_z = schema.baseline.len();
    let d_x = schema.modifiers.len();
    let d_u = schema.prognostic.len();
    let nt = n * n_times;

    let mut y = vec![F::zero(); nt];
    let mut a = vec![0u8; nt];
    let mut m = vec![0u8; nt];
    let mut z = vec![F::zero(); n * d_z];
    let mut z_set = vec![false; n];
    let mut x = vec![F::zero(); nt * d_x];
    let mut u = vec![F::zero(); nt * d_u];
    let mut seen = vec![false; nt];

    for row in &rows {
        let t = time_rank[row.time];
        let flat = row.subject * n_times + t;
        if seen[flat] {
            return Err(Error::data(format!(
                "duplicate row for subject `{}` at time {} (row {})",
                subject_ids[row.subject],
                t + 1,
                row.line
            )));
        }
        seen[flat] = true;
        if let Some(v) = row.y {
            y[flat] = v;
            m[flat] = 1;
        }
        a[flat] = row.a;
        x[flat * d_x..(flat + 1) * d_x].copy_from_slice(&row.x);
        u[flat * d_u..(flat + 1) * d_u].copy_from_slice(&row.u);

        let zs = &mut z[row.subject * d_z..(row.subject + 1) * d_z];
        if z_set[row.subject] {
            if zs != row.z.as_slice() {
                return Err(Error::data(format!(
                    "inconsistent baseline covariates for subject `{}` at row {}",
                    subject_ids[row.subject], row.line
                )));
            }
        } else {
            zs.copy_from_slice(&row.z);
            z_set[row.subject] = true;
        }
    }

    let time_labels: Vec<String> = sorted_times.iter().map(|v| format_time(*v)).collect();

    PanelDataset::from_parts(PanelParts {
        n,
        n_times,
        d_z,
        d_x,
        d_u,
        y,
        a,
        m,
        z,
        x,
        u,
        subject_ids,
        time_labels,
        baseline_names: schema.baseline.clone(),
        modifier_names: schema.modifiers.clone(),
        prognostic_names: schema.prognostic.clone(),
    })
}

fn format_time(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Write a panel back to long-format CSV. Masked outcomes are emitted as
/// the schema sentinel, so `load_panel_csv(write_panel_csv(d))` reproduces
/// the observed tuples.
pub fn write_panel_csv<F: Scalar>(path: impl AsRef<Path>, data: &PanelDataset<F>, schema: &ColumnSchema) -> Result<()> {
    schema.validate()?;
    if schema.baseline.len() != data.d_z()
        || schema.modifiers.len() != data.d_x()
        || schema.prognostic.len() != data.d_u()
    {
        return Err(Error::schema("schema covariate lists do not match dataset dimensions".to_string()));
    }
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    writer.write_record(schema.all_columns())?;

    for i in 0..data.n_subjects() {
        for t in 0..data.n_times() {
            let mut record: Vec<String> = Vec::with_capacity(4 + data.d_z() + data.d_x() + data.d_u());
            record.push(data.subject_ids()[i].clone());
            record.push(data.time_labels()[t].clone());
            if data.observed(i, t) {
                record.push(format!("{}", data.outcome(i, t)));
            } else {
                record.push(schema.missing_sentinel.clone());
            }
            record.push(if data.treated(i, t) { "1".into() } else { "0".into() });
            for v in data.baseline(i) {
                record.push(format!("{v}"));
            }
            for v in data.modifiers(i, t) {
                record.push(format!("{v}"));
            }
            for v in data.prognostic(i, t) {
                record.push(format!("{v}"));
            }
            writer.write_record(&record)?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn schema() -> ColumnSchema {
        ColumnSchema {
            subject: "id".into(),
            time: "day".into(),
            outcome: "y".into(),
            treatment: "a".into(),
            baseline: vec!["z1".into()],
            modifiers: vec!["x1".into()],
            prognostic: vec!["u1".into()],
            missing_sentinel: "NA".into(),
        }
    }

    fn write_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_complete_panel() {
        let f = write_file(
            "id,day,y,a,z1,x1,u1\n\
             s1,1,0.5,0,2.0,0.1,0.2\n\
             s1,2,0.6,1,2.0,0.3,0.4\n\
             s1,3,0.7,0,2.0,0.5,0.6\n\
             s2,1,1.5,1,-1.0,0.7,0.8\n\
             s2,2,1.6,0,-1.0,0.9,1.0\n\
             s2,3,1.7,1,-1.0,1.1,1.2\n",
        );
        let data: PanelDataset<f64> = load_panel_csv(f.path(), &schema()).unwrap();
        assert_eq!(data.n_subjects(), 2);
        assert_eq!(data.n_times(), 3);
        assert!((0..2).all(|i| (0..3).all(|t| data.observed(i, t))));
        assert_eq!(data.outcome(1, 2), 1.7);
        assert_eq!(data.baseline(1), &[-1.0]);
    }

    #[test]
    fn sentinel_outcome_masks_single_cell() {
        let f = write_file(
            "id,day,y,a,z1,x1,u1\n\
             s1,1,0.5,0,2.0,0.1,0.2\n\
             s1,2,NA,1,2.0,0.3,0.4\n\
             s1,3,0.7,0,2.0,0.5,0.6\n\
             s2,1,1.5,1,-1.0,0.7,0.8\n\
             s2,2,1.6,0,-1.0,0.9,1.0\n\
             s2,3,1.7,1,-1.0,1.1,1.2\n",
        );
        let data: PanelDataset<f64> = load_panel_csv(f.path(), &schema()).unwrap();
        assert!(!data.observed(0, 1));
        assert!(data.observed(0, 0) && data.observed(0, 2));
        assert!(data.treated(0, 1), "treatment retained for masked outcome");
    }

    #[test]
    fn non_binary_treatment_names_row() {
        let f = write_file(
            "id,day,y,a,z1,x1,u1\n\
             s1,1,0.5,0,2.0,0.1,0.2\n\
             s1,2,0.6,1,2.0,0.3,0.4\n\
             s1,3,0.7,2,2.0,0.5,0.6\n",
        );
        let err = load_panel_csv::<f64>(f.path(), &schema()).unwrap_err();
        assert_eq!(err.to_string(), "data error: non-binary treatment at row 4");
    }

    #[test]
    fn missing_column_is_schema_error() {
        let f = write_file("id,day,y,z1,x1,u1\ns1,1,0.5,2.0,0.1,0.2\n");
        let err = load_panel_csv::<f64>(f.path(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
        assert!(err.to_string().contains("missing column `a`"));
    }

    #[test]
    fn missing_covariate_cell_names_row_and_column() {
        let f = write_file(
            "id,day,y,a,z1,x1,u1\n\
             s1,1,0.5,0,2.0,0.1,0.2\n\
             s1,2,0.6,1,2.0,NA,0.4\n",
        );
        let err = load_panel_csv::<f64>(f.path(), &schema()).unwrap_err();
        assert_eq!(err.to_string(), "data error: missing covariate x1 at row 3");
    }

    #[test]
    fn absent_rows_are_masked_and_times_reindexed() {
        // Times 10 and 30 sort to indices 1 and 2; s2 lacks time 30.
        let f = write_file(
            "id,day,y,a,z1,x1,u1\n\
             s1,30,0.7,0,2.0,0.5,0.6\n\
             s1,10,0.5,0,2.0,0.1,0.2\n\
             s2,10,1.5,1,-1.0,0.7,0.8\n",
        );
        let data: PanelDataset<f64> = load_panel_csv(f.path(), &schema()).unwrap();
        assert_eq!(data.n_times(), 2);
        assert_eq!(data.time_labels(), &["10".to_string(), "30".to_string()]);
        assert!(data.observed(0, 1));
        assert!(!data.observed(1, 1), "absent row is masked");
        assert_eq!(data.outcome(0, 1), 0.7);
    }

    #[test]
    fn round_trip_preserves_observed_tuples() {
        let f = write_file(
            "id,day,y,a,z1,x1,u1\n\
             s1,1,0.5,0,2.0,0.1,0.2\n\
             s1,2,NA,1,2.0,0.3,0.4\n\
             s2,1,1.5,1,-1.0,0.7,0.8\n\
             s2,2,1.6,0,-1.0,0.9,1.0\n",
        );
        let s = schema();
        let data: PanelDataset<f64> = load_panel_csv(f.path(), &s).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_panel_csv(out.path(), &data, &s).unwrap();
        let reloaded: PanelDataset<f64> = load_panel_csv(out.path(), &s).unwrap();
        assert_eq!(data, reloaded);
    }
}
