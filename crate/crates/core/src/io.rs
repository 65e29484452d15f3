//! File formats: sample CSV, JSON / JSON-lines documents, and the flat CSV
//! tables emitted for plotting.
//!
//! The sample format is RFC-4180 CSV with a mandatory header. Columns `x`
//! and `y` are required, `weight` is optional (defaulting to one), and any
//! other column is rejected so that a typo cannot silently drop weights.
//! Parse errors name the data row (1-based, excluding the header) and
//! column.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::error::Error as DomainError;
use crate::sample::{SamplePoint, WeightedSample};

/// File-format and schema errors. Domain errors pass through unchanged so
/// callers can tell a malformed file from an invalid input.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing required column `{name}`")]
    MissingColumn { name: &'static str },

    #[error("bad header: {0}")]
    Header(String),

    #[error("row {row}, column `{column}`: {message}")]
    BadField { row: usize, column: &'static str, message: String },

    #[error(transparent)]
    Domain(#[from] DomainError),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

fn parse_field(
    record: &csv::StringRecord,
    idx: usize,
    column: &'static str,
    row: usize,
) -> IoResult<f64> {
    let raw = record.get(idx).ok_or_else(|| IoError::BadField {
        row,
        column,
        message: "field is missing".into(),
    })?;
    let value: f64 = raw.trim().parse().map_err(|_| IoError::BadField {
        row,
        column,
        message: format!("cannot parse `{raw}` as a number"),
    })?;
    if !value.is_finite() {
        return Err(IoError::BadField {
            row,
            column,
            message: format!("value `{raw}` is not finite"),
        });
    }
    Ok(value)
}

/// Parse a sample from CSV bytes (see the module docs for the schema).
pub fn parse_sample_csv<R: Read>(reader: R) -> IoResult<WeightedSample> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut ix = None;
    let mut iy = None;
    let mut iw = None;
    for (i, name) in headers.iter().enumerate() {
        let slot = match name.trim() {
            "x" => &mut ix,
            "y" => &mut iy,
            "weight" => &mut iw,
            other => {
                return Err(IoError::Header(format!("unknown column `{other}`")));
            }
        };
        if slot.replace(i).is_some() {
            return Err(IoError::Header(format!("duplicate column `{}`", name.trim())));
        }
    }
    let ix = ix.ok_or(IoError::MissingColumn { name: "x" })?;
    let iy = iy.ok_or(IoError::MissingColumn { name: "y" })?;

    let mut points = Vec::new();
    for (row0, record) in rdr.records().enumerate() {
        let record = record?;
        let row = row0 + 1;
        let x = parse_field(&record, ix, "x", row)?;
        let y = parse_field(&record, iy, "y", row)?;
        let weight = match iw {
            Some(i) => {
                let w = parse_field(&record, i, "weight", row)?;
                if !(w > 0.0) {
                    return Err(IoError::BadField {
                        row,
                        column: "weight",
                        message: format!("weight {w} must be positive"),
                    });
                }
                w
            }
            None => 1.0,
        };
        points.push(SamplePoint { x, y, weight });
    }
    Ok(WeightedSample::new(points)?)
}

/// Read a sample CSV file.
pub fn read_sample_csv(path: &Path) -> IoResult<WeightedSample> {
    parse_sample_csv(File::open(path)?)
}

/// Write a sample as CSV with the full three-column header.
pub fn write_sample_csv(path: &Path, sample: &WeightedSample) -> IoResult<()> {
    let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    wtr.write_record(["x", "y", "weight"])?;
    for p in sample.points() {
        wtr.write_record([p.x.to_string(), p.y.to_string(), p.weight.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Read a JSON-lines file: one document per line, blank lines rejected.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> IoResult<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    for line in reader.lines() {
        items.push(serde_json::from_str(&line?)?);
    }
    Ok(items)
}

/// Write a JSON-lines file, one document per item.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> IoResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a single pretty or compact JSON document.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> IoResult<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Write a single JSON document, pretty-printed with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> IoResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Write a CSV table with string-valued cells (for mixed-type summaries).
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> IoResult<()> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(IoError::Header(format!(
                "table row {i} has {} fields for {} columns",
                row.len(),
                header.len()
            )));
        }
    }
    let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Write a flat numeric table as CSV for plotting.
pub fn write_plot_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> IoResult<()> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(IoError::Header(format!(
                "table row {i} has {} fields for {} columns",
                row.len(),
                header.len()
            )));
        }
    }
    let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_and_without_weights() {
        let s = parse_sample_csv("x,y\n1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.points()[0], SamplePoint { x: 1.0, y: 2.0, weight: 1.0 });

        let s = parse_sample_csv("y,weight,x\n2,0.5,1\n".as_bytes()).unwrap();
        assert_eq!(s.points()[0], SamplePoint { x: 1.0, y: 2.0, weight: 0.5 });
    }

    #[test]
    fn header_errors_are_specific() {
        assert!(matches!(
            parse_sample_csv("x,z\n1,2\n".as_bytes()),
            Err(IoError::Header(_))
        ));
        assert!(matches!(
            parse_sample_csv("x,x,y\n1,1,2\n".as_bytes()),
            Err(IoError::Header(_))
        ));
        assert!(matches!(
            parse_sample_csv("x\n1\n".as_bytes()),
            Err(IoError::MissingColumn { name: "y" })
        ));
        // A headerless numeric file reads its first row as the header.
        assert!(matches!(
            parse_sample_csv("1,2\n3,4\n".as_bytes()),
            Err(IoError::Header(_))
        ));
    }

    #[test]
    fn field_errors_name_row_and_column() {
        let err = parse_sample_csv("x,y\n1,2\nfoo,3\n".as_bytes()).unwrap_err();
        match err {
            IoError::BadField { row, column, .. } => {
                assert_eq!((row, column), (2, "x"));
            }
            other => panic!("unexpected error {other}"),
        }
        let err = parse_sample_csv("x,y,weight\n1,2,-1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IoError::BadField { row: 1, column: "weight", .. }));
        let err = parse_sample_csv("x,y\ninf,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IoError::BadField { row: 1, column: "x", .. }));
    }

    #[test]
    fn empty_data_is_a_domain_error() {
        assert!(matches!(
            parse_sample_csv("x,y\n".as_bytes()),
            Err(IoError::Domain(DomainError::EmptySample))
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.csv");
        let sample = WeightedSample::new(vec![
            SamplePoint { x: 0.1, y: -2.5e-7, weight: 1.0 },
            SamplePoint { x: 1.0 / 3.0, y: 4.0, weight: 2.25 },
        ])
        .unwrap();
        write_sample_csv(&path, &sample).unwrap();
        let back = read_sample_csv(&path).unwrap();
        assert_eq!(sample, back);
        // Writing again produces identical bytes.
        let bytes1 = std::fs::read(&path).unwrap();
        write_sample_csv(&path, &back).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cdfs.jsonl");
        let items = vec![
            crate::StepCdf::point_mass(1.0).unwrap(),
            crate::StepCdf::empirical(&[0.0, 2.0], &[1.0, 3.0]).unwrap(),
        ];
        write_jsonl(&path, &items).unwrap();
        let back: Vec<crate::StepCdf> = read_jsonl(&path).unwrap();
        assert_eq!(items, back);
    }

    #[test]
    fn json_document_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meta.json");
        let meta = crate::sim::SimMetadata::new(crate::sim::SimModel::Isotonic, 10, 3);
        write_json(&path, &meta).unwrap();
        let back: crate::sim::SimMetadata = read_json(&path).unwrap();
        assert_eq!(meta, back);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn plot_table_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        assert!(write_plot_csv(&path, &["a", "b"], &[vec![1.0]]).is_err());
        write_plot_csv(&path, &["a", "b"], &[vec![1.0, 2.0]]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1,2\n");
    }
}
