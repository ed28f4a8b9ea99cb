//! `label,f1,...,fD` datasets, one sample per line, optional header line.

use std::collections::BTreeSet;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Reads a CSV dataset. Labels may be any integers; they are remapped to
/// `0..C` in ascending numeric order.
pub fn load_csv<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let csv_err = |line: u64, message: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => csv_err(0, format!("{other:?}")),
        })?;

    let mut raw_labels = Vec::new();
    let mut data: Vec<T> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let label_field = record.get(0).unwrap_or("");
        let label = match parse_label(label_field) {
            Some(l) => l,
            None if i == 0 => continue, // header
            None => return Err(csv_err(line, format!("label '{label_field}' is not an integer"))),
        };
        let d = record.len() - 1;
        if d == 0 {
            return Err(csv_err(line, "row has no feature columns".into()));
        }
        match width {
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(csv_err(line, format!("expected {w} features, found {d}")));
            }
            Some(_) => {}
        }
        for (col, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| csv_err(line, format!("column {}: '{field}' is not a number", col + 1)))?;
            if !v.is_finite() {
                return Err(csv_err(line, format!("column {}: non-finite value", col + 1)));
            }
            data.push(T::of(v));
        }
        raw_labels.push(label);
    }
    let width = width.ok_or_else(|| csv_err(1, "file contains no samples".into()))?;

    let distinct: Vec<i64> = raw_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| distinct.binary_search(l).expect("label collected above"))
        .collect();
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, width], data)?, labels, distinct.len())
}

fn parse_label(field: &str) -> Option<i64> {
    if let Ok(v) = field.parse::<i64>() {
        return Some(v);
    }
    let f: f64 = field.parse().ok()?;
    (f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

/// Writes `label,f1,...,fD` rows without a header, shortest round-trip floats.
pub fn write_csv<T: Scalar>(ds: &Dataset<T>, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
    let mut fields = Vec::with_capacity(ds.dim() + 1);
    for i in 0..ds.len() {
        fields.clear();
        fields.push(ds.labels()[i].to_string());
        fields.extend(ds.features().row(i).iter().map(|v| v.to_f64_lossy().to_string()));
        writer.write_record(&fields).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_minimal_file() {
        let f = file("0,1.0,2.0\n1,3.0,4.0");
        let ds: Dataset = load_csv(f.path()).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.num_classes()), (2, 2, 2));
        assert_eq!(ds.features().row(1), &[3.0, 4.0]);
    }

    #[test]
    fn remaps_sparse_labels() {
        let f = file("label,a\n7,0.5\n3,1.5\n7,2.5\n");
        let ds: Dataset = load_csv(f.path()).unwrap();
        assert_eq!(ds.labels(), &[1, 0, 1]);
        assert_eq!(ds.num_classes(), 2);
    }

    #[test]
    fn reports_line_numbers() {
        let f = file("0,1.0,2.0\n1,3.0\n");
        let err = load_csv::<f64>(f.path()).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");

        let f = file("0,1.0\n1,abc\n");
        let err = load_csv::<f64>(f.path()).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("abc"), "{err}");

        let f = file("0,1.0\nx,2.0\n");
        assert!(load_csv::<f64>(f.path()).is_err());

        let f = file("");
        assert!(load_csv::<f64>(f.path()).is_err());
        let f = file("label,x\n");
        assert!(load_csv::<f64>(f.path()).is_err());
    }

    #[test]
    fn round_trips_a_thousand_rows() {
        let ds: Dataset = generate_synthetic(&SyntheticSpec {
            classes: 4,
            dim: 5,
            per_class: 250,
            spread: 1.3,
            transform: None,
            seed: 21,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        write_csv(&ds, &path).unwrap();
        let back: Dataset = load_csv(&path).unwrap();
        assert_eq!(back, ds);
    }
}
