//! CSV datasets, PD matrices and KTau series.
//!
//! Floats are written with Rust's `Display`, the shortest decimal that parses
//! back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use diws_core::data::Dataset;
use diws_core::matrix::Matrix;
use diws_core::metrics::PdMatrix;

use crate::error::{HarnessError, Result};

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_dataset(&text, path)
}

/// Parses `label,f1,...,fd` lines. A first line whose first field is not an
/// integer is taken as a header.
pub fn parse_dataset(text: &str, origin: &Path) -> Result<Dataset> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(1, |p| p.line());
            HarnessError::csv(origin, line, e)
        })?;
        let line = record.position().map_or(index as u64 + 1, |p| p.line());
        let first = record.get(0).unwrap_or("");
        if index == 0 && first.parse::<f64>().is_err() {
            continue;
        }
        let label: usize = first
            .parse()
            .map_err(|_| HarnessError::csv(origin, line, format!("label {first:?} is not a non-negative integer")))?;
        let width = record.len() - 1;
        match dim {
            None if width == 0 => return Err(HarnessError::csv(origin, line, "row has no features")),
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(HarnessError::csv(origin, line, format!("row has {width} features, expected {d}")))
            }
            Some(_) => {}
        }
        for field in record.iter().skip(1) {
            let value: f64 = field
                .parse()
                .map_err(|_| HarnessError::csv(origin, line, format!("feature {field:?} is not a number")))?;
            if !value.is_finite() {
                return Err(HarnessError::csv(origin, line, format!("feature {field:?} is not finite")));
            }
            data.push(value);
        }
        labels.push(label);
    }
    let Some(dim) = dim else {
        return Err(HarnessError::csv(origin, 1, "no data rows"));
    };
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let features = Matrix::from_vec(labels.len(), dim, data)?;
    Ok(Dataset::new(features, labels, num_classes)?)
}

/// `label,f0,...` header followed by one row per sample.
pub fn write_dataset(ds: &Dataset) -> String {
    let mut out = String::from("label");
    for j in 0..ds.dim() {
        write!(out, ",f{j}").unwrap();
    }
    out.push('\n');
    for (i, label) in ds.samples.labels.iter().enumerate() {
        write!(out, "{label}").unwrap();
        for v in ds.samples.features.row(i) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Header of architecture strings (column `j` = after training arch `j`),
/// then one row per architecture; unfilled cells are `null`.
pub fn write_pd_matrix(m: &PdMatrix) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(&m.archs).unwrap();
    for row in &m.cells {
        let fields: Vec<String> = row.iter().map(|c| c.map_or_else(|| "null".to_string(), |v| v.to_string())).collect();
        w.write_record(&fields).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Reads a PD matrix CSV back, enforcing its schema: square, cells in
/// `[0, 1]` or `null`.
pub fn parse_pd_matrix(text: &str, origin: &Path) -> Result<PdMatrix> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let archs: Vec<String> =
        reader.headers().map_err(|e| HarnessError::csv(origin, 1, e))?.iter().map(str::to_string).collect();
    let n = archs.len();
    let mut cells = Vec::with_capacity(n);
    for record in reader.records() {
        let record = record.map_err(|e| HarnessError::csv(origin, e.position().map_or(0, |p| p.line()), e))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .map(|f| match f {
                "null" => Ok(None),
                _ => match f.parse::<f64>() {
                    Ok(v) if (0.0..=1.0).contains(&v) => Ok(Some(v)),
                    _ => Err(HarnessError::csv(origin, line, format!("cell {f:?} is neither null nor in [0, 1]"))),
                },
            })
            .collect::<Result<Vec<_>>>()?;
        cells.push(row);
    }
    if cells.len() != n {
        return Err(HarnessError::csv(origin, 1, format!("{} rows for {n} architectures", cells.len())));
    }
    Ok(PdMatrix { archs, cells })
}

pub fn write_ktau_series(series: &[(usize, f64)]) -> String {
    let mut out = String::from("epoch,ktau\n");
    for (epoch, tau) in series {
        writeln!(out, "{epoch},{tau}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("d.csv")
    }

    #[test]
    fn parses_plain_rows() {
        let ds = parse_dataset("0,1.0,2.0\n1,3.0,4.0", p()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.samples.features.row(1), &[3.0, 4.0]);
        assert_eq!(ds.num_classes, 2);
    }

    #[test]
    fn header_is_detected() {
        let ds = parse_dataset("label,a,b\n0,1,2\n2,3,4\n", p()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes, 3);
    }

    fn line_of(text: &str) -> u64 {
        match parse_dataset(text, p()).unwrap_err() {
            HarnessError::Csv { line, .. } => line,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_line() {
        assert_eq!(line_of("0,1.0,2.0\n1,3.0\n"), 2);
        assert_eq!(line_of("label,a\n0,1\n1,x\n"), 3);
        assert_eq!(line_of("0,1\n-1,2\n"), 2);
        assert_eq!(line_of(""), 1);
        assert_eq!(line_of("label,a\n"), 1);
    }

    #[test]
    fn pd_matrix_round_trip() {
        let m = PdMatrix {
            archs: vec!["e0:op1".into(), "e0:op2".into()],
            cells: vec![vec![Some(0.5), Some(0.25)], vec![None, Some(1.0)]],
        };
        let text = write_pd_matrix(&m);
        assert_eq!(text, "e0:op1,e0:op2\n0.5,0.25\nnull,1\n");
        assert_eq!(parse_pd_matrix(&text, p()).unwrap(), m);
        assert!(parse_pd_matrix("a,b\n0.5,1.5\nnull,1\n", p()).is_err());
        assert!(parse_pd_matrix("a,b\n0.5,1\n", p()).is_err());
    }

    #[test]
    fn arch_strings_with_commas_are_quoted() {
        let m = PdMatrix { archs: vec!["e0:op1,e1:op2".into()], cells: vec![vec![Some(0.5)]] };
        let text = write_pd_matrix(&m);
        assert_eq!(text, "\"e0:op1,e1:op2\"\n0.5\n");
        assert_eq!(parse_pd_matrix(&text, p()).unwrap(), m);
    }
}
