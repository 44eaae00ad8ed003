//! Dataset files: delimited text with one label column, or libsvm sparse lines.

use std::fmt::Write as _;
use std::path::Path;

use certmetric::Dataset;
use clap::ValueEnum;

use crate::error::{data, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Libsvm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelCol {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for LabelCol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err("label column must not be empty".into());
        }
        Ok(s.parse::<usize>().map(LabelCol::Index).unwrap_or_else(|_| LabelCol::Name(s.to_string())))
    }
}

#[derive(Debug, Clone)]
pub struct ReadOptions {
    pub format: Format,
    /// CSV only: the first line names the columns.
    pub header: bool,
    pub label_col: LabelCol,
    /// libsvm only: feature count; defaults to the largest index seen.
    pub features: Option<usize>,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions { format: Format::Csv, header: true, label_col: LabelCol::Index(0), features: None }
    }
}

pub fn load_dataset(path: &Path, opts: &ReadOptions) -> CliResult<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_dataset(&text, opts).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_dataset(text: &str, opts: &ReadOptions) -> CliResult<Dataset> {
    match opts.format {
        Format::Csv => parse_csv(text, opts),
        Format::Libsvm => parse_libsvm(text, opts.features),
    }
}

fn parse_label(s: &str, line: u64) -> CliResult<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    match s.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
        _ => data(format!("line {line}: label {s:?} is not an integer")),
    }
}

fn parse_feature(s: &str, line: u64) -> CliResult<f64> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => data(format!("line {line}: feature value {s:?} is not a finite number")),
    }
}

fn parse_csv(text: &str, opts: &ReadOptions) -> CliResult<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(opts.header).trim(csv::Trim::All).from_reader(text.as_bytes());
    let label_idx = match &opts.label_col {
        LabelCol::Index(i) => *i,
        LabelCol::Name(name) => {
            if !opts.header {
                return data(format!("label column {name:?} given by name but the file has no header"));
            }
            let headers = reader.headers().map_err(|e| CliError::Data(format!("header: {e}")))?;
            match headers.iter().position(|h| h == name) {
                Some(i) => i,
                None => return data(format!("no column named {name:?}")),
            }
        }
    };
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::Data(format!("line {line}: {e}"))
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if label_idx >= record.len() {
            return data(format!("line {line}: label column {label_idx} missing"));
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return data(format!("line {line}: expected {w} fields, found {}", record.len()));
            }
            _ => {}
        }
        labels.push(parse_label(&record[label_idx], line)?);
        let row = record
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != label_idx)
            .map(|(_, v)| parse_feature(v, line))
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return data("no data rows");
    }
    if rows[0].is_empty() {
        return data("no feature columns");
    }
    Ok(Dataset::from_rows(&rows, labels)?)
}

fn parse_libsvm(text: &str, features: Option<usize>) -> CliResult<Dataset> {
    let mut sparse: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0;
    for (k, raw) in text.lines().enumerate() {
        let line = k as u64 + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = parse_label(tokens.next().expect("non-empty line"), line)?;
        let mut entries = Vec::new();
        let mut last = 0;
        for tok in tokens {
            let Some((idx, val)) = tok.split_once(':') else {
                return data(format!("line {line}: expected index:value, found {tok:?}"));
            };
            let idx: usize = match idx.parse() {
                Ok(i) if i >= 1 => i,
                _ => return data(format!("line {line}: feature index {idx:?} is not a positive integer")),
            };
            if idx <= last {
                return data(format!("line {line}: feature indices must increase"));
            }
            last = idx;
            entries.push((idx - 1, parse_feature(val, line)?));
        }
        max_index = max_index.max(last);
        sparse.push(entries);
        labels.push(label);
    }
    if sparse.is_empty() {
        return data("no data rows");
    }
    let p = match features {
        Some(p) if p < max_index => return data(format!("feature index {max_index} exceeds the declared {p} features")),
        Some(p) => p,
        None => max_index,
    };
    if p == 0 {
        return data("no feature columns");
    }
    let rows: Vec<Vec<f64>> = sparse
        .into_iter()
        .map(|entries| {
            let mut row = vec![0.0; p];
            for (c, v) in entries {
                row[c] = v;
            }
            row
        })
        .collect();
    Ok(Dataset::from_rows(&rows, labels)?)
}

/// Renders `data` in `format`. CSV output has a `label,x1..xp` header;
/// libsvm output lists every feature, zeros included, so the width survives.
pub fn format_dataset(d: &Dataset, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str("label");
            for c in 1..=d.p() {
                let _ = write!(out, ",x{c}");
            }
            out.push('\n');
            for i in 0..d.n() {
                let _ = write!(out, "{}", d.labels()[i]);
                for v in d.instances().row(i).iter() {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        Format::Libsvm => {
            for i in 0..d.n() {
                let _ = write!(out, "{}", d.labels()[i]);
                for (c, v) in d.instances().row(i).iter().enumerate() {
                    let _ = write!(out, " {}:{v}", c + 1);
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn save_dataset(path: &Path, d: &Dataset, format: Format) -> CliResult<()> {
    write_file(path, &format_dataset(d, format))
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_opts() -> ReadOptions {
        ReadOptions::default()
    }

    #[test]
    fn csv_with_header_and_named_label() {
        let text = "y,f1,f2\n1,0.5,2\n2,1.5,-1\n1,0,0\n";
        let opts = ReadOptions { label_col: LabelCol::Name("y".into()), ..csv_opts() };
        let d = parse_dataset(text, &opts).unwrap();
        assert_eq!((d.n(), d.p()), (3, 2));
        assert_eq!(d.labels(), &[1, 2, 1]);
        assert_eq!(d.row(1), vec![1.5, -1.0]);
    }

    #[test]
    fn csv_label_in_last_column_without_header() {
        let text = "0.5,2,3\n1.5,-1,4\n";
        let opts = ReadOptions { header: false, label_col: LabelCol::Index(2), ..csv_opts() };
        let d = parse_dataset(text, &opts).unwrap();
        assert_eq!(d.labels(), &[3, 4]);
        assert_eq!(d.row(0), vec![0.5, 2.0]);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let text = "y,f1\n1,0.5\n2,abc\n";
        let err = parse_dataset(text, &csv_opts()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let ragged = "y,f1\n1,0.5\n2,1,3\n";
        assert!(parse_dataset(ragged, &csv_opts()).is_err());
        let bad_label = "y,f1\n1.5,0.5\n";
        assert!(parse_dataset(bad_label, &csv_opts()).unwrap_err().to_string().contains("line 2"));
    }

    #[test]
    fn libsvm_densifies() {
        let opts = ReadOptions { format: Format::Libsvm, features: Some(3), ..csv_opts() };
        let d = parse_dataset("2 1:0.5 3:1.0\n", &opts).unwrap();
        assert_eq!(d.row(0), vec![0.5, 0.0, 1.0]);
        assert_eq!(d.labels(), &[2]);
        let inferred = parse_dataset("+1 2:4\n-1 1:1 # comment\n", &ReadOptions { features: None, ..opts.clone() }).unwrap();
        assert_eq!(inferred.p(), 2);
        assert_eq!(inferred.labels(), &[1, -1]);
    }

    #[test]
    fn libsvm_errors() {
        let opts = ReadOptions { format: Format::Libsvm, ..csv_opts() };
        for bad in ["1 0:1\n", "1 2:1 1:1\n", "1 1-1\n", "x 1:1\n", "1 1:nan\n"] {
            assert!(parse_dataset(bad, &opts).is_err(), "{bad:?}");
        }
        let narrow = ReadOptions { features: Some(1), ..opts };
        assert!(parse_dataset("1 2:1\n", &narrow).is_err());
    }

    #[test]
    fn both_formats_round_trip() {
        let rows = vec![vec![0.1, -2.5e-7, 3.0], vec![1.0 / 3.0, 0.0, -1e300]];
        let d = Dataset::from_rows(&rows, vec![7, -2]).unwrap();
        let csv = parse_dataset(&format_dataset(&d, Format::Csv), &csv_opts()).unwrap();
        assert_eq!(csv, d);
        let opts = ReadOptions { format: Format::Libsvm, features: Some(3), ..csv_opts() };
        let svm = parse_dataset(&format_dataset(&d, Format::Libsvm), &opts).unwrap();
        assert_eq!(svm, d);
    }
}
