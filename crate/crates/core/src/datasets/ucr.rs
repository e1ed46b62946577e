use std::path::Path;

use super::{LabeledSeries, RawTask};
use crate::error::{Error, Result};

struct Row {
    label: f64,
    values: Vec<f64>,
    source_id: String,
}

fn parse_file(path: &Path) -> Result<Vec<Row>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let shown = path.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: shown.clone(),
        line,
        message,
    };
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    let mut rows = Vec::new();
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t').map(str::trim);
        let label_text = fields.next().unwrap_or_default();
        let label: f64 = label_text
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(lineno, format!("label `{label_text}` is not a number")))?;
        let values = fields
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(lineno, format!("value `{f}` is not a finite number"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(parse_err(lineno, "row has a label but no values".into()));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(parse_err(
                    lineno,
                    format!("row has {} values, previous rows have {w}", values.len()),
                ))
            }
            Some(_) => {}
        }
        rows.push(Row {
            label,
            values,
            source_id: format!("{stem}:{lineno}"),
        });
    }
    Ok(rows)
}

/// Reads tab-separated files (label first) into one task; labels from all
/// files are remapped together onto `0..C` in ascending numeric order.
pub fn load_ucr_files<P: AsRef<Path>>(name: &str, paths: &[P]) -> Result<RawTask> {
    let mut rows = Vec::new();
    for p in paths {
        let path = p.as_ref();
        let file_rows = parse_file(path)?;
        if let (Some(first), Some(row)) = (rows.first(), file_rows.first()) {
            let (a, b): (&Row, &Row) = (first, row);
            if a.values.len() != b.values.len() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: 1,
                    message: format!(
                        "series length {} differs from earlier files ({})",
                        b.values.len(),
                        a.values.len()
                    ),
                });
            }
        }
        rows.extend(file_rows);
    }
    let Some(first) = rows.first() else {
        return Err(Error::Data(format!("task `{name}` has no series")));
    };
    let series_length = first.values.len();
    let mut labels: Vec<f64> = rows.iter().map(|r| r.label).collect();
    labels.sort_by(f64::total_cmp);
    labels.dedup();
    let series = rows
        .into_iter()
        .map(|r| LabeledSeries {
            label: labels.partition_point(|&l| l < r.label),
            values: r.values,
            source_id: r.source_id,
        })
        .collect();
    Ok(RawTask {
        name: name.to_string(),
        num_classes: labels.len(),
        series_length,
        series,
    })
}

/// A single UCR-format file as an unsplit task named after the file stem.
pub fn load_ucr_tsv(path: impl AsRef<Path>) -> Result<RawTask> {
    let path = path.as_ref();
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("task");
    load_ucr_files(name, &[path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn fixture(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".tsv").tempfile().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_line_fixture() {
        let f = fixture("1\t0.0\t1.0\n2\t1.0\t0.0");
        let t = load_ucr_tsv(f.path()).unwrap();
        assert_eq!(t.series.len(), 2);
        assert_eq!(t.num_classes, 2);
        assert_eq!(t.series_length, 2);
        assert_eq!(t.series[1].values, vec![1.0, 0.0]);
        assert_eq!(t.series[1].label, 1);
    }

    #[test]
    fn labels_are_remapped_in_sorted_order() {
        let f = fixture("1\t0\n-1\t1\n1.0\t2\n");
        let t = load_ucr_tsv(f.path()).unwrap();
        let labels: Vec<usize> = t.series.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![1, 0, 1]);
    }

    #[test]
    fn ragged_row_names_its_line() {
        let f = fixture("0\t1\t2\t3\t4\n1\t1\t2\t3\n");
        match load_ucr_tsv(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_tokens_are_parse_errors() {
        for text in ["a\t1\t2\n", "0\t1\tNaN\n", "0\n"] {
            let f = fixture(text);
            assert!(matches!(load_ucr_tsv(f.path()), Err(Error::Parse { line: 1, .. })), "{text:?}");
        }
    }

    #[test]
    fn files_merge_with_a_shared_label_map() {
        let a = fixture("3\t0\t0\n5\t1\t1\n");
        let b = fixture("4\t2\t2\n");
        let t = load_ucr_files("m", &[a.path(), b.path()]).unwrap();
        let labels: Vec<usize> = t.series.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![0, 2, 1]);
        assert_eq!(t.num_classes, 3);
    }
}
