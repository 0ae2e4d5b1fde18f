use std::path::{Path, PathBuf};

use super::{LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Tabular {
    Labeled(LabeledSet),
    Unlabeled(UnlabeledSet),
}

impl Tabular {
    pub fn features(&self) -> &Tensor {
        match self {
            Tabular::Labeled(s) => &s.features,
            Tabular::Unlabeled(s) => &s.features,
        }
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parses delimited numeric text. Fields are separated by commas or by
/// whitespace; blank lines and lines starting with `#` are skipped. A first
/// row that does not parse as numbers is treated as a header. With
/// `labeled`, the last column holds non-negative integer class labels.
pub fn parse_tabular(text: &str, labeled: bool, origin: &Path) -> Result<Tabular> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    let mut first = true;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = split_fields(line);
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if first => {
                first = false;
                continue;
            }
            Err(e) => return Err(err(line_no, format!("not a number: {e}"))),
        };
        first = false;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err(line_no, "non-finite value".into()));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(err(line_no, format!("expected {w} fields, found {}", values.len())));
            }
            _ => {}
        }
        rows.push(values);
    }
    let Some(width) = width else {
        return Err(Error::Data(format!("{}: no data rows", origin.display())));
    };
    if !labeled {
        return Ok(Tabular::Unlabeled(UnlabeledSet {
            features: Tensor::from_rows(&rows)?,
        }));
    }
    if width < 2 {
        return Err(err(1, "labeled data needs at least one feature and a label column".into()));
    }
    let mut labels = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter_mut().enumerate() {
        let y = row.pop().expect("width checked");
        if y < 0.0 || y.fract() != 0.0 {
            return Err(Error::Data(format!(
                "{}: data row {}: label {y} is not a class index",
                origin.display(),
                i + 1
            )));
        }
        labels.push(y as usize);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(Tabular::Labeled(LabeledSet::new(Tensor::from_rows(&rows)?, labels, classes)?))
}

pub fn load_tabular(path: impl AsRef<Path>, labeled: bool) -> Result<Tabular> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(PathBuf::from(path), e))?;
    parse_tabular(&text, labeled, path)
}
