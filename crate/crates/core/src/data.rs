//! Labeled feature data and its CSV representation.
//!
//! Files carry a header `y,x1,...,xp` with an optional trailing `is_anomaly`
//! column. Labels are written as `-1` / `1`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::Neg, Label::Pos];

    /// The label as ±1.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Neg => -1.0,
            Label::Pos => 1.0,
        }
    }

    /// Dense index used for per-class arrays: `Neg -> 0`, `Pos -> 1`.
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Label::Neg => 0,
            Label::Pos => 1,
        }
    }

    /// Sign of a decision value, with exact zero mapped to `Pos`.
    #[inline]
    pub fn from_decision(value: f64) -> Label {
        if value < 0.0 {
            Label::Neg
        } else {
            Label::Pos
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Neg => Label::Pos,
            Label::Pos => Label::Neg,
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Neg => -1,
            Label::Pos => 1,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            -1 => Ok(Label::Neg),
            1 => Ok(Label::Pos),
            other => Err(format!("label must be -1 or +1, got {other}")),
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", i8::from(*self))
    }
}

impl std::str::FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "-1" | "-1.0" => Ok(Label::Neg),
            "1" | "+1" | "1.0" | "+1.0" => Ok(Label::Pos),
            other => Err(format!("label must be -1 or +1, got {other:?}")),
        }
    }
}

/// Feature rows with ±1 labels and optional ground-truth anomaly flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub anomaly: Option<Vec<bool>>,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<Label>,
        anomaly: Option<Vec<bool>>,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return input(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            ));
        }
        if let Some(a) = &anomaly {
            if a.len() != labels.len() {
                return input(format!(
                    "{} anomaly flags but {} labels",
                    a.len(),
                    labels.len()
                ));
            }
        }
        if let Some(first) = features.first() {
            let dim = first.len();
            if dim == 0 {
                return input("feature vectors must be nonempty");
            }
            if let Some((i, row)) = features.iter().enumerate().find(|(_, r)| r.len() != dim) {
                return input(format!(
                    "row {i} has dimension {} (expected {dim})",
                    row.len()
                ));
            }
            if features.iter().flatten().any(|v| !v.is_finite()) {
                return input("features must be finite");
            }
        }
        Ok(Self {
            features,
            labels,
            anomaly,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension (0 for an empty dataset).
    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Indices of the samples carrying `label`, in increasing order.
    pub fn class_indices(&self, label: Label) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == label)
            .collect()
    }

    pub fn class_count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Fails unless both classes are present.
    pub fn require_both_classes(&self) -> Result<()> {
        for l in Label::BOTH {
            if self.class_count(l) == 0 {
                return input(format!("dataset has no samples of class {l}"));
            }
        }
        Ok(())
    }

    /// Rows restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            anomaly: self
                .anomaly
                .as_ref()
                .map(|a| indices.iter().map(|&i| a[i]).collect()),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W, with_anomaly: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.dim()).map(|j| format!("x{j}")));
        if with_anomaly {
            header.push("is_anomaly".into());
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(self.labels[i].to_string());
            rec.extend(self.features[i].iter().map(|v| v.to_string()));
            if with_anomaly {
                let flag = self.anomaly.as_ref().is_some_and(|a| a[i]);
                rec.push(if flag { "1".into() } else { "0".into() });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, with_anomaly: bool) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file), with_anomaly)
    }

    /// Parses a dataset CSV. The `y` column is required; feature columns are
    /// every column named `x<j>`; `is_anomaly` is optional.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let y_col = header
            .iter()
            .position(|h| h.trim() == "y")
            .ok_or_else(|| Error::Input("missing `y` column".into()))?;
        let x_cols: Vec<usize> = header
            .iter()
            .enumerate()
            .filter(|(_, h)| {
                h.trim()
                    .strip_prefix('x')
                    .is_some_and(|s| s.parse::<usize>().is_ok())
            })
            .map(|(i, _)| i)
            .collect();
        if x_cols.is_empty() {
            return input("no feature columns (x1, x2, ...) found");
        }
        let a_col = header.iter().position(|h| h.trim() == "is_anomaly");

        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut anomaly = a_col.map(|_| Vec::new());
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = line + 2;
            let y: Label = rec[y_col]
                .parse()
                .map_err(|e| Error::Input(format!("row {row}: {e}")))?;
            let x = x_cols
                .iter()
                .map(|&c| {
                    rec[c]
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Input(format!("row {row}: bad number {:?}", &rec[c])))
                })
                .collect::<Result<Vec<_>>>()?;
            if let (Some(c), Some(a)) = (a_col, anomaly.as_mut()) {
                a.push(match rec[c].trim() {
                    "0" => false,
                    "1" => true,
                    other => {
                        return input(format!(
                            "row {row}: is_anomaly must be 0 or 1, got {other:?}"
                        ))
                    }
                });
            }
            labels.push(y);
            features.push(x);
        }
        Self::new(features, labels, anomaly)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Squared Euclidean distance.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}
