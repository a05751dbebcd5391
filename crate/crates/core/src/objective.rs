//! Local convex objectives `f_i` with subgradient oracles, and the dataset
//! plumbing behind the classification objectives.
//!
//! Decision vectors are flat `f64` slices. For the classification kinds the
//! weight matrix `X` (features x classes) is flattened column-major, so class
//! `j`'s weights occupy `x[j * n_f..(j + 1) * n_f]`.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};

/// A labelled feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
    normalized: bool,
    constant_columns: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::param(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if n_classes < 2 {
            return Err(Error::param("a classification dataset needs n_c >= 2"));
        }
        let n_features = features.first().map_or(0, Vec::len);
        if let Some(row) = features.iter().position(|r| r.len() != n_features) {
            return Err(Error::param(format!("row {row} has a different feature count")));
        }
        if let Some(row) = labels.iter().position(|&l| l >= n_classes) {
            return Err(Error::param(format!(
                "row {row} has label {} outside 0..{n_classes}",
                labels[row]
            )));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::param("dataset contains non-finite features"));
        }
        Ok(Self {
            features,
            labels,
            n_features,
            n_classes,
            normalized: false,
            constant_columns: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Non-categorical columns that had zero variance and were left as-is.
    pub fn constant_columns(&self) -> &[usize] {
        &self.constant_columns
    }

    /// Standardizes every non-categorical column to zero mean and unit
    /// population standard deviation.
    pub fn normalize(&self, categorical: &BTreeSet<usize>) -> Result<Dataset> {
        if self.normalized {
            return Err(Error::State("dataset is already normalized".into()));
        }
        let mut out = self.clone();
        let rows = self.len() as f64;
        for col in 0..self.n_features {
            if categorical.contains(&col) || self.is_empty() {
                continue;
            }
            let mean = self.features.iter().map(|r| r[col]).sum::<f64>() / rows;
            let var = self
                .features
                .iter()
                .map(|r| (r[col] - mean).powi(2))
                .sum::<f64>()
                / rows;
            let std = var.sqrt();
            if std <= f64::EPSILON * mean.abs().max(1.0) {
                out.constant_columns.push(col);
                continue;
            }
            for row in &mut out.features {
                row[col] = (row[col] - mean) / std;
            }
        }
        out.normalized = true;
        Ok(out)
    }

    /// Splits rows across `parts` shards: the first `parts * floor(len/parts)`
    /// rows are dealt round-robin, leftover rows go to the last shard.
    pub fn shard(&self, parts: usize) -> Result<Vec<Dataset>> {
        if parts == 0 || parts > self.len() {
            return Err(Error::param(format!(
                "cannot split {} rows into {parts} shards",
                self.len()
            )));
        }
        let per = self.len() / parts;
        let mut shards: Vec<Dataset> = (0..parts)
            .map(|_| Dataset {
                features: Vec::with_capacity(per + parts),
                labels: Vec::with_capacity(per + parts),
                ..self.clone_empty()
            })
            .collect();
        for (row, (feat, &label)) in self.features.iter().zip(&self.labels).enumerate() {
            let dst = if row < per * parts { row % parts } else { parts - 1 };
            shards[dst].features.push(feat.clone());
            shards[dst].labels.push(label);
        }
        Ok(shards)
    }

    fn clone_empty(&self) -> Dataset {
        Dataset {
            features: Vec::new(),
            labels: Vec::new(),
            n_features: self.n_features,
            n_classes: self.n_classes,
            normalized: self.normalized,
            constant_columns: self.constant_columns.clone(),
        }
    }

    /// Reads the CSV layout `f0,...,f{n_f-1},label` with a header row.
    /// `n_classes` defaults to `max(label) + 1`.
    pub fn read_csv<R: Read>(reader: R, n_classes: Option<usize>) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let n_f = headers.len().checked_sub(1).ok_or_else(|| {
            Error::param("dataset CSV needs at least a label column")
        })?;
        for (i, h) in headers.iter().enumerate() {
            let expected = if i == n_f { "label".to_string() } else { format!("f{i}") };
            if h.trim() != expected {
                return Err(Error::param(format!(
                    "dataset CSV column {i} is `{h}`, expected `{expected}`"
                )));
            }
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut row = Vec::with_capacity(n_f);
            for v in rec.iter().take(n_f) {
                row.push(v.trim().parse::<f64>().map_err(|_| {
                    Error::param(format!("row {line}: bad feature value `{v}`"))
                })?);
            }
            let label = rec.get(n_f).unwrap_or("").trim();
            labels.push(label.parse::<usize>().map_err(|_| {
                Error::param(format!("row {line}: bad label `{label}`"))
            })?);
            features.push(row);
        }
        let n_c = n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        Dataset::new(features, labels, n_c)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.n_features).map(|i| format!("f{i}")).collect();
        header.push("label".into());
        wtr.write_record(&header)?;
        for (row, label) in self.features.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            rec.push(label.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// A local objective `f_i`.
#[derive(Clone, Debug)]
pub enum ObjectiveSpec {
    /// `weight * ||x - center||_1`.
    AbsDeviation { center: Vec<f64>, weight: f64 },
    /// `weight / 2 * ||x - center||^2`.
    Quadratic { center: Vec<f64>, weight: f64 },
    /// Multiclass negative log-likelihood plus `gamma / 2 * ||X||_F^2`.
    Logistic { data: Arc<Dataset>, gamma: f64 },
    /// Multiclass hinge loss plus `gamma / 2 * ||X||_F^2`.
    Hinge { data: Arc<Dataset>, gamma: f64 },
}

impl ObjectiveSpec {
    pub fn abs(center: f64) -> Self {
        ObjectiveSpec::AbsDeviation { center: vec![center], weight: 1.0 }
    }

    pub fn quadratic(center: f64) -> Self {
        ObjectiveSpec::Quadratic { center: vec![center], weight: 1.0 }
    }

    /// The identically-zero objective of dimension `dim`.
    pub fn zero(dim: usize) -> Self {
        ObjectiveSpec::Quadratic { center: vec![0.0; dim], weight: 0.0 }
    }

    pub fn logistic(data: Arc<Dataset>, gamma: f64) -> Self {
        ObjectiveSpec::Logistic { data, gamma }
    }

    pub fn hinge(data: Arc<Dataset>, gamma: f64) -> Self {
        ObjectiveSpec::Hinge { data, gamma }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ObjectiveSpec::AbsDeviation { .. } => "abs_deviation",
            ObjectiveSpec::Quadratic { .. } => "quadratic",
            ObjectiveSpec::Logistic { .. } => "logistic_multiclass",
            ObjectiveSpec::Hinge { .. } => "hinge_svm",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ObjectiveSpec::AbsDeviation { center, .. } | ObjectiveSpec::Quadratic { center, .. } => {
                center.len()
            }
            ObjectiveSpec::Logistic { data, .. } | ObjectiveSpec::Hinge { data, .. } => {
                data.n_features() * data.n_classes()
            }
        }
    }

    /// Number of training instances behind the objective (1 for the analytic kinds).
    pub fn instances(&self) -> usize {
        match self {
            ObjectiveSpec::Logistic { data, .. } | ObjectiveSpec::Hinge { data, .. } => data.len(),
            _ => 1,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::param(format!(
                "{} objective has dimension {}, got a vector of length {}",
                self.kind_name(),
                self.dim(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self {
            ObjectiveSpec::AbsDeviation { center, weight } => {
                weight * x.iter().zip(center).map(|(a, c)| (a - c).abs()).sum::<f64>()
            }
            ObjectiveSpec::Quadratic { center, weight } => {
                0.5 * weight * x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
            }
            ObjectiveSpec::Logistic { data, gamma } => {
                let mut scores = vec![0.0; data.n_classes()];
                let mut loss = 0.0;
                for (s, &label) in data.features().iter().zip(data.labels()) {
                    class_scores(x, s, &mut scores);
                    loss += log_sum_exp(&scores) - scores[label];
                }
                loss + 0.5 * gamma * sq_norm(x)
            }
            ObjectiveSpec::Hinge { data, gamma } => {
                let mut scores = vec![0.0; data.n_classes()];
                let mut loss = 0.0;
                for (s, &label) in data.features().iter().zip(data.labels()) {
                    class_scores(x, s, &mut scores);
                    for (j, &sj) in scores.iter().enumerate() {
                        if j != label {
                            loss += (sj - scores[label] + 1.0).max(0.0);
                        }
                    }
                }
                loss + 0.5 * gamma * sq_norm(x)
            }
        })
    }

    /// A subgradient at `x`. At kinks the element of minimal magnitude along
    /// the kink is chosen, which is 0 for `|.|` and for the hinge.
    pub fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut g = vec![0.0; x.len()];
        match self {
            ObjectiveSpec::AbsDeviation { center, weight } => {
                for ((gi, a), c) in g.iter_mut().zip(x).zip(center) {
                    let d = a - c;
                    *gi = if d > 0.0 {
                        *weight
                    } else if d < 0.0 {
                        -weight
                    } else {
                        0.0
                    };
                }
            }
            ObjectiveSpec::Quadratic { center, weight } => {
                for ((gi, a), c) in g.iter_mut().zip(x).zip(center) {
                    *gi = weight * (a - c);
                }
            }
            ObjectiveSpec::Logistic { data, gamma } => {
                let n_f = data.n_features();
                let mut scores = vec![0.0; data.n_classes()];
                for (s, &label) in data.features().iter().zip(data.labels()) {
                    class_scores(x, s, &mut scores);
                    let lse = log_sum_exp(&scores);
                    for (j, &sj) in scores.iter().enumerate() {
                        let coef = (sj - lse).exp() - if j == label { 1.0 } else { 0.0 };
                        for (gk, sk) in g[j * n_f..(j + 1) * n_f].iter_mut().zip(s) {
                            *gk += coef * sk;
                        }
                    }
                }
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += gamma * xi;
                }
            }
            ObjectiveSpec::Hinge { data, gamma } => {
                let n_f = data.n_features();
                let mut scores = vec![0.0; data.n_classes()];
                for (s, &label) in data.features().iter().zip(data.labels()) {
                    class_scores(x, s, &mut scores);
                    for j in 0..scores.len() {
                        if j == label || scores[j] - scores[label] + 1.0 <= 0.0 {
                            continue;
                        }
                        for (k, sk) in s.iter().enumerate() {
                            g[j * n_f + k] += sk;
                            g[label * n_f + k] -= sk;
                        }
                    }
                }
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += gamma * xi;
                }
            }
        }
        Ok(g)
    }

    /// Upper bound on `||subgradient||_2` over the ball `||x||_2 <= radius`.
    pub fn subgradient_bound(&self, radius: f64) -> f64 {
        match self {
            ObjectiveSpec::AbsDeviation { center, weight } => weight.abs() * (center.len() as f64).sqrt(),
            ObjectiveSpec::Quadratic { center, weight } => weight.abs() * (radius + sq_norm(center).sqrt()),
            ObjectiveSpec::Logistic { data, gamma } => {
                let rows: f64 = data.features().iter().map(|s| sq_norm(s).sqrt()).sum();
                std::f64::consts::SQRT_2 * rows + gamma * radius
            }
            ObjectiveSpec::Hinge { data, gamma } => {
                let rows: f64 = data.features().iter().map(|s| sq_norm(s).sqrt()).sum();
                let pairs = (data.n_classes() - 1) as f64;
                2.0 * pairs * rows + gamma * radius
            }
        }
    }
}

/// Sum of several objectives evaluated at one point.
pub fn total_value(objs: &[ObjectiveSpec], x: &[f64]) -> Result<f64> {
    objs.iter().map(|o| o.value(x)).sum()
}

pub fn total_subgradient(objs: &[ObjectiveSpec], x: &[f64]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    for o in objs {
        for (a, b) in g.iter_mut().zip(o.subgradient(x)?) {
            *a += b;
        }
    }
    Ok(g)
}

/// Central-difference check of the subgradient oracle: the maximum over
/// coordinates of `|fd - g| / (1 + |g|)`.
pub fn check_subgradient_fd(obj: &ObjectiveSpec, x: &[f64], h: f64) -> Result<f64> {
    let g = obj.subgradient(x)?;
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = obj.value(&probe)?;
        probe[i] = x[i] - h;
        let down = obj.value(&probe)?;
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / (1.0 + g[i].abs()));
    }
    Ok(worst)
}

fn class_scores(x: &[f64], s: &[f64], scores: &mut [f64]) {
    let n_f = s.len();
    for (j, score) in scores.iter_mut().enumerate() {
        *score = x[j * n_f..(j + 1) * n_f].iter().zip(s).map(|(a, b)| a * b).sum();
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}
