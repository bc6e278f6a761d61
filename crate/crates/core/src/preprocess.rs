//! Subject time series, correlation matrices, the on-disk dataset layout and
//! the synthetic planted-block generator.
//!
//! Dataset directory layout:
//!
//! ```text
//! labels.csv          subject_id,label      (header required)
//! <subject_id>.csv    N rows × T columns, comma separated, no header
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const LABELS_FILE: &str = "labels.csv";

/// Loading weight of the shared block factor in synthetic signals.
pub const SYNTH_FACTOR_WEIGHT: f64 = 0.8;

/// One subject's ROI × time series with its diagnosis label
/// (0 = control, 1 = disease).
#[derive(Debug, Clone, PartialEq)]
pub struct BoldMatrix {
    pub subject_id: String,
    pub series: Matrix,
    pub label: u8,
}

impl BoldMatrix {
    pub fn new(subject_id: impl Into<String>, series: Matrix, label: u8) -> Result<Self> {
        let subject_id = subject_id.into();
        if series.rows() < 2 || series.cols() < 3 {
            return Err(Error::Validation(format!(
                "subject {subject_id}: need at least 2 ROIs and 3 time steps, got {}x{}",
                series.rows(),
                series.cols()
            )));
        }
        if !series.is_finite() {
            return Err(Error::Validation(format!(
                "subject {subject_id}: series contains non-finite values"
            )));
        }
        if label > 1 {
            return Err(Error::Validation(format!(
                "subject {subject_id}: label must be 0 or 1, got {label}"
            )));
        }
        Ok(BoldMatrix {
            subject_id,
            series,
            label,
        })
    }

    pub fn n_rois(&self) -> usize {
        self.series.rows()
    }

    pub fn t_steps(&self) -> usize {
        self.series.cols()
    }
}

/// Symmetric Pearson correlation matrix; doubles as the node feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix(Matrix);

impl CorrMatrix {
    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    /// Wraps a matrix after checking symmetry and the `[-1, 1]` range.
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::Validation(format!(
                "correlation matrix must be square, got {:?}",
                m.shape()
            )));
        }
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let v = m[(i, j)];
                if !(-1.0..=1.0).contains(&v) || (v - m[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Validation(format!(
                        "entry ({i},{j}) = {v} breaks symmetry or range"
                    )));
                }
            }
        }
        Ok(CorrMatrix(m))
    }
}

/// Pearson correlation between ROI rows with population moments.
///
/// A zero-variance row correlates 0 with every other row and 1 with itself.
pub fn pearson_correlation(x: &BoldMatrix) -> Result<CorrMatrix> {
    let s = &x.series;
    if s.cols() < 3 {
        return Err(Error::Validation(format!(
            "need at least 3 time steps, got {}",
            s.cols()
        )));
    }
    if !s.is_finite() {
        return Err(Error::Validation(format!(
            "subject {}: non-finite values in series",
            x.subject_id
        )));
    }
    let (n, t) = s.shape();
    let tf = t as f64;
    let mut centered = Matrix::zeros(n, t);
    let mut norms = vec![0.0; n];
    for i in 0..n {
        let row = s.row(i);
        let mean = row.iter().sum::<f64>() / tf;
        let c = centered.row_mut(i);
        for (dst, &v) in c.iter_mut().zip(row) {
            *dst = v - mean;
        }
        norms[i] = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let r = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = centered
                    .row(i)
                    .iter()
                    .zip(centered.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            v[(i, j)] = r;
            v[(j, i)] = r;
        }
    }
    Ok(CorrMatrix(v))
}

/// Ordered collection of subjects sharing one ROI count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub subjects: Vec<BoldMatrix>,
}

impl Dataset {
    /// Sorts subjects by id and checks that all share N and T.
    pub fn new(name: impl Into<String>, mut subjects: Vec<BoldMatrix>) -> Result<Self> {
        subjects.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        if let Some(first) = subjects.first() {
            let shape = first.series.shape();
            for s in &subjects[1..] {
                if s.series.shape() != shape {
                    return Err(Error::Validation(format!(
                        "subject {} has shape {:?}, expected {:?}",
                        s.subject_id,
                        s.series.shape(),
                        shape
                    )));
                }
            }
        }
        for pair in subjects.windows(2) {
            if pair[0].subject_id == pair[1].subject_id {
                return Err(Error::Validation(format!(
                    "duplicate subject id {}",
                    pair[0].subject_id
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            subjects,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// `(N, T)` of the subjects, `None` when empty.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.subjects.first().map(|s| s.series.shape())
    }

    pub fn labels(&self) -> Vec<u8> {
        self.subjects.iter().map(|s| s.label).collect()
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.subjects.iter().filter(|s| s.label == 1).count();
        pos > 0 && pos < self.len()
    }

    pub fn position(&self, subject_id: &str) -> Option<usize> {
        self.subjects
            .binary_search_by(|s| s.subject_id.as_str().cmp(subject_id))
            .ok()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    subject_id: String,
    label: String,
}

/// Reads a dataset directory (see module docs). Subjects come back sorted
/// by id; every subject must match the first one's N×T.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let labels_path = dir.join(LABELS_FILE);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&labels_path)
        .map_err(|e| Error::Load {
            path: labels_path.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["subject_id", "label"] {
        return Err(Error::Load {
            path: labels_path,
            line: 1,
            msg: format!("expected header `subject_id,label`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut entries = Vec::new();
    for (idx, row) in reader.deserialize::<LabelRow>().enumerate() {
        let line = idx + 2;
        let row = row.map_err(|e| Error::Load {
            path: labels_path.clone(),
            line,
            msg: e.to_string(),
        })?;
        let label = match row.label.trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Load {
                    path: labels_path.clone(),
                    line,
                    msg: format!("label must be 0 or 1, got `{other}`"),
                })
            }
        };
        let id = row.subject_id.trim().to_string();
        if id.is_empty() || id.contains(['/', '\\']) {
            return Err(Error::Load {
                path: labels_path.clone(),
                line,
                msg: format!("invalid subject id `{id}`"),
            });
        }
        entries.push((id, label));
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));

    let mut subjects = Vec::with_capacity(entries.len());
    let mut expected: Option<(usize, usize)> = None;
    for (id, label) in entries {
        let path = dir.join(format!("{id}.csv"));
        let series = read_series(&path)?;
        match expected {
            None => expected = Some(series.shape()),
            Some((n, t)) if series.shape() != (n, t) => {
                return Err(Error::Load {
                    path,
                    line: 0,
                    msg: format!(
                        "shape {:?} differs from the dataset's {n}x{t}",
                        series.shape()
                    ),
                })
            }
            Some(_) => {}
        }
        subjects.push(BoldMatrix::new(id, series, label).map_err(|e| Error::Load {
            path: path.clone(),
            line: 0,
            msg: e.to_string(),
        })?);
    }
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, subjects)
}

fn read_series(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Load {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Load {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Load {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("row has {} columns, expected {c}", record.len()),
                })
            }
            Some(_) => {}
        }
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Load {
                path: path.to_path_buf(),
                line,
                msg: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Load {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("non-finite value `{field}`"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

/// Writes `dataset` in the directory layout read by [`load_dataset`], values
/// in 17-significant-digit scientific notation so the round trip is exact.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut labels = String::from("subject_id,label\n");
    for s in &dataset.subjects {
        labels.push_str(&format!("{},{}\n", s.subject_id, s.label));
        let path = dir.join(format!("{}.csv", s.subject_id));
        let mut out = String::new();
        for i in 0..s.series.rows() {
            let row: Vec<String> = s.series.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(LABELS_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(labels.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Block membership of `roi` under the class-specific partition. Class 0
/// splits ROIs into halves; class 1 uses the same halves rotated by N/4.
pub fn synthetic_block(roi: usize, n_rois: usize, label: u8) -> usize {
    let shifted = if label == 0 {
        roi
    } else {
        (roi + n_rois / 4) % n_rois
    };
    usize::from(shifted >= n_rois / 2)
}

/// Planted two-block latent-factor dataset.
///
/// Subject `k` is named `sub-{k:04}` and has label `k % 2`. Randomness comes
/// from one `ChaCha8Rng::seed_from_u64(seed)` stream, consumed per subject
/// as: block factor 0 (T standard normals), block factor 1 (T), then ROI
/// noise row by row (N×T). Each signal is
/// `w·factor[block] + sqrt(1 - w²)·noise` with `w = 0.8`.
pub fn generate_synthetic(
    n_subjects: usize,
    n_rois: usize,
    t_steps: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_subjects < 4 || !n_subjects.is_multiple_of(2) {
        return Err(Error::Validation(format!(
            "n_subjects must be even and at least 4, got {n_subjects}"
        )));
    }
    if n_rois < 8 {
        return Err(Error::Validation(format!("n_rois must be at least 8, got {n_rois}")));
    }
    if t_steps < 32 {
        return Err(Error::Validation(format!(
            "t_steps must be at least 32, got {t_steps}"
        )));
    }
    let w = SYNTH_FACTOR_WEIGHT;
    let noise_w = (1.0 - w * w).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut subjects = Vec::with_capacity(n_subjects);
    for k in 0..n_subjects {
        let label = (k % 2) as u8;
        let factors: [Vec<f64>; 2] = [
            (0..t_steps).map(|_| draw()).collect(),
            (0..t_steps).map(|_| draw()).collect(),
        ];
        let mut series = Matrix::zeros(n_rois, t_steps);
        for r in 0..n_rois {
            let f = &factors[synthetic_block(r, n_rois, label)];
            for (t, dst) in series.row_mut(r).iter_mut().enumerate() {
                *dst = w * f[t] + noise_w * draw();
            }
        }
        subjects.push(BoldMatrix::new(format!("sub-{k:04}"), series, label)?);
    }
    Dataset::new(format!("synthetic-{seed}"), subjects)
}
