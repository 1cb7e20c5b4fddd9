//! Statistical-distance matrix between observational and interventional
//! marginals, and its thresholded form.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scm::InterventionalDataset;

/// Empirical 1-Wasserstein distance between two sample vectors.
///
/// Equal-length inputs align sorted samples directly (the exact optimal
/// transport for 1-D). Unequal lengths evaluate both piecewise-linear
/// quantile functions on a common uniform grid of `max(n_a, n_b)` midpoints,
/// which is the regime of interest here (5000 observational rows against
/// 100 per environment).
pub fn wasserstein1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter(
            "wasserstein1d needs nonempty samples".into(),
        ));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    sb.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    Ok(wasserstein1d_sorted(&sa, &sb))
}

/// As [`wasserstein1d`] but assuming both inputs are already sorted.
pub fn wasserstein1d_sorted(sa: &[f64], sb: &[f64]) -> f64 {
    if sa.len() == sb.len() {
        let n = sa.len() as f64;
        return sa
            .iter()
            .zip(sb.iter())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n;
    }
    let k = sa.len().max(sb.len());
    let mut acc = 0.0;
    for i in 0..k {
        let q = (i as f64 + 0.5) / k as f64;
        acc += (quantile_sorted(sa, q) - quantile_sorted(sb, q)).abs();
    }
    acc / k as f64
}

/// Linear-interpolated quantile of a sorted sample at q in [0, 1].
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Raw W1 distances: entry (i, j) is the distance between the observational
/// marginal of X_j and its marginal under do(X_i). Rows for non-intervened
/// variables are flagged absent.
#[derive(Debug, Clone)]
pub struct RawDistances {
    matrix: Array2<f64>,
    present: Vec<bool>,
}

impl RawDistances {
    pub fn d(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn row_present(&self, i: usize) -> bool {
        self.present[i]
    }

    /// 0-based intervened variables, i.e. the present rows.
    pub fn targets(&self) -> Vec<usize> {
        (0..self.d()).filter(|&i| self.present[i]).collect()
    }

    pub fn from_parts(matrix: Array2<f64>, present: Vec<bool>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() != present.len() {
            return Err(Error::ShapeMismatch {
                expected: "square matrix with one flag per row".into(),
                got: format!("{}x{}, {} flags", matrix.nrows(), matrix.ncols(), present.len()),
            });
        }
        Ok(RawDistances { matrix, present })
    }
}

/// Computes the raw distance row for every environment of the dataset. The
/// diagonal entries (distance of the intervened variable to itself) are
/// stored but never consumed by the score.
pub fn build_raw_distances(ds: &InterventionalDataset) -> Result<RawDistances> {
    if ds.envs.is_empty() {
        return Err(Error::InvalidParameter(
            "dataset has no interventional environments".into(),
        ));
    }
    let d = ds.d();
    let mut obs_sorted: Vec<Vec<f64>> = Vec::with_capacity(d);
    for j in 0..d {
        let mut col: Vec<f64> = ds.obs.column(j).to_vec();
        col.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
        obs_sorted.push(col);
    }
    let mut matrix = Array2::<f64>::zeros((d, d));
    let mut present = vec![false; d];
    for env in &ds.envs {
        present[env.target] = true;
        for j in 0..d {
            let mut col: Vec<f64> = env.data.column(j).to_vec();
            col.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
            matrix[[env.target, j]] = wasserstein1d_sorted(&obs_sorted[j], &col);
        }
    }
    RawDistances::from_parts(matrix, present)
}

/// The thresholded matrix consumed by the order score:
/// `D_ij = (raw_ij - eps) + c*d*[raw_ij > eps]` on present rows with i != j,
/// zero elsewhere. Sub-threshold entries stay negative on purpose: they
/// penalize placing i before j.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    values: Array2<f64>,
    eps: f64,
    c: f64,
    targets: Vec<usize>,
}

impl DistanceMatrix {
    pub fn d(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// 0-based intervention set I.
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Wraps an arbitrary matrix for score consumption (tests, synthetic
    /// reachability-based inputs). Rows not listed in `targets` are zeroed,
    /// as is the diagonal.
    pub fn from_raw_values(mut values: Array2<f64>, targets: Vec<usize>, eps: f64, c: f64) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::ShapeMismatch {
                expected: "square matrix".into(),
                got: format!("{}x{}", values.nrows(), values.ncols()),
            });
        }
        let d = values.nrows();
        let mut in_set = vec![false; d];
        for &t in &targets {
            if t >= d {
                return Err(Error::InvalidParameter(format!("target {t} out of range")));
            }
            in_set[t] = true;
        }
        for i in 0..d {
            for j in 0..d {
                if i == j || !in_set[i] {
                    values[[i, j]] = 0.0;
                }
            }
        }
        Ok(DistanceMatrix {
            values,
            eps,
            c,
            targets,
        })
    }
}

/// Default threshold for linear and RFF data.
pub const DEFAULT_EPS: f64 = 0.3;
/// Default bonus coefficient.
pub const DEFAULT_C: f64 = 0.5;

/// Applies the epsilon threshold and c*d bonus to the raw distances.
/// The indicator is strict: an entry exactly at eps earns no bonus.
pub fn threshold_matrix(raw: &RawDistances, eps: f64, c: f64) -> Result<DistanceMatrix> {
    if eps <= 0.0 {
        return Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}")));
    }
    if c < 0.0 {
        return Err(Error::InvalidParameter(format!("c must be >= 0, got {c}")));
    }
    let d = raw.d();
    let bonus = c * d as f64;
    let mut values = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        if !raw.row_present(i) {
            continue;
        }
        for j in 0..d {
            if i == j {
                continue;
            }
            let r = raw.matrix()[[i, j]];
            values[[i, j]] = (r - eps) + if r > eps { bonus } else { 0.0 };
        }
    }
    Ok(DistanceMatrix {
        values,
        eps,
        c,
        targets: raw.targets(),
    })
}

#[derive(Serialize, Deserialize)]
struct DistanceSidecar {
    eps: f64,
    c: f64,
    /// 1-based intervention set.
    targets: Vec<usize>,
}

impl DistanceMatrix {
    /// Writes `<stem>.csv` with the matrix and `<stem>.json` with eps, c,
    /// and the intervention set.
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        let csv_path = stem.with_extension("csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::csv(&csv_path, e))?;
        for i in 0..self.d() {
            let row: Vec<String> = (0..self.d())
                .map(|j| format!("{}", self.values[[i, j]]))
                .collect();
            w.write_record(&row).map_err(|e| Error::csv(&csv_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        let sidecar = DistanceSidecar {
            eps: self.eps,
            c: self.c,
            targets: self.targets.iter().map(|&t| t + 1).collect(),
        };
        let json_path = stem.with_extension("json");
        let body = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::Manifest(format!("serialize distance sidecar: {e}")))?;
        std::fs::write(&json_path, body).map_err(|e| Error::io(&json_path, e))?;
        Ok(())
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<Self> {
        let stem = stem.as_ref();
        let json_path = stem.with_extension("json");
        let raw = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let sidecar: DistanceSidecar = serde_json::from_str(&raw)
            .map_err(|e| Error::Manifest(format!("{}: {e}", json_path.display())))?;
        let csv_path = stem.with_extension("csv");
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(&csv_path)
            .map_err(|e| Error::csv(&csv_path, e))?;
        let mut data = Vec::new();
        let mut nrows = 0;
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::csv(&csv_path, e))?;
            for field in rec.iter() {
                data.push(field.parse::<f64>().map_err(|_| {
                    Error::Manifest(format!("{}: non-numeric field", csv_path.display()))
                })?);
            }
            nrows += 1;
        }
        let values = Array2::from_shape_vec((nrows, data.len() / nrows.max(1)), data)
            .map_err(|_| Error::ShapeMismatch {
                expected: "square csv".into(),
                got: csv_path.display().to_string(),
            })?;
        DistanceMatrix::from_raw_values(
            values,
            sidecar.targets.iter().map(|&t| t - 1).collect(),
            sidecar.eps,
            sidecar.c,
        )
    }
}
