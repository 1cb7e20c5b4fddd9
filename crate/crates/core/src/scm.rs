//! Structural causal model simulation: observational and single-target
//! interventional data from linear and random-Fourier-feature mechanisms.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// Exogenous-noise family for the structural equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    /// Gaussian with a scale independent of the parents.
    UniformGaussian,
    /// Gaussian whose scale is softplus of a linear function of the parents.
    HeteroscedasticGaussian,
    Laplace,
}

impl NoiseFamily {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseFamily::UniformGaussian => "uniform-gaussian",
            NoiseFamily::HeteroscedasticGaussian => "heteroscedastic-gaussian",
            NoiseFamily::Laplace => "laplace",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    /// Base scale; must be strictly positive.
    pub scale: f64,
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, scale: f64) -> Result<Self> {
        if scale <= 0.0 || !scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise scale must be positive, got {scale}"
            )));
        }
        Ok(NoiseSpec { family, scale })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismKind {
    Linear,
    Rff,
}

impl MechanismKind {
    pub fn name(&self) -> &'static str {
        match self {
            MechanismKind::Linear => "linear",
            MechanismKind::Rff => "rff",
        }
    }
}

/// Random cosine features for one node: f(x_pa) = sum_k amp_k * cos(<freq_k, x_pa> + phase_k).
#[derive(Debug, Clone)]
struct RffNode {
    parents: Vec<usize>,
    /// n_features x |parents|
    freqs: Array2<f64>,
    phases: Vec<f64>,
    amps: Vec<f64>,
}

pub const RFF_FEATURES: usize = 10;

#[derive(Debug, Clone)]
enum MechanismParams {
    Linear {
        /// weights[[i, j]] is the coefficient of parent i in the equation
        /// for j; nonzero only where the graph has an edge i -> j.
        weights: Array2<f64>,
        bias: Vec<f64>,
    },
    Rff {
        nodes: Vec<RffNode>,
    },
}

/// Per-node parameters of the heteroscedastic noise scale
/// softplus(coeffs . x_pa + offset).
#[derive(Debug, Clone)]
struct HetNode {
    coeffs: Vec<f64>,
}

/// A fully parameterized SCM over a fixed DAG. Parameters are drawn once in
/// [`build_mechanism`] and reused for every sampling call.
#[derive(Debug, Clone)]
pub struct Mechanism {
    graph: Dag,
    topo: Vec<usize>,
    noise: NoiseSpec,
    params: MechanismParams,
    het: Vec<HetNode>,
}

impl Mechanism {
    pub fn d(&self) -> usize {
        self.graph.d()
    }

    pub fn graph(&self) -> &Dag {
        &self.graph
    }

    pub fn kind(&self) -> MechanismKind {
        match self.params {
            MechanismParams::Linear { .. } => MechanismKind::Linear,
            MechanismParams::Rff { .. } => MechanismKind::Rff,
        }
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    /// Linear weight matrix, when the mechanism is linear.
    pub fn linear_weights(&self) -> Option<&Array2<f64>> {
        match &self.params {
            MechanismParams::Linear { weights, .. } => Some(weights),
            MechanismParams::Rff { .. } => None,
        }
    }

    pub fn linear_bias(&self) -> Option<&[f64]> {
        match &self.params {
            MechanismParams::Linear { bias, .. } => Some(bias),
            MechanismParams::Rff { .. } => None,
        }
    }
}

/// Replacement noise for a do-intervention: X_k := Normal(mean_shift, std^2),
/// independent of the parents. The mean shift (in standardized units) is what
/// makes downstream distribution shifts detectable.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub mean_shift: f64,
    pub std: f64,
}

impl Default for InterventionSpec {
    fn default() -> Self {
        InterventionSpec {
            mean_shift: 2.0,
            std: 1.0,
        }
    }
}

/// Draws mechanism parameters for a graph.
///
/// Linear weights are uniform on +-[0.5, 2.0] (bounded away from zero so
/// every path produces a detectable shift) with biases uniform on [-1, 1].
/// RFF nodes get [`RFF_FEATURES`] cosine features with standard-normal
/// frequencies, uniform phases, and amplitudes scaled to unit output
/// variance.
pub fn build_mechanism(g: &Dag, kind: MechanismKind, noise: NoiseSpec, seed: u64) -> Mechanism {
    let d = g.d();
    let mut rng = rng_from_seed(seed);
    let topo = g.topological_order().expect("Dag invariant");

    let params = match kind {
        MechanismKind::Linear => {
            let mut weights = Array2::zeros((d, d));
            for i in 0..d {
                for j in 0..d {
                    if g.has_edge(i, j) {
                        let mag = rng.gen_range(0.5..=2.0);
                        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                        weights[[i, j]] = sign * mag;
                    }
                }
            }
            let bias = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            MechanismParams::Linear { weights, bias }
        }
        MechanismKind::Rff => {
            let normal = Normal::new(0.0, 1.0).unwrap();
            let nodes = (0..d)
                .map(|j| {
                    let parents = g.parents(j);
                    let np = parents.len();
                    let freqs =
                        Array2::from_shape_fn((RFF_FEATURES, np), |_| normal.sample(&mut rng));
                    let phases = (0..RFF_FEATURES)
                        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                        .collect();
                    let amp_scale = (2.0 / RFF_FEATURES as f64).sqrt();
                    let amps = (0..RFF_FEATURES)
                        .map(|_| amp_scale * normal.sample(&mut rng))
                        .collect();
                    RffNode {
                        parents,
                        freqs,
                        phases,
                        amps,
                    }
                })
                .collect();
            MechanismParams::Rff { nodes }
        }
    };

    // Heteroscedastic coefficients are drawn for every node so that the
    // mechanism is self-contained whichever noise family is requested.
    let normal = Normal::new(0.0, 1.0).unwrap();
    let het = (0..d)
        .map(|j| {
            let np = g.parents(j).len();
            let scale = if np > 0 { 1.0 / (np as f64).sqrt() } else { 0.0 };
            HetNode {
                coeffs: (0..np).map(|_| scale * normal.sample(&mut rng)).collect(),
            }
        })
        .collect();

    Mechanism {
        graph: g.clone(),
        topo,
        noise,
        params,
        het,
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn laplace_draw(rng: &mut Rng, scale: f64) -> f64 {
    // Inverse-CDF: u in (-1/2, 1/2], x = -b * sgn(u) * ln(1 - 2|u|).
    let u: f64 = rng.gen::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Softplus offset chosen so the scale is exactly the base scale when the
/// parent combination is zero: softplus(ln(e - 1)) = 1.
const HET_OFFSET: f64 = 0.541_324_854_612_918_1;

fn noise_draw(
    spec: &NoiseSpec,
    het: &HetNode,
    parent_values: &[f64],
    rng: &mut Rng,
) -> f64 {
    match spec.family {
        NoiseFamily::UniformGaussian => {
            Normal::new(0.0, spec.scale).unwrap().sample(rng)
        }
        NoiseFamily::HeteroscedasticGaussian => {
            let lin: f64 = het
                .coeffs
                .iter()
                .zip(parent_values)
                .map(|(c, x)| c * x)
                .sum();
            let sd = spec.scale * softplus(lin + HET_OFFSET);
            Normal::new(0.0, sd.max(1e-12)).unwrap().sample(rng)
        }
        NoiseFamily::Laplace => laplace_draw(rng, spec.scale),
    }
}

/// Ancestral sampling of `n` rows, optionally under a single-target
/// intervention that replaces the target's structural assignment with
/// i.i.d. draws of the replacement noise.
pub fn sample(
    m: &Mechanism,
    n: usize,
    intervention: Option<(usize, InterventionSpec)>,
    seed: u64,
) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("need n >= 1 samples".into()));
    }
    if let Some((k, _)) = intervention {
        if k >= m.d() {
            return Err(Error::InvalidParameter(format!(
                "intervention target {k} out of range for d={}",
                m.d()
            )));
        }
    }
    let d = m.d();
    let mut rng = rng_from_seed(seed);
    let mut x = Array2::<f64>::zeros((n, d));

    for &j in &m.topo {
        if let Some((k, int)) = intervention {
            if j == k {
                let dist = Normal::new(int.mean_shift, int.std).map_err(|_| {
                    Error::InvalidParameter("intervention std must be positive".into())
                })?;
                for s in 0..n {
                    x[[s, j]] = dist.sample(&mut rng);
                }
                continue;
            }
        }
        let parents = m.graph.parents(j);
        let mut parent_vals = vec![0.0; parents.len()];
        for s in 0..n {
            for (pi, &p) in parents.iter().enumerate() {
                parent_vals[pi] = x[[s, p]];
            }
            let structural = match &m.params {
                MechanismParams::Linear { weights, bias } => {
                    let mut acc = bias[j];
                    for &p in &parents {
                        acc += weights[[p, j]] * x[[s, p]];
                    }
                    acc
                }
                MechanismParams::Rff { nodes } => {
                    let node = &nodes[j];
                    let mut acc = 0.0;
                    for f in 0..RFF_FEATURES {
                        let mut arg = node.phases[f];
                        for (pi, _) in node.parents.iter().enumerate() {
                            arg += node.freqs[[f, pi]] * parent_vals[pi];
                        }
                        acc += node.amps[f] * arg.cos();
                    }
                    acc
                }
            };
            x[[s, j]] = structural + noise_draw(&m.noise, &m.het[j], &parent_vals, &mut rng);
        }
    }
    Ok(x)
}

/// Per-variable mean/std taken from the observational data and applied to
/// every environment, removing the varsortability artifact.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Population statistics of the rows of `x`. Errors on (near) zero
    /// variance columns, where standardization is undefined.
    pub fn fit(x: &Array2<f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::Degenerate(
                "standardization needs at least 2 observational samples".into(),
            ));
        }
        let d = x.ncols();
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for j in 0..d {
            let col = x.column(j);
            let mu = col.sum() / n as f64;
            let var = col.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            if var < 1e-24 {
                return Err(Error::Degenerate(format!(
                    "variable {} has zero variance in the observational data",
                    j + 1
                )));
            }
            mean[j] = mu;
            std[j] = var.sqrt();
        }
        Ok(Standardization { mean, std })
    }

    pub fn apply(&self, x: &mut Array2<f64>) {
        for s in 0..x.nrows() {
            for j in 0..x.ncols() {
                x[[s, j]] = (x[[s, j]] - self.mean[j]) / self.std[j];
            }
        }
    }
}

/// One interventional regime: all rows were sampled under do(X_target).
#[derive(Debug, Clone)]
pub struct Environment {
    /// 0-based intervened variable.
    pub target: usize,
    pub data: Array2<f64>,
}

/// Observational samples plus one environment per intervened variable, all
/// standardized with the observational statistics.
#[derive(Debug, Clone)]
pub struct InterventionalDataset {
    pub obs: Array2<f64>,
    pub envs: Vec<Environment>,
    pub standardization: Standardization,
}

impl InterventionalDataset {
    pub fn d(&self) -> usize {
        self.obs.ncols()
    }

    /// 0-based intervention targets, one per environment.
    pub fn targets(&self) -> Vec<usize> {
        self.envs.iter().map(|e| e.target).collect()
    }
}

/// Samples an observational block and one interventional environment per
/// target, then standardizes everything with the observational statistics.
/// Targets are `ceil(p_int * d)` distinct variables chosen uniformly.
pub fn generate_benchmark(
    m: &Mechanism,
    n_obs: usize,
    n_int: usize,
    p_int: f64,
    int: InterventionSpec,
    seed: u64,
) -> Result<InterventionalDataset> {
    if !(p_int > 0.0 && p_int <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "p_int must be in (0, 1], got {p_int}"
        )));
    }
    if n_obs < 2 {
        return Err(Error::Degenerate(
            "n_obs must be >= 2 for standardization".into(),
        ));
    }
    let d = m.d();
    let n_targets = ((p_int * d as f64).ceil() as usize).clamp(1, d);
    let mut rng = rng_from_seed(derive_seed(seed, 0));
    let mut all: Vec<usize> = (0..d).collect();
    all.shuffle(&mut rng);
    let mut targets: Vec<usize> = all[..n_targets].to_vec();
    targets.sort_unstable();

    let mut obs = sample(m, n_obs, None, derive_seed(seed, 1))?;
    let standardization = Standardization::fit(&obs)?;
    standardization.apply(&mut obs);

    let envs = targets
        .iter()
        .enumerate()
        .map(|(idx, &k)| {
            let mut data = sample(m, n_int, Some((k, int)), derive_seed(seed, 2 + idx as u64))?;
            standardization.apply(&mut data);
            Ok(Environment { target: k, data })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(InterventionalDataset {
        obs,
        envs,
        standardization,
    })
}

/// Manifest stored next to the CSV files of a dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub d: usize,
    pub n_obs: usize,
    pub n_int: usize,
    pub p_int: f64,
    /// 1-based intervention targets, in environment order.
    pub targets: Vec<usize>,
    pub seed: u64,
    pub mechanism: String,
    pub noise: String,
    pub noise_scale: f64,
    pub intervention_mean_shift: f64,
    pub intervention_std: f64,
    pub standardization_mean: Vec<f64>,
    pub standardization_std: Vec<f64>,
}

fn write_matrix_csv(path: &Path, x: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header: Vec<String> = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    let mut record = Vec::with_capacity(x.ncols());
    for s in 0..x.nrows() {
        record.clear();
        for j in 0..x.ncols() {
            let mut buf = ryu_format(x[[s, j]]);
            if !buf.is_ascii() {
                buf = format!("{}", x[[s, j]]);
            }
            record.push(buf);
        }
        w.write_record(&record).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn ryu_format(v: f64) -> String {
    // Rust's Display for f64 is shortest-roundtrip, which keeps files
    // byte-identical across runs with the same seed.
    format!("{v}")
}

fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let ncols = r
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .len();
    let mut rows: Vec<f64> = Vec::new();
    let mut nrows = 0usize;
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        for field in rec.iter() {
            rows.push(field.parse::<f64>().map_err(|_| {
                Error::Manifest(format!("{}: non-numeric field {field:?}", path.display()))
            })?);
        }
        nrows += 1;
    }
    Array2::from_shape_vec((nrows, ncols), rows).map_err(|_| Error::ShapeMismatch {
        expected: "rectangular csv".into(),
        got: path.display().to_string(),
    })
}

/// Writes `obs.csv`, one `env_<k>.csv` per environment (k 1-based), and
/// `meta.json` into `dir`.
pub fn save_dataset(
    ds: &InterventionalDataset,
    manifest: &DatasetManifest,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix_csv(&dir.join("obs.csv"), &ds.obs)?;
    for env in &ds.envs {
        write_matrix_csv(&dir.join(format!("env_{}.csv", env.target + 1)), &env.data)?;
    }
    let meta_path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Manifest(format!("serialize manifest: {e}")))?;
    std::fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(InterventionalDataset, DatasetManifest)> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let raw = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&raw)
        .map_err(|e| Error::Manifest(format!("{}: {e}", meta_path.display())))?;
    let obs = read_matrix_csv(&dir.join("obs.csv"))?;
    let envs = manifest
        .targets
        .iter()
        .map(|&k1| {
            let data = read_matrix_csv(&dir.join(format!("env_{k1}.csv")))?;
            Ok(Environment {
                target: k1 - 1,
                data,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = InterventionalDataset {
        obs,
        envs,
        standardization: Standardization {
            mean: manifest.standardization_mean.clone(),
            std: manifest.standardization_std.clone(),
        },
    };
    Ok((ds, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::sample_er_dag;

    fn chain2() -> Dag {
        Dag::new(vec![vec![0, 1], vec![0, 0]]).unwrap()
    }

    fn gaussian_noise() -> NoiseSpec {
        NoiseSpec::new(NoiseFamily::UniformGaussian, 1.0).unwrap()
    }

    #[test]
    fn empty_graph_linear_is_bias_plus_noise() {
        let g = Dag::empty(4);
        let m = build_mechanism(&g, MechanismKind::Linear, gaussian_noise(), 5);
        let x = sample(&m, 100_000, None, 6).unwrap();
        let bias = m.linear_bias().unwrap();
        for j in 0..4 {
            let mean = x.column(j).sum() / x.nrows() as f64;
            assert!(
                (mean - bias[j]).abs() < 0.02,
                "col {j}: mean {mean} vs bias {}",
                bias[j]
            );
        }
    }

    #[test]
    fn chain_intervention_matches_closed_form_mean() {
        let m = build_mechanism(&chain2(), MechanismKind::Linear, gaussian_noise(), 7);
        let w = m.linear_weights().unwrap()[[0, 1]];
        let b2 = m.linear_bias().unwrap()[1];
        let int = InterventionSpec {
            mean_shift: 3.0,
            std: 1.0,
        };
        let x = sample(&m, 100_000, Some((0, int)), 8).unwrap();
        let mean1 = x.column(0).sum() / x.nrows() as f64;
        let mean2 = x.column(1).sum() / x.nrows() as f64;
        assert!((mean1 - 3.0).abs() < 0.02);
        let expected = w * 3.0 + b2;
        assert!(
            (mean2 - expected).abs() / expected.abs().max(1.0) < 0.02,
            "mean {mean2} vs {expected}"
        );
    }

    #[test]
    fn rff_outputs_are_finite_with_bounded_variance() {
        let g = sample_er_dag(3, 0.8, 9).unwrap();
        let m = build_mechanism(&g, MechanismKind::Rff, gaussian_noise(), 10);
        let x = sample(&m, 10_000, None, 11).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
        for j in 0..3 {
            let mu = x.column(j).sum() / x.nrows() as f64;
            let var = x.column(j).iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>()
                / x.nrows() as f64;
            assert!(var > 0.0 && var < 100.0, "col {j} var {var}");
        }
    }

    #[test]
    fn intervening_downstream_decorrelates_from_ancestor() {
        let m = build_mechanism(&chain2(), MechanismKind::Linear, gaussian_noise(), 12);
        let x = sample(&m, 10_000, Some((1, InterventionSpec::default())), 13).unwrap();
        let n = x.nrows() as f64;
        let m0 = x.column(0).sum() / n;
        let m1 = x.column(1).sum() / n;
        let mut cov = 0.0;
        let mut v0 = 0.0;
        let mut v1 = 0.0;
        for s in 0..x.nrows() {
            let a = x[[s, 0]] - m0;
            let b = x[[s, 1]] - m1;
            cov += a * b;
            v0 += a * a;
            v1 += b * b;
        }
        let corr = cov / (v0.sqrt() * v1.sqrt());
        assert!(corr.abs() < 0.05, "corr {corr}");
    }

    /// Gauss-Jordan inverse, test-only.
    fn invert(a: &Array2<f64>) -> Array2<f64> {
        let n = a.nrows();
        let mut aug = Array2::<f64>::zeros((n, 2 * n));
        for i in 0..n {
            for j in 0..n {
                aug[[i, j]] = a[[i, j]];
            }
            aug[[i, n + i]] = 1.0;
        }
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if aug[[r, col]].abs() > aug[[piv, col]].abs() {
                    piv = r;
                }
            }
            if piv != col {
                for j in 0..2 * n {
                    let tmp = aug[[col, j]];
                    aug[[col, j]] = aug[[piv, j]];
                    aug[[piv, j]] = tmp;
                }
            }
            let p = aug[[col, col]];
            for j in 0..2 * n {
                aug[[col, j]] /= p;
            }
            for r in 0..n {
                if r != col {
                    let f = aug[[r, col]];
                    for j in 0..2 * n {
                        aug[[r, j]] -= f * aug[[col, j]];
                    }
                }
            }
        }
        let mut inv = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                inv[[i, j]] = aug[[i, n + j]];
            }
        }
        inv
    }

    #[test]
    fn linear_gaussian_covariance_matches_closed_form() {
        let g = sample_er_dag(4, 0.6, 21).unwrap();
        let m = build_mechanism(&g, MechanismKind::Linear, gaussian_noise(), 22);
        let x = sample(&m, 10_000, None, 23).unwrap();
        let n = x.nrows() as f64;
        let d = 4;

        let mut emp = Array2::<f64>::zeros((d, d));
        let means: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n).collect();
        for s in 0..x.nrows() {
            for i in 0..d {
                for j in 0..d {
                    emp[[i, j]] += (x[[s, i]] - means[i]) * (x[[s, j]] - means[j]);
                }
            }
        }
        emp /= n;

        // X = (I - W^T)^{-1} (b + N)  =>  Cov = A Sigma_N A^T, A = (I - W^T)^{-1}.
        let w = m.linear_weights().unwrap();
        let mut i_minus_wt = Array2::<f64>::eye(d);
        for i in 0..d {
            for j in 0..d {
                i_minus_wt[[i, j]] -= w[[j, i]];
            }
        }
        let a = invert(&i_minus_wt);
        let analytic = a.dot(&a.t()); // Sigma_N = I at scale 1.

        let num = (&emp - &analytic).iter().map(|v| v * v).sum::<f64>().sqrt();
        let den = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den < 0.05, "relative error {}", num / den);
    }

    #[test]
    fn benchmark_full_coverage_has_distinct_targets() {
        let g = sample_er_dag(10, 0.2, 31).unwrap();
        let m = build_mechanism(&g, MechanismKind::Linear, gaussian_noise(), 32);
        let ds = generate_benchmark(&m, 500, 50, 1.0, InterventionSpec::default(), 33).unwrap();
        assert_eq!(ds.envs.len(), 10);
        let mut targets = ds.targets();
        targets.dedup();
        assert_eq!(targets.len(), 10);
    }

    #[test]
    fn standardized_obs_has_zero_mean_unit_variance() {
        let g = sample_er_dag(6, 0.3, 41).unwrap();
        let m = build_mechanism(&g, MechanismKind::Linear, gaussian_noise(), 42);
        let ds = generate_benchmark(&m, 2000, 50, 0.5, InterventionSpec::default(), 43).unwrap();
        let n = ds.obs.nrows() as f64;
        for j in 0..ds.d() {
            let mu = ds.obs.column(j).sum() / n;
            let var = ds.obs.column(j).iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / n;
            assert!(mu.abs() < 1e-10, "col {j} mean {mu}");
            assert!((var - 1.0).abs() < 1e-8, "col {j} var {var}");
        }
    }

    #[test]
    fn benchmark_rejects_tiny_observations() {
        let g = sample_er_dag(4, 0.3, 51).unwrap();
        let m = build_mechanism(&g, MechanismKind::Linear, gaussian_noise(), 52);
        assert!(generate_benchmark(&m, 1, 10, 1.0, InterventionSpec::default(), 53).is_err());
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let g = sample_er_dag(5, 0.4, 61).unwrap();
        for &kind in &[MechanismKind::Linear, MechanismKind::Rff] {
            let m = build_mechanism(&g, kind, gaussian_noise(), 62);
            let a = sample(&m, 64, None, 63).unwrap();
            let b = sample(&m, 64, None, 63).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn non_descendant_marginals_unchanged_under_intervention() {
        // 0 -> 1, 2 isolated: do(X_0) must leave X_2's marginal alone.
        let g = Dag::new(vec![vec![0, 1, 0], vec![0, 0, 0], vec![0, 0, 0]]).unwrap();
        let m = build_mechanism(&g, MechanismKind::Linear, gaussian_noise(), 71);
        let obs = sample(&m, 4000, None, 72).unwrap();
        let int = sample(&m, 4000, Some((0, InterventionSpec::default())), 73).unwrap();
        let a: Vec<f64> = obs.column(2).to_vec();
        let b: Vec<f64> = int.column(2).to_vec();
        let w = crate::distance::wasserstein1d(&a, &b).unwrap();
        assert!(w < 0.08, "w1 {w}");
        // ... while the descendant's marginal moves far beyond that.
        let a1: Vec<f64> = obs.column(1).to_vec();
        let b1: Vec<f64> = int.column(1).to_vec();
        let w1 = crate::distance::wasserstein1d(&a1, &b1).unwrap();
        assert!(w1 > 3.0 * w, "descendant shift {w1} vs non-descendant {w}");
    }

    #[test]
    fn laplace_noise_has_heavier_tails_than_gaussian_scale() {
        let g = Dag::empty(1);
        let spec = NoiseSpec::new(NoiseFamily::Laplace, 1.0).unwrap();
        let m = build_mechanism(&g, MechanismKind::Linear, spec, 81);
        let x = sample(&m, 50_000, None, 82).unwrap();
        let b = m.linear_bias().unwrap()[0];
        let var = x.column(0).iter().map(|&v| (v - b) * (v - b)).sum::<f64>()
            / x.nrows() as f64;
        // Laplace(0, 1) has variance 2.
        assert!((var - 2.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn heteroscedastic_scale_depends_on_parents() {
        let m = build_mechanism(
            &chain2(),
            MechanismKind::Linear,
            NoiseSpec::new(NoiseFamily::HeteroscedasticGaussian, 1.0).unwrap(),
            91,
        );
        let x = sample(&m, 20_000, None, 92).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
        // Residual spread of X_1 given X_0 must differ across X_0 halves
        // unless the het coefficient happens to vanish.
        let w = m.linear_weights().unwrap()[[0, 1]];
        let b = m.linear_bias().unwrap()[1];
        let mut low = Vec::new();
        let mut high = Vec::new();
        for s in 0..x.nrows() {
            let resid = x[[s, 1]] - w * x[[s, 0]] - b;
            if x[[s, 0]] < 0.0 {
                low.push(resid * resid);
            } else {
                high.push(resid * resid);
            }
        }
        let vl = low.iter().sum::<f64>() / low.len() as f64;
        let vh = high.iter().sum::<f64>() / high.len() as f64;
        assert!(
            (vl / vh).max(vh / vl) > 1.05,
            "variances {vl} vs {vh} should differ"
        );
    }

    #[test]
    fn dataset_round_trip_through_directory() {
        let g = sample_er_dag(4, 0.5, 101).unwrap();
        let m = build_mechanism(&g, MechanismKind::Rff, gaussian_noise(), 102);
        let ds = generate_benchmark(&m, 50, 20, 0.5, InterventionSpec::default(), 103).unwrap();
        let manifest = DatasetManifest {
            d: 4,
            n_obs: 50,
            n_int: 20,
            p_int: 0.5,
            targets: ds.targets().iter().map(|&t| t + 1).collect(),
            seed: 103,
            mechanism: "rff".into(),
            noise: "uniform-gaussian".into(),
            noise_scale: 1.0,
            intervention_mean_shift: 2.0,
            intervention_std: 1.0,
            standardization_mean: ds.standardization.mean.clone(),
            standardization_std: ds.standardization.std.clone(),
        };
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, &manifest, dir.path()).unwrap();
        let (back, meta) = load_dataset(dir.path()).unwrap();
        assert_eq!(back.targets(), ds.targets());
        assert_eq!(meta.targets, manifest.targets);
        let diff = (&back.obs - &ds.obs).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }
}
