//! Causal discovery by fitting a masked linear model: MAE data fit, an
//! environment-invariance penalty, L1 sparsity, and the differentiable
//! order score as a regularizer. No acyclicity penalty exists anywhere in
//! the loss; the precedence mask makes every extracted graph acyclic by
//! construction.

use std::path::Path;

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::distance::{build_raw_distances, threshold_matrix, DistanceMatrix};
use crate::error::{Error, Result};
use crate::optim::ScoreMode;
use crate::rng::{derive_seed, rng_from_seed};
use crate::scm::InterventionalDataset;
use crate::score::Potential;
use crate::sinkhorn::{mask_from_potential_with_grad, MaskRun, SinkhornConfig};

/// Trained model: raw weights, bias, and the order potential. The row
/// convention follows the prediction equation: `weights[[j, i]]` is the
/// coefficient of variable i in the equation for variable j, active only
/// where the mask lets i precede j.
#[derive(Debug, Clone)]
pub struct DiscoveryModel {
    pub weights: Array2<f64>,
    pub bias: Vec<f64>,
    pub potential: Potential,
    pub sinkhorn: SinkhornConfig,
    pub mode: ScoreMode,
}

impl DiscoveryModel {
    pub fn d(&self) -> usize {
        self.bias.len()
    }

    /// Effective weights: `W` with the transposed precedence mask applied.
    pub fn effective_weights(&self) -> Result<Array2<f64>> {
        let mr = mask_from_potential_with_grad(&self.potential, &self.sinkhorn)?;
        let mask = current_mask(&mr, self.mode);
        Ok(apply_mask(&self.weights, &mask))
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Invariance weight across environments.
    pub gamma: f64,
    /// L1 coefficient on the raw weights.
    pub lambda1: f64,
    /// Order-score coefficient; 0 disables the constraint entirely.
    pub lambda2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// |effective weight| threshold for edge extraction.
    pub edge_threshold: f64,
    /// Standard deviation of the potential initialization.
    pub init_scale: f64,
    /// Threshold for the distance matrix the regularizer is built on.
    pub eps: f64,
    pub c: f64,
    pub sinkhorn: SinkhornConfig,
    pub mode: ScoreMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.5,
            lambda1: 0.01,
            lambda2: 1.0,
            epochs: 3000,
            learning_rate: 0.01,
            edge_threshold: 0.1,
            init_scale: 0.1,
            eps: crate::distance::DEFAULT_EPS,
            c: crate::distance::DEFAULT_C,
            sinkhorn: SinkhornConfig::default().with_early_stop(1e-13),
            mode: ScoreMode::StraightThrough,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 || self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::InvalidParameter(
                "gamma and lambda coefficients must be >= 0".into(),
            ));
        }
        if !(self.edge_threshold > 0.0) {
            return Err(Error::InvalidParameter("edge threshold must be > 0".into()));
        }
        if self.epochs == 0 || !(self.learning_rate > 0.0) || !(self.init_scale > 0.0) {
            return Err(Error::InvalidParameter(
                "epochs >= 1 and positive learning rate / init scale required".into(),
            ));
        }
        Ok(())
    }
}

/// MAE subgradient with the zero-residual convention pinned to 0.
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn current_mask(mr: &MaskRun, mode: ScoreMode) -> Array2<f64> {
    match mode {
        ScoreMode::StraightThrough => mr.mask().clone(),
        ScoreMode::Soft => mr.soft_mask(),
    }
}

/// `wt[[j, i]] = w[[j, i]] * mask[[i, j]]`.
fn apply_mask(w: &Array2<f64>, mask: &Array2<f64>) -> Array2<f64> {
    let d = w.nrows();
    Array2::from_shape_fn((d, d), |(j, i)| w[[j, i]] * mask[[i, j]])
}

fn predict_with(wt: &Array2<f64>, bias: &[f64], x: &Array2<f64>) -> Array2<f64> {
    let mut pred = x.dot(&wt.t());
    for s in 0..pred.nrows() {
        for j in 0..pred.ncols() {
            pred[[s, j]] += bias[j];
        }
    }
    pred
}

/// Per-column prediction from masked parents only: `X_j' = sum_i W~_ji X_i + b_j`.
pub fn predict(model: &DiscoveryModel, x: &Array2<f64>) -> Result<Array2<f64>> {
    let d = model.d();
    if x.ncols() != d {
        return Err(Error::ShapeMismatch {
            expected: format!("n x {d} data"),
            got: format!("{}x{}", x.nrows(), x.ncols()),
        });
    }
    let wt = model.effective_weights()?;
    Ok(predict_with(&wt, &model.bias, x))
}

#[derive(Debug, Clone)]
pub struct LossBreakdown {
    /// Observational MAE plus the weighted invariance differences.
    pub fit: f64,
    pub l1: f64,
    /// The order score of the current mask against D (0 when D is absent).
    pub order_score: f64,
    /// fit + lambda1 * l1_raw - lambda2 * order_score.
    pub total: f64,
}

struct Grads {
    w: Array2<f64>,
    b: Vec<f64>,
    p: Vec<f64>,
}

/// One full evaluation of the objective and (optionally) its gradients.
///
/// In every interventional environment the intervened variable's own
/// prediction error is excluded: its structural assignment was replaced by
/// the intervention, so fitting it would bias the weights. The matched
/// observational reference inside each difference term excludes the same
/// column, which keeps the invariance term exactly zero when an environment
/// reproduces the observational data.
fn eval_objective(
    w: &Array2<f64>,
    bias: &[f64],
    p: &Potential,
    ds: &InterventionalDataset,
    dm: Option<&DistanceMatrix>,
    cfg: &TrainConfig,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<Grads>)> {
    let d = ds.d();
    if d < 2 {
        return Err(Error::InvalidParameter(
            "discovery needs at least two variables".into(),
        ));
    }
    let mr = mask_from_potential_with_grad(p, &cfg.sinkhorn)?;
    let mask = current_mask(&mr, cfg.mode);
    let wt = apply_mask(w, &mask);

    let n0 = ds.obs.nrows() as f64;
    let pred0 = predict_with(&wt, bias, &ds.obs);
    let resid0 = &pred0 - &ds.obs;
    let col_abs0: Vec<f64> = (0..d)
        .map(|j| resid0.column(j).iter().map(|v| v.abs()).sum())
        .collect();
    let total_abs0: f64 = col_abs0.iter().sum();
    let obs_mae = total_abs0 / (n0 * d as f64);

    // The environment set includes the observational regime, whose own
    // difference term vanishes; it still counts toward the weight.
    let omega = 1.0 / (ds.envs.len() as f64 + 1.0);
    let d_excl = (d - 1) as f64;

    let mut fit = obs_mae;
    let mut grad_wt = Array2::<f64>::zeros((d, d));
    let mut grad_b = vec![0.0; d];
    // Per-column coefficient on sign(resid0): the plain MAE term plus every
    // environment's negative matched reference.
    let mut coef0 = vec![1.0 / (n0 * d as f64); d];

    for env in &ds.envs {
        let k = env.target;
        let ne = env.data.nrows() as f64;
        let pred_e = predict_with(&wt, bias, &env.data);
        let resid_e = &pred_e - &env.data;
        let mut env_sum = 0.0;
        for j in 0..d {
            if j == k {
                continue;
            }
            env_sum += resid_e.column(j).iter().map(|v| v.abs()).sum::<f64>();
        }
        let env_mae = env_sum / (ne * d_excl);
        let obs_mae_matched = (total_abs0 - col_abs0[k]) / (n0 * d_excl);
        fit += cfg.gamma * omega * (env_mae - obs_mae_matched);

        if want_grads {
            let ce = cfg.gamma * omega / (ne * d_excl);
            let mut g_e = Array2::<f64>::zeros((env.data.nrows(), d));
            for s in 0..env.data.nrows() {
                for j in 0..d {
                    if j != k {
                        g_e[[s, j]] = sgn(resid_e[[s, j]]) * ce;
                    }
                }
            }
            grad_wt = grad_wt + g_e.t().dot(&env.data);
            for j in 0..d {
                grad_b[j] += g_e.column(j).sum();
            }
            for (j, c0) in coef0.iter_mut().enumerate() {
                if j != k {
                    *c0 -= cfg.gamma * omega / (n0 * d_excl);
                }
            }
        }
    }

    let l1_raw: f64 = w.iter().map(|v| v.abs()).sum();
    let order_score = match dm {
        Some(dmat) => dmat
            .values()
            .iter()
            .zip(mask.iter())
            .map(|(a, b)| a * b)
            .sum(),
        None => 0.0,
    };
    let total = fit + cfg.lambda1 * l1_raw - cfg.lambda2 * order_score;
    let breakdown = LossBreakdown {
        fit,
        l1: l1_raw,
        order_score,
        total,
    };
    if !want_grads {
        return Ok((breakdown, None));
    }

    let mut g0 = Array2::<f64>::zeros((ds.obs.nrows(), d));
    for s in 0..ds.obs.nrows() {
        for j in 0..d {
            g0[[s, j]] = sgn(resid0[[s, j]]) * coef0[j];
        }
    }
    grad_wt = grad_wt + g0.t().dot(&ds.obs);
    for j in 0..d {
        grad_b[j] += g0.column(j).sum();
    }

    let mut grad_w = Array2::<f64>::zeros((d, d));
    let mut grad_mask = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        for i in 0..d {
            grad_w[[j, i]] = grad_wt[[j, i]] * mask[[i, j]] + cfg.lambda1 * sgn(w[[j, i]]);
            grad_mask[[i, j]] = grad_wt[[j, i]] * w[[j, i]];
        }
    }
    if let Some(dmat) = dm {
        if cfg.lambda2 != 0.0 {
            grad_mask = grad_mask - &(cfg.lambda2 * dmat.values());
        }
    }
    let grad_p = mr.potential_grad(&grad_mask)?;

    Ok((
        breakdown,
        Some(Grads {
            w: grad_w,
            b: grad_b,
            p: grad_p,
        }),
    ))
}

/// Observational MAE plus the weighted cross-environment differences.
pub fn fitting_loss(
    model: &DiscoveryModel,
    ds: &InterventionalDataset,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (breakdown, _) = eval_objective(
        &model.weights,
        &model.bias,
        &model.potential,
        ds,
        None,
        cfg,
        false,
    )?;
    Ok(breakdown.fit)
}

/// The complete objective, including L1 and the order regularizer. The
/// distance matrix is rebuilt from the dataset here; [`train`] builds it
/// once up front instead.
pub fn total_loss(
    model: &DiscoveryModel,
    ds: &InterventionalDataset,
    cfg: &TrainConfig,
) -> Result<f64> {
    let dm = if cfg.lambda2 != 0.0 {
        Some(threshold_matrix(&build_raw_distances(ds)?, cfg.eps, cfg.c)?)
    } else {
        None
    };
    let (breakdown, _) = eval_objective(
        &model.weights,
        &model.bias,
        &model.potential,
        ds,
        dm.as_ref(),
        cfg,
        false,
    )?;
    Ok(breakdown.total)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DiscoveryModel,
    /// Total loss per epoch.
    pub loss_trace: Vec<f64>,
    /// The distance matrix the regularizer used, when the constraint was on.
    pub distance: Option<DistanceMatrix>,
}

/// Joint gradient descent over (W, b, p). Weights and bias start at zero,
/// the potential at a small Gaussian draw; the precedence mask is evaluated
/// once per epoch and shared between the predictions and the regularizer.
pub fn train(ds: &InterventionalDataset, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let d = ds.d();
    if d < 2 {
        return Err(Error::InvalidParameter(
            "discovery needs at least two variables".into(),
        ));
    }
    if ds.obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("observational data".into()));
    }
    let dm = if cfg.lambda2 != 0.0 {
        Some(threshold_matrix(&build_raw_distances(ds)?, cfg.eps, cfg.c)?)
    } else {
        None
    };

    let mut rng = rng_from_seed(derive_seed(seed, 0xd15c));
    let normal = Normal::new(0.0, cfg.init_scale).unwrap();
    let mut w = Array2::<f64>::zeros((d, d));
    let mut bias = vec![0.0; d];
    let mut p: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
    if Potential::new(p.clone()).find_tie().is_some() {
        let jitter = Normal::new(0.0, 1e-9).unwrap();
        for v in p.iter_mut() {
            *v += jitter.sample(&mut rng);
        }
    }

    let mut adam_w = Adam::new(d * d, cfg.learning_rate);
    let mut adam_b = Adam::new(d, cfg.learning_rate);
    let mut adam_p = Adam::new(d, cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let (breakdown, grads) = eval_objective(
            &w,
            &bias,
            &Potential::new(p.clone()),
            ds,
            dm.as_ref(),
            cfg,
            true,
        )?;
        let grads = grads.expect("gradients requested");
        if !breakdown.total.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite loss {} at epoch {epoch}",
                breakdown.total
            )));
        }
        trace.push(breakdown.total);

        let mut w_flat: Vec<f64> = w.iter().copied().collect();
        let gw_flat: Vec<f64> = grads.w.iter().copied().collect();
        adam_w.step(&mut w_flat, &gw_flat);
        w = Array2::from_shape_vec((d, d), w_flat).expect("shape preserved");
        adam_b.step(&mut bias, &grads.b);
        adam_p.step(&mut p, &grads.p);
    }

    let model = DiscoveryModel {
        weights: w,
        bias,
        potential: Potential::new(p),
        sinkhorn: cfg.sinkhorn,
        mode: cfg.mode,
    };
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
        distance: dm,
    })
}

/// Thresholds the effective weights into an adjacency: edge i -> j iff
/// `|W~_ji| > tau` (the transpose reflects the row convention of the
/// prediction equation). Acyclic by the mask invariant.
pub fn extract_graph(model: &DiscoveryModel, tau: f64) -> Result<Vec<Vec<u8>>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter("tau must be > 0".into()));
    }
    let d = model.d();
    let wt = model.effective_weights()?;
    let mut adj = vec![vec![0u8; d]; d];
    for i in 0..d {
        for j in 0..d {
            if i != j && wt[[j, i]].abs() > tau {
                adj[i][j] = 1;
            }
        }
    }
    Ok(adj)
}

/// Manifest saved next to the model CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub d: usize,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub edge_threshold: f64,
    pub eps: f64,
    pub c: f64,
    pub mode: String,
    pub sinkhorn_temperature: f64,
    pub sinkhorn_iterations: usize,
    pub seed: u64,
    /// The intervened variable's own prediction error is excluded from its
    /// environment's loss; recorded here so runs are comparable.
    pub loss_excludes_intervened: bool,
}

impl ModelManifest {
    pub fn new(cfg: &TrainConfig, d: usize, seed: u64) -> Self {
        ModelManifest {
            d,
            gamma: cfg.gamma,
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            edge_threshold: cfg.edge_threshold,
            eps: cfg.eps,
            c: cfg.c,
            mode: match cfg.mode {
                ScoreMode::StraightThrough => "straight-through".into(),
                ScoreMode::Soft => "soft".into(),
            },
            sinkhorn_temperature: cfg.sinkhorn.temperature,
            sinkhorn_iterations: cfg.sinkhorn.iterations,
            seed,
            loss_excludes_intervened: true,
        }
    }
}

fn write_vector_csv(path: &Path, v: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for x in v {
        w.write_record([format!("{x}")])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes `weights.csv`, `bias.csv`, `potential.csv`, and `manifest.json`.
pub fn save_model(
    model: &DiscoveryModel,
    manifest: &ModelManifest,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = model.d();
    let wpath = dir.join("weights.csv");
    let mut w = csv::Writer::from_path(&wpath).map_err(|e| Error::csv(&wpath, e))?;
    for j in 0..d {
        let row: Vec<String> = (0..d).map(|i| format!("{}", model.weights[[j, i]])).collect();
        w.write_record(&row).map_err(|e| Error::csv(&wpath, e))?;
    }
    w.flush().map_err(|e| Error::io(&wpath, e))?;
    write_vector_csv(&dir.join("bias.csv"), &model.bias)?;
    write_vector_csv(&dir.join("potential.csv"), model.potential.values())?;
    let mpath = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Manifest(format!("serialize model manifest: {e}")))?;
    std::fs::write(&mpath, body).map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}
