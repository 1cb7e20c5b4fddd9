//! Gradient ascent of the differentiable order score over the potential
//! vector, and order extraction.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::graph::CausalOrder;
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::score::{score_of_potential_hard, Potential};
use crate::sinkhorn::{mask_from_potential_with_grad, MaskRun, SinkhornConfig};

/// Which forward value the differentiable score reports. The gradient is
/// the same in both modes: the straight-through estimator routes mask
/// gradients through the soft relaxation unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// Binary mask forward (Hungarian-rounded), soft backward.
    StraightThrough,
    /// Fully soft relaxation in the forward pass too.
    Soft,
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub restarts: usize,
    /// Standard deviation of the Gaussian initialization of p.
    pub init_scale: f64,
    pub sinkhorn: SinkhornConfig,
    pub mode: ScoreMode,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.01,
            steps: 2000,
            restarts: 5,
            init_scale: 0.1,
            // Near-machine-precision early stop leaves the forward values
            // numerically at their full-iteration targets while keeping the
            // unrolled backward short once the duals have converged.
            sinkhorn: SinkhornConfig::default().with_early_stop(1e-13),
            mode: ScoreMode::StraightThrough,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be > 0".into()));
        }
        if self.steps == 0 || self.restarts == 0 {
            return Err(Error::InvalidParameter(
                "steps and restarts must be >= 1".into(),
            ));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::InvalidParameter("init scale must be > 0".into()));
        }
        Ok(())
    }
}

fn check_dims(d: &DistanceMatrix, p: &Potential) -> Result<()> {
    if d.d() != p.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("potential of length {}", d.d()),
            got: format!("{}", p.len()),
        });
    }
    Ok(())
}

fn mask_score(d: &DistanceMatrix, mr: &MaskRun, mode: ScoreMode) -> f64 {
    let mask = match mode {
        ScoreMode::StraightThrough => mr.mask().clone(),
        ScoreMode::Soft => mr.soft_mask(),
    };
    d.values().iter().zip(mask.iter()).map(|(a, b)| a * b).sum()
}

/// The differentiable order score `sum_ij D_ij * mask_ij(p)`.
pub fn diffintersort_score(
    d: &DistanceMatrix,
    p: &Potential,
    cfg: &SinkhornConfig,
    mode: ScoreMode,
) -> Result<f64> {
    check_dims(d, p)?;
    let mr = mask_from_potential_with_grad(p, cfg)?;
    Ok(mask_score(d, &mr, mode))
}

/// Score and its gradient with respect to the potential.
pub fn diffintersort_score_with_grad(
    d: &DistanceMatrix,
    p: &Potential,
    cfg: &SinkhornConfig,
    mode: ScoreMode,
) -> Result<(f64, Vec<f64>)> {
    check_dims(d, p)?;
    let mr = mask_from_potential_with_grad(p, cfg)?;
    let value = mask_score(d, &mr, mode);
    let grad = mr.potential_grad(d.values())?;
    Ok((value, grad))
}

/// Argsort-descending order extraction: the largest potential entry gets
/// position 1.
pub fn extract_order(p: &Potential) -> CausalOrder {
    p.order()
}

/// Result of one optimization call: the best potential by hard score, its
/// score, and the running-best trace.
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub potential: Potential,
    pub score: f64,
    /// Best hard score seen up to each step, merged over restarts
    /// (elementwise max), so the trace is monotone and its last entry is
    /// the reported score.
    pub trace: Vec<f64>,
    pub failed_restarts: usize,
}

impl OptimizeOutcome {
    pub fn order(&self) -> CausalOrder {
        extract_order(&self.potential)
    }
}

/// Breaks exact ties with 1e-9-scale jitter; the hard score is undefined on
/// ties and they occur only on measure-zero inputs.
fn ensure_distinct(p: &mut Vec<f64>, rng: &mut Rng) {
    let pot = Potential::new(p.clone());
    if pot.find_tie().is_some() {
        let noise = Normal::new(0.0, 1e-9).unwrap();
        for v in p.iter_mut() {
            *v += noise.sample(rng);
        }
    }
}

struct RestartResult {
    best_p: Vec<f64>,
    best_score: f64,
    trace: Vec<f64>,
}

fn run_restart(
    d: &DistanceMatrix,
    init: Vec<f64>,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<RestartResult> {
    let mut rng = rng_from_seed(seed);
    let mut p = init;
    ensure_distinct(&mut p, &mut rng);

    let mut adam = Adam::new(p.len(), opt.learning_rate);
    let mut best_score = score_of_potential_hard(d, &Potential::new(p.clone()))?;
    let mut best_p = p.clone();
    let mut trace = Vec::with_capacity(opt.steps + 1);
    trace.push(best_score);

    for step in 0..opt.steps {
        let (value, grad) =
            diffintersort_score_with_grad(d, &Potential::new(p.clone()), &opt.sinkhorn, opt.mode)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite score or gradient at step {step}"
            )));
        }
        // Ascend: Adam minimizes, so feed the negated gradient.
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        adam.step(&mut p, &neg);
        ensure_distinct(&mut p, &mut rng);

        let hard = score_of_potential_hard(d, &Potential::new(p.clone()))?;
        if hard > best_score {
            best_score = hard;
            best_p = p.clone();
        }
        trace.push(best_score);
    }
    Ok(RestartResult {
        best_p,
        best_score,
        trace,
    })
}

/// Single-trajectory ascent from a given starting potential.
pub fn optimize_from(
    d: &DistanceMatrix,
    init: &Potential,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<OptimizeOutcome> {
    opt.validate()?;
    check_dims(d, init)?;
    let r = run_restart(d, init.values().to_vec(), opt, seed)?;
    Ok(OptimizeOutcome {
        potential: Potential::new(r.best_p),
        score: r.best_score,
        trace: r.trace,
        failed_restarts: 0,
    })
}

/// Gradient ascent from `restarts` Gaussian initializations, keeping the
/// best final potential by hard score. Restarts run concurrently with
/// derived seeds; a restart that diverges is dropped and counted, and the
/// call fails only if every restart diverges.
pub fn optimize_potential(
    d: &DistanceMatrix,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<OptimizeOutcome> {
    opt.validate()?;
    let dim = d.d();
    // Draw every initialization up front from the root seed so the restart
    // count, not scheduling, determines the randomness.
    let mut init_rng = rng_from_seed(derive_seed(seed, 0x1717));
    let normal = Normal::new(0.0, opt.init_scale).unwrap();
    let inits: Vec<Vec<f64>> = (0..opt.restarts)
        .map(|_| (0..dim).map(|_| normal.sample(&mut init_rng)).collect())
        .collect();

    let results: Vec<Result<RestartResult>> = inits
        .into_par_iter()
        .enumerate()
        .map(|(r, init)| run_restart(d, init, opt, derive_seed(seed, 1 + r as u64)))
        .collect();

    let mut failed = 0usize;
    let mut merged_trace = vec![f64::NEG_INFINITY; opt.steps + 1];
    let mut best: Option<RestartResult> = None;
    for res in results {
        match res {
            Err(_) => failed += 1,
            Ok(r) => {
                for (slot, &v) in merged_trace.iter_mut().zip(&r.trace) {
                    if v > *slot {
                        *slot = v;
                    }
                }
                let better = match &best {
                    None => true,
                    Some(b) => r.best_score > b.best_score,
                };
                if better {
                    best = Some(r);
                }
            }
        }
    }
    let best = best.ok_or_else(|| {
        Error::Diverged(format!("all {} restarts diverged", opt.restarts))
    })?;
    // Running max so the merged trace is monotone even where restarts
    // contributed unevenly.
    for i in 1..merged_trace.len() {
        if merged_trace[i] < merged_trace[i - 1] {
            merged_trace[i] = merged_trace[i - 1];
        }
    }
    Ok(OptimizeOutcome {
        potential: Potential::new(best.best_p),
        score: best.best_score,
        trace: merged_trace,
        failed_restarts: failed,
    })
}
