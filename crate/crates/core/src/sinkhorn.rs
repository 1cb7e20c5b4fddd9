//! Differentiable permutation machinery: the Sinkhorn operator with exact
//! gradients through its unrolled iterations, Hungarian rounding, and the
//! potential-to-mask construction with straight-through backward.
//!
//! The operator works in the log domain throughout. Row and column
//! normalizations only ever add per-row / per-column constants to the log
//! matrix, so the whole iteration state is a pair of dual vectors (r, c)
//! with `S = exp(M/t + r 1^T + 1 c^T)`. That keeps the memory of a full
//! unrolled backward pass at O(T d) instead of O(T d^2); inputs like
//! `p o^T / t` reach magnitudes of d/t, which plain exponentiation would
//! overflow on long before that.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::score::Potential;

/// Rows shorter than this are not worth a rayon dispatch.
const PAR_MIN_DIM: usize = 64;

#[derive(Debug, Clone, Copy)]
pub struct SinkhornConfig {
    /// Temperature t > 0 controlling the smoothness of the relaxation.
    pub temperature: f64,
    /// Iteration count T >= 1.
    pub iterations: usize,
    /// Stop iterating once both dual vectors move less than this between
    /// consecutive iterations. `None` runs exactly `iterations` steps.
    /// A tolerance near machine precision leaves the output numerically
    /// identical to the full run while shortening the unrolled backward.
    pub early_stop: Option<f64>,
    /// Backpropagate through at most this many trailing iterations,
    /// treating earlier duals as constants. `None` unrolls everything.
    pub grad_tail: Option<usize>,
}

impl SinkhornConfig {
    pub fn new(temperature: f64, iterations: usize) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        if iterations == 0 {
            return Err(Error::InvalidParameter("need at least one iteration".into()));
        }
        Ok(SinkhornConfig {
            temperature,
            iterations,
            early_stop: None,
            grad_tail: None,
        })
    }

    pub fn with_early_stop(mut self, tol: f64) -> Self {
        self.early_stop = Some(tol);
        self
    }

    pub fn with_grad_tail(mut self, tail: usize) -> Self {
        self.grad_tail = Some(tail);
        self
    }
}

impl Default for SinkhornConfig {
    /// t = 0.05 and T = 500.
    fn default() -> Self {
        SinkhornConfig {
            temperature: 0.05,
            iterations: 500,
            early_stop: None,
            grad_tail: None,
        }
    }
}

/// A doubly stochastic matrix produced by the Sinkhorn operator.
#[derive(Debug, Clone)]
pub struct SoftPermutation(Array2<f64>);

impl SoftPermutation {
    pub fn d(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.0
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.d()).map(|i| self.0.row(i).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.d()).map(|j| self.0.column(j).sum()).collect()
    }
}

fn lse_two_slices(a: &[f64], b: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (x, y) in a.iter().zip(b) {
        let v = x + y;
        if v > max {
            max = v;
        }
    }
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += (x + y - max).exp();
    }
    max + acc.ln()
}

fn dual_update(flat: &[f64], d: usize, other: &[f64], out: &mut [f64]) {
    if d >= PAR_MIN_DIM {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            *o = -lse_two_slices(&flat[i * d..(i + 1) * d], other);
        });
    } else {
        for (i, o) in out.iter_mut().enumerate() {
            *o = -lse_two_slices(&flat[i * d..(i + 1) * d], other);
        }
    }
}

/// Forward state of one operator evaluation, retaining the dual-vector
/// history needed to backpropagate through the iterations.
#[derive(Debug, Clone)]
pub struct SinkhornRun {
    d: usize,
    temperature: f64,
    grad_tail: Option<usize>,
    /// M / t, row-major.
    b: Vec<f64>,
    /// r^1 .. r^K.
    r_hist: Vec<Vec<f64>>,
    /// c^0 .. c^K (c^0 = 0).
    c_hist: Vec<Vec<f64>>,
    soft: SoftPermutation,
}

impl SinkhornRun {
    pub fn soft(&self) -> &SoftPermutation {
        &self.soft
    }

    /// Iterations actually performed (smaller than the configured count
    /// only when early stopping triggered).
    pub fn iterations_run(&self) -> usize {
        self.r_hist.len()
    }

    /// Reverse accumulation of `dL/dM` from `dL/dS`, unrolling the
    /// normalization steps in reverse. Each normalization
    /// `x_out = x_in - lse(x_in)` pulls back a gradient g as
    /// `g - softmax(x_in) * sum(g)`, and the softmax weights are
    /// recomputed from the stored duals.
    pub fn vjp(&self, grad_soft: &Array2<f64>) -> Result<Array2<f64>> {
        let d = self.d;
        if grad_soft.nrows() != d || grad_soft.ncols() != d {
            return Err(Error::ShapeMismatch {
                expected: format!("{d}x{d}"),
                got: format!("{}x{}", grad_soft.nrows(), grad_soft.ncols()),
            });
        }
        let k_total = self.r_hist.len();
        let k_stop = match self.grad_tail {
            Some(tail) if tail < k_total => k_total - tail,
            _ => 0,
        };

        let s = self.soft.matrix();
        let mut g_b = vec![0.0; d * d];
        let mut g_r = vec![0.0; d];
        let mut g_c = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                let g = grad_soft[[i, j]] * s[[i, j]];
                g_b[i * d + j] = g;
                g_r[i] += g;
                g_c[j] += g;
            }
        }

        let mut w_col = vec![0.0; d]; // scratch: per-column contributions
        for k in (k_stop..k_total).rev() {
            let r_k = &self.r_hist[k];
            let c_k = &self.c_hist[k + 1];
            let c_prev = &self.c_hist[k];

            // Column step c^k_j = -lse_i(B_ij + r^k_i):
            // weights w_ij = exp(B_ij + r^k_i + c^k_j) sum to 1 over i.
            for i in 0..d {
                let row = &self.b[i * d..(i + 1) * d];
                let mut acc_r = 0.0;
                for j in 0..d {
                    let w = (row[j] + r_k[i] + c_k[j]).exp();
                    let contrib = -w * g_c[j];
                    g_b[i * d + j] += contrib;
                    acc_r += contrib;
                }
                g_r[i] += acc_r;
            }

            // Row step r^k_i = -lse_j(B_ij + c^{k-1}_j):
            // weights v_ij = exp(B_ij + c^{k-1}_j + r^k_i) sum to 1 over j.
            w_col.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..d {
                let row = &self.b[i * d..(i + 1) * d];
                let gri = g_r[i];
                for j in 0..d {
                    let v = (row[j] + c_prev[j] + r_k[i]).exp();
                    let contrib = -v * gri;
                    g_b[i * d + j] += contrib;
                    w_col[j] += contrib;
                }
            }
            g_c.copy_from_slice(&w_col);
            g_r.iter_mut().for_each(|x| *x = 0.0);
        }
        // c^0 is a constant; whatever remains in g_c is dropped.

        let mut out = Array2::<f64>::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                out[[i, j]] = g_b[i * d + j] / self.temperature;
            }
        }
        Ok(out)
    }
}

/// Runs the operator and keeps the history needed for [`SinkhornRun::vjp`].
pub fn sinkhorn_with_grad(m: &Array2<f64>, cfg: &SinkhornConfig) -> Result<SinkhornRun> {
    let d = m.nrows();
    if d == 0 || m.ncols() != d {
        return Err(Error::ShapeMismatch {
            expected: "nonempty square matrix".into(),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sinkhorn input".into()));
    }
    let mut b = vec![0.0; d * d];
    let mut bt = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let v = m[[i, j]] / cfg.temperature;
            b[i * d + j] = v;
            bt[j * d + i] = v;
        }
    }

    let mut r = vec![0.0; d];
    let mut c = vec![0.0; d];
    let mut r_hist: Vec<Vec<f64>> = Vec::with_capacity(cfg.iterations.min(1024));
    let mut c_hist: Vec<Vec<f64>> = Vec::with_capacity(cfg.iterations.min(1024) + 1);
    c_hist.push(c.clone());

    let mut r_new = vec![0.0; d];
    let mut c_new = vec![0.0; d];
    for _ in 0..cfg.iterations {
        dual_update(&b, d, &c, &mut r_new);
        dual_update(&bt, d, &r_new, &mut c_new);
        let delta = match cfg.early_stop {
            Some(_) => {
                let dr = r
                    .iter()
                    .zip(&r_new)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                let dc = c
                    .iter()
                    .zip(&c_new)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                dr.max(dc)
            }
            None => f64::INFINITY,
        };
        r.copy_from_slice(&r_new);
        c.copy_from_slice(&c_new);
        r_hist.push(r.clone());
        c_hist.push(c.clone());
        if let Some(tol) = cfg.early_stop {
            if r_hist.len() > 1 && delta < tol {
                break;
            }
        }
    }

    let mut s = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            s[[i, j]] = (b[i * d + j] + r[i] + c[j]).exp();
        }
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sinkhorn output".into()));
    }
    Ok(SinkhornRun {
        d,
        temperature: cfg.temperature,
        grad_tail: cfg.grad_tail,
        b,
        r_hist,
        c_hist,
        soft: SoftPermutation(s),
    })
}

/// The Sinkhorn operator: T alternating row and column log-sum-exp
/// normalizations of `M / t`, exponentiated at the end. The result is
/// doubly stochastic to within iteration accuracy.
pub fn sinkhorn_operator(m: &Array2<f64>, cfg: &SinkhornConfig) -> Result<SoftPermutation> {
    Ok(sinkhorn_with_grad(m, cfg)?.soft.clone())
}

/// A permutation as a row -> column assignment with its matrix view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardPermutation {
    row_to_col: Vec<usize>,
}

impl HardPermutation {
    pub fn d(&self) -> usize {
        self.row_to_col.len()
    }

    pub fn row_to_col(&self) -> &[usize] {
        &self.row_to_col
    }

    pub fn matrix(&self) -> Array2<f64> {
        let d = self.d();
        let mut m = Array2::<f64>::zeros((d, d));
        for (i, &j) in self.row_to_col.iter().enumerate() {
            m[[i, j]] = 1.0;
        }
        m
    }

    /// Frobenius inner product with a score matrix: the assignment gain.
    pub fn gain_on(&self, m: &Array2<f64>) -> f64 {
        self.row_to_col
            .iter()
            .enumerate()
            .map(|(i, &j)| m[[i, j]])
            .sum()
    }
}

/// Maximizes `<sigma, M>` over permutation matrices with an O(d^3)
/// shortest-augmenting-path assignment (dual potentials held on rows and
/// columns, one augmentation per row).
pub fn hungarian(m: &Array2<f64>) -> Result<HardPermutation> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::ShapeMismatch {
            expected: "nonempty square matrix".into(),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("hungarian input".into()));
    }
    // Minimize cost = -M. Columns are 1-based with 0 as the virtual start.
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut matched_row = vec![0_usize; n + 1];
    let mut way = vec![0_usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0_usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0_usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = -m[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0_usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            row_to_col[matched_row[j] - 1] = j - 1;
        }
    }
    Ok(HardPermutation { row_to_col })
}

/// The rank-one Sinkhorn input `p o^T` with positions o = [1, ..., d].
pub fn potential_outer(p: &[f64]) -> Array2<f64> {
    let d = p.len();
    Array2::from_shape_fn((d, d), |(i, j)| p[i] * (j + 1) as f64)
}

/// Right-multiplication by the strictly-lower-triangular ones matrix via
/// per-row suffix sums: `(X Llow)_{ib} = sum_{a > b} X_{ia}`.
pub(crate) fn mul_lower_ones_right(x: &Array2<f64>) -> Array2<f64> {
    let (n, d) = (x.nrows(), x.ncols());
    let mut out = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        let mut acc = 0.0;
        for b in (0..d).rev() {
            out[[i, b]] = acc;
            acc += x[[i, b]];
        }
    }
    out
}

/// Right-multiplication by the strictly-upper-triangular ones matrix via
/// per-row prefix sums: `(X Lup)_{ib} = sum_{a < b} X_{ia}`.
pub(crate) fn mul_upper_ones_right(x: &Array2<f64>) -> Array2<f64> {
    let (n, d) = (x.nrows(), x.ncols());
    let mut out = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        let mut acc = 0.0;
        for b in 0..d {
            out[[i, b]] = acc;
            acc += x[[i, b]];
        }
    }
    out
}

/// The continuous precedence mask `S Llow S^T`: entry (i, j) relaxes the
/// indicator that i comes before j (has the larger potential).
pub fn soft_mask(s: &SoftPermutation) -> Array2<f64> {
    mul_lower_ones_right(s.matrix()).dot(&s.matrix().t())
}

/// A mask evaluation with everything needed for its backward pass.
pub struct MaskRun {
    run: SinkhornRun,
    hard: HardPermutation,
    mask: Array2<f64>,
}

impl MaskRun {
    /// Binary forward mask: entry (i, j) = 1 iff i's assigned position is
    /// after j's in ascending-position terms, i.e. iff p_i > p_j once the
    /// rounding is exact.
    pub fn mask(&self) -> &Array2<f64> {
        &self.mask
    }

    pub fn soft(&self) -> &SoftPermutation {
        self.run.soft()
    }

    pub fn hard(&self) -> &HardPermutation {
        &self.hard
    }

    pub fn soft_mask(&self) -> Array2<f64> {
        soft_mask(self.run.soft())
    }

    /// Straight-through pullback: routes a gradient with respect to the
    /// (binary) mask into potential space as if the mask were the
    /// continuous `S Llow S^T`, then back through the Sinkhorn iterations
    /// and the rank-one input.
    pub fn potential_grad(&self, grad_mask: &Array2<f64>) -> Result<Vec<f64>> {
        let s = self.run.soft().matrix();
        let s_lup = mul_upper_ones_right(s);
        let s_llow = mul_lower_ones_right(s);
        // d<G, S Llow S^T>/dS = G S Lup + G^T S Llow.
        let grad_s = grad_mask.dot(&s_lup) + grad_mask.t().dot(&s_llow);
        let grad_m = self.run.vjp(&grad_s)?;
        let d = grad_m.nrows();
        let mut gp = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                gp[i] += grad_m[[i, j]] * (j + 1) as f64;
            }
        }
        Ok(gp)
    }
}

/// Evaluates the precedence mask of a potential, retaining gradient state.
pub fn mask_from_potential_with_grad(p: &Potential, cfg: &SinkhornConfig) -> Result<MaskRun> {
    if let Some((i, j)) = p.find_tie() {
        return Err(Error::TiedPotential(i, j));
    }
    let run = sinkhorn_with_grad(&potential_outer(p.values()), cfg)?;
    let hard = hungarian(run.soft().matrix())?;
    let d = p.len();
    let pos = hard.row_to_col();
    let mask = Array2::from_shape_fn((d, d), |(i, j)| if pos[i] > pos[j] { 1.0 } else { 0.0 });
    Ok(MaskRun { run, hard, mask })
}

/// Binary precedence mask of a potential together with the underlying soft
/// permutation: Sinkhorn on `p o^T`, Hungarian rounding, then the
/// triangular conjugation. Equals the step matrix `1[p_i - p_j > 0]`
/// whenever the rounding recovers the argsort, which is the operating
/// regime at t = 0.05, T = 500.
pub fn hard_mask_from_potential(
    p: &Potential,
    cfg: &SinkhornConfig,
) -> Result<(Array2<f64>, SoftPermutation)> {
    let mr = mask_from_potential_with_grad(p, cfg)?;
    Ok((mr.mask.clone(), mr.run.soft.clone()))
}

/// The step matrix `1[p_i - p_j > 0]` computed directly; the reference the
/// Sinkhorn-and-round path is measured against.
pub fn step_matrix(p: &Potential) -> Array2<f64> {
    let d = p.len();
    let v = p.values();
    Array2::from_shape_fn((d, d), |(i, j)| if v[i] > v[j] { 1.0 } else { 0.0 })
}

/// Central finite differences against an analytic gradient. Returns the
/// maximum relative error over coordinates, falling back to absolute error
/// when both magnitudes sit below 1e-8.
pub fn grad_check<F>(f: F, analytic: &[f64], point: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert!(
        (1e-7..=1e-3).contains(&h),
        "step h must be in [1e-7, 1e-3], got {h}"
    );
    assert_eq!(analytic.len(), point.len());
    let mut worst = 0.0_f64;
    let mut x = point.to_vec();
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + h;
        let f_plus = f(&x);
        x[i] = orig - h;
        let f_minus = f(&x);
        x[i] = orig;
        let fd = (f_plus - f_minus) / (2.0 * h);
        let denom = fd.abs().max(analytic[i].abs());
        let err = if denom > 1e-8 {
            (fd - analytic[i]).abs() / denom
        } else {
            (fd - analytic[i]).abs()
        };
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::assignment_max_exhaustive;
    use crate::rng::rng_from_seed;
    use ndarray::array;
    use rand::Rng as _;

    fn random_matrix(d: usize, seed: u64, scale: f64) -> Array2<f64> {
        let mut rng = rng_from_seed(seed);
        Array2::from_shape_fn((d, d), |_| rng.gen_range(-scale..scale))
    }

    fn random_potential(d: usize, seed: u64) -> Potential {
        let mut rng = rng_from_seed(seed);
        Potential::new((0..d).map(|_| rng.gen_range(-1.5..1.5)).collect())
    }

    #[test]
    fn single_entry_becomes_one() {
        let cfg = SinkhornConfig::new(0.05, 10).unwrap();
        let s = sinkhorn_operator(&array![[3.7]], &cfg).unwrap();
        assert!((s.matrix()[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaled_permutation_is_recovered() {
        let d = 6;
        let mut rng = rng_from_seed(5);
        let mut cols: Vec<usize> = (0..d).collect();
        use rand::seq::SliceRandom;
        cols.shuffle(&mut rng);
        let mut m = Array2::<f64>::zeros((d, d));
        for (i, &j) in cols.iter().enumerate() {
            m[[i, j]] = 100.0;
        }
        let cfg = SinkhornConfig::new(0.05, 200).unwrap();
        let s = sinkhorn_operator(&m, &cfg).unwrap();
        for i in 0..d {
            for j in 0..d {
                let want = if cols[i] == j { 1.0 } else { 0.0 };
                assert!(
                    (s.matrix()[[i, j]] - want).abs() < 1e-3,
                    "({i},{j}): {}",
                    s.matrix()[[i, j]]
                );
            }
        }
    }

    #[test]
    fn output_is_doubly_stochastic() {
        let m = random_matrix(20, 9, 1.0);
        let s = sinkhorn_operator(&m, &SinkhornConfig::default()).unwrap();
        for v in s.row_sums().iter().chain(s.col_sums().iter()) {
            assert!((v - 1.0).abs() < 1e-6, "sum {v}");
        }
    }

    #[test]
    fn early_stop_matches_full_run() {
        let m = random_matrix(12, 10, 1.0);
        let full = SinkhornConfig::new(0.2, 400).unwrap();
        let stopped = full.with_early_stop(1e-13);
        let a = sinkhorn_operator(&m, &full).unwrap();
        let b_run = sinkhorn_with_grad(&m, &stopped).unwrap();
        assert!(b_run.iterations_run() < 400);
        let diff = (a.matrix() - b_run.soft().matrix())
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "diff {diff}");
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut m = random_matrix(3, 11, 1.0);
        m[[1, 1]] = f64::NAN;
        assert!(sinkhorn_operator(&m, &SinkhornConfig::default()).is_err());
    }

    #[test]
    fn hungarian_identity_on_diagonal_dominance() {
        let m = Array2::<f64>::eye(5);
        let h = hungarian(&m).unwrap();
        assert_eq!(h.row_to_col(), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn hungarian_matches_exhaustive_argmax() {
        for d in 2..=7 {
            for seed in 0..10 {
                let m = random_matrix(d, 1000 + seed + d as u64 * 77, 3.0);
                let h = hungarian(&m).unwrap();
                let (_, best_val) = assignment_max_exhaustive(&m);
                let got = h.gain_on(&m);
                assert!(
                    (got - best_val).abs() < 1e-9,
                    "d={d} seed={seed}: {got} vs {best_val}"
                );
            }
        }
    }

    #[test]
    fn hungarian_equal_optima_still_attains_the_value() {
        // Two optima: both diagonals of a 2x2 with equal sums.
        let m = array![[1.0, 2.0], [2.0, 3.0]];
        let h = hungarian(&m).unwrap();
        let (_, best) = assignment_max_exhaustive(&m);
        assert!((h.gain_on(&m) - best).abs() < 1e-12);
    }

    #[test]
    fn hungarian_beats_random_permutations() {
        let m = random_matrix(12, 21, 2.0);
        let h = hungarian(&m).unwrap();
        let gain = h.gain_on(&m);
        let mut rng = rng_from_seed(22);
        use rand::seq::SliceRandom;
        for _ in 0..1000 {
            let mut cols: Vec<usize> = (0..12).collect();
            cols.shuffle(&mut rng);
            let other: f64 = cols.iter().enumerate().map(|(i, &j)| m[[i, j]]).sum();
            assert!(gain >= other - 1e-12);
        }
    }

    #[test]
    fn mask_hand_case() {
        let p = Potential::new(vec![3.0, 1.0, 2.0]);
        let (mask, _) = hard_mask_from_potential(&p, &SinkhornConfig::default()).unwrap();
        let want = array![[0.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert_eq!(mask, want);
        assert_eq!(mask, step_matrix(&p));
    }

    #[test]
    fn decreasing_potential_gives_upper_triangular_ones() {
        let p = Potential::new(vec![4.0, 3.0, 2.0, 1.0]);
        let (mask, _) = hard_mask_from_potential(&p, &SinkhornConfig::default()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i < j { 1.0 } else { 0.0 };
                assert_eq!(mask[[i, j]], want, "({i},{j})");
            }
        }
    }

    #[test]
    fn mask_equals_step_matrix_on_random_potentials() {
        let cfg = SinkhornConfig::default().with_early_stop(1e-14);
        for seed in 0..25 {
            let p = random_potential(12, 3000 + seed);
            let (mask, _) = hard_mask_from_potential(&p, &cfg).unwrap();
            assert_eq!(mask, step_matrix(&p), "seed {seed}");
        }
    }

    #[test]
    fn tied_potential_is_rejected() {
        let p = Potential::new(vec![1.0, 1.0]);
        assert!(hard_mask_from_potential(&p, &SinkhornConfig::default()).is_err());
    }

    #[test]
    fn lower_temperature_sharpens_toward_hard() {
        let p = random_potential(8, 41);
        let mut dists = Vec::new();
        for &t in &[1.0, 0.2, 0.05] {
            let cfg = SinkhornConfig::new(t, 500).unwrap().with_early_stop(1e-14);
            let mr = mask_from_potential_with_grad(&p, &cfg).unwrap();
            let hard = mr.hard().matrix();
            let dist = (mr.soft().matrix() - &hard)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            dists.push(dist);
        }
        assert!(dists[0] > dists[1] && dists[1] > dists[2], "{dists:?}");
    }

    #[test]
    fn grad_check_on_linear_functional_is_exact() {
        let d = 5;
        let a = random_matrix(d, 51, 1.0);
        let point = random_matrix(d, 52, 1.0);
        let flat_point: Vec<f64> = point.iter().copied().collect();
        let flat_a: Vec<f64> = a.iter().copied().collect();
        let f = |x: &[f64]| -> f64 { x.iter().zip(&flat_a).map(|(v, w)| v * w).sum() };
        let err = grad_check(f, &flat_a, &flat_point, 1e-5);
        assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn sinkhorn_vjp_matches_finite_differences() {
        // Scalar functional <W, S(M)> with a moderate temperature.
        let d = 6;
        let w = random_matrix(d, 61, 1.0);
        let m0 = random_matrix(d, 62, 1.0);
        let cfg = SinkhornConfig::new(0.5, 40).unwrap();

        let run = sinkhorn_with_grad(&m0, &cfg).unwrap();
        let analytic = run.vjp(&w).unwrap();
        let analytic_flat: Vec<f64> = analytic.iter().copied().collect();

        let point: Vec<f64> = m0.iter().copied().collect();
        let f = |x: &[f64]| -> f64 {
            let m = Array2::from_shape_vec((d, d), x.to_vec()).unwrap();
            let s = sinkhorn_operator(&m, &cfg).unwrap();
            s.matrix().iter().zip(w.iter()).map(|(a, b)| a * b).sum()
        };
        let err = grad_check(f, &analytic_flat, &point, 1e-5);
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn straight_through_gradient_equals_soft_forward_gradient() {
        // Pull a random mask-space gradient back to potential space, and
        // compare against finite differences of the *soft* forward
        // <G, S Llow S^T>.
        let d = 7;
        let p = random_potential(d, 71);
        let g = random_matrix(d, 72, 1.0);
        let cfg = SinkhornConfig::new(0.3, 60).unwrap();

        let mr = mask_from_potential_with_grad(&p, &cfg).unwrap();
        let analytic = mr.potential_grad(&g).unwrap();

        let f = |x: &[f64]| -> f64 {
            let pot = Potential::new(x.to_vec());
            let run = sinkhorn_with_grad(&potential_outer(pot.values()), &cfg).unwrap();
            let sm = soft_mask(run.soft());
            sm.iter().zip(g.iter()).map(|(a, b)| a * b).sum()
        };
        let err = grad_check(f, &analytic, p.values(), 1e-5);
        assert!(err < 1e-5, "err {err}");
    }

    #[test]
    fn triangular_multiplications_match_dense_products() {
        let x = random_matrix(5, 81, 2.0);
        let mut llow = Array2::<f64>::zeros((5, 5));
        let mut lup = Array2::<f64>::zeros((5, 5));
        for a in 0..5 {
            for b in 0..5 {
                if a > b {
                    llow[[a, b]] = 1.0;
                }
                if a < b {
                    lup[[a, b]] = 1.0;
                }
            }
        }
        let lo = mul_lower_ones_right(&x);
        let up = mul_upper_ones_right(&x);
        let lo_dense = x.dot(&llow);
        let up_dense = x.dot(&lup);
        assert!((&lo - &lo_dense).iter().all(|v| v.abs() < 1e-12));
        assert!((&up - &up_dense).iter().all(|v| v.abs() < 1e-12));
    }
}
