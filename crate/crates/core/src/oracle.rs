//! Brute-force reference implementations.
//!
//! Everything here trades speed for being independently, obviously correct:
//! exhaustive enumeration and exact greedy transport. These back the fast
//! paths in `distance`, `score`, and `sinkhorn` at desk scale and are kept
//! deliberately separate from them.

use itertools::Itertools;
use ndarray::Array2;

/// Exact 1-D optimal transport cost between two empirical distributions
/// with uniform weights, by greedy mass matching on sorted atoms. Masses
/// are tracked as integers (units of 1/(n_a * n_b)) so no floating-point
/// mass bookkeeping can drift.
pub fn transport_1d_exact(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len() as u64, sb.len() as u64);
    // Each a-atom carries nb units, each b-atom na units; total na*nb units.
    let mut i = 0usize;
    let mut j = 0usize;
    let mut ra = nb;
    let mut rb = na;
    let mut cost = 0.0;
    while i < sa.len() && j < sb.len() {
        let m = ra.min(rb);
        cost += m as f64 * (sa[i] - sb[j]).abs();
        ra -= m;
        rb -= m;
        if ra == 0 {
            i += 1;
            ra = nb;
        }
        if rb == 0 {
            j += 1;
            rb = na;
        }
    }
    cost / (na as f64 * nb as f64)
}

/// Exhaustive linear-assignment maximizer: the permutation (as a
/// row -> column map) maximizing the sum of selected entries, with its
/// value. Factorial cost; intended for d <= 8.
pub fn assignment_max_exhaustive(m: &Array2<f64>) -> (Vec<usize>, f64) {
    let d = m.nrows();
    assert_eq!(d, m.ncols());
    let mut best_val = f64::NEG_INFINITY;
    let mut best: Vec<usize> = (0..d).collect();
    for cols in (0..d).permutations(d) {
        let val: f64 = cols.iter().enumerate().map(|(r, &c)| m[[r, c]]).sum();
        if val > best_val {
            best_val = val;
            best = cols;
        }
    }
    (best, best_val)
}
