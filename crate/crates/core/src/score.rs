//! The permutation score over thresholded distances, its potential-based
//! hard form, an exhaustive oracle, and a row-sum ranking baseline.

use itertools::Itertools;
use rayon::prelude::*;

use crate::distance::{threshold_matrix, DistanceMatrix, RawDistances};
use crate::error::{Error, Result};
use crate::graph::CausalOrder;

/// A real vector parameterizing a variable ordering: sorting the entries in
/// descending order yields the permutation (largest potential first).
#[derive(Debug, Clone, PartialEq)]
pub struct Potential(Vec<f64>);

impl Potential {
    pub fn new(values: Vec<f64>) -> Self {
        Potential(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// First pair of exactly equal entries, if any.
    pub fn find_tie(&self) -> Option<(usize, usize)> {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| self.0[a].partial_cmp(&self.0[b]).expect("finite potential"));
        idx.windows(2)
            .find(|w| self.0[w[0]] == self.0[w[1]])
            .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
    }

    /// Argsort-descending order; ties broken by index so the result is
    /// always a valid order. Callers that must reject ties use
    /// [`Potential::find_tie`] first.
    pub fn order(&self) -> CausalOrder {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| {
            self.0[b]
                .partial_cmp(&self.0[a])
                .expect("finite potential")
                .then(a.cmp(&b))
        });
        CausalOrder::from_sequence(&idx).expect("argsort yields a permutation")
    }
}

/// Score of a permutation: the sum of D entries over pairs ordered
/// cause-first, i.e. `sum over position(i) < position(j) of D_ij`. The
/// epsilon subtraction, bonus, and intervention mask are already folded
/// into `D`.
pub fn score_of_order(d: &DistanceMatrix, order: &CausalOrder) -> Result<f64> {
    let n = d.d();
    if order.d() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("order of length {n}"),
            got: format!("{}", order.d()),
        });
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if order.position(i) < order.position(j) {
                acc += d.values()[[i, j]];
            }
        }
    }
    Ok(acc)
}

/// Hard score of a potential: `sum_ij D_ij * [p_i > p_j]`. Equal to
/// [`score_of_order`] on the argsort-descending order; rejects exact ties
/// because the indicator is then ambiguous.
pub fn score_of_potential_hard(d: &DistanceMatrix, p: &Potential) -> Result<f64> {
    let n = d.d();
    if p.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("potential of length {n}"),
            got: format!("{}", p.len()),
        });
    }
    if let Some((i, j)) = p.find_tie() {
        return Err(Error::TiedPotential(i, j));
    }
    let v = p.values();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if v[i] > v[j] {
                acc += d.values()[[i, j]];
            }
        }
    }
    Ok(acc)
}

/// Cap on exhaustive search: 9! = 362,880 permutations.
pub const BRUTE_FORCE_MAX_D: usize = 9;

/// Exhaustively maximizes the permutation score. Ties are resolved toward
/// the lexicographically smallest node sequence so the result is
/// deterministic. Errors above [`BRUTE_FORCE_MAX_D`]; larger problems are
/// what the differentiable optimizer is for.
pub fn brute_force_best_order(d: &DistanceMatrix) -> Result<(CausalOrder, f64)> {
    let n = d.d();
    if n == 0 {
        return Err(Error::InvalidParameter("empty distance matrix".into()));
    }
    if n > BRUTE_FORCE_MAX_D {
        return Err(Error::BruteForceTooLarge {
            d: n,
            cap: BRUTE_FORCE_MAX_D,
        });
    }
    if n == 1 {
        return Ok((CausalOrder::identity(1), 0.0));
    }

    // Chunk by leading node; each chunk enumerates the remaining (n-1)!.
    let best = (0..n)
        .into_par_iter()
        .map(|first| {
            let rest: Vec<usize> = (0..n).filter(|&x| x != first).collect();
            let mut chunk_best: Option<(f64, Vec<usize>)> = None;
            let len = rest.len();
            for tail in rest.into_iter().permutations(len) {
                let mut seq = Vec::with_capacity(n);
                seq.push(first);
                seq.extend(tail);
                let mut score = 0.0;
                for a in 0..n {
                    for b in (a + 1)..n {
                        score += d.values()[[seq[a], seq[b]]];
                    }
                }
                let better = match &chunk_best {
                    None => true,
                    Some((bs, bseq)) => score > *bs || (score == *bs && seq < *bseq),
                };
                if better {
                    chunk_best = Some((score, seq));
                }
            }
            chunk_best.expect("nonempty permutation set")
        })
        .reduce_with(|a, b| {
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        })
        .expect("at least one chunk");

    Ok((CausalOrder::from_sequence(&best.1)?, best.0))
}

/// Row-sum ranking baseline: variables are ordered by descending row sums
/// of the thresholded matrix, ties broken by index. Non-intervened
/// variables have all-zero rows, so they land after every intervened
/// variable with a positive row sum. This is a documented approximation of
/// the original ranking procedure; downstream outputs label it
/// "sortranking-approx".
pub fn sortranking(raw: &RawDistances, eps: f64, c: f64) -> Result<CausalOrder> {
    let dm = threshold_matrix(raw, eps, c)?;
    let n = dm.d();
    let sums: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| dm.values()[[i, j]]).sum())
        .collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        sums[b]
            .partial_cmp(&sums[a])
            .expect("finite row sums")
            .then(a.cmp(&b))
    });
    CausalOrder::from_sequence(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn dm_from(values: Array2<f64>) -> DistanceMatrix {
        let d = values.nrows();
        DistanceMatrix::from_raw_values(values, (0..d).collect(), 0.3, 0.5).unwrap()
    }

    fn random_dm(d: usize, seed: u64) -> DistanceMatrix {
        let mut rng = rng_from_seed(seed);
        let values = Array2::from_shape_fn((d, d), |_| rng.gen_range(-1.0..4.0));
        dm_from(values)
    }

    fn random_potential(d: usize, seed: u64) -> Potential {
        let mut rng = rng_from_seed(seed);
        Potential::new((0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
    }

    #[test]
    fn zero_matrix_scores_zero_for_every_order() {
        let dm = dm_from(Array2::zeros((4, 4)));
        for seq in (0..4usize).permutations(4) {
            let order = CausalOrder::from_sequence(&seq).unwrap();
            assert_eq!(score_of_order(&dm, &order).unwrap(), 0.0);
        }
    }

    #[test]
    fn two_node_hand_case() {
        let mut v = Array2::<f64>::zeros((2, 2));
        v[[0, 1]] = 3.0;
        let dm = dm_from(v);
        let fwd = CausalOrder::from_sequence(&[0, 1]).unwrap();
        let bwd = CausalOrder::from_sequence(&[1, 0]).unwrap();
        assert_eq!(score_of_order(&dm, &fwd).unwrap(), 3.0);
        assert_eq!(score_of_order(&dm, &bwd).unwrap(), 0.0);
    }

    #[test]
    fn brute_force_matches_full_enumeration_at_d6() {
        let dm = random_dm(6, 42);
        let (_, best) = brute_force_best_order(&dm).unwrap();
        let mut max_seen = f64::NEG_INFINITY;
        for seq in (0..6usize).permutations(6) {
            let order = CausalOrder::from_sequence(&seq).unwrap();
            max_seen = max_seen.max(score_of_order(&dm, &order).unwrap());
        }
        // Summation order differs between the two paths.
        assert!((best - max_seen).abs() < 1e-9, "{best} vs {max_seen}");
    }

    #[test]
    fn hard_score_hand_case() {
        let mut v = Array2::<f64>::zeros((3, 3));
        v[[0, 2]] = 4.0;
        let dm = dm_from(v);
        let p = Potential::new(vec![3.0, 1.0, 2.0]);
        assert_eq!(score_of_potential_hard(&dm, &p).unwrap(), 4.0);
    }

    #[test]
    fn hard_score_zero_matrix() {
        let dm = dm_from(Array2::zeros((5, 5)));
        let p = random_potential(5, 7);
        assert_eq!(score_of_potential_hard(&dm, &p).unwrap(), 0.0);
    }

    #[test]
    fn hard_score_rejects_ties() {
        let dm = random_dm(3, 1);
        let p = Potential::new(vec![1.0, 1.0, 0.0]);
        assert!(matches!(
            score_of_potential_hard(&dm, &p),
            Err(Error::TiedPotential(0, 1))
        ));
    }

    #[test]
    fn hard_score_equals_order_path() {
        for seed in 0..30 {
            let d = 3 + (seed as usize % 6);
            let dm = random_dm(d, 100 + seed);
            let p = random_potential(d, 200 + seed);
            let via_hard = score_of_potential_hard(&dm, &p).unwrap();
            let via_order = score_of_order(&dm, &p.order()).unwrap();
            assert!(
                (via_hard - via_order).abs() < 1e-12,
                "seed {seed}: {via_hard} vs {via_order}"
            );
        }
    }

    #[test]
    fn brute_force_on_reachability_rewards_respects_chain() {
        // Chain 0 -> 1 -> 2 -> 3: reward every reachable pair.
        let d = 4;
        let mut v = Array2::<f64>::zeros((d, d));
        for i in 0..d {
            for j in (i + 1)..d {
                v[[i, j]] = 0.5 * d as f64;
            }
        }
        let dm = dm_from(v);
        let (order, score) = brute_force_best_order(&dm).unwrap();
        assert_eq!(order.sequence(), vec![0, 1, 2, 3]);
        assert_eq!(score, 6.0 * 0.5 * d as f64);
    }

    #[test]
    fn symmetric_matrix_makes_all_orders_equal() {
        let d = 5;
        let mut rng = rng_from_seed(9);
        let mut v = Array2::<f64>::zeros((d, d));
        for i in 0..d {
            for j in (i + 1)..d {
                let x = rng.gen_range(0.0..3.0);
                v[[i, j]] = x;
                v[[j, i]] = x;
            }
        }
        let dm = dm_from(v.clone());
        let half_sum: f64 = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .filter(|&(i, j)| i < j)
            .map(|(i, j)| v[[i, j]])
            .sum();
        let (_, best) = brute_force_best_order(&dm).unwrap();
        assert!((best - half_sum).abs() < 1e-12);
        for seq in (0..d).permutations(d) {
            let order = CausalOrder::from_sequence(&seq).unwrap();
            let s = score_of_order(&dm, &order).unwrap();
            assert!((s - half_sum).abs() < 1e-12);
        }
    }

    #[test]
    fn brute_force_single_node() {
        let dm = dm_from(Array2::zeros((1, 1)));
        let (order, score) = brute_force_best_order(&dm).unwrap();
        assert_eq!(order.d(), 1);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn brute_force_refuses_large_dimension() {
        let dm = random_dm(10, 3);
        assert!(matches!(
            brute_force_best_order(&dm),
            Err(Error::BruteForceTooLarge { d: 10, cap: 9 })
        ));
    }

    fn raw_chain3() -> RawDistances {
        // Reachability pattern of 0 -> 1 -> 2 with strong shifts.
        let mut m = Array2::<f64>::zeros((3, 3));
        m[[0, 1]] = 1.0;
        m[[0, 2]] = 1.0;
        m[[1, 2]] = 1.0;
        RawDistances::from_parts(m, vec![true; 3]).unwrap()
    }

    #[test]
    fn sortranking_recovers_chain_order() {
        let order = sortranking(&raw_chain3(), 0.3, 0.5).unwrap();
        assert_eq!(order.sequence(), vec![0, 1, 2]);
    }

    #[test]
    fn sortranking_all_zero_rows_fall_back_to_identity() {
        let raw = RawDistances::from_parts(Array2::zeros((4, 4)), vec![true; 4]).unwrap();
        let order = sortranking(&raw, 0.3, 0.5).unwrap();
        assert_eq!(order.sequence(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn sortranking_never_beats_brute_force() {
        for seed in 0..20 {
            let d = 6;
            let mut rng = rng_from_seed(300 + seed);
            let m = Array2::from_shape_fn((d, d), |(i, j)| {
                if i == j {
                    0.0
                } else {
                    rng.gen_range(0.0..1.0)
                }
            });
            let raw = RawDistances::from_parts(m, vec![true; d]).unwrap();
            let dm = threshold_matrix(&raw, 0.3, 0.5).unwrap();
            let baseline = sortranking(&raw, 0.3, 0.5).unwrap();
            let baseline_score = score_of_order(&dm, &baseline).unwrap();
            let (_, best) = brute_force_best_order(&dm).unwrap();
            assert!(
                baseline_score <= best + 1e-12,
                "seed {seed}: baseline {baseline_score} vs best {best}"
            );
        }
    }

    proptest! {
        #[test]
        fn shifting_potential_preserves_hard_score(seed in 0u64..200, shift in -5.0f64..5.0) {
            let dm = random_dm(5, seed);
            let p = random_potential(5, seed.wrapping_add(999));
            let shifted = Potential::new(p.values().iter().map(|v| v + shift).collect());
            let a = score_of_potential_hard(&dm, &p).unwrap();
            let b = score_of_potential_hard(&dm, &shifted).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn brute_force_is_an_upper_bound_for_random_orders(seed in 0u64..100) {
            let dm = random_dm(5, seed);
            let (_, best) = brute_force_best_order(&dm).unwrap();
            let mut rng = rng_from_seed(seed.wrapping_mul(31));
            for _ in 0..20 {
                let order = CausalOrder::sample_uniform(5, &mut rng);
                prop_assert!(score_of_order(&dm, &order).unwrap() <= best + 1e-12);
            }
        }
    }
}
