//! Differentiable causal-order discovery from interventional data.
//!
//! The pipeline: simulate an SCM over a random DAG (`graph`, `scm`),
//! measure how every variable's marginal moves under each single-variable
//! intervention (`distance`), score candidate orderings against those
//! shifts (`score`), relax the ordering into a continuous potential and
//! ascend the score with exact gradients through the Sinkhorn operator
//! (`sinkhorn`, `optim`), and finally fit a masked linear model whose
//! variable ordering is regularized by that same score (`discovery`).
//! `oracle` holds the brute-force references everything is checked against.

mod adam;
pub mod distance;
pub mod discovery;
mod error;
pub mod graph;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod scm;
pub mod score;
pub mod sinkhorn;

pub use error::{Error, Result};

pub use distance::{build_raw_distances, threshold_matrix, wasserstein1d, DistanceMatrix, RawDistances};
pub use graph::{d_top, f1_edges, reachability, sample_er_dag, sample_sf_dag, shd, CausalOrder, Dag};
pub use optim::{
    diffintersort_score, extract_order, optimize_potential, OptimizeOutcome, OptimizerConfig,
    ScoreMode,
};
pub use scm::{
    build_mechanism, generate_benchmark, InterventionSpec, InterventionalDataset, Mechanism,
    MechanismKind, NoiseFamily, NoiseSpec,
};
pub use score::{
    brute_force_best_order, score_of_order, score_of_potential_hard, sortranking, Potential,
};
pub use sinkhorn::{
    grad_check, hard_mask_from_potential, hungarian, sinkhorn_operator, HardPermutation,
    SinkhornConfig, SoftPermutation,
};
pub use discovery::{
    extract_graph, fitting_loss, predict, total_loss, train, DiscoveryModel, TrainConfig,
    TrainOutcome,
};
