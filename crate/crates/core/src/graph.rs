//! Random DAG generation, causal orders, and graph-comparison metrics.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// A directed acyclic graph over `d` nodes as a dense 0/1 adjacency matrix.
///
/// `adj[i][j] = 1` means a directed edge `i -> j`. The diagonal is zero and
/// the matrix admits a topological order; both are checked by [`Dag::new`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    d: usize,
    adj: Vec<Vec<u8>>,
}

impl Dag {
    pub fn new(adj: Vec<Vec<u8>>) -> Result<Self> {
        let d = adj.len();
        for (i, row) in adj.iter().enumerate() {
            if row.len() != d {
                return Err(Error::ShapeMismatch {
                    expected: format!("{d}x{d}"),
                    got: format!("row {i} has {} entries", row.len()),
                });
            }
            if row[i] != 0 {
                return Err(Error::InvalidParameter(format!("self-loop at node {i}")));
            }
        }
        let dag = Dag { d, adj };
        if dag.topological_order().is_none() {
            return Err(Error::InvalidParameter("adjacency contains a cycle".into()));
        }
        Ok(dag)
    }

    pub fn empty(d: usize) -> Self {
        Dag {
            d,
            adj: vec![vec![0; d]; d],
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn adj(&self) -> &Vec<Vec<u8>> {
        &self.adj
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i][j] != 0
    }

    pub fn edge_count(&self) -> usize {
        self.adj
            .iter()
            .map(|row| row.iter().filter(|&&e| e != 0).count())
            .sum()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.d {
            for j in 0..self.d {
                if self.adj[i][j] != 0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..self.d).filter(|&i| self.adj[i][j] != 0).collect()
    }

    /// Kahn's algorithm; `None` if the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg = vec![0usize; self.d];
        for i in 0..self.d {
            for j in 0..self.d {
                if self.adj[i][j] != 0 {
                    indeg[j] += 1;
                }
            }
        }
        let mut queue: Vec<usize> = (0..self.d).filter(|&j| indeg[j] == 0).collect();
        let mut order = Vec::with_capacity(self.d);
        let mut head = 0;
        while head < queue.len() {
            let u = queue[head];
            head += 1;
            order.push(u);
            for v in 0..self.d {
                if self.adj[u][v] != 0 {
                    indeg[v] -= 1;
                    if indeg[v] == 0 {
                        queue.push(v);
                    }
                }
            }
        }
        (order.len() == self.d).then_some(order)
    }

    /// Writes the edge-list text format: header `d=<n>`, then one `i j`
    /// pair per line, 1-based.
    pub fn write_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(f, "d={}", self.d).map_err(|e| Error::io(path, e))?;
        for (i, j) in self.edges() {
            writeln!(f, "{} {}", i + 1, j + 1).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn read_edge_list(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Manifest(format!("{}: empty edge list", path.display())))?
            .map_err(|e| Error::io(path, e))?;
        let d: usize = header
            .strip_prefix("d=")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Manifest(format!("{}: bad header {header:?}", path.display())))?;
        let mut adj = vec![vec![0u8; d]; d];
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|s| s.parse::<usize>().ok())
                    .filter(|&v| v >= 1 && v <= d)
                    .ok_or_else(|| Error::Manifest(format!("{}: bad edge line {line:?}", path.display())))
            };
            let i = parse(it.next())?;
            let j = parse(it.next())?;
            adj[i - 1][j - 1] = 1;
        }
        Dag::new(adj)
    }
}

/// A total order over the nodes: `positions[i]` is the 0-based position of
/// node `i` (position 0 comes first). Printed 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalOrder {
    positions: Vec<usize>,
}

impl CausalOrder {
    pub fn new(positions: Vec<usize>) -> Result<Self> {
        let d = positions.len();
        let mut seen = vec![false; d];
        for &p in &positions {
            if p >= d || seen[p] {
                return Err(Error::InvalidParameter(
                    "positions are not a permutation".into(),
                ));
            }
            seen[p] = true;
        }
        Ok(CausalOrder { positions })
    }

    /// Builds the order from a node sequence (first element comes first).
    pub fn from_sequence(seq: &[usize]) -> Result<Self> {
        let d = seq.len();
        let mut positions = vec![usize::MAX; d];
        for (pos, &node) in seq.iter().enumerate() {
            if node >= d || positions[node] != usize::MAX {
                return Err(Error::InvalidParameter("sequence is not a permutation".into()));
            }
            positions[node] = pos;
        }
        Ok(CausalOrder { positions })
    }

    pub fn identity(d: usize) -> Self {
        CausalOrder {
            positions: (0..d).collect(),
        }
    }

    pub fn d(&self) -> usize {
        self.positions.len()
    }

    pub fn position(&self, node: usize) -> usize {
        self.positions[node]
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Node sequence: element k is the node at position k.
    pub fn sequence(&self) -> Vec<usize> {
        let mut seq = vec![0usize; self.positions.len()];
        for (node, &pos) in self.positions.iter().enumerate() {
            seq[pos] = node;
        }
        seq
    }

    /// 1-based node sequence for display and files.
    pub fn sequence_one_based(&self) -> Vec<usize> {
        self.sequence().into_iter().map(|n| n + 1).collect()
    }

    pub fn sample_uniform(d: usize, rng: &mut impl rand::Rng) -> Self {
        let mut seq: Vec<usize> = (0..d).collect();
        seq.shuffle(rng);
        CausalOrder::from_sequence(&seq).expect("shuffled identity is a permutation")
    }
}

impl std::fmt::Display for CausalOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let seq = self.sequence_one_based();
        let strs: Vec<String> = seq.iter().map(|n| n.to_string()).collect();
        write!(f, "{}", strs.join(" "))
    }
}

/// Samples an Erdős–Rényi DAG: under a hidden uniformly random node
/// permutation, each forward pair gets an edge independently with
/// probability `p_e`. Acyclic by construction, and node labels carry no
/// information about the causal order.
pub fn sample_er_dag(d: usize, p_e: f64, seed: u64) -> Result<Dag> {
    if d == 0 {
        return Err(Error::InvalidParameter("d must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&p_e) {
        return Err(Error::InvalidParameter(format!(
            "edge probability must be in [0,1], got {p_e}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut hidden: Vec<usize> = (0..d).collect();
    hidden.shuffle(&mut rng);
    let mut adj = vec![vec![0u8; d]; d];
    for a in 0..d {
        for b in (a + 1)..d {
            if rng.gen::<f64>() < p_e {
                adj[hidden[a]][hidden[b]] = 1;
            }
        }
    }
    Dag::new(adj)
}

/// Samples a Barabási–Albert scale-free DAG with `m` edges per arriving
/// node. The seed core has `m` nodes and no internal edges; each new node
/// attaches to `m` distinct existing nodes with probability proportional to
/// degree + 1, and edges are oriented from the earlier-attached node to the
/// later-attached one. Node labels are randomly permuted afterwards.
pub fn sample_sf_dag(d: usize, m: usize, seed: u64) -> Result<Dag> {
    if m == 0 || m >= d {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= m < d, got m={m}, d={d}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    // Attachment process over arrival indices 0..d.
    let mut degree = vec![0usize; d];
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity((d - m) * m);
    for new in m..d {
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        for _ in 0..m {
            // degree + 1 smoothing handles the zero-degree seed core.
            let total: usize = (0..new)
                .filter(|t| !chosen.contains(t))
                .map(|t| degree[t] + 1)
                .sum();
            let mut pick = rng.gen_range(0..total);
            for t in 0..new {
                if chosen.contains(&t) {
                    continue;
                }
                let w = degree[t] + 1;
                if pick < w {
                    chosen.push(t);
                    break;
                }
                pick -= w;
            }
        }
        for &t in &chosen {
            edges.push((t, new));
            degree[t] += 1;
            degree[new] += 1;
        }
    }
    let mut label: Vec<usize> = (0..d).collect();
    label.shuffle(&mut rng);
    let mut adj = vec![vec![0u8; d]; d];
    for (a, b) in edges {
        adj[label[a]][label[b]] = 1;
    }
    Dag::new(adj)
}

/// Top order divergence: the number of edges whose cause is placed after
/// its effect by `order`. Zero exactly when `order` is a causal order of
/// `g`.
pub fn d_top(g: &Dag, order: &CausalOrder) -> Result<usize> {
    if order.d() != g.d() {
        return Err(Error::ShapeMismatch {
            expected: format!("order of length {}", g.d()),
            got: format!("{}", order.d()),
        });
    }
    let mut count = 0;
    for (i, j) in g.edges() {
        if order.position(i) > order.position(j) {
            count += 1;
        }
    }
    Ok(count)
}

fn check_square_pair(pred: &[Vec<u8>], truth: &[Vec<u8>]) -> Result<usize> {
    let d = truth.len();
    if pred.len() != d
        || pred.iter().any(|r| r.len() != d)
        || truth.iter().any(|r| r.len() != d)
    {
        return Err(Error::ShapeMismatch {
            expected: format!("two {d}x{d} matrices"),
            got: format!("{}x? and {}x?", pred.len(), truth.len()),
        });
    }
    Ok(d)
}

/// Structural Hamming distance between two directed graphs. Insertions and
/// deletions count one each; a reversed edge counts once, not twice.
pub fn shd(pred: &[Vec<u8>], truth: &[Vec<u8>]) -> Result<usize> {
    let d = check_square_pair(pred, truth)?;
    let mut dist = 0;
    for i in 0..d {
        for j in (i + 1)..d {
            let p = (pred[i][j] != 0, pred[j][i] != 0);
            let t = (truth[i][j] != 0, truth[j][i] != 0);
            if p != t {
                dist += 1;
            }
        }
    }
    Ok(dist)
}

/// F1 of directed-edge prediction over ordered pairs. Both graphs empty
/// counts as a perfect prediction.
pub fn f1_edges(pred: &[Vec<u8>], truth: &[Vec<u8>]) -> Result<f64> {
    let d = check_square_pair(pred, truth)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fne = 0usize;
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            match (pred[i][j] != 0, truth[i][j] != 0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                (false, false) => {}
            }
        }
    }
    if tp + fp + fne == 0 {
        return Ok(1.0);
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fne) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Transitive closure of the adjacency: entry (i,j) = 1 iff a directed path
/// i -> ... -> j exists, i != j.
pub fn reachability(g: &Dag) -> Vec<Vec<u8>> {
    let d = g.d();
    let mut reach: Vec<Vec<u8>> = g.adj().clone();
    // DFS from each node over the fixed adjacency.
    for s in 0..d {
        let mut stack: Vec<usize> = (0..d).filter(|&j| g.adj()[s][j] != 0).collect();
        let mut seen = vec![false; d];
        while let Some(u) = stack.pop() {
            if seen[u] {
                continue;
            }
            seen[u] = true;
            reach[s][u] = 1;
            for v in 0..d {
                if g.adj()[u][v] != 0 && !seen[v] {
                    stack.push(v);
                }
            }
        }
        reach[s][s] = 0;
    }
    reach
}
