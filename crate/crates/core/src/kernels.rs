//! Graph kernels: a differentiable embedding kernel over node
//! embeddings, classic structural kernels (Weisfeiler-Lehman subtree,
//! shortest-path, truncated random walk), and construction of the
//! weighted graph whose nodes are the batch's graphs.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Which kernel produced a graph-level graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Dynamic,
    Wl,
    Sp,
    Rw,
}

/// Feature map applied inside the embedding kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureMap {
    Identity,
    Rbf { gamma: f64 },
}

/// Weighted graph over a batch of graphs: entry `(i, j)` scores the
/// similarity of graph `i` and graph `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLevelGraph {
    weights: Array2<f64>,
    top_k: usize,
    source: KernelKind,
}

impl GraphLevelGraph {
    /// Wrap a weight matrix, checking symmetry, a zero diagonal, and
    /// entries in `[0, 1]`.
    pub fn new(weights: Array2<f64>, top_k: usize, source: KernelKind) -> Result<Self> {
        let m = weights.nrows();
        if weights.ncols() != m {
            return Err(Error::Shape {
                op: "graph_level_graph",
                details: format!("weights {:?} not square", weights.dim()),
            });
        }
        for i in 0..m {
            if weights[[i, i]] != 0.0 {
                return Err(Error::Contract(format!(
                    "graph-level graph has nonzero diagonal at {i}"
                )));
            }
            for j in 0..m {
                let w = weights[[i, j]];
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::Contract(format!(
                        "graph-level weight {w} at ({i}, {j}) outside [0, 1]"
                    )));
                }
                if (w - weights[[j, i]]).abs() > 1e-12 {
                    return Err(Error::Contract(format!(
                        "graph-level graph asymmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(GraphLevelGraph {
            weights,
            top_k,
            source,
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn source(&self) -> KernelKind {
        self.source
    }

    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.nrows() == 0
    }
}

/// Kernel between two graphs from their node embedding matrices.
///
/// With the identity map this collapses to the dot product of the two
/// row sums; with the RBF map it is the full double sum
/// `sum exp(-gamma ||h_u - h_v||^2)` over node pairs.
pub fn embedding_kernel(h1: &Array2<f64>, h2: &Array2<f64>, map: FeatureMap) -> Result<f64> {
    if h1.ncols() != h2.ncols() {
        return Err(Error::Validation(format!(
            "embedding widths differ: {} vs {}",
            h1.ncols(),
            h2.ncols()
        )));
    }
    match map {
        FeatureMap::Identity => {
            let s1 = h1.sum_axis(ndarray::Axis(0));
            let s2 = h2.sum_axis(ndarray::Axis(0));
            Ok(s1.dot(&s2))
        }
        FeatureMap::Rbf { gamma } => {
            let cross = h1.dot(&h2.t());
            let r1: Vec<f64> = h1.rows().into_iter().map(|r| r.dot(&r)).collect();
            let r2: Vec<f64> = h2.rows().into_iter().map(|r| r.dot(&r)).collect();
            let mut total = 0.0;
            for (i, &ri) in r1.iter().enumerate() {
                for (j, &rj) in r2.iter().enumerate() {
                    let sq = (ri + rj - 2.0 * cross[[i, j]]).max(0.0);
                    total += (-gamma * sq).exp();
                }
            }
            Ok(total)
        }
    }
}

/// [`embedding_kernel`] on the tape, differentiable in both embedding
/// matrices. Returns a `1 x 1` tensor.
pub fn embedding_kernel_on_tape(
    tape: &mut Tape,
    h1: TensorId,
    h2: TensorId,
    map: FeatureMap,
) -> Result<TensorId> {
    let (n1, d1) = tape.value(h1).dim();
    let (n2, d2) = tape.value(h2).dim();
    if d1 != d2 {
        return Err(Error::Validation(format!(
            "embedding widths differ: {d1} vs {d2}"
        )));
    }
    match map {
        FeatureMap::Identity => {
            let ones1 = tape.constant(Array2::from_elem((1, n1), 1.0));
            let ones2 = tape.constant(Array2::from_elem((1, n2), 1.0));
            let s1 = tape.matmul(ones1, h1)?;
            let s2 = tape.matmul(ones2, h2)?;
            let s2t = tape.transpose(s2);
            tape.matmul(s1, s2t)
        }
        FeatureMap::Rbf { gamma } => {
            let h2t = tape.transpose(h2);
            let cross = tape.matmul(h1, h2t)?;
            let g1 = {
                let t = tape.transpose(h1);
                let gram = tape.matmul(h1, t)?;
                tape.diag(gram)?
            };
            let g2 = {
                let t = tape.transpose(h2);
                let gram = tape.matmul(h2, t)?;
                tape.diag(gram)?
            };
            let g2r = tape.transpose(g2);
            let sums = tape.add(g1, g2r)?;
            let minus2 = tape.scalar_mul(cross, -2.0);
            let sq = tape.add(sums, minus2)?;
            let sq = tape.clamp_min(sq, 0.0);
            let scaled = tape.scalar_mul(sq, -gamma);
            let ex = tape.exp(scaled);
            Ok(tape.sum_all(ex))
        }
    }
}

/// Sum of [`embedding_kernel`] over every ordered pair of relation
/// views; with two relations per graph this is four terms.
pub fn multi_relation_kernel(
    views1: &[Array2<f64>],
    views2: &[Array2<f64>],
    map: FeatureMap,
) -> Result<f64> {
    if views1.len() != views2.len() || views1.is_empty() {
        return Err(Error::Validation(format!(
            "relation sets differ: {} vs {} views",
            views1.len(),
            views2.len()
        )));
    }
    let mut total = 0.0;
    for a in views1 {
        for b in views2 {
            total += embedding_kernel(a, b, map)?;
        }
    }
    Ok(total)
}

/// [`multi_relation_kernel`] on the tape. Returns a `1 x 1` tensor.
pub fn multi_relation_kernel_on_tape(
    tape: &mut Tape,
    views1: &[TensorId],
    views2: &[TensorId],
    map: FeatureMap,
) -> Result<TensorId> {
    if views1.len() != views2.len() || views1.is_empty() {
        return Err(Error::Validation(format!(
            "relation sets differ: {} vs {} views",
            views1.len(),
            views2.len()
        )));
    }
    let mut total: Option<TensorId> = None;
    for &a in views1 {
        for &b in views2 {
            let term = embedding_kernel_on_tape(tape, a, b, map)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
    }
    Ok(total.expect("at least one relation pair"))
}

fn adjacency_lists(g: &Graph) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); g.node_count()];
    for &(u, v) in g.edges() {
        adj[u].push(v);
        adj[v].push(u);
    }
    adj
}

/// Per-graph label counts after joint Weisfeiler-Lehman refinement.
///
/// All graphs share one interner, so equal neighborhoods receive equal
/// compressed labels across the whole slice, and labels from different
/// rounds never collide. Each map counts every node's label at every
/// round `0..=iterations`.
pub fn wl_count_maps(graphs: &[&Graph], iterations: usize) -> Vec<BTreeMap<u64, u64>> {
    let mut next_id: u64 = 0;
    let mut seed_ids: HashMap<i64, u64> = HashMap::new();
    let mut refine_ids: HashMap<(u64, Vec<u64>), u64> = HashMap::new();

    let mut labels: Vec<Vec<u64>> = graphs
        .iter()
        .map(|g| {
            let raw: Vec<i64> = match g.node_labels() {
                Some(l) => l.to_vec(),
                None => g.degrees().iter().map(|&d| d as i64).collect(),
            };
            raw.iter()
                .map(|&r| {
                    *seed_ids.entry(r).or_insert_with(|| {
                        let id = next_id;
                        next_id += 1;
                        id
                    })
                })
                .collect()
        })
        .collect();
    let adjs: Vec<Vec<Vec<usize>>> = graphs.iter().map(|g| adjacency_lists(g)).collect();

    let mut counts: Vec<BTreeMap<u64, u64>> = vec![BTreeMap::new(); graphs.len()];
    for round in 0..=iterations {
        for (gi, graph_labels) in labels.iter().enumerate() {
            for &l in graph_labels {
                *counts[gi].entry(l).or_insert(0) += 1;
            }
        }
        if round == iterations {
            break;
        }
        for (gi, graph_labels) in labels.iter_mut().enumerate() {
            let old = graph_labels.clone();
            for (v, slot) in graph_labels.iter_mut().enumerate() {
                let mut neighborhood: Vec<u64> = adjs[gi][v].iter().map(|&u| old[u]).collect();
                neighborhood.sort_unstable();
                *slot = *refine_ids
                    .entry((old[v], neighborhood))
                    .or_insert_with(|| {
                        let id = next_id;
                        next_id += 1;
                        id
                    });
            }
        }
    }
    counts
}

fn count_dot(a: &BTreeMap<u64, u64>, b: &BTreeMap<u64, u64>) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut total: u64 = 0;
    for (label, &c1) in small {
        if let Some(&c2) = large.get(label) {
            total += c1 * c2;
        }
    }
    total as f64
}

/// Weisfeiler-Lehman subtree kernel after `iterations` refinement
/// rounds. Node labels seed the refinement when present, degrees
/// otherwise. Integer-valued.
pub fn wl_kernel(g1: &Graph, g2: &Graph, iterations: usize) -> f64 {
    let counts = wl_count_maps(&[g1, g2], iterations);
    count_dot(&counts[0], &counts[1])
}

/// All-pairs shortest path lengths by Floyd-Warshall; unreachable pairs
/// hold `f64::INFINITY`.
pub fn shortest_path_matrix(g: &Graph) -> Array2<f64> {
    let n = g.node_count();
    let mut dist = Array2::from_elem((n, n), f64::INFINITY);
    for v in 0..n {
        dist[[v, v]] = 0.0;
    }
    for &(u, v) in g.edges() {
        dist[[u, v]] = 1.0;
        dist[[v, u]] = 1.0;
    }
    for k in 0..n {
        for i in 0..n {
            if dist[[i, k]].is_infinite() {
                continue;
            }
            for j in 0..n {
                let via = dist[[i, k]] + dist[[k, j]];
                if via < dist[[i, j]] {
                    dist[[i, j]] = via;
                }
            }
        }
    }
    dist
}

fn sp_counts(g: &Graph, use_labels: bool) -> BTreeMap<(i64, i64, u64), u64> {
    let dist = shortest_path_matrix(g);
    let labels = g.node_labels();
    let mut counts = BTreeMap::new();
    for u in 0..g.node_count() {
        for v in (u + 1)..g.node_count() {
            let d = dist[[u, v]];
            if !d.is_finite() {
                continue;
            }
            let key = if use_labels {
                let (lu, lv) = (labels.unwrap()[u], labels.unwrap()[v]);
                (lu.min(lv), lu.max(lv), d as u64)
            } else {
                (0, 0, d as u64)
            };
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

fn sp_count_dot(a: &BTreeMap<(i64, i64, u64), u64>, b: &BTreeMap<(i64, i64, u64), u64>) -> f64 {
    let mut total: u64 = 0;
    for (key, &c1) in a {
        if let Some(&c2) = b.get(key) {
            total += c1 * c2;
        }
    }
    total as f64
}

/// Shortest-path kernel: counts of unordered node pairs at each finite
/// distance, multiplied between the two graphs. When both graphs carry
/// node labels the bins are refined by the unordered endpoint label
/// pair.
pub fn sp_kernel(g1: &Graph, g2: &Graph) -> f64 {
    let use_labels = g1.node_labels().is_some() && g2.node_labels().is_some();
    sp_count_dot(&sp_counts(g1, use_labels), &sp_counts(g2, use_labels))
}

/// Truncated random-walk kernel on the direct product graph:
/// `sum_{t=1..steps} decay^t` times the number of simultaneous walks of
/// length `t`, restricted to label-compatible node pairs when both
/// graphs are labeled.
pub fn rw_kernel(g1: &Graph, g2: &Graph, steps: usize, decay: f64) -> f64 {
    let (a1, a2) = (g1.adjacency(), g2.adjacency());
    let mask = match (g1.node_labels(), g2.node_labels()) {
        (Some(l1), Some(l2)) => Array2::from_shape_fn((g1.node_count(), g2.node_count()), |(u, v)| {
            if l1[u] == l2[v] {
                1.0
            } else {
                0.0
            }
        }),
        _ => Array2::from_elem((g1.node_count(), g2.node_count()), 1.0),
    };
    let mut walks = mask.clone();
    let mut total = 0.0;
    let mut weight = 1.0;
    for _ in 1..=steps {
        walks = &mask * &a1.dot(&walks).dot(&a2.t());
        weight *= decay;
        total += weight * walks.sum();
    }
    total
}

fn pairwise_symmetric<F>(m: usize, f: F) -> Array2<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i..m).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = pairs.par_iter().map(|&(i, j)| f(i, j)).collect();
    let mut out = Array2::zeros((m, m));
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        out[[i, j]] = v;
        out[[j, i]] = v;
    }
    out
}

/// Gram matrix of [`wl_kernel`] over a batch, refining all graphs once.
pub fn wl_gram(graphs: &[&Graph], iterations: usize) -> Array2<f64> {
    let counts = wl_count_maps(graphs, iterations);
    pairwise_symmetric(graphs.len(), |i, j| count_dot(&counts[i], &counts[j]))
}

/// Gram matrix of [`sp_kernel`] over a batch. Label-refined bins are
/// used only when every graph in the batch is labeled.
pub fn sp_gram(graphs: &[&Graph]) -> Array2<f64> {
    let use_labels = graphs.iter().all(|g| g.node_labels().is_some());
    let counts: Vec<_> = graphs.iter().map(|g| sp_counts(g, use_labels)).collect();
    pairwise_symmetric(graphs.len(), |i, j| sp_count_dot(&counts[i], &counts[j]))
}

/// Gram matrix of [`rw_kernel`] over a batch.
pub fn rw_gram(graphs: &[&Graph], steps: usize, decay: f64) -> Array2<f64> {
    pairwise_symmetric(graphs.len(), |i, j| rw_kernel(graphs[i], graphs[j], steps, decay))
}

/// Gram matrix of [`multi_relation_kernel`] over per-graph view lists.
pub fn multi_relation_gram(
    batch: &[Vec<Array2<f64>>],
    map: FeatureMap,
) -> Result<Array2<f64>> {
    if batch.is_empty() {
        return Ok(Array2::zeros((0, 0)));
    }
    let views = batch[0].len();
    for (i, graph_views) in batch.iter().enumerate() {
        if graph_views.len() != views {
            return Err(Error::Validation(format!(
                "graph {i} has {} views, expected {views}",
                graph_views.len()
            )));
        }
        for (r, h) in graph_views.iter().enumerate() {
            if h.ncols() != batch[0][r].ncols() {
                return Err(Error::Validation(format!(
                    "graph {i} view {r} width {} differs from {}",
                    h.ncols(),
                    batch[0][r].ncols()
                )));
            }
        }
    }
    Ok(pairwise_symmetric(batch.len(), |i, j| {
        multi_relation_kernel(&batch[i], &batch[j], map).expect("views prevalidated")
    }))
}

/// Turn a raw kernel Gram matrix into edge weights over the batch.
///
/// The matrix is cosine-normalized (rows with a nonpositive self-kernel
/// are zeroed), clamped to `[0, 1]`, its diagonal dropped, each row cut
/// to its `top_k` largest entries (ties broken toward the lower index),
/// and symmetrized by the elementwise max. The result carries no
/// gradient: downstream losses treat it as fixed weights.
pub fn build_graph_level_graph(
    kernel: &Array2<f64>,
    top_k: usize,
    source: KernelKind,
) -> Result<GraphLevelGraph> {
    let m = kernel.nrows();
    if kernel.ncols() != m {
        return Err(Error::Shape {
            op: "build_graph_level_graph",
            details: format!("kernel {:?} not square", kernel.dim()),
        });
    }
    for i in 0..m {
        for j in (i + 1)..m {
            if (kernel[[i, j]] - kernel[[j, i]]).abs() > 1e-9 {
                return Err(Error::Contract(format!(
                    "kernel matrix asymmetric at ({i}, {j}): {} vs {}",
                    kernel[[i, j]],
                    kernel[[j, i]]
                )));
            }
        }
    }
    let mut normalized = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let (dii, djj) = (kernel[[i, i]], kernel[[j, j]]);
            if dii <= 0.0 || djj <= 0.0 {
                continue;
            }
            normalized[[i, j]] = (kernel[[i, j]] / (dii * djj).sqrt()).clamp(0.0, 1.0);
        }
    }
    let mut kept = Array2::zeros((m, m));
    for i in 0..m {
        let mut order: Vec<usize> = (0..m)
            .filter(|&j| j != i && normalized[[i, j]] > 0.0)
            .collect();
        order.sort_by(|&a, &b| {
            normalized[[i, b]]
                .partial_cmp(&normalized[[i, a]])
                .expect("weights are finite")
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(top_k) {
            kept[[i, j]] = normalized[[i, j]];
        }
    }
    let mut weights = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            weights[[i, j]] = kept[[i, j]].max(kept[[j, i]]);
        }
    }
    GraphLevelGraph::new(weights, top_k, source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::rng;
    use ndarray::array;
    use rand::Rng;

    fn graph(n: usize, edges: &[(usize, usize)], labels: Option<Vec<i64>>) -> Graph {
        Graph::new(n, edges.to_vec(), Array2::zeros((n, 0)), labels, None).unwrap()
    }

    fn random_graph(n: usize, p: f64, labeled: bool, seed: u64) -> Graph {
        let mut gen = rng::seeded(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if gen.gen::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        let labels = labeled.then(|| (0..n).map(|_| gen.gen_range(0..3i64)).collect());
        graph(n, &edges, labels)
    }

    fn permuted(g: &Graph, perm: &[usize]) -> Graph {
        let n = g.node_count();
        let edges: Vec<_> = g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut attrs = Array2::zeros((n, g.node_attributes().ncols()));
        for v in 0..n {
            attrs.row_mut(perm[v]).assign(&g.node_attributes().row(v));
        }
        let labels = g.node_labels().map(|l| {
            let mut out = vec![0; n];
            for v in 0..n {
                out[perm[v]] = l[v];
            }
            out
        });
        Graph::new(n, edges, attrs, labels, g.edge_features().cloned()).unwrap()
    }

    #[test]
    fn identity_kernel_of_unit_row_is_one() {
        let h = array![[1.0, 0.0]];
        assert_eq!(embedding_kernel(&h, &h, FeatureMap::Identity).unwrap(), 1.0);
    }

    #[test]
    fn zero_row_sum_kills_identity_kernel() {
        let h1 = array![[1.0, -2.0], [-1.0, 2.0]];
        let h2 = array![[3.5, 0.25], [9.0, -4.0]];
        assert_eq!(
            embedding_kernel(&h1, &h2, FeatureMap::Identity).unwrap(),
            0.0
        );
    }

    #[test]
    fn identity_kernel_hand_example() {
        let h1 = array![[1.0, 0.0], [0.0, 1.0]];
        let h2 = array![[1.0, 1.0]];
        assert_eq!(
            embedding_kernel(&h1, &h2, FeatureMap::Identity).unwrap(),
            2.0
        );
    }

    #[test]
    fn identity_kernel_matches_double_loop() {
        let mut gen = rng::seeded(3);
        let h1 = Array2::from_shape_fn((4, 3), |_| gen.gen::<f64>() - 0.5);
        let h2 = Array2::from_shape_fn((5, 3), |_| gen.gen::<f64>() - 0.5);
        let mut brute = 0.0;
        for u in h1.rows() {
            for v in h2.rows() {
                brute += u.dot(&v);
            }
        }
        let fast = embedding_kernel(&h1, &h2, FeatureMap::Identity).unwrap();
        assert!((fast - brute).abs() < 1e-10);
        let flipped = embedding_kernel(&h2, &h1, FeatureMap::Identity).unwrap();
        assert!((fast - flipped).abs() < 1e-10);
    }

    #[test]
    fn rbf_kernel_matches_explicit_sum() {
        let gamma = 0.7;
        let mut gen = rng::seeded(4);
        let h1 = Array2::from_shape_fn((3, 2), |_| gen.gen::<f64>());
        let h2 = Array2::from_shape_fn((4, 2), |_| gen.gen::<f64>());
        let mut brute = 0.0;
        for u in h1.rows() {
            for v in h2.rows() {
                let sq: f64 = u.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                brute += (-gamma * sq).exp();
            }
        }
        let fast = embedding_kernel(&h1, &h2, FeatureMap::Rbf { gamma }).unwrap();
        assert!((fast - brute).abs() < 1e-10);
    }

    #[test]
    fn width_mismatch_rejected() {
        let h1 = array![[1.0, 0.0]];
        let h2 = array![[1.0]];
        assert!(embedding_kernel(&h1, &h2, FeatureMap::Identity).is_err());
    }

    #[test]
    fn tape_kernel_matches_plain_for_both_maps() {
        let mut gen = rng::seeded(5);
        let h1 = Array2::from_shape_fn((4, 3), |_| gen.gen::<f64>() - 0.5);
        let h2 = Array2::from_shape_fn((2, 3), |_| gen.gen::<f64>() - 0.5);
        for map in [FeatureMap::Identity, FeatureMap::Rbf { gamma: 0.9 }] {
            let plain = embedding_kernel(&h1, &h2, map).unwrap();
            let mut tape = Tape::new();
            let a = tape.constant(h1.clone());
            let b = tape.constant(h2.clone());
            let k = embedding_kernel_on_tape(&mut tape, a, b, map).unwrap();
            assert!((tape.value(k)[[0, 0]] - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_gradients_check_in_both_embeddings() {
        for map in [FeatureMap::Identity, FeatureMap::Rbf { gamma: 0.5 }] {
            let err = grad_check(
                |t: &mut Tape, p: &[TensorId]| embedding_kernel_on_tape(t, p[0], p[1], map),
                &[
                    array![[0.3, -0.2], [0.5, 0.9]],
                    array![[1.1, 0.4], [-0.6, 0.2], [0.0, 0.7]],
                ],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{map:?}: err = {err}");
        }
    }

    #[test]
    fn multi_relation_identical_views_quadruple_single_pair() {
        let h = array![[0.2, 0.4], [0.1, -0.3]];
        let single = embedding_kernel(&h, &h, FeatureMap::Identity).unwrap();
        let views = vec![h.clone(), h.clone()];
        let total = multi_relation_kernel(&views, &views, FeatureMap::Identity).unwrap();
        assert!((total - 4.0 * single).abs() < 1e-12);
    }

    #[test]
    fn multi_relation_zero_views_give_zero() {
        let zero = vec![Array2::zeros((3, 2)), Array2::zeros((3, 2))];
        let other = vec![
            array![[1.0, 2.0], [0.5, 0.5]],
            array![[0.1, 0.2], [0.3, 0.4]],
        ];
        assert_eq!(
            multi_relation_kernel(&zero, &other, FeatureMap::Identity).unwrap(),
            0.0
        );
    }

    #[test]
    fn multi_relation_matches_four_term_hand_sum() {
        let mut gen = rng::seeded(6);
        let mut mk = |n: usize| Array2::from_shape_fn((n, 3), |_| gen.gen::<f64>() - 0.5);
        let v1 = vec![mk(3), mk(3)];
        let v2 = vec![mk(4), mk(4)];
        let mut hand = 0.0;
        for a in &v1 {
            for b in &v2 {
                hand += embedding_kernel(a, b, FeatureMap::Identity).unwrap();
            }
        }
        let total = multi_relation_kernel(&v1, &v2, FeatureMap::Identity).unwrap();
        assert!((total - hand).abs() < 1e-12);

        let mut tape = Tape::new();
        let ids1: Vec<_> = v1.iter().map(|h| tape.constant(h.clone())).collect();
        let ids2: Vec<_> = v2.iter().map(|h| tape.constant(h.clone())).collect();
        let k = multi_relation_kernel_on_tape(&mut tape, &ids1, &ids2, FeatureMap::Identity)
            .unwrap();
        assert!((tape.value(k)[[0, 0]] - hand).abs() < 1e-12);
    }

    #[test]
    fn relation_set_mismatch_rejected() {
        let views1 = vec![Array2::<f64>::zeros((2, 2))];
        let views2 = vec![Array2::zeros((2, 2)), Array2::zeros((2, 2))];
        assert!(multi_relation_kernel(&views1, &views2, FeatureMap::Identity).is_err());
    }

    #[test]
    fn wl_uniform_triangle_examples() {
        let triangle = graph(3, &[(0, 1), (1, 2), (0, 2)], Some(vec![7, 7, 7]));
        let edge = graph(2, &[(0, 1)], Some(vec![7, 7]));
        assert_eq!(wl_kernel(&triangle, &triangle, 0), 9.0);
        assert_eq!(wl_kernel(&triangle, &edge, 0), 6.0);
    }

    fn wl_oracle(g1: &Graph, g2: &Graph, iterations: usize) -> f64 {
        fn rounds(g: &Graph, iterations: usize) -> Vec<BTreeMap<String, u64>> {
            let adj = super::adjacency_lists(g);
            let mut current: Vec<String> = match g.node_labels() {
                Some(l) => l.iter().map(|x| x.to_string()).collect(),
                None => g.degrees().iter().map(|d| d.to_string()).collect(),
            };
            let mut out = Vec::new();
            for round in 0..=iterations {
                let mut counts = BTreeMap::new();
                for l in &current {
                    *counts.entry(l.clone()).or_insert(0u64) += 1;
                }
                out.push(counts);
                if round == iterations {
                    break;
                }
                current = (0..g.node_count())
                    .map(|v| {
                        let mut ns: Vec<String> =
                            adj[v].iter().map(|&u| current[u].clone()).collect();
                        ns.sort();
                        format!("{}({})", current[v], ns.join(","))
                    })
                    .collect();
            }
            out
        }
        let r1 = rounds(g1, iterations);
        let r2 = rounds(g2, iterations);
        let mut total = 0u64;
        for (c1, c2) in r1.iter().zip(&r2) {
            for (label, &n1) in c1 {
                if let Some(&n2) = c2.get(label) {
                    total += n1 * n2;
                }
            }
        }
        total as f64
    }

    #[test]
    fn wl_matches_string_refinement_oracle() {
        for trial in 0..12 {
            let g1 = random_graph(5, 0.5, trial % 2 == 0, 100 + trial);
            let g2 = random_graph(5, 0.4, trial % 2 == 0, 200 + trial);
            for h in 0..=2 {
                assert_eq!(
                    wl_kernel(&g1, &g2, h),
                    wl_oracle(&g1, &g2, h),
                    "trial {trial}, h = {h}"
                );
            }
        }
    }

    #[test]
    fn wl_ignores_node_ordering() {
        let g = random_graph(6, 0.5, true, 11);
        let perm = [3, 0, 5, 1, 4, 2];
        let h = permuted(&g, &perm);
        let other = random_graph(6, 0.4, true, 12);
        for rounds in 0..=3 {
            assert_eq!(
                wl_kernel(&g, &other, rounds),
                wl_kernel(&h, &other, rounds)
            );
        }
    }

    #[test]
    fn wl_gram_matches_pairwise_calls() {
        let graphs: Vec<Graph> = (0..4).map(|i| random_graph(5, 0.5, false, 30 + i)).collect();
        let refs: Vec<&Graph> = graphs.iter().collect();
        let gram = wl_gram(&refs, 2);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(gram[[i, j]], wl_kernel(&graphs[i], &graphs[j], 2));
            }
        }
    }

    #[test]
    fn sp_hand_examples() {
        let edge = graph(2, &[(0, 1)], None);
        let path3 = graph(3, &[(0, 1), (1, 2)], None);
        let isolated = graph(2, &[], None);
        assert_eq!(sp_kernel(&edge, &edge), 1.0);
        assert_eq!(sp_kernel(&path3, &edge), 2.0);
        assert_eq!(sp_kernel(&isolated, &isolated), 0.0);
    }

    #[test]
    fn sp_labels_refine_bins() {
        let ab = graph(2, &[(0, 1)], Some(vec![0, 1]));
        let aa = graph(2, &[(0, 1)], Some(vec![0, 0]));
        assert_eq!(sp_kernel(&ab, &aa), 0.0);
        assert_eq!(sp_kernel(&ab, &ab), 1.0);
    }

    #[test]
    fn floyd_warshall_matches_bfs() {
        use std::collections::VecDeque;
        for trial in 0..8 {
            let g = random_graph(7, 0.3, false, 50 + trial);
            let adj = super::adjacency_lists(&g);
            let dist = shortest_path_matrix(&g);
            for start in 0..7 {
                let mut seen = vec![u64::MAX; 7];
                seen[start] = 0;
                let mut queue = VecDeque::from([start]);
                while let Some(v) = queue.pop_front() {
                    for &u in &adj[v] {
                        if seen[u] == u64::MAX {
                            seen[u] = seen[v] + 1;
                            queue.push_back(u);
                        }
                    }
                }
                for v in 0..7 {
                    if seen[v] == u64::MAX {
                        assert!(dist[[start, v]].is_infinite());
                    } else {
                        assert_eq!(dist[[start, v]], seen[v] as f64);
                    }
                }
            }
        }
    }

    #[test]
    fn sp_ignores_node_ordering() {
        let g = random_graph(6, 0.4, true, 60);
        let h = permuted(&g, &[5, 3, 1, 0, 2, 4]);
        let other = random_graph(6, 0.5, true, 61);
        assert_eq!(sp_kernel(&g, &other), sp_kernel(&h, &other));
    }

    #[test]
    fn rw_single_edge_pair_closed_form() {
        let edge = graph(2, &[(0, 1)], None);
        let got = rw_kernel(&edge, &edge, 10, 0.1);
        // every walk matrix is the all-ones 2x2, so each step adds
        // 4 * 0.1^t; geometric sum over t = 1..=10.
        let expect = 4.0 * (0.1 - 0.1f64.powi(11)) / 0.9;
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn rw_respects_label_mask() {
        let ab = graph(2, &[(0, 1)], Some(vec![0, 1]));
        let aa = graph(2, &[(0, 1)], Some(vec![0, 0]));
        // Mask pairs node 0 of ab only with both nodes of aa; each step
        // A1 W A2^T doubles the surviving mass.
        let got = rw_kernel(&ab, &aa, 3, 0.5);
        let mut walks = array![[1.0, 1.0], [0.0, 0.0]];
        let mask = walks.clone();
        let (a1, a2) = (ab.adjacency(), aa.adjacency());
        let mut expect = 0.0;
        for t in 1..=3 {
            walks = &mask * &a1.dot(&walks).dot(&a2.t());
            expect += 0.5f64.powi(t) * walks.sum();
        }
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn graph_level_graph_from_identical_graphs() {
        let kernel = Array2::from_elem((4, 4), 2.5);
        let built = build_graph_level_graph(&kernel, 3, KernelKind::Wl).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 0.0 } else { 1.0 };
                assert_eq!(built.weights()[[i, j]], expect);
            }
        }
    }

    #[test]
    fn zero_top_k_empties_the_graph() {
        let kernel = Array2::from_elem((3, 3), 1.0);
        let built = build_graph_level_graph(&kernel, 0, KernelKind::Sp).unwrap();
        assert!(built.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn graph_level_graph_matches_spreadsheet_oracle() {
        let kernel = array![
            [4.0, 2.0, 0.0, 1.0],
            [2.0, 1.0, 0.5, 0.0],
            [0.0, 0.5, 9.0, 3.0],
            [1.0, 0.0, 3.0, 1.0],
        ];
        let built = build_graph_level_graph(&kernel, 1, KernelKind::Dynamic).unwrap();

        let m = 4;
        let mut normalized = Array2::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    let v = kernel[[i, j]] / (kernel[[i, i]] * kernel[[j, j]]).sqrt();
                    normalized[[i, j]] = v.clamp(0.0, 1.0);
                }
            }
        }
        let mut kept = Array2::zeros((m, m));
        for i in 0..m {
            let mut best = None;
            for j in 0..m {
                if j != i && normalized[[i, j]] > 0.0 {
                    if best.map_or(true, |b: usize| normalized[[i, j]] > normalized[[i, b]]) {
                        best = Some(j);
                    }
                }
            }
            if let Some(j) = best {
                kept[[i, j]] = normalized[[i, j]];
            }
        }
        for i in 0..m {
            for j in 0..m {
                let expect = kept[[i, j]].max(kept[[j, i]]);
                assert!(
                    (built.weights()[[i, j]] - expect).abs() < 1e-12,
                    "({i}, {j}): {} vs {expect}",
                    built.weights()[[i, j]]
                );
            }
        }
    }

    #[test]
    fn asymmetric_kernel_rejected() {
        let mut kernel = Array2::from_elem((3, 3), 1.0);
        kernel[[0, 1]] = 2.0;
        assert!(build_graph_level_graph(&kernel, 2, KernelKind::Wl).is_err());
    }

    #[test]
    fn nonpositive_self_kernel_rows_are_zeroed() {
        let kernel = array![[0.0, 1.0], [1.0, 4.0]];
        let built = build_graph_level_graph(&kernel, 2, KernelKind::Dynamic).unwrap();
        assert!(built.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn identity_gram_is_positive_semidefinite() {
        let mut gen = rng::seeded(9);
        let batch: Vec<Vec<Array2<f64>>> = (0..8)
            .map(|_| {
                let n = gen.gen_range(2..6);
                vec![
                    Array2::from_shape_fn((n, 4), |_| gen.gen::<f64>() - 0.5),
                    Array2::from_shape_fn((n, 4), |_| gen.gen::<f64>() - 0.5),
                ]
            })
            .collect();
        let gram = multi_relation_gram(&batch, FeatureMap::Identity).unwrap();
        let sym = nalgebra::DMatrix::from_fn(8, 8, |i, j| gram[[i, j]]);
        let eigen = nalgebra::SymmetricEigen::new(sym);
        let min = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let trace: f64 = (0..8).map(|i| gram[[i, i]]).sum();
        assert!(min >= -1e-8 * trace, "min eigenvalue {min}, trace {trace}");
    }
}
