//! Multi-relation adjacency views over a single graph.
//!
//! Besides the original binary adjacency, two relations are constructed
//! from data: a cosine similarity over node attributes and a proximity
//! over incident-edge descriptors. A learnable convex combination fuses
//! relation views into one matrix. Each constructed view is sparsified to
//! the strongest `top_k` partners per node, symmetrized by elementwise
//! maximum, and carries a zero diagonal.
//!
//! The edge relation compares nodes, not edges: each node is summarized
//! by the mean feature row of its incident edges (or by its degree when
//! the graph has no edge features), and two nodes relate with weight
//! `exp(-distance)` between their summaries.

use ndarray::Array2;

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// All adjacency views of one graph, plus the weights that built the
/// fused view.
#[derive(Debug, Clone)]
pub struct RelationViewSet {
    /// Binary adjacency of the stored edges.
    pub original: Array2<f64>,
    /// Attribute-cosine relation, entries in [0, 1].
    pub attribute_relation: Array2<f64>,
    /// Edge-descriptor relation, entries in [0, 1].
    pub edge_relation: Array2<f64>,
    /// Convex combination of the two constructed relations.
    pub fused: Array2<f64>,
    /// Effective (softmax-normalized) fusion weights, summing to 1.
    pub fusion_weights: Vec<f64>,
}

impl RelationViewSet {
    /// Build every view for `g`. `features` is the node feature matrix the
    /// encoder consumes (one row per node); `alpha` holds the two fusion
    /// logits for the attribute and edge relations.
    pub fn build(g: &Graph, features: &Array2<f64>, top_k: usize, alpha: &[f64]) -> Result<Self> {
        if features.nrows() != g.node_count() {
            return Err(Error::Validation(format!(
                "feature matrix has {} rows for {} nodes",
                features.nrows(),
                g.node_count()
            )));
        }
        let attribute_relation = attribute_relation(features, top_k)?;
        let edge_relation = edge_relation(g, top_k)?;
        let views = [attribute_relation.clone(), edge_relation.clone()];
        let fused = fuse_relations(&views, alpha)?;
        Ok(RelationViewSet {
            original: g.adjacency(),
            attribute_relation,
            edge_relation,
            fused,
            fusion_weights: softmax_weights(alpha),
        })
    }
}

/// Zero the diagonal, keep each row's `top_k` largest entries, then
/// symmetrize by elementwise maximum. `top_k >= node_count` keeps the
/// matrix dense and warns.
///
/// Ties at the cut are kept inclusively: every entry matching the
/// `top_k`-th largest score survives. Selection therefore depends only on
/// score values, never on node numbering, which keeps the construction
/// permutation-equivariant even on highly regular graphs.
fn sparsify(mut scores: Array2<f64>, top_k: usize, relation: &str) -> Array2<f64> {
    let n = scores.nrows();
    for i in 0..n {
        scores[[i, i]] = 0.0;
    }
    if n == 0 {
        return scores;
    }
    if top_k >= n {
        log::warn!("{relation}: top_k = {top_k} >= {n} nodes, keeping the dense matrix");
        return scores;
    }
    if top_k >= n - 1 {
        return scores;
    }
    let mut kept = Array2::zeros((n, n));
    let mut row: Vec<f64> = Vec::with_capacity(n - 1);
    for u in 0..n {
        row.clear();
        row.extend((0..n).filter(|&v| v != u).map(|v| scores[[u, v]]));
        row.sort_by(|a, b| b.total_cmp(a));
        let threshold = row[top_k - 1];
        for v in 0..n {
            if v != u && scores[[u, v]] >= threshold {
                kept[[u, v]] = scores[[u, v]];
            }
        }
    }
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = kept[[i, j]].max(kept[[j, i]]);
        }
    }
    out
}

/// Cosine-similarity relation over node attribute rows.
///
/// Negative cosines clamp to zero and zero-norm rows relate to nothing,
/// so entries stay in [0, 1]; the result passes through [`sparsify`].
pub fn attribute_relation(x: &Array2<f64>, top_k: usize) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Validation(
            "attribute relation needs at least one node".into(),
        ));
    }
    if top_k == 0 {
        return Err(Error::Validation("top_k must be positive".into()));
    }
    let norms: Vec<f64> = (0..n)
        .map(|u| x.row(u).iter().map(|&t| t * t).sum::<f64>().sqrt())
        .collect();
    let mut scores = Array2::zeros((n, n));
    for u in 0..n {
        for v in (u + 1)..n {
            if norms[u] == 0.0 || norms[v] == 0.0 {
                continue;
            }
            let dot: f64 = x.row(u).iter().zip(x.row(v).iter()).map(|(&a, &b)| a * b).sum();
            let cos = (dot / (norms[u] * norms[v])).clamp(0.0, 1.0);
            scores[[u, v]] = cos;
            scores[[v, u]] = cos;
        }
    }
    Ok(sparsify(scores, top_k, "attribute relation"))
}

/// Per-node summaries of incident edges: the mean incident feature row,
/// or the degree as a one-dimensional descriptor when the graph carries
/// no edge features. Isolated nodes summarize to zero.
pub fn incident_descriptors(g: &Graph) -> Array2<f64> {
    let n = g.node_count();
    match g.edge_features() {
        Some(ef) => {
            let q = ef.ncols();
            let mut d = Array2::zeros((n, q));
            for (u, incident) in g.incident_edges().iter().enumerate() {
                if incident.is_empty() {
                    continue;
                }
                for &e in incident {
                    let mut row = d.row_mut(u);
                    row += &ef.row(e);
                }
                let mut row = d.row_mut(u);
                row /= incident.len() as f64;
            }
            d
        }
        None => {
            let mut d = Array2::zeros((n, 1));
            for (u, deg) in g.degrees().iter().enumerate() {
                d[[u, 0]] = *deg as f64;
            }
            d
        }
    }
}

/// Edge-descriptor relation: nodes with similar incident-edge summaries
/// relate with weight `exp(-||d_u - d_v||)`.
pub fn edge_relation(g: &Graph, top_k: usize) -> Result<Array2<f64>> {
    let n = g.node_count();
    if n == 0 {
        return Err(Error::Validation(
            "edge relation needs at least one node".into(),
        ));
    }
    if top_k == 0 {
        return Err(Error::Validation("top_k must be positive".into()));
    }
    let d = incident_descriptors(g);
    let mut scores = Array2::zeros((n, n));
    for u in 0..n {
        for v in (u + 1)..n {
            let dist: f64 = d
                .row(u)
                .iter()
                .zip(d.row(v).iter())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let w = (-dist).exp();
            scores[[u, v]] = w;
            scores[[v, u]] = w;
        }
    }
    Ok(sparsify(scores, top_k, "edge relation"))
}

/// Softmax of fusion logits.
pub fn softmax_weights(alpha: &[f64]) -> Vec<f64> {
    let max = alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = alpha.iter().map(|&a| (a - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Convex combination of relation views under softmax-normalized logits.
pub fn fuse_relations(views: &[Array2<f64>], alpha: &[f64]) -> Result<Array2<f64>> {
    if views.is_empty() {
        return Err(Error::Validation("fusion needs at least one view".into()));
    }
    if views.len() != alpha.len() {
        return Err(Error::Validation(format!(
            "{} fusion logits for {} views",
            alpha.len(),
            views.len()
        )));
    }
    let dim = views[0].dim();
    if let Some(bad) = views.iter().find(|v| v.dim() != dim) {
        return Err(Error::Validation(format!(
            "view shaped {:?} in a fusion of {:?} views",
            bad.dim(),
            dim
        )));
    }
    let w = softmax_weights(alpha);
    let mut fused = Array2::zeros(dim);
    for (view, &weight) in views.iter().zip(&w) {
        fused += &view.mapv(|x| weight * x);
    }
    Ok(fused)
}

/// Tape version of [`fuse_relations`]: `alpha` is a `1 x R` tensor and
/// gradients flow from the fused matrix back into it. The views are
/// typically constants.
pub fn fuse_on_tape(tape: &mut Tape, views: &[TensorId], alpha: TensorId) -> Result<TensorId> {
    if views.is_empty() {
        return Err(Error::Validation("fusion needs at least one view".into()));
    }
    let r = tape.value(alpha).ncols();
    if tape.value(alpha).nrows() != 1 || r != views.len() {
        return Err(Error::Validation(format!(
            "fusion logits shaped {:?} for {} views",
            tape.value(alpha).dim(),
            views.len()
        )));
    }
    let dim = tape.value(views[0]).dim();
    if let Some(&bad) = views.iter().find(|&&v| tape.value(v).dim() != dim) {
        return Err(Error::Validation(format!(
            "view shaped {:?} in a fusion of {:?} views",
            tape.value(bad).dim(),
            dim
        )));
    }
    let weights = tape.row_softmax(alpha);
    let weights_col = tape.transpose(weights);
    let mut fused: Option<TensorId> = None;
    for (i, &view) in views.iter().enumerate() {
        let w_i = tape.gather_rows(weights_col, &[i])?;
        let term = tape.mul(view, w_i)?;
        fused = Some(match fused {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok(fused.expect("nonempty views"))
}
