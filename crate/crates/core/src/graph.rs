//! Attributed graphs, datasets, partitions, and adjacency normalization.
//!
//! Graphs are undirected, stored without self-loops and without duplicate
//! edges. All matrices are dense `f64`; the datasets this crate targets
//! average well under a hundred nodes per graph, so dense per-graph
//! adjacencies are cheap and keep the differentiation path simple.

use ndarray::Array2;

use crate::error::{Error, Result};

/// One attributed, undirected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    node_attributes: Array2<f64>,
    node_labels: Option<Vec<i64>>,
    edge_features: Option<Array2<f64>>,
}

impl Graph {
    /// Build a graph and check every structural invariant.
    ///
    /// Edges are canonicalized to `(min, max)` order. Self-loops, duplicate
    /// undirected edges, and out-of-range endpoints are rejected.
    pub fn new(
        node_count: usize,
        edges: Vec<(usize, usize)>,
        node_attributes: Array2<f64>,
        node_labels: Option<Vec<i64>>,
        edge_features: Option<Array2<f64>>,
    ) -> Result<Self> {
        let edges: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(u, v)| if u <= v { (u, v) } else { (v, u) })
            .collect();
        // A zero-width feature matrix carries nothing; drop it so that
        // "no edge features" has a single representation.
        let edge_features = edge_features.filter(|ef| ef.ncols() > 0);
        let g = Graph {
            node_count,
            edges,
            node_attributes,
            node_labels,
            edge_features,
        };
        validate_graph(&g)?;
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Undirected edges in canonical `(min, max)` order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Raw node attribute matrix, `node_count x d` (possibly zero-width).
    pub fn node_attributes(&self) -> &Array2<f64> {
        &self.node_attributes
    }

    pub fn node_labels(&self) -> Option<&[i64]> {
        self.node_labels.as_deref()
    }

    /// Edge feature matrix with one row per stored undirected edge.
    pub fn edge_features(&self) -> Option<&Array2<f64>> {
        self.edge_features.as_ref()
    }

    /// Binary adjacency matrix of the stored edges.
    pub fn adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.node_count, self.node_count));
        for &(u, v) in &self.edges {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        a
    }

    /// Node degrees in the stored edge set.
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.node_count];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    /// Indices of edges incident to each node.
    pub fn incident_edges(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.node_count];
        for (i, &(u, v)) in self.edges.iter().enumerate() {
            inc[u].push(i);
            inc[v].push(i);
        }
        inc
    }

    /// One-hot degree encoding with degrees clamped to `max_degree`,
    /// producing a `node_count x (max_degree + 1)` matrix.
    pub fn degree_one_hot(&self, max_degree: usize) -> Array2<f64> {
        let mut x = Array2::zeros((self.node_count, max_degree + 1));
        for (v, &d) in self.degrees().iter().enumerate() {
            x[[v, d.min(max_degree)]] = 1.0;
        }
        x
    }

    /// Structural and label equality with tolerance `tol` on attribute
    /// and edge feature entries.
    pub fn approx_eq(&self, other: &Graph, tol: f64) -> bool {
        let close = |a: &Array2<f64>, b: &Array2<f64>| {
            a.dim() == b.dim() && a.iter().zip(b.iter()).all(|(&x, &y)| (x - y).abs() <= tol)
        };
        self.node_count == other.node_count
            && self.edges == other.edges
            && self.node_labels == other.node_labels
            && close(&self.node_attributes, &other.node_attributes)
            && match (&self.edge_features, &other.edge_features) {
                (None, None) => true,
                (Some(a), Some(b)) => close(a, b),
                _ => false,
            }
    }

    /// Feature matrix consumed by the encoder.
    ///
    /// Real attributes come first, one-hot node labels are concatenated
    /// after them. Graphs with neither attributes nor labels fall back to
    /// one-hot degree encoding capped at `max_degree`. `label_domain`
    /// fixes the one-hot width so every graph of a dataset agrees.
    pub fn encoder_features(&self, label_domain: &[i64], max_degree: usize) -> Array2<f64> {
        let d_attr = self.node_attributes.ncols();
        let has_labels = self.node_labels.is_some() && !label_domain.is_empty();
        if d_attr == 0 && !has_labels {
            return self.degree_one_hot(max_degree);
        }
        let d_label = if has_labels { label_domain.len() } else { 0 };
        let mut x = Array2::zeros((self.node_count, d_attr + d_label));
        for v in 0..self.node_count {
            for j in 0..d_attr {
                x[[v, j]] = self.node_attributes[[v, j]];
            }
        }
        if let Some(labels) = &self.node_labels {
            for (v, lab) in labels.iter().enumerate() {
                if let Some(pos) = label_domain.iter().position(|l| l == lab) {
                    x[[v, d_attr + pos]] = 1.0;
                }
            }
        }
        x
    }
}

/// Check every [`Graph`] invariant, reporting the first violation found.
pub fn validate_graph(g: &Graph) -> Result<()> {
    let n = g.node_count;
    let mut seen = std::collections::HashSet::new();
    for (i, &(u, v)) in g.edges.iter().enumerate() {
        if u >= n || v >= n {
            return Err(Error::Validation(format!(
                "edge {i} = ({u}, {v}) has an endpoint outside [0, {n})"
            )));
        }
        if u == v {
            return Err(Error::Validation(format!("edge {i} is a self-loop at node {u}")));
        }
        if !seen.insert((u, v)) {
            return Err(Error::Validation(format!(
                "edge {i} = ({u}, {v}) duplicates an earlier undirected edge"
            )));
        }
    }
    if g.node_attributes.nrows() != n {
        return Err(Error::Validation(format!(
            "node attribute matrix has {} rows but the graph has {} nodes",
            g.node_attributes.nrows(),
            n
        )));
    }
    if let Some(labels) = &g.node_labels {
        if labels.len() != n {
            return Err(Error::Validation(format!(
                "node label list has {} entries but the graph has {} nodes",
                labels.len(),
                n
            )));
        }
    }
    if let Some(ef) = &g.edge_features {
        if ef.nrows() != g.edges.len() {
            return Err(Error::Validation(format!(
                "edge feature matrix has {} rows but the graph has {} edges",
                ef.nrows(),
                g.edges.len()
            )));
        }
    }
    Ok(())
}

/// Ordered collection of graphs with one class label per graph.
#[derive(Debug, Clone)]
pub struct GraphDataset {
    pub graphs: Vec<Graph>,
    pub class_labels: Vec<usize>,
    pub name: String,
    pub num_classes: usize,
}

impl GraphDataset {
    pub fn new(
        graphs: Vec<Graph>,
        class_labels: Vec<usize>,
        name: impl Into<String>,
        num_classes: usize,
    ) -> Result<Self> {
        if class_labels.len() != graphs.len() {
            return Err(Error::Validation(format!(
                "{} class labels for {} graphs",
                class_labels.len(),
                graphs.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Validation("num_classes must be positive".into()));
        }
        if let Some(bad) = class_labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Validation(format!(
                "class label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(GraphDataset {
            graphs,
            class_labels,
            name: name.into(),
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Sorted distinct node labels over the whole dataset.
    pub fn node_label_domain(&self) -> Vec<i64> {
        let mut dom: Vec<i64> = self
            .graphs
            .iter()
            .filter_map(|g| g.node_labels())
            .flatten()
            .copied()
            .collect();
        dom.sort_unstable();
        dom.dedup();
        dom
    }

    /// Field-by-field equality with tolerance `tol` on real entries.
    pub fn approx_eq(&self, other: &GraphDataset, tol: f64) -> bool {
        self.name == other.name
            && self.num_classes == other.num_classes
            && self.class_labels == other.class_labels
            && self.graphs.len() == other.graphs.len()
            && self
                .graphs
                .iter()
                .zip(&other.graphs)
                .all(|(a, b)| a.approx_eq(b, tol))
    }

    /// Encoder feature matrices for every graph, sharing one label domain.
    pub fn feature_matrices(&self, max_degree: usize) -> Vec<Array2<f64>> {
        let domain = self.node_label_domain();
        self.graphs
            .iter()
            .map(|g| g.encoder_features(&domain, max_degree))
            .collect()
    }
}

/// A hard clustering of the graphs of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignments: Vec<usize>,
    pub k: usize,
}

impl Partition {
    pub fn new(assignments: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Validation("partition k must be positive".into()));
        }
        if let Some(bad) = assignments.iter().find(|&&c| c >= k) {
            return Err(Error::Validation(format!(
                "cluster assignment {bad} outside [0, {k})"
            )));
        }
        Ok(Partition { assignments, k })
    }
}

fn check_square_symmetric_nonneg(a: &Array2<f64>, op: &'static str) -> Result<()> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::Validation(format!("{op}: matrix is {r}x{c}, not square")));
    }
    for i in 0..r {
        for j in 0..c {
            if a[[i, j]] < 0.0 {
                return Err(Error::Validation(format!(
                    "{op}: negative entry {} at ({i}, {j})",
                    a[[i, j]]
                )));
            }
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "{op}: asymmetric at ({i}, {j}): {} vs {}",
                    a[[i, j]],
                    a[[j, i]]
                )));
            }
        }
    }
    Ok(())
}

/// Diagonal degree matrix: entry `(i, i)` is the row sum of `a`.
pub fn degree_matrix(a: &Array2<f64>) -> Result<Array2<f64>> {
    check_square_symmetric_nonneg(a, "degree_matrix")?;
    let n = a.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        d[[i, i]] = a.row(i).sum();
    }
    Ok(d)
}

/// Symmetric normalization with implicit self-loops:
/// `D^{-1/2} (A + I) D^{-1/2}` where `D` is the degree matrix of `A + I`.
///
/// Self-loops are added only here, never stored on graphs, so the added
/// diagonal keeps every degree strictly positive.
pub fn normalize_adjacency(a: &Array2<f64>) -> Result<Array2<f64>> {
    check_square_symmetric_nonneg(a, "normalize_adjacency")?;
    let n = a.nrows();
    let mut s = a.clone();
    for i in 0..n {
        s[[i, i]] += 1.0;
    }
    let scale: Vec<f64> = (0..n).map(|i| 1.0 / s.row(i).sum().sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            s[[i, j]] *= scale[i] * scale[j];
        }
    }
    Ok(s)
}
