//! Similarity-aware readout from node embeddings to one graph vector.
//!
//! Three node-indexed sums are added: importance-weighted embeddings
//! under a learnable query, neighborhood-similarity-weighted embeddings
//! (normalized by node count so graph size does not dominate), and
//! embeddings weighted by each node's cosine to the graph mean. All
//! three run on the tape, so gradients reach the query vector, the
//! optional term coefficients, and the embeddings themselves.

use ndarray::Array2;

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::rng;

use rand::Rng;

/// Learnable pooling state: a query vector shared by all graphs and
/// views, the similarity temperature, and optionally three softmax-
/// normalized term coefficients (fixed at 1 each when absent).
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingParams {
    pub query: Array2<f64>,
    pub temperature: f64,
    pub term_logits: Option<Array2<f64>>,
}

/// Tape handles for the learnable parts of [`PoolingParams`].
#[derive(Debug, Clone, Copy)]
pub struct BoundPooling {
    pub query: TensorId,
    pub term_logits: Option<TensorId>,
}

impl PoolingParams {
    pub fn new(
        hidden_dim: usize,
        temperature: f64,
        learnable_terms: bool,
        seed: u64,
    ) -> Result<Self> {
        if hidden_dim == 0 {
            return Err(Error::Config("pooling needs a positive hidden_dim".into()));
        }
        if temperature <= 0.0 {
            return Err(Error::Config(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let bound = (6.0 / (hidden_dim + 1) as f64).sqrt();
        let mut gen = rng::stream(seed, 0x706f6f6c);
        let query = Array2::from_shape_fn((1, hidden_dim), |_| {
            (gen.gen::<f64>() * 2.0 - 1.0) * bound
        });
        Ok(PoolingParams {
            query,
            temperature,
            term_logits: learnable_terms.then(|| Array2::zeros((1, 3))),
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.query];
        if let Some(logits) = &mut self.term_logits {
            out.push(logits);
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundPooling {
        let leaf = |tape: &mut Tape, v: &Array2<f64>| {
            if trainable {
                tape.parameter(v.clone())
            } else {
                tape.constant(v.clone())
            }
        };
        BoundPooling {
            query: leaf(tape, &self.query),
            term_logits: self.term_logits.as_ref().map(|l| leaf(tape, l)),
        }
    }
}

/// Importance scores: softmax over the graph's nodes of `q . h_v`,
/// returned as an `n x 1` column summing to 1.
pub fn node_importance(tape: &mut Tape, h: TensorId, query: TensorId) -> Result<TensorId> {
    let (n, d) = tape.value(h).dim();
    if n == 0 {
        return Err(Error::Contract("cannot pool an empty graph".into()));
    }
    if tape.value(query).dim() != (1, d) {
        return Err(Error::Shape {
            op: "node_importance",
            details: format!("query {:?} for {d}-wide embeddings", tape.value(query).dim()),
        });
    }
    let q_col = tape.transpose(query);
    let logits = tape.matmul(h, q_col)?;
    let logits_row = tape.transpose(logits);
    let softmax = tape.row_softmax(logits_row);
    Ok(tape.transpose(softmax))
}

/// Pairwise similarity `exp(-d_uv * ||h_u - h_v||^2 / temperature)`.
///
/// `descriptors` holds one incident-edge summary row per node; `d_uv` is
/// the Euclidean distance between summaries. When every node carries the
/// same summary (all distances zero) the factor degenerates to 1 and the
/// matrix reflects embedding distances alone. The diagonal is exactly 1.
pub fn structure_similarity(
    tape: &mut Tape,
    h: TensorId,
    descriptors: &Array2<f64>,
    temperature: f64,
) -> Result<TensorId> {
    if temperature <= 0.0 {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let n = tape.value(h).nrows();
    if descriptors.nrows() != n {
        return Err(Error::Shape {
            op: "structure_similarity",
            details: format!("{} descriptor rows for {n} nodes", descriptors.nrows()),
        });
    }
    let mut dist = Array2::zeros((n, n));
    let mut any_positive = false;
    for u in 0..n {
        for v in (u + 1)..n {
            let d: f64 = descriptors
                .row(u)
                .iter()
                .zip(descriptors.row(v).iter())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist[[u, v]] = d;
            dist[[v, u]] = d;
            if d > 0.0 {
                any_positive = true;
            }
        }
    }
    if !any_positive {
        dist.fill(1.0);
    }

    let gram = {
        let ht = tape.transpose(h);
        tape.matmul(h, ht)?
    };
    // ||h_u - h_v||^2 = r_u + r_v - 2 <h_u, h_v>, with r read off the Gram
    // diagonal so the matrix's own diagonal cancels to exactly zero.
    let r = tape.diag(gram)?;
    let rt = tape.transpose(r);
    let cross = tape.add(r, rt)?;
    let minus2 = tape.scalar_mul(gram, -2.0);
    let sq = tape.add(cross, minus2)?;
    let sq = tape.clamp_min(sq, 0.0);
    let scale = tape.constant(dist.mapv(|d| d / temperature));
    let exponent = tape.mul(sq, scale)?;
    let neg = tape.neg(exponent);
    Ok(tape.exp(neg))
}

/// Cosine of every node embedding against the graph's mean embedding,
/// as an `n x 1` column. Zero-norm rows or a zero mean give 0.
pub fn node_graph_similarity(tape: &mut Tape, h: TensorId) -> Result<TensorId> {
    let (n, _) = tape.value(h).dim();
    if n == 0 {
        return Err(Error::Contract("cannot pool an empty graph".into()));
    }
    let ones = tape.constant(Array2::from_elem((1, n), 1.0 / n as f64));
    let mean = tape.matmul(ones, h)?;
    let mean_col = tape.transpose(mean);
    let dots = tape.matmul(h, mean_col)?;
    let row_norms = tape.l2_norm_rows(h);
    let mean_norm = tape.l2_norm_rows(mean);
    let denom = tape.mul(row_norms, mean_norm)?;
    let denom = tape.clamp_min(denom, 1e-30);
    tape.div(dots, denom)
}

/// The pooled graph vector `1 x hidden_dim`.
///
/// `importance` and `graph_similarity` are `n x 1` columns, `similarity`
/// is the `n x n` matrix of [`structure_similarity`]. With `term_logits`
/// present the three terms are weighted by a softmax of the logits;
/// otherwise each term enters with coefficient 1. The similarity term is
/// divided by `n` so its double sum stays comparable across graph sizes.
pub fn pool_graph(
    tape: &mut Tape,
    h: TensorId,
    importance: TensorId,
    similarity: TensorId,
    graph_similarity: TensorId,
    term_logits: Option<TensorId>,
) -> Result<TensorId> {
    let (n, _) = tape.value(h).dim();
    for (name, id, expect) in [
        ("importance", importance, (n, 1)),
        ("similarity", similarity, (n, n)),
        ("graph similarity", graph_similarity, (n, 1)),
    ] {
        if tape.value(id).dim() != expect {
            return Err(Error::Shape {
                op: "pool_graph",
                details: format!(
                    "{name} shaped {:?}, expected {expect:?}",
                    tape.value(id).dim()
                ),
            });
        }
    }
    let s_row = tape.transpose(importance);
    let term1 = tape.matmul(s_row, h)?;

    let ones = tape.constant(Array2::from_elem((1, n), 1.0));
    let col_sums = tape.matmul(ones, similarity)?;
    let weighted = tape.matmul(col_sums, h)?;
    let term2 = tape.scalar_mul(weighted, 1.0 / n as f64);

    let sim_row = tape.transpose(graph_similarity);
    let term3 = tape.matmul(sim_row, h)?;

    match term_logits {
        None => {
            let partial = tape.add(term1, term2)?;
            tape.add(partial, term3)
        }
        Some(logits) => {
            if tape.value(logits).dim() != (1, 3) {
                return Err(Error::Shape {
                    op: "pool_graph",
                    details: format!("term logits {:?}, expected (1, 3)", tape.value(logits).dim()),
                });
            }
            let coeff = tape.row_softmax(logits);
            let coeff_col = tape.transpose(coeff);
            let mut z: Option<TensorId> = None;
            for (i, term) in [term1, term2, term3].into_iter().enumerate() {
                let c = tape.gather_rows(coeff_col, &[i])?;
                let scaled = tape.mul(term, c)?;
                z = Some(match z {
                    Some(acc) => tape.add(acc, scaled)?,
                    None => scaled,
                });
            }
            Ok(z.expect("three terms"))
        }
    }
}

/// Full readout of one stream: importance, structure similarity, and
/// graph-mean similarity combined by [`pool_graph`].
pub fn pool_stream(
    tape: &mut Tape,
    h: TensorId,
    descriptors: &Array2<f64>,
    bound: &BoundPooling,
    temperature: f64,
) -> Result<TensorId> {
    let importance = node_importance(tape, h, bound.query)?;
    let similarity = structure_similarity(tape, h, descriptors, temperature)?;
    let graph_similarity = node_graph_similarity(tape, h)?;
    pool_graph(
        tape,
        h,
        importance,
        similarity,
        graph_similarity,
        bound.term_logits,
    )
}
