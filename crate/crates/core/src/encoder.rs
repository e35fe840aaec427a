//! Message-passing encoder shared by all adjacency views.
//!
//! One layer computes `relu((H + Â H) W + b)`: the layer input is added
//! to its neighborhood aggregate, linearly transformed, shifted by a
//! broadcast bias, and rectified. Stacking `depth` layers over each
//! normalized view yields the per-view node embeddings. A single
//! parameter set serves every view, so identical views produce identical
//! embeddings.
//!
//! The two constructed relation streams are averaged into one relation
//! embedding so each graph ends up with three streams: original,
//! relation, fused.

use ndarray::Array2;

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::graph::normalize_adjacency;
use crate::relations::RelationViewSet;
use crate::rng;

use rand::Rng;

/// Weights and biases of the encoder, one `(W, b)` pair per layer.
/// Layer 0 maps the input width to `hidden_dim`; later layers map
/// `hidden_dim` to itself.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    layers: Vec<(Array2<f64>, Array2<f64>)>,
}

impl EncoderParams {
    /// Seeded uniform Xavier initialization: weights drawn from
    /// `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn new(input_dim: usize, hidden_dim: usize, depth: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config(
                "encoder dimensions must be positive".into(),
            ));
        }
        if depth == 0 {
            return Err(Error::Config("encoder depth must be at least 1".into()));
        }
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let fan_in = if l == 0 { input_dim } else { hidden_dim };
            let fan_out = hidden_dim;
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut gen = rng::stream(seed, l as u64);
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
                (gen.gen::<f64>() * 2.0 - 1.0) * bound
            });
            layers.push((w, Array2::zeros((1, fan_out))));
        }
        Ok(EncoderParams { layers })
    }

    pub fn from_layers(layers: Vec<(Array2<f64>, Array2<f64>)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("encoder depth must be at least 1".into()));
        }
        for (l, (w, b)) in layers.iter().enumerate() {
            if b.dim() != (1, w.ncols()) {
                return Err(Error::Shape {
                    op: "encoder layer",
                    details: format!("layer {l}: bias {:?} for weight {:?}", b.dim(), w.dim()),
                });
            }
            if l > 0 && layers[l - 1].0.ncols() != w.nrows() {
                return Err(Error::Shape {
                    op: "encoder layer",
                    details: format!(
                        "layer {l} expects {} inputs, previous layer emits {}",
                        w.nrows(),
                        layers[l - 1].0.ncols()
                    ),
                });
            }
        }
        Ok(EncoderParams { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers.last().expect("nonempty").0.ncols()
    }

    pub fn layers(&self) -> &[(Array2<f64>, Array2<f64>)] {
        &self.layers
    }

    /// Mutable references to every parameter matrix, weights before bias
    /// within each layer, for in-place optimizer updates.
    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Bind all layers onto a tape. `trainable` decides between parameter
    /// and constant leaves.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<(TensorId, TensorId)> {
        self.layers
            .iter()
            .map(|(w, b)| {
                if trainable {
                    (tape.parameter(w.clone()), tape.parameter(b.clone()))
                } else {
                    (tape.constant(w.clone()), tape.constant(b.clone()))
                }
            })
            .collect()
    }
}

/// Differentiable symmetric normalization `D^{-1/2} (A + I) D^{-1/2}`
/// of a square nonnegative matrix living on the tape. The added identity
/// keeps every row sum at least 1, so the inverse square root is smooth
/// wherever training evaluates it.
pub fn normalize_on_tape(tape: &mut Tape, a: TensorId) -> Result<TensorId> {
    let (n, m) = tape.value(a).dim();
    if n != m {
        return Err(Error::Shape {
            op: "normalize_on_tape",
            details: format!("({n}, {m}) not square"),
        });
    }
    let eye = tape.constant(Array2::eye(n));
    let s = tape.add(a, eye)?;
    let row_sums = tape.row_sum(s);
    let inv_sqrt = tape.rsqrt(row_sums);
    let scaled_rows = tape.mul(s, inv_sqrt)?;
    let inv_sqrt_row = tape.transpose(inv_sqrt);
    tape.mul(scaled_rows, inv_sqrt_row)
}

/// One encoder layer on the tape: `relu((H + Â H) W + b)`.
pub fn gin_layer(
    tape: &mut Tape,
    h: TensorId,
    a_hat: TensorId,
    w: TensorId,
    b: TensorId,
) -> Result<TensorId> {
    let (n, d_in) = tape.value(h).dim();
    if tape.value(a_hat).dim() != (n, n) {
        return Err(Error::Shape {
            op: "gin_layer",
            details: format!(
                "adjacency {:?} for {n} embedding rows",
                tape.value(a_hat).dim()
            ),
        });
    }
    if tape.value(w).nrows() != d_in || tape.value(b).dim() != (1, tape.value(w).ncols()) {
        return Err(Error::Shape {
            op: "gin_layer",
            details: format!(
                "weight {:?} and bias {:?} for {d_in}-wide input",
                tape.value(w).dim(),
                tape.value(b).dim()
            ),
        });
    }
    let aggregated = tape.matmul(a_hat, h)?;
    let mixed = tape.add(h, aggregated)?;
    let projected = tape.matmul(mixed, w)?;
    let shifted = tape.add(projected, b)?;
    Ok(tape.relu(shifted))
}

/// Stack every layer of `params` over one normalized view.
pub fn encode_stream(
    tape: &mut Tape,
    x: TensorId,
    a_hat: TensorId,
    layers: &[(TensorId, TensorId)],
) -> Result<TensorId> {
    let mut h = x;
    for &(w, b) in layers {
        h = gin_layer(tape, h, a_hat, w, b)?;
    }
    Ok(h)
}

/// Node embeddings of every stream of one graph.
#[derive(Debug, Clone, Copy)]
pub struct ViewEmbeddings {
    /// From the original adjacency.
    pub original: TensorId,
    /// From the attribute relation.
    pub attribute: TensorId,
    /// From the edge relation.
    pub edge: TensorId,
    /// Mean of the two relation streams.
    pub relation_mean: TensorId,
    /// From the fused view.
    pub fused: TensorId,
}

/// Encode all four adjacency views with shared parameters. The fused
/// normalized adjacency is passed as a tape tensor so fusion logits keep
/// their gradient path.
pub fn encode_views_on_tape(
    tape: &mut Tape,
    x: TensorId,
    original_hat: TensorId,
    attribute_hat: TensorId,
    edge_hat: TensorId,
    fused_hat: TensorId,
    layers: &[(TensorId, TensorId)],
) -> Result<ViewEmbeddings> {
    let original = encode_stream(tape, x, original_hat, layers)?;
    let attribute = encode_stream(tape, x, attribute_hat, layers)?;
    let edge = encode_stream(tape, x, edge_hat, layers)?;
    let sum = tape.add(attribute, edge)?;
    let relation_mean = tape.scalar_mul(sum, 0.5);
    let fused = encode_stream(tape, x, fused_hat, layers)?;
    Ok(ViewEmbeddings {
        original,
        attribute,
        edge,
        relation_mean,
        fused,
    })
}

/// Plain-matrix encoding of one graph's views: returns the original,
/// mean-relation, and fused node embedding matrices.
pub fn encode_views(
    x: &Array2<f64>,
    views: &RelationViewSet,
    params: &EncoderParams,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let mut tape = Tape::new();
    let x_id = tape.constant(x.clone());
    let original_hat = tape.constant(normalize_adjacency(&views.original)?);
    let attribute_hat = tape.constant(normalize_adjacency(&views.attribute_relation)?);
    let edge_hat = tape.constant(normalize_adjacency(&views.edge_relation)?);
    let fused_hat = tape.constant(normalize_adjacency(&views.fused)?);
    let layers = params.bind(&mut tape, false);
    let out = encode_views_on_tape(
        &mut tape,
        x_id,
        original_hat,
        attribute_hat,
        edge_hat,
        fused_hat,
        &layers,
    )?;
    Ok((
        tape.value(out.original).clone(),
        tape.value(out.relation_mean).clone(),
        tape.value(out.fused).clone(),
    ))
}
