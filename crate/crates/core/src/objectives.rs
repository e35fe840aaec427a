//! Training losses: pseudo-label cluster loss, graph-level contrastive
//! loss weighted by kernel-derived edges, and a consistency loss that
//! pulls the live kernel toward an epoch-start snapshot.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::kernels::GraphLevelGraph;
use crate::metrics;

/// Weights of the two auxiliary loss terms in the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub mu: f64,
}

impl LossWeights {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        for (name, v) in [("lambda", lambda), ("mu", mu)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(LossWeights { lambda, mu })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 1.0,
            mu: 1.0,
        }
    }
}

/// Centroids and hard assignments from the most recent k-means pass
/// over detached graph embeddings. The cluster loss treats both as
/// constants; only the embeddings receive gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelState {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    pub refresh_period: usize,
    pub last_refresh_epoch: usize,
}

impl PseudoLabelState {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn needs_refresh(&self, epoch: usize) -> bool {
        epoch >= self.last_refresh_epoch + self.refresh_period
    }
}

/// Cluster detached embeddings with k-means and record centroids plus
/// hard assignments. Deterministic in `(z, k, seed)`.
pub fn update_pseudo_labels(z: &Array2<f64>, k: usize, seed: u64) -> Result<PseudoLabelState> {
    let n = z.nrows();
    if n < k {
        return Err(Error::Validation(format!(
            "{n} embeddings cannot seed {k} pseudo-label clusters; use a larger batch"
        )));
    }
    let partition = metrics::kmeans(z, k, seed, 5, 100)?;
    let assignments = partition.assignments;
    let d = z.ncols();
    let mut centroids = Array2::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (row, &c) in z.rows().into_iter().zip(&assignments) {
        counts[c] += 1;
        for (j, &v) in row.iter().enumerate() {
            centroids[[c, j]] += v;
        }
    }
    let global_mean = z.sum_axis(ndarray::Axis(0)).mapv(|v| v / n as f64);
    for c in 0..k {
        if counts[c] > 0 {
            for j in 0..d {
                centroids[[c, j]] /= counts[c] as f64;
            }
        } else {
            // Converged assignments normally fill every cluster; if one
            // is empty, park its centroid at the point farthest from
            // the data mean so the next refresh can recover it.
            let far = (0..n)
                .max_by(|&a, &b| {
                    let da: f64 = z.row(a).iter().zip(&global_mean).map(|(x, m)| (x - m).powi(2)).sum();
                    let db: f64 = z.row(b).iter().zip(&global_mean).map(|(x, m)| (x - m).powi(2)).sum();
                    da.partial_cmp(&db).expect("finite embeddings")
                })
                .expect("n >= k >= 1");
            centroids.row_mut(c).assign(&z.row(far));
        }
    }
    Ok(PseudoLabelState {
        centroids,
        assignments,
        refresh_period: 5,
        last_refresh_epoch: 0,
    })
}

/// Mean softmax cross-entropy of embedding-to-centroid dot products
/// against the stored pseudo-labels. Returns a `1 x 1` scalar on the
/// tape; gradient flows into `z_prime` only.
pub fn cluster_loss(
    tape: &mut Tape,
    z_prime: TensorId,
    state: &PseudoLabelState,
) -> Result<TensorId> {
    let (n, d) = tape.value(z_prime).dim();
    let k = state.k();
    if state.centroids.ncols() != d {
        return Err(Error::Shape {
            op: "cluster_loss",
            details: format!(
                "centroid width {} for {d}-wide embeddings",
                state.centroids.ncols()
            ),
        });
    }
    if state.assignments.len() != n {
        return Err(Error::Shape {
            op: "cluster_loss",
            details: format!("{} assignments for {n} embeddings", state.assignments.len()),
        });
    }
    let mut one_hot = Array2::zeros((n, k));
    for (i, &c) in state.assignments.iter().enumerate() {
        if c >= k {
            return Err(Error::Contract(format!(
                "assignment {c} out of range for k = {k}"
            )));
        }
        one_hot[[i, c]] = 1.0;
    }
    let centroids_t = tape.constant(state.centroids.t().to_owned());
    let logits = tape.matmul(z_prime, centroids_t)?;
    let lse = tape.row_logsumexp(logits);
    let lse_total = tape.sum_all(lse);
    let hot = tape.constant(one_hot);
    let picked = tape.mul(logits, hot)?;
    let picked_total = tape.sum_all(picked);
    let neg_picked = tape.neg(picked_total);
    let gap = tape.add(lse_total, neg_picked)?;
    Ok(tape.scalar_mul(gap, 1.0 / n as f64))
}

/// Pairwise pull between graph embeddings weighted by the graph-level
/// graph: `(1/n^2) sum_ij w_ij * mean squared difference(z_i, z_j)`.
/// The weights are constants; only `z` receives gradient.
pub fn contrastive_loss(
    tape: &mut Tape,
    z: TensorId,
    edges: &GraphLevelGraph,
) -> Result<TensorId> {
    let (n, d) = tape.value(z).dim();
    if edges.len() != n {
        return Err(Error::Validation(format!(
            "graph-level graph over {} graphs, batch has {n}",
            edges.len()
        )));
    }
    let zt = tape.transpose(z);
    let gram = tape.matmul(z, zt)?;
    let r = tape.diag(gram)?;
    let rt = tape.transpose(r);
    let sums = tape.add(r, rt)?;
    let minus2 = tape.scalar_mul(gram, -2.0);
    let sq = tape.add(sums, minus2)?;
    let sq = tape.clamp_min(sq, 0.0);
    let weights = tape.constant(edges.weights().clone());
    let weighted = tape.mul(sq, weights)?;
    let total = tape.sum_all(weighted);
    Ok(tape.scalar_mul(total, 1.0 / (n * n * d) as f64))
}

/// Squared residual between the cosine-normalized live kernel Gram and
/// a detached snapshot, averaged over off-diagonal pairs. Gradient
/// flows through `k_live` only. Batches of fewer than two graphs have
/// no off-diagonal pairs and give a constant 0.
pub fn similarity_loss(
    tape: &mut Tape,
    k_live: TensorId,
    target: &GraphLevelGraph,
) -> Result<TensorId> {
    let (n, m) = tape.value(k_live).dim();
    if n != m {
        return Err(Error::Shape {
            op: "similarity_loss",
            details: format!("live kernel {:?} not square", (n, m)),
        });
    }
    if target.len() != n {
        return Err(Error::Validation(format!(
            "snapshot over {} graphs, live kernel over {n}",
            target.len()
        )));
    }
    if n < 2 {
        return Ok(tape.scalar(0.0));
    }
    let diag = tape.diag(k_live)?;
    let diag = tape.clamp_min(diag, 1e-12);
    let inv_root = tape.rsqrt(diag);
    let row_scaled = tape.mul(k_live, inv_root)?;
    let inv_root_t = tape.transpose(inv_root);
    let normalized = tape.mul(row_scaled, inv_root_t)?;
    let snapshot = tape.constant(target.weights().clone());
    let neg_snapshot = tape.neg(snapshot);
    let residual = tape.add(normalized, neg_snapshot)?;
    let squared = tape.mul(residual, residual)?;
    let mask = tape.constant(Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            1.0
        }
    }));
    let masked = tape.mul(squared, mask)?;
    let total = tape.sum_all(masked);
    Ok(tape.scalar_mul(total, 1.0 / (n * (n - 1)) as f64))
}

/// Mean squared gap between each per-relation embedding matrix and the
/// fused one, summed over the two relation streams.
pub fn view_alignment_loss(
    tape: &mut Tape,
    z_original: TensorId,
    z_relation: TensorId,
    z_fused: TensorId,
) -> Result<TensorId> {
    let dim = tape.value(z_fused).dim();
    for (name, id) in [("original", z_original), ("relation", z_relation)] {
        if tape.value(id).dim() != dim {
            return Err(Error::Shape {
                op: "view_alignment_loss",
                details: format!(
                    "{name} stream {:?} vs fused {:?}",
                    tape.value(id).dim(),
                    dim
                ),
            });
        }
    }
    let scale = 1.0 / (dim.0 * dim.1) as f64;
    let mut total: Option<TensorId> = None;
    for id in [z_original, z_relation] {
        let neg = tape.neg(z_fused);
        let diff = tape.add(id, neg)?;
        let sq = tape.squared_frobenius(diff);
        let term = tape.scalar_mul(sq, scale);
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok(total.expect("two streams"))
}

/// `l_clu + lambda * l_con + mu * l_sim`, all `1 x 1` scalars.
pub fn total_loss(
    tape: &mut Tape,
    l_clu: TensorId,
    l_con: TensorId,
    l_sim: TensorId,
    weights: LossWeights,
) -> Result<TensorId> {
    for (name, id) in [("cluster", l_clu), ("contrastive", l_con), ("similarity", l_sim)] {
        if tape.value(id).dim() != (1, 1) {
            return Err(Error::Shape {
                op: "total_loss",
                details: format!("{name} loss {:?}, expected (1, 1)", tape.value(id).dim()),
            });
        }
    }
    let con = tape.scalar_mul(l_con, weights.lambda);
    let sim = tape.scalar_mul(l_sim, weights.mu);
    let partial = tape.add(l_clu, con)?;
    tape.add(partial, sim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelKind;
    use crate::rng;
    use ndarray::array;
    use rand::Rng;

    fn edges_from(weights: Array2<f64>) -> GraphLevelGraph {
        GraphLevelGraph::new(weights, 10, KernelKind::Dynamic).unwrap()
    }

    #[test]
    fn pseudo_labels_separate_two_clouds() {
        let mut gen = rng::seeded(1);
        let mut z = Array2::zeros((10, 2));
        for i in 0..5 {
            z[[i, 0]] = 5.0 + gen.gen::<f64>() * 0.1;
        }
        for i in 5..10 {
            z[[i, 0]] = -5.0 + gen.gen::<f64>() * 0.1;
        }
        let state = update_pseudo_labels(&z, 2, 7).unwrap();
        let first = state.assignments[0];
        assert!(state.assignments[..5].iter().all(|&a| a == first));
        assert!(state.assignments[5..].iter().all(|&a| a == 1 - first));
        assert_eq!(state.k(), 2);
    }

    #[test]
    fn identical_embeddings_still_yield_k_centroids() {
        let z = Array2::from_elem((6, 3), 0.5);
        let state = update_pseudo_labels(&z, 2, 3).unwrap();
        assert_eq!(state.centroids.nrows(), 2);
        assert!(state.assignments.iter().all(|&a| a < 2));
    }

    #[test]
    fn pseudo_labels_deterministic() {
        let mut gen = rng::seeded(2);
        let z = Array2::from_shape_fn((8, 3), |_| gen.gen::<f64>());
        let a = update_pseudo_labels(&z, 3, 11).unwrap();
        let b = update_pseudo_labels(&z, 3, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_smaller_than_k_rejected() {
        let z = Array2::zeros((2, 3));
        let err = update_pseudo_labels(&z, 5, 0).unwrap_err();
        assert!(err.to_string().contains("larger batch"));
    }

    #[test]
    fn single_cluster_loss_is_zero() {
        let state = PseudoLabelState {
            centroids: array![[1.0, 2.0]],
            assignments: vec![0, 0, 0],
            refresh_period: 5,
            last_refresh_epoch: 0,
        };
        let mut tape = Tape::new();
        let z = tape.constant(array![[0.5, 0.1], [2.0, -1.0], [0.0, 0.0]]);
        let loss = cluster_loss(&mut tape, z, &state).unwrap();
        assert!(tape.value(loss)[[0, 0]].abs() < 1e-12);
    }

    #[test]
    fn equidistant_embedding_pays_ln_two() {
        let state = PseudoLabelState {
            centroids: array![[1.0, 0.0], [0.0, 1.0]],
            assignments: vec![0],
            refresh_period: 5,
            last_refresh_epoch: 0,
        };
        let mut tape = Tape::new();
        let z = tape.constant(array![[0.7, 0.7]]);
        let loss = cluster_loss(&mut tape, z, &state).unwrap();
        assert!((tape.value(loss)[[0, 0]] - 2.0_f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn cluster_loss_matches_hand_cross_entropy() {
        let state = PseudoLabelState {
            centroids: array![[1.0, 0.0], [0.0, 1.0]],
            assignments: vec![0, 1, 0],
            refresh_period: 5,
            last_refresh_epoch: 0,
        };
        let z_val = array![[2.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let mut tape = Tape::new();
        let z = tape.constant(z_val.clone());
        let loss = cluster_loss(&mut tape, z, &state).unwrap();

        let mut expect = 0.0;
        for (i, &y) in state.assignments.iter().enumerate() {
            let l0 = z_val.row(i).dot(&state.centroids.row(0));
            let l1 = z_val.row(i).dot(&state.centroids.row(1));
            let lse = (l0.exp() + l1.exp()).ln();
            expect += lse - if y == 0 { l0 } else { l1 };
        }
        expect /= 3.0;
        assert!((tape.value(loss)[[0, 0]] - expect).abs() < 1e-10);
        assert!(expect >= 0.0);
    }

    #[test]
    fn cluster_loss_descends_on_toy_problem() {
        let mut z_val = array![[1.0, 0.2], [0.9, -0.1], [-1.1, 0.3], [-0.8, 0.0]];
        let state = update_pseudo_labels(&z_val, 2, 0).unwrap();
        let eval = |z_val: &Array2<f64>, grad: bool| {
            let mut tape = Tape::new();
            let z = if grad {
                tape.parameter(z_val.clone())
            } else {
                tape.constant(z_val.clone())
            };
            let loss = cluster_loss(&mut tape, z, &state).unwrap();
            if grad {
                tape.backward(loss).unwrap();
                (tape.value(loss)[[0, 0]], Some(tape.grad(z).unwrap().clone()))
            } else {
                (tape.value(loss)[[0, 0]], None)
            }
        };
        let (before, grad) = eval(&z_val, true);
        z_val = &z_val - &grad.unwrap().mapv(|g| 0.1 * g);
        let (after, _) = eval(&z_val, false);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn contrastive_loss_zero_without_edges() {
        let mut tape = Tape::new();
        let z = tape.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let edges = edges_from(Array2::zeros((2, 2)));
        let loss = contrastive_loss(&mut tape, z, &edges).unwrap();
        assert_eq!(tape.value(loss)[[0, 0]], 0.0);
    }

    #[test]
    fn contrastive_loss_zero_for_identical_embeddings() {
        let mut tape = Tape::new();
        let z = tape.constant(array![[1.5, -0.5], [1.5, -0.5]]);
        let edges = edges_from(array![[0.0, 1.0], [1.0, 0.0]]);
        let loss = contrastive_loss(&mut tape, z, &edges).unwrap();
        assert!(tape.value(loss)[[0, 0]].abs() < 1e-12);
    }

    #[test]
    fn contrastive_loss_hand_example() {
        let mut tape = Tape::new();
        let z = tape.constant(array![[0.0, 0.0], [2.0, 0.0]]);
        let edges = edges_from(array![[0.0, 1.0], [1.0, 0.0]]);
        let loss = contrastive_loss(&mut tape, z, &edges).unwrap();
        assert!((tape.value(loss)[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contrastive_loss_invariant_under_graph_permutation() {
        let mut gen = rng::seeded(4);
        let z_val = Array2::from_shape_fn((5, 3), |_| gen.gen::<f64>());
        let mut w = Array2::zeros((5, 5));
        for i in 0..5 {
            for j in (i + 1)..5 {
                let v: f64 = gen.gen::<f64>();
                w[[i, j]] = v;
                w[[j, i]] = v;
            }
        }
        let perm = [2usize, 0, 4, 1, 3];
        let mut zp = Array2::zeros((5, 3));
        let mut wp = Array2::zeros((5, 5));
        for i in 0..5 {
            zp.row_mut(perm[i]).assign(&z_val.row(i));
            for j in 0..5 {
                wp[[perm[i], perm[j]]] = w[[i, j]];
            }
        }
        let run = |z_val: &Array2<f64>, w: &Array2<f64>| {
            let mut tape = Tape::new();
            let z = tape.constant(z_val.clone());
            let edges = edges_from(w.clone());
            let loss = contrastive_loss(&mut tape, z, &edges).unwrap();
            tape.value(loss)[[0, 0]]
        };
        assert!((run(&z_val, &w) - run(&zp, &wp)).abs() < 1e-12);
    }

    #[test]
    fn contrastive_dimension_mismatch_rejected() {
        let mut tape = Tape::new();
        let z = tape.constant(Array2::zeros((3, 2)));
        let edges = edges_from(Array2::zeros((2, 2)));
        assert!(contrastive_loss(&mut tape, z, &edges).is_err());
    }

    #[test]
    fn similarity_loss_zero_on_exact_match() {
        let target = edges_from(array![[0.0, 0.5], [0.5, 0.0]]);
        let mut tape = Tape::new();
        let live = tape.constant(array![[1.0, 0.5], [0.5, 1.0]]);
        let loss = similarity_loss(&mut tape, live, &target).unwrap();
        assert!(tape.value(loss)[[0, 0]].abs() < 1e-12);
    }

    #[test]
    fn similarity_loss_forced_arithmetic() {
        let target = edges_from(array![[0.0, 1.0], [1.0, 0.0]]);
        let mut tape = Tape::new();
        let live = tape.constant(array![[1.0, 0.5], [0.5, 1.0]]);
        let loss = similarity_loss(&mut tape, live, &target).unwrap();
        assert!((tape.value(loss)[[0, 0]] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn similarity_loss_matches_elementwise_oracle() {
        let mut gen = rng::seeded(5);
        let mut live_val = Array2::zeros((4, 4));
        for i in 0..4 {
            live_val[[i, i]] = 1.0 + gen.gen::<f64>();
            for j in (i + 1)..4 {
                let v = gen.gen::<f64>();
                live_val[[i, j]] = v;
                live_val[[j, i]] = v;
            }
        }
        let mut target_val = Array2::zeros((4, 4));
        for i in 0..4 {
            for j in (i + 1)..4 {
                let v = gen.gen::<f64>();
                target_val[[i, j]] = v;
                target_val[[j, i]] = v;
            }
        }
        let target = edges_from(target_val.clone());
        let mut tape = Tape::new();
        let live = tape.constant(live_val.clone());
        let loss = similarity_loss(&mut tape, live, &target).unwrap();

        let mut expect = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let normalized =
                    live_val[[i, j]] / (live_val[[i, i]] * live_val[[j, j]]).sqrt();
                expect += (normalized - target_val[[i, j]]).powi(2);
            }
        }
        expect /= 12.0;
        assert!((tape.value(loss)[[0, 0]] - expect).abs() < 1e-12);
    }

    #[test]
    fn similarity_shape_mismatch_rejected() {
        let target = edges_from(Array2::zeros((3, 3)));
        let mut tape = Tape::new();
        let live = tape.constant(Array2::from_elem((2, 2), 1.0));
        assert!(similarity_loss(&mut tape, live, &target).is_err());
    }

    #[test]
    fn view_alignment_zero_when_streams_agree() {
        let mut tape = Tape::new();
        let z = tape.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let loss = view_alignment_loss(&mut tape, z, z, z).unwrap();
        assert_eq!(tape.value(loss)[[0, 0]], 0.0);
    }

    #[test]
    fn total_loss_weighting() {
        let mut tape = Tape::new();
        let clu = tape.scalar(1.0);
        let con = tape.scalar(2.0);
        let sim = tape.scalar(3.0);
        let zeroed = total_loss(
            &mut tape,
            clu,
            con,
            sim,
            LossWeights::new(0.0, 0.0).unwrap(),
        )
        .unwrap();
        assert_eq!(tape.value(zeroed)[[0, 0]], 1.0);
        let unit = total_loss(&mut tape, clu, con, sim, LossWeights::default()).unwrap();
        assert_eq!(tape.value(unit)[[0, 0]], 6.0);
    }

    #[test]
    fn default_weights_are_one_to_one() {
        let w = LossWeights::default();
        assert_eq!((w.lambda, w.mu), (1.0, 1.0));
        assert!(LossWeights::new(-0.5, 1.0).is_err());
        assert!(LossWeights::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn losses_are_nonnegative_on_random_inputs() {
        let mut gen = rng::seeded(6);
        for _ in 0..5 {
            let z_val = Array2::from_shape_fn((6, 3), |_| gen.gen::<f64>() * 2.0 - 1.0);
            let state = update_pseudo_labels(&z_val, 2, 9).unwrap();
            let mut w = Array2::zeros((6, 6));
            for i in 0..6 {
                for j in (i + 1)..6 {
                    let v = gen.gen::<f64>();
                    w[[i, j]] = v;
                    w[[j, i]] = v;
                }
            }
            let edges = edges_from(w);
            let mut tape = Tape::new();
            let z = tape.constant(z_val.clone());
            let clu = cluster_loss(&mut tape, z, &state).unwrap();
            let con = contrastive_loss(&mut tape, z, &edges).unwrap();
            let gram_val = z_val.dot(&z_val.t());
            let live = tape.constant(gram_val);
            let sim = similarity_loss(&mut tape, live, &edges).unwrap();
            for id in [clu, con, sim] {
                assert!(tape.value(id)[[0, 0]] >= 0.0);
            }
        }
    }

    #[test]
    fn total_loss_gradient_is_weighted_sum() {
        use crate::autodiff::grad_check;
        let weights = LossWeights::new(0.7, 1.3).unwrap();
        let state = PseudoLabelState {
            centroids: array![[1.0, 0.0], [0.0, 1.0]],
            assignments: vec![0, 1, 0],
            refresh_period: 5,
            last_refresh_epoch: 0,
        };
        let edges = edges_from(array![
            [0.0, 0.4, 0.2],
            [0.4, 0.0, 0.9],
            [0.2, 0.9, 0.0]
        ]);
        let err = grad_check(
            move |t: &mut Tape, p: &[TensorId]| {
                let z = p[0];
                let clu = cluster_loss(t, z, &state)?;
                let con = contrastive_loss(t, z, &edges)?;
                let zt = t.transpose(z);
                let live = t.matmul(z, zt)?;
                let sim = similarity_loss(t, live, &edges)?;
                total_loss(t, clu, con, sim, weights)
            },
            &[array![[0.9, 0.2], [0.1, 1.1], [0.5, 0.4]]],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }
}
