//! K-means clustering and external evaluation metrics.
//!
//! The four metrics compare a predicted [`Partition`] against ground-truth
//! class labels. Accuracy and macro-F1 first map clusters to classes with
//! an optimal bipartite matching on the contingency table, so both are
//! invariant under relabeling of the predicted clusters; NMI and ARI are
//! relabeling-invariant by construction.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Partition;
use crate::rng;

/// Largest cluster or class count accepted by the matching-based metrics.
pub const MAX_MATCHED_CLASSES: usize = 64;

/// All four metrics for one clustering run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub f1: f64,
    pub k: usize,
    pub seed: u64,
}

/// Lloyd's algorithm with k-means++ seeding and restarts.
///
/// Each restart draws from its own stream of `seed`; the restart with the
/// lowest inertia wins, ties going to the lowest restart index. A cluster
/// left empty by an assignment step is re-seeded to the point farthest
/// from its current centroid (among clusters that can spare a point).
pub fn kmeans(
    points: &Array2<f64>,
    k: usize,
    seed: u64,
    restarts: usize,
    max_iters: usize,
) -> Result<Partition> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::Validation("k-means requires k >= 1".into()));
    }
    if n < k {
        return Err(Error::Validation(format!(
            "k-means requires at least k points, got {n} points for k = {k}"
        )));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..restarts.max(1) {
        let mut gen = rng::stream(seed, restart as u64);
        let (assignments, inertia) = lloyd(points, k, &mut gen, max_iters);
        if best.as_ref().map_or(true, |(b, _)| inertia < *b) {
            best = Some((inertia, assignments));
        }
    }
    let (_, assignments) = best.expect("at least one restart");
    Partition::new(assignments, k)
}

fn squared_distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp_init(points: &Array2<f64>, k: usize, gen: &mut impl Rng) -> Array2<f64> {
    let (n, d) = points.dim();
    let mut centers = Array2::zeros((k, d));
    let first = gen.gen_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    let mut dist2: Vec<f64> = (0..n)
        .map(|i| squared_distance(points.row(i), centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = dist2.iter().sum();
        let chosen = if total > 0.0 {
            let target = gen.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in dist2.iter().enumerate() {
                acc += w;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            gen.gen_range(0..n)
        };
        centers.row_mut(c).assign(&points.row(chosen));
        for i in 0..n {
            let d2 = squared_distance(points.row(i), centers.row(c));
            if d2 < dist2[i] {
                dist2[i] = d2;
            }
        }
    }
    centers
}

fn lloyd(
    points: &Array2<f64>,
    k: usize,
    gen: &mut impl Rng,
    max_iters: usize,
) -> (Vec<usize>, f64) {
    let (n, d) = points.dim();
    let mut centers = kmeans_pp_init(points, k, gen);
    let mut assignments = vec![usize::MAX; n];

    for _ in 0..max_iters.max(1) {
        let mut next = vec![0usize; n];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let mut best_c = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d2 = squared_distance(points.row(i), centers.row(c));
                if d2 < best_d {
                    best_d = d2;
                    best_c = c;
                }
            }
            next[i] = best_c;
            counts[best_c] += 1;
        }

        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            // Steal the point farthest from its centroid, but only from a
            // cluster that keeps at least one member.
            let mut pick = None;
            let mut pick_d = -1.0;
            for i in 0..n {
                if counts[next[i]] < 2 {
                    continue;
                }
                let d2 = squared_distance(points.row(i), centers.row(next[i]));
                if d2 > pick_d {
                    pick_d = d2;
                    pick = Some(i);
                }
            }
            let i = pick.expect("n >= k guarantees a donor cluster");
            centers.row_mut(empty).assign(&points.row(i));
            counts[next[i]] -= 1;
            next[i] = empty;
            counts[empty] = 1;
        }

        let converged = next == assignments;
        assignments = next;
        centers = Array2::zeros((k, d));
        for i in 0..n {
            let mut row = centers.row_mut(assignments[i]);
            row += &points.row(i);
        }
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mut row = centers.row_mut(c);
                row /= counts[c] as f64;
            }
        }
        if converged {
            break;
        }
    }

    let inertia = (0..n)
        .map(|i| squared_distance(points.row(i), centers.row(assignments[i])))
        .sum();
    (assignments, inertia)
}

fn check_lengths(pred: &Partition, truth: &[usize]) -> Result<()> {
    if pred.assignments.len() != truth.len() {
        return Err(Error::Validation(format!(
            "prediction covers {} items, truth covers {}",
            pred.assignments.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Validation("metrics need at least one item".into()));
    }
    Ok(())
}

fn class_count(truth: &[usize]) -> usize {
    truth.iter().max().map_or(0, |&m| m + 1)
}

fn contingency(pred: &[usize], truth: &[usize], kp: usize, kt: usize) -> Array2<u64> {
    let mut table = Array2::zeros((kp, kt));
    for (&p, &t) in pred.iter().zip(truth) {
        table[[p, t]] += 1;
    }
    table
}

/// Minimum-cost perfect matching on a square cost matrix by the
/// potentials-and-augmenting-paths method, O(m^3). Returns the column
/// assigned to each row.
fn hungarian_min(cost: &Array2<f64>) -> Vec<usize> {
    let m = cost.nrows();
    debug_assert_eq!(m, cost.ncols());
    let mut u = vec![0.0_f64; m + 1];
    let mut v = vec![0.0_f64; m + 1];
    let mut matched_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=m {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let slack = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; m];
    for j in 1..=m {
        assignment[matched_row[j] - 1] = j - 1;
    }
    assignment
}

/// Best cluster-to-class mapping on a (possibly rectangular) contingency
/// table, maximizing matched counts. Entry `i` of the result is the class
/// assigned to cluster `i` (phantom classes appear when clusters
/// outnumber classes).
///
/// Rows are matched in content-sorted order so that ties between equally
/// good assignments resolve the same way no matter how the clusters were
/// labeled.
fn best_mapping(table: &Array2<u64>) -> Vec<usize> {
    let (kp, kt) = table.dim();
    let keys: Vec<Vec<u64>> = (0..kp).map(|i| table.row(i).to_vec()).collect();
    let mut order: Vec<usize> = (0..kp).collect();
    order.sort_by(|&a, &b| keys[b].cmp(&keys[a]));

    let m = kp.max(kt);
    let cost = Array2::from_shape_fn((m, m), |(i, j)| {
        if i < kp && j < kt {
            -(table[[order[i], j]] as f64)
        } else {
            0.0
        }
    });
    let sorted_assignment = hungarian_min(&cost);
    let mut mapping = vec![0usize; kp];
    for (pos, &cluster) in order.iter().enumerate() {
        mapping[cluster] = sorted_assignment[pos];
    }
    mapping
}

/// Clustering accuracy: the matched fraction under the best one-to-one
/// cluster-to-class assignment.
pub fn accuracy(pred: &Partition, truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let kt = class_count(truth);
    if pred.k > MAX_MATCHED_CLASSES || kt > MAX_MATCHED_CLASSES {
        return Err(Error::Validation(format!(
            "matching supports at most {MAX_MATCHED_CLASSES} clusters or classes"
        )));
    }
    let table = contingency(&pred.assignments, truth, pred.k, kt);
    let mapping = best_mapping(&table);
    let matched: u64 = mapping
        .iter()
        .enumerate()
        .filter(|&(_, &class)| class < kt)
        .map(|(cluster, &class)| table[[cluster, class]])
        .sum();
    Ok(matched as f64 / truth.len() as f64)
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization and
/// natural logarithms. Two constant partitions score 1; a constant
/// prediction against a varied truth scores 0.
///
/// The mutual information is evaluated as `H(pred) + H(truth) -
/// H(joint)`: for identical partitions the three entropies are the same
/// floating-point sum, which makes the score exactly 1 instead of off
/// by an ulp.
pub fn nmi(pred: &Partition, truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let kt = class_count(truth);
    let table = contingency(&pred.assignments, truth, pred.k, kt);
    let n = truth.len() as f64;
    let row_sums: Vec<u64> = (0..pred.k).map(|i| table.row(i).sum()).collect();
    let col_sums: Vec<u64> = (0..kt).map(|j| table.column(j).sum()).collect();
    let h_pred = entropy(&row_sums, n);
    let h_truth = entropy(&col_sums, n);
    if h_pred == 0.0 && h_truth == 0.0 {
        return Ok(1.0);
    }
    let joint: Vec<u64> = table.iter().copied().collect();
    let h_joint = entropy(&joint, n);
    let information = h_pred + h_truth - h_joint;
    Ok((information / (0.5 * (h_pred + h_truth))).clamp(0.0, 1.0))
}

fn choose2(m: u64) -> f64 {
    (m as f64) * (m as f64 - 1.0) / 2.0
}

/// Adjusted Rand index from pair counting with expected-index correction.
/// Identical partitions score 1; independent ones score about 0 and can
/// go slightly negative.
pub fn ari(pred: &Partition, truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let kt = class_count(truth);
    let table = contingency(&pred.assignments, truth, pred.k, kt);
    let n = truth.len() as u64;
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let rows: f64 = (0..pred.k).map(|i| choose2(table.row(i).sum())).sum();
    let cols: f64 = (0..kt).map(|j| choose2(table.column(j).sum())).sum();
    let total = choose2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = rows * cols / total;
    let max_index = 0.5 * (rows + cols);
    if (max_index - expected).abs() < f64::EPSILON * max_index.max(1.0) {
        // Both partitions constant: identical by construction.
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

/// Macro-averaged F1 after mapping clusters to classes with the same
/// matching as [`accuracy`]. Classes that receive no predictions
/// contribute an F1 of zero.
pub fn macro_f1(pred: &Partition, truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let kt = class_count(truth);
    if pred.k > MAX_MATCHED_CLASSES || kt > MAX_MATCHED_CLASSES {
        return Err(Error::Validation(format!(
            "matching supports at most {MAX_MATCHED_CLASSES} clusters or classes"
        )));
    }
    let table = contingency(&pred.assignments, truth, pred.k, kt);
    let mapping = best_mapping(&table);
    let mut f1_sum = 0.0;
    for class in 0..kt {
        let mut tp = 0u64;
        let mut predicted = 0u64;
        for cluster in 0..pred.k {
            if mapping[cluster] == class {
                predicted += table.row(cluster).sum();
                tp += table[[cluster, class]];
            }
        }
        let actual = table.column(class).sum();
        if predicted == 0 || actual == 0 || tp == 0 {
            continue;
        }
        let precision = tp as f64 / predicted as f64;
        let recall = tp as f64 / actual as f64;
        f1_sum += 2.0 * precision * recall / (precision + recall);
    }
    Ok(f1_sum / kt as f64)
}

/// All four metrics in one report.
pub fn evaluate(pred: &Partition, truth: &[usize], seed: u64) -> Result<MetricReport> {
    Ok(MetricReport {
        acc: accuracy(pred, truth)?,
        nmi: nmi(pred, truth)?,
        ari: ari(pred, truth)?,
        f1: macro_f1(pred, truth)?,
        k: pred.k,
        seed,
    })
}
