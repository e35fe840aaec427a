//! The training loop: encode relation views, pool, build the
//! graph-level graph, optimize the three-term objective, and cluster
//! the final embeddings. Also the multi-run experiment and ablation
//! harnesses.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde_json::Value;

use crate::autodiff::{adam_step, AdamParams, OptimizerState, Tape, TensorId};
use crate::config::{DatasetSource, RunConfig, StreamChoice};
use crate::encoder::{self, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, GraphDataset, Partition};
use crate::kernels::{self, FeatureMap, GraphLevelGraph, KernelKind};
use crate::metrics::{self, MetricReport};
use crate::objectives::{self, PseudoLabelState};
use crate::pooling::{self, BoundPooling, PoolingParams};
use crate::relations;
use crate::report::EpochLoss;
use crate::report::{AggregateReport, RunReport, SCHEMA_VERSION};
use crate::rng;

const EARLY_STOP_MIN_DELTA: f64 = 1e-5;
const FINAL_KMEANS_RESTARTS: usize = 10;
const FINAL_KMEANS_ITERS: usize = 300;

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final-stream embeddings of the whole dataset, one row per graph.
    pub embeddings: Array2<f64>,
    pub partition: Partition,
    pub report: MetricReport,
    pub trace: Vec<EpochLoss>,
}

/// Load the configured dataset from disk or the synthetic generator.
pub fn load_dataset(config: &RunConfig) -> Result<GraphDataset> {
    match &config.dataset {
        DatasetSource::Directory { dir, name } => crate::io::parse_tudataset(dir, name),
        DatasetSource::Synthetic { spec_path } => {
            let text = std::fs::read_to_string(spec_path)
                .map_err(|e| Error::io(spec_path, e))?;
            let spec = crate::io::DatasetSpec::from_json(&text)?;
            crate::io::generate_synthetic(&spec)
        }
    }
}

/// Immutable per-graph inputs shared by every epoch.
struct Prepared {
    dataset: GraphDataset,
    features: Vec<Array2<f64>>,
    original_hat: Vec<Array2<f64>>,
    attribute_raw: Vec<Array2<f64>>,
    edge_raw: Vec<Array2<f64>>,
    attribute_hat: Vec<Array2<f64>>,
    edge_hat: Vec<Array2<f64>>,
    descriptors: Vec<Array2<f64>>,
    structural_gram: Option<Array2<f64>>,
    k: usize,
}

fn prepare(config: &RunConfig) -> Result<Prepared> {
    let dataset = load_dataset(config)?;
    if dataset.is_empty() {
        return Err(Error::Validation("dataset has no graphs".into()));
    }
    let k = match config.k {
        Some(k) => k,
        None => dataset.num_classes,
    };
    if config.batch_size < k {
        return Err(Error::Config(format!(
            "train.batch_size ({}) must be at least the cluster count ({k})",
            config.batch_size
        )));
    }
    if dataset.len() < k {
        return Err(Error::Validation(format!(
            "{} graphs cannot form {k} clusters",
            dataset.len()
        )));
    }
    let max_degree = dataset
        .graphs
        .iter()
        .flat_map(|g| g.degrees())
        .max()
        .unwrap_or(0);
    let features = dataset.feature_matrices(max_degree);

    let mut original_hat = Vec::with_capacity(dataset.len());
    let mut attribute_raw = Vec::with_capacity(dataset.len());
    let mut edge_raw = Vec::with_capacity(dataset.len());
    let mut attribute_hat = Vec::with_capacity(dataset.len());
    let mut edge_hat = Vec::with_capacity(dataset.len());
    let mut descriptors = Vec::with_capacity(dataset.len());
    for (g, x) in dataset.graphs.iter().zip(&features) {
        let attr = relations::attribute_relation(x, config.relations_top_k)?;
        let edge = relations::edge_relation(g, config.relations_top_k)?;
        original_hat.push(normalize_adjacency(&g.adjacency())?);
        attribute_hat.push(normalize_adjacency(&attr)?);
        edge_hat.push(normalize_adjacency(&edge)?);
        attribute_raw.push(attr);
        edge_raw.push(edge);
        descriptors.push(relations::incident_descriptors(g));
    }

    let structural_gram = match config.kernel_kind {
        KernelKind::Dynamic => None,
        KernelKind::Wl => {
            let refs: Vec<&crate::graph::Graph> = dataset.graphs.iter().collect();
            Some(kernels::wl_gram(&refs, config.kernel_wl_iterations))
        }
        KernelKind::Sp => {
            let refs: Vec<&crate::graph::Graph> = dataset.graphs.iter().collect();
            Some(kernels::sp_gram(&refs))
        }
        KernelKind::Rw => {
            let refs: Vec<&crate::graph::Graph> = dataset.graphs.iter().collect();
            Some(kernels::rw_gram(&refs, 10, 0.1))
        }
    };

    Ok(Prepared {
        dataset,
        features,
        original_hat,
        attribute_raw,
        edge_raw,
        attribute_hat,
        edge_hat,
        descriptors,
        structural_gram,
        k,
    })
}

/// Learnable state of a run.
struct Model {
    encoder: EncoderParams,
    pooling: PoolingParams,
    fusion_logits: Array2<f64>,
}

fn uses_fusion(stream: StreamChoice) -> bool {
    matches!(stream, StreamChoice::All | StreamChoice::Fused)
}

impl Model {
    fn new(config: &RunConfig, input_dim: usize, seed: u64) -> Result<Model> {
        let encoder_seed = config.encoder_seed.unwrap_or(seed);
        Ok(Model {
            encoder: EncoderParams::new(
                input_dim,
                config.hidden_dim,
                config.encoder_depth,
                encoder_seed,
            )?,
            pooling: PoolingParams::new(
                config.hidden_dim,
                config.pooling_temperature,
                config.pooling_learnable_terms,
                encoder_seed.wrapping_add(1),
            )?,
            fusion_logits: Array2::zeros((1, 2)),
        })
    }

    fn param_shapes(&self, stream: StreamChoice) -> Vec<(usize, usize)> {
        let mut shapes: Vec<(usize, usize)> = Vec::new();
        for (w, b) in self.encoder.layers() {
            shapes.push(w.dim());
            shapes.push(b.dim());
        }
        shapes.push(self.pooling.query.dim());
        if let Some(logits) = &self.pooling.term_logits {
            shapes.push(logits.dim());
        }
        if uses_fusion(stream) {
            shapes.push(self.fusion_logits.dim());
        }
        shapes
    }

    fn write_back(&mut self, tape: &Tape, ids: &[TensorId], stream: StreamChoice) {
        let mut it = ids.iter();
        let mut next = || tape.value(*it.next().expect("id list matches params")).clone();
        let depth = self.encoder.depth();
        let mut layers = Vec::with_capacity(depth);
        for _ in 0..depth {
            let w = next();
            let b = next();
            layers.push((w, b));
        }
        self.encoder = EncoderParams::from_layers(layers).expect("shapes unchanged");
        self.pooling.query = next();
        if self.pooling.term_logits.is_some() {
            self.pooling.term_logits = Some(next());
        }
        if uses_fusion(stream) {
            self.fusion_logits = next();
        }
    }
}

/// Tape handles of the bound model.
struct Binds {
    layers: Vec<(TensorId, TensorId)>,
    pool: BoundPooling,
    fusion_logits: Option<TensorId>,
    /// Flat id list in optimizer order.
    param_ids: Vec<TensorId>,
}

fn bind_model(tape: &mut Tape, model: &Model, stream: StreamChoice, trainable: bool) -> Binds {
    let layers = model.encoder.bind(tape, trainable);
    let pool = model.pooling.bind(tape, trainable);
    let fusion_logits = uses_fusion(stream).then(|| {
        if trainable {
            tape.parameter(model.fusion_logits.clone())
        } else {
            tape.constant(model.fusion_logits.clone())
        }
    });
    let mut param_ids = Vec::new();
    for &(w, b) in &layers {
        param_ids.push(w);
        param_ids.push(b);
    }
    param_ids.push(pool.query);
    if let Some(logits) = pool.term_logits {
        param_ids.push(logits);
    }
    if let Some(alpha) = fusion_logits {
        param_ids.push(alpha);
    }
    Binds {
        layers,
        pool,
        fusion_logits,
        param_ids,
    }
}

/// Per-graph forward results on the tape.
struct GraphForward {
    pooled_final: TensorId,
    /// Original-stream and relation-stream pooled vectors, present only
    /// when cross-stream alignment is active.
    aligned: Option<(TensorId, TensorId)>,
    /// Node embedding matrices feeding the differentiable kernel.
    kernel_views: Vec<TensorId>,
}

fn forward_graph(
    tape: &mut Tape,
    prep: &Prepared,
    index: usize,
    binds: &Binds,
    config: &RunConfig,
) -> Result<GraphForward> {
    let x = tape.constant(prep.features[index].clone());
    let temperature = config.pooling_temperature;
    let descriptors = &prep.descriptors[index];
    let pool =
        |tape: &mut Tape, h: TensorId| pooling::pool_stream(tape, h, descriptors, &binds.pool, temperature);

    let encode_const_view = |tape: &mut Tape, hat: &Array2<f64>, x: TensorId, layers| {
        let a = tape.constant(hat.clone());
        encoder::encode_stream(tape, x, a, layers)
    };

    match config.stream {
        StreamChoice::Original => {
            let h = encode_const_view(tape, &prep.original_hat[index], x, &binds.layers)?;
            let z = pool(tape, h)?;
            Ok(GraphForward {
                pooled_final: z,
                aligned: None,
                kernel_views: vec![h],
            })
        }
        StreamChoice::Relation => {
            let ha = encode_const_view(tape, &prep.attribute_hat[index], x, &binds.layers)?;
            let he = encode_const_view(tape, &prep.edge_hat[index], x, &binds.layers)?;
            let sum = tape.add(ha, he)?;
            let mean = tape.scalar_mul(sum, 0.5);
            let z = pool(tape, mean)?;
            Ok(GraphForward {
                pooled_final: z,
                aligned: None,
                kernel_views: vec![ha, he],
            })
        }
        StreamChoice::Fused => {
            let fused_hat = fused_hat_on_tape(tape, prep, index, binds)?;
            let hf = encoder::encode_stream(tape, x, fused_hat, &binds.layers)?;
            let z = pool(tape, hf)?;
            Ok(GraphForward {
                pooled_final: z,
                aligned: None,
                kernel_views: vec![hf],
            })
        }
        StreamChoice::All => {
            let ho = encode_const_view(tape, &prep.original_hat[index], x, &binds.layers)?;
            let ha = encode_const_view(tape, &prep.attribute_hat[index], x, &binds.layers)?;
            let he = encode_const_view(tape, &prep.edge_hat[index], x, &binds.layers)?;
            let fused_hat = fused_hat_on_tape(tape, prep, index, binds)?;
            let hf = encoder::encode_stream(tape, x, fused_hat, &binds.layers)?;

            let z_f = pool(tape, hf)?;
            let aligned = if config.view_align {
                let z_o = pool(tape, ho)?;
                let sum = tape.add(ha, he)?;
                let mean = tape.scalar_mul(sum, 0.5);
                let z_r = pool(tape, mean)?;
                Some((z_o, z_r))
            } else {
                None
            };
            Ok(GraphForward {
                pooled_final: z_f,
                aligned,
                kernel_views: vec![ha, he],
            })
        }
    }
}

fn fused_hat_on_tape(
    tape: &mut Tape,
    prep: &Prepared,
    index: usize,
    binds: &Binds,
) -> Result<TensorId> {
    let alpha = binds
        .fusion_logits
        .expect("fusion stream binds fusion logits");
    let a = tape.constant(prep.attribute_raw[index].clone());
    let e = tape.constant(prep.edge_raw[index].clone());
    let fused = relations::fuse_on_tape(tape, &[a, e], alpha)?;
    encoder::normalize_on_tape(tape, fused)
}

/// Row of summed node embeddings across kernel views; with the identity
/// feature map the batch Gram is the matmul of these rows.
fn summed_view_row(tape: &mut Tape, views: &[TensorId]) -> Result<TensorId> {
    let mut total: Option<TensorId> = None;
    for &view in views {
        let n = tape.value(view).nrows();
        let ones = tape.constant(Array2::from_elem((1, n), 1.0));
        let s = tape.matmul(ones, view)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    Ok(total.expect("at least one kernel view"))
}

/// Pairwise differentiable similarity loss for the RBF map, built from
/// per-pair scalar kernels.
fn rbf_similarity_loss(
    tape: &mut Tape,
    views: &[Vec<TensorId>],
    map: FeatureMap,
    target: &GraphLevelGraph,
) -> Result<TensorId> {
    let n = views.len();
    if n < 2 {
        return Ok(tape.scalar(0.0));
    }
    let diag: Vec<TensorId> = views
        .iter()
        .map(|v| {
            let k = kernels::multi_relation_kernel_on_tape(tape, v, v, map)?;
            let c = tape.clamp_min(k, 1e-12);
            Ok(tape.rsqrt(c))
        })
        .collect::<Result<_>>()?;
    let mut total: Option<TensorId> = None;
    for i in 0..n {
        for j in (i + 1)..n {
            let k = kernels::multi_relation_kernel_on_tape(tape, &views[i], &views[j], map)?;
            let scaled_i = tape.mul(k, diag[i])?;
            let normalized = tape.mul(scaled_i, diag[j])?;
            let t = tape.scalar(-target.weights()[[i, j]]);
            let residual = tape.add(normalized, t)?;
            let squared = tape.mul(residual, residual)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, squared)?,
                None => squared,
            });
        }
    }
    let sum = total.expect("n >= 2");
    // Each unordered pair stands for two symmetric entries.
    Ok(tape.scalar_mul(sum, 2.0 / (n * (n - 1)) as f64))
}

struct BatchResult {
    loss: EpochLoss,
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    prep: &Prepared,
    model: &mut Model,
    optimizer: &mut OptimizerState,
    state: &PseudoLabelState,
    batch: &[usize],
    config: &RunConfig,
    epoch: usize,
    batch_index: usize,
) -> Result<BatchResult> {
    let mut tape = Tape::new();
    let binds = bind_model(&mut tape, model, config.stream, true);

    let mut finals = Vec::with_capacity(batch.len());
    let mut aligned = Vec::new();
    let mut kernel_views: Vec<Vec<TensorId>> = Vec::with_capacity(batch.len());
    for &gi in batch {
        let fwd = forward_graph(&mut tape, prep, gi, &binds, config)?;
        finals.push(fwd.pooled_final);
        if let Some(pair) = fwd.aligned {
            aligned.push(pair);
        }
        kernel_views.push(fwd.kernel_views);
    }
    let z_final = tape.concat_rows(&finals)?;

    let map = config.feature_map();
    let a_tilde = match (&prep.structural_gram, config.kernel_kind) {
        (Some(gram), kind) => {
            let mut slice = Array2::zeros((batch.len(), batch.len()));
            for (a, &i) in batch.iter().enumerate() {
                for (b, &j) in batch.iter().enumerate() {
                    slice[[a, b]] = gram[[i, j]];
                }
            }
            kernels::build_graph_level_graph(&slice, config.kernel_top_k, kind)?
        }
        (None, _) => {
            let detached: Vec<Vec<Array2<f64>>> = kernel_views
                .iter()
                .map(|ids| ids.iter().map(|&id| tape.value(id).clone()).collect())
                .collect();
            let gram = kernels::multi_relation_gram(&detached, map)?;
            kernels::build_graph_level_graph(&gram, config.kernel_top_k, KernelKind::Dynamic)?
        }
    };

    let batch_state = PseudoLabelState {
        centroids: state.centroids.clone(),
        assignments: batch.iter().map(|&gi| state.assignments[gi]).collect(),
        refresh_period: state.refresh_period,
        last_refresh_epoch: state.last_refresh_epoch,
    };
    let l_clu = objectives::cluster_loss(&mut tape, z_final, &batch_state)?;

    let mut l_con = objectives::contrastive_loss(&mut tape, z_final, &a_tilde)?;
    if !aligned.is_empty() {
        let z_o = tape.concat_rows(&aligned.iter().map(|p| p.0).collect::<Vec<_>>())?;
        let z_r = tape.concat_rows(&aligned.iter().map(|p| p.1).collect::<Vec<_>>())?;
        let align = objectives::view_alignment_loss(&mut tape, z_o, z_r, z_final)?;
        l_con = tape.add(l_con, align)?;
    }

    let l_sim = match map {
        FeatureMap::Identity => {
            let rows: Vec<TensorId> = kernel_views
                .iter()
                .map(|v| summed_view_row(&mut tape, v))
                .collect::<Result<_>>()?;
            let s = tape.concat_rows(&rows)?;
            let st = tape.transpose(s);
            let k_live = tape.matmul(s, st)?;
            objectives::similarity_loss(&mut tape, k_live, &a_tilde)?
        }
        FeatureMap::Rbf { .. } => rbf_similarity_loss(&mut tape, &kernel_views, map, &a_tilde)?,
    };

    let total = objectives::total_loss(&mut tape, l_clu, l_con, l_sim, config.loss_weights)?;

    let loss = EpochLoss {
        cluster: tape.value(l_clu)[[0, 0]],
        contrastive: tape.value(l_con)[[0, 0]],
        similarity: tape.value(l_sim)[[0, 0]],
        total: tape.value(total)[[0, 0]],
    };
    if !loss.total.is_finite() {
        return Err(Error::Runtime(format!(
            "non-finite total loss {} at epoch {epoch}, batch {batch_index} \
             (graphs {:?}; cluster {}, contrastive {}, similarity {})",
            loss.total, batch, loss.cluster, loss.contrastive, loss.similarity
        )));
    }

    tape.backward(total)?;
    adam_step(&mut tape, &binds.param_ids, optimizer)?;
    model.write_back(&tape, &binds.param_ids, config.stream);

    Ok(BatchResult { loss })
}

/// Final-stream embeddings of every graph under the current model, with
/// no gradient bookkeeping.
fn full_embeddings(prep: &Prepared, model: &Model, config: &RunConfig) -> Result<Array2<f64>> {
    let n = prep.dataset.len();
    let mut out = Array2::zeros((n, config.hidden_dim));
    for gi in 0..n {
        let mut tape = Tape::new();
        let binds = bind_model(&mut tape, model, config.stream, false);
        let fwd = forward_graph(&mut tape, prep, gi, &binds, config)?;
        out.row_mut(gi).assign(&tape.value(fwd.pooled_final).row(0));
    }
    Ok(out)
}

fn derived_seed(seed: u64, tag: u64) -> u64 {
    rng::stream(seed, tag).gen()
}

/// Run the full training loop once and cluster the final embeddings.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    let prep = prepare(config)?;
    let input_dim = prep.features[0].ncols();
    let mut model = Model::new(config, input_dim, config.seed)?;
    let mut optimizer = OptimizerState::new(
        AdamParams {
            learning_rate: config.learning_rate,
            ..AdamParams::default()
        },
        &model.param_shapes(config.stream),
    );

    let n = prep.dataset.len();
    let mut state: Option<PseudoLabelState> = None;
    let mut trace: Vec<EpochLoss> = Vec::new();
    let mut best_total = f64::INFINITY;
    let mut stale_epochs = 0usize;

    for epoch in 0..config.epochs {
        let refresh_due = match &state {
            None => true,
            Some(s) => s.needs_refresh(epoch),
        };
        if refresh_due {
            let z = full_embeddings(&prep, &model, config)?;
            let mut fresh =
                objectives::update_pseudo_labels(&z, prep.k, derived_seed(config.seed, 500 + epoch as u64))?;
            fresh.refresh_period = config.refresh_period;
            fresh.last_refresh_epoch = epoch;
            state = Some(fresh);
        }
        let state_ref = state.as_ref().expect("refreshed above");

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(config.seed, 9000 + epoch as u64));

        let mut sums = EpochLoss {
            cluster: 0.0,
            contrastive: 0.0,
            similarity: 0.0,
            total: 0.0,
        };
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let result = train_batch(
                &prep,
                &mut model,
                &mut optimizer,
                state_ref,
                batch,
                config,
                epoch,
                batch_index,
            )?;
            let w = batch.len() as f64;
            sums.cluster += result.loss.cluster * w;
            sums.contrastive += result.loss.contrastive * w;
            sums.similarity += result.loss.similarity * w;
            sums.total += result.loss.total * w;
        }
        let scale = 1.0 / n as f64;
        let epoch_loss = EpochLoss {
            cluster: sums.cluster * scale,
            contrastive: sums.contrastive * scale,
            similarity: sums.similarity * scale,
            total: sums.total * scale,
        };
        trace.push(epoch_loss);

        if epoch_loss.total < best_total - EARLY_STOP_MIN_DELTA {
            best_total = epoch_loss.total;
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.early_stop_patience {
                break;
            }
        }
    }

    let embeddings = full_embeddings(&prep, &model, config)?;
    debug_assert_eq!(embeddings.dim(), (n, config.hidden_dim));
    let partition = metrics::kmeans(
        &embeddings,
        prep.k,
        derived_seed(config.seed, 42),
        FINAL_KMEANS_RESTARTS,
        FINAL_KMEANS_ITERS,
    )?;
    let report = metrics::evaluate(&partition, &prep.dataset.class_labels, config.seed)?;

    Ok(TrainOutcome {
        embeddings,
        partition,
        report,
        trace,
    })
}

/// Train once per seed `seed..seed+runs` and aggregate the metrics.
/// Runs are independent and may execute concurrently.
pub fn run_experiment(config: &RunConfig) -> Result<AggregateReport> {
    let seeds: Vec<u64> = (0..config.runs as u64).map(|i| config.seed + i).collect();
    let results: Vec<Result<RunReport>> = seeds
        .par_iter()
        .map(|&seed| {
            let run_config =
                config.with_overrides(&[("train.seed".to_string(), Value::from(seed))])?;
            let started = Instant::now();
            let outcome = train(&run_config)
                .map_err(|e| Error::Runtime(format!("run with seed {seed} failed: {e}")))?;
            Ok(RunReport {
                schema_version: SCHEMA_VERSION,
                library_version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: run_config.hash(),
                seed,
                metrics: outcome.report,
                loss_trace: outcome.trace,
                wall_seconds: started.elapsed().as_secs_f64(),
                timestamp_unix: crate::report::unix_now(),
            })
        })
        .collect();
    let mut runs = Vec::with_capacity(results.len());
    for result in results {
        runs.push(result?);
    }
    Ok(AggregateReport::from_runs(config, runs))
}

/// One aggregate per configuration cell of the requested sweep.
pub fn ablation(config: &RunConfig, mode: &str) -> Result<Vec<(String, AggregateReport)>> {
    let cells: Vec<(String, Vec<(String, Value)>)> = match mode {
        "sub-relation" => ["all", "original", "relation", "fused"]
            .iter()
            .map(|&s| {
                (
                    format!("relations_{s}"),
                    vec![("relations.enabled".to_string(), Value::String(s.into()))],
                )
            })
            .collect(),
        "module" => vec![
            ("full".to_string(), vec![]),
            (
                "no_view_align".to_string(),
                vec![("loss.view_align".to_string(), Value::Bool(false))],
            ),
            (
                "no_contrastive".to_string(),
                vec![("loss.lambda".to_string(), Value::from(0.0))],
            ),
            (
                "no_similarity".to_string(),
                vec![("loss.mu".to_string(), Value::from(0.0))],
            ),
        ],
        "kernel" => ["dynamic", "wl", "sp", "rw"]
            .iter()
            .map(|&k| {
                (
                    format!("kernel_{k}"),
                    vec![("kernel.kind".to_string(), Value::String(k.into()))],
                )
            })
            .collect(),
        "loss-grid" => {
            let grid = [0.01, 0.1, 1.0, 10.0, 100.0];
            let mut cells = Vec::with_capacity(25);
            for &lambda in &grid {
                for &mu in &grid {
                    cells.push((
                        format!("lambda_{lambda}_mu_{mu}"),
                        vec![
                            ("loss.lambda".to_string(), Value::from(lambda)),
                            ("loss.mu".to_string(), Value::from(mu)),
                        ],
                    ));
                }
            }
            cells
        }
        other => {
            return Err(Error::Config(format!(
                "unknown ablation mode {other:?}; use sub-relation, module, kernel, or loss-grid"
            )))
        }
    };

    let mut out = Vec::with_capacity(cells.len());
    for (label, overrides) in cells {
        let cell_config = config.with_overrides(&overrides)?;
        let report = run_experiment(&cell_config)
            .map_err(|e| Error::Runtime(format!("ablation cell {label} failed: {e}")))?;
        out.push((label, report));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{DatasetSpec, FamilySpec, GraphFamily};
    use std::io::Write;

    fn synthetic_spec(count: usize) -> String {
        serde_json::to_string(&DatasetSpec {
            families: vec![
                FamilySpec {
                    kind: GraphFamily::Cycle,
                    count,
                    min_size: 6,
                    max_size: 9,
                },
                FamilySpec {
                    kind: GraphFamily::Complete,
                    count,
                    min_size: 5,
                    max_size: 7,
                },
            ],
            attribute_dim: 4,
            class_means: vec![vec![2.0, 0.0, 0.0, 0.0], vec![-2.0, 0.0, 0.0, 0.0]],
            noise_std: 0.1,
            seed: 9,
            name: "toy".into(),
        })
        .unwrap()
    }

    fn write_spec(dir: &std::path::Path, count: usize) -> String {
        let path = dir.join("spec.json");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(synthetic_spec(count).as_bytes()).unwrap();
        path.to_string_lossy().into_owned()
    }

    fn tiny_config(spec_path: &str, extra: &[(&str, Value)]) -> RunConfig {
        let mut overrides = vec![
            ("dataset.synthetic".to_string(), Value::String(spec_path.into())),
            ("train.epochs".to_string(), Value::from(2)),
            ("train.runs".to_string(), Value::from(1)),
            ("encoder.hidden_dim".to_string(), Value::from(8)),
            ("encoder.depth".to_string(), Value::from(2)),
        ];
        for (k, v) in extra {
            overrides.push((k.to_string(), v.clone()));
        }
        let base = RunConfig::from_json_str("{\"dataset.synthetic\": \"placeholder\"}").unwrap();
        base.with_overrides(&overrides).unwrap()
    }

    #[test]
    fn single_epoch_run_completes_with_trace() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_spec(dir.path(), 6);
        let config = tiny_config(&spec, &[("train.epochs", Value::from(1))]);
        let outcome = train(&config).unwrap();
        assert_eq!(outcome.trace.len(), 1);
        assert_eq!(outcome.embeddings.dim(), (12, 8));
        assert_eq!(outcome.partition.assignments.len(), 12);
    }

    #[test]
    fn zero_weights_reduce_total_to_cluster_loss() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_spec(dir.path(), 5);
        let config = tiny_config(
            &spec,
            &[
                ("loss.lambda", Value::from(0.0)),
                ("loss.mu", Value::from(0.0)),
                ("train.epochs", Value::from(3)),
            ],
        );
        let outcome = train(&config).unwrap();
        for epoch in &outcome.trace {
            assert_eq!(epoch.total, epoch.cluster);
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_spec(dir.path(), 5);
        let config = tiny_config(&spec, &[]);
        let a = train(&config).unwrap();
        let b = train(&config).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.report, b.report);
        assert_eq!(a.embeddings, b.embeddings);
    }

    #[test]
    fn every_stream_choice_trains() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_spec(dir.path(), 4);
        for stream in ["all", "original", "relation", "fused"] {
            let config = tiny_config(
                &spec,
                &[("relations.enabled", Value::String(stream.into()))],
            );
            let outcome = train(&config).unwrap();
            assert_eq!(outcome.trace.len(), 2, "stream {stream}");
        }
    }

    #[test]
    fn structural_kernel_modes_train() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_spec(dir.path(), 4);
        for kind in ["wl", "sp", "rw"] {
            let config = tiny_config(&spec, &[("kernel.kind", Value::String(kind.into()))]);
            train(&config).unwrap_or_else(|e| panic!("kernel {kind}: {e}"));
        }
    }

    #[test]
    fn rbf_map_trains() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_spec(dir.path(), 3);
        let config = tiny_config(
            &spec,
            &[
                ("kernel.map", Value::String("rbf".into())),
                ("train.epochs", Value::from(1)),
            ],
        );
        train(&config).unwrap();
    }

    #[test]
    fn experiment_aggregates_and_repeats_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_spec(dir.path(), 4);
        let config = tiny_config(&spec, &[("train.runs", Value::from(2))]);
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a.runs.len(), 2);
        assert!(a.std_defined);
        assert_eq!(a.runs[0].metrics, b.runs[0].metrics);
        assert_eq!(a.runs[0].loss_trace, b.runs[0].loss_trace);
        assert_eq!(a.runs[0].seed, config.seed);
        assert_eq!(a.runs[1].seed, config.seed + 1);
    }

    #[test]
    fn ablation_modes_have_expected_cell_counts() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_spec(dir.path(), 4);
        let config = tiny_config(&spec, &[("train.epochs", Value::from(1))]);
        let rows = ablation(&config, "sub-relation").unwrap();
        assert_eq!(rows.len(), 4);
        let labels: Vec<&str> = rows.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(
            labels,
            [
                "relations_all",
                "relations_original",
                "relations_relation",
                "relations_fused"
            ]
        );
        assert!(ablation(&config, "bogus").is_err());
    }

    #[test]
    fn learnable_pooling_terms_train() {
        let dir = tempfile::tempdir().unwrap();
        let spec = write_spec(dir.path(), 3);
        let config = tiny_config(
            &spec,
            &[
                ("pooling.learnable_terms", Value::Bool(true)),
                ("train.epochs", Value::from(1)),
            ],
        );
        train(&config).unwrap();
    }
}
