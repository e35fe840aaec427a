//! Run configuration: a flat map of dotted keys loaded from JSON, with
//! per-key overrides, defaults, validation, and a stable hash for
//! report provenance.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::kernels::{FeatureMap, KernelKind};
use crate::objectives::LossWeights;

/// Which embedding stream drives the losses and the final clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamChoice {
    /// Fused stream for losses and clustering, with cross-stream
    /// alignment available.
    All,
    /// Only the original-adjacency stream.
    Original,
    /// Only the mean of the two constructed relation streams.
    Relation,
    /// Only the fused stream, without alignment.
    Fused,
}

impl StreamChoice {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(StreamChoice::All),
            "original" => Ok(StreamChoice::Original),
            "relation" => Ok(StreamChoice::Relation),
            "fused" => Ok(StreamChoice::Fused),
            other => Err(Error::Config(format!(
                "relations.enabled must be one of all/original/relation/fused, got {other:?}"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            StreamChoice::All => "all",
            StreamChoice::Original => "original",
            StreamChoice::Relation => "relation",
            StreamChoice::Fused => "fused",
        }
    }
}

/// Where the graphs come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// A TUDataset-format directory and dataset name.
    Directory { dir: String, name: String },
    /// A synthetic generator spec file (JSON).
    Synthetic { spec_path: String },
}

/// Fully validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub k: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub runs: usize,
    pub early_stop_patience: usize,
    pub encoder_depth: usize,
    pub hidden_dim: usize,
    pub encoder_seed: Option<u64>,
    pub pooling_temperature: f64,
    pub pooling_learnable_terms: bool,
    pub kernel_kind: KernelKind,
    pub kernel_wl_iterations: usize,
    pub kernel_map_name: String,
    pub kernel_rbf_gamma: Option<f64>,
    pub kernel_top_k: usize,
    pub loss_weights: LossWeights,
    pub refresh_period: usize,
    pub view_align: bool,
    pub stream: StreamChoice,
    pub relations_top_k: usize,
    raw: BTreeMap<String, Value>,
}

const KEYS: &[(&str, &str)] = &[
    ("dataset.dir", "string: TUDataset directory"),
    ("dataset.name", "string: dataset name inside dataset.dir"),
    ("dataset.synthetic", "string: path to a synthetic spec JSON"),
    ("cluster.k", "int: cluster count (default: number of classes)"),
    ("train.batch_size", "int, default 128"),
    ("train.epochs", "int, default 50"),
    ("train.learning_rate", "float, default 0.001"),
    ("train.seed", "int, default 0"),
    ("train.runs", "int, default 10"),
    ("train.early_stop_patience", "int, default 10"),
    ("encoder.depth", "int, default 3"),
    ("encoder.hidden_dim", "int, default 32"),
    ("encoder.seed", "int (default: train.seed)"),
    ("pooling.temperature", "float, default 1.0"),
    ("pooling.learnable_terms", "bool, default false"),
    ("kernel.kind", "dynamic|wl|sp|rw, default dynamic"),
    ("kernel.wl_iterations", "int, default 3"),
    ("kernel.map", "identity|rbf, default identity"),
    ("kernel.rbf_gamma", "float (default: 1/hidden_dim)"),
    ("kernel.top_k", "int, default 10"),
    ("loss.lambda", "float, default 1.0"),
    ("loss.mu", "float, default 1.0"),
    ("loss.refresh_period", "int, default 5"),
    ("loss.view_align", "bool, default true"),
    ("relations.enabled", "all|original|relation|fused, default all"),
    ("relations.top_k", "int, default 5"),
];

/// One line per key with its type and default, for CLI help and errors.
pub fn describe_keys() -> String {
    KEYS.iter()
        .map(|(k, d)| format!("  {k}: {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn known_key(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

struct Reader<'a> {
    map: &'a BTreeMap<String, Value>,
}

impl Reader<'_> {
    fn get(&self, key: &str) -> Option<&Value> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn string(&self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(Error::Config(format!("{key} must be a string, got {other}"))),
        }
    }

    fn uint(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .ok_or_else(|| Error::Config(format!("{key} must be a nonnegative integer, got {v}"))),
        }
    }

    fn opt_uint(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| Error::Config(format!("{key} must be a nonnegative integer, got {v}"))),
        }
    }

    fn float(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| Error::Config(format!("{key} must be a number, got {v}"))),
        }
    }

    fn opt_float(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| Error::Config(format!("{key} must be a number, got {v}"))),
        }
    }

    fn boolean(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Bool(b)) => Ok(*b),
            Some(other) => Err(Error::Config(format!("{key} must be a boolean, got {other}"))),
        }
    }
}

impl RunConfig {
    /// Validate and type a flat key map.
    pub fn from_map(map: BTreeMap<String, Value>) -> Result<Self> {
        for key in map.keys() {
            if !known_key(key) {
                return Err(Error::Config(format!(
                    "unknown config key {key:?}; known keys:\n{}",
                    describe_keys()
                )));
            }
        }
        let r = Reader { map: &map };

        let dir = r.string("dataset.dir")?;
        let name = r.string("dataset.name")?;
        let synthetic = r.string("dataset.synthetic")?;
        let dataset = match (dir, name, synthetic) {
            (_, _, Some(spec_path)) => DatasetSource::Synthetic { spec_path },
            (Some(dir), Some(name), None) => DatasetSource::Directory { dir, name },
            _ => {
                return Err(Error::Config(
                    "configure either dataset.dir + dataset.name or dataset.synthetic".into(),
                ))
            }
        };

        let batch_size = r.uint("train.batch_size", 128)? as usize;
        let epochs = r.uint("train.epochs", 50)? as usize;
        let runs = r.uint("train.runs", 10)? as usize;
        if epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if runs == 0 {
            return Err(Error::Config("train.runs must be at least 1".into()));
        }
        let k = r.opt_uint("cluster.k")?.map(|v| v as usize);
        if let Some(k) = k {
            if k == 0 {
                return Err(Error::Config("cluster.k must be at least 1".into()));
            }
            if batch_size < k {
                return Err(Error::Config(format!(
                    "train.batch_size ({batch_size}) must be at least cluster.k ({k})"
                )));
            }
        }
        if batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        let learning_rate = r.float("train.learning_rate", 1e-3)?;
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "train.learning_rate must be positive, got {learning_rate}"
            )));
        }

        let encoder_depth = r.uint("encoder.depth", 3)? as usize;
        let hidden_dim = r.uint("encoder.hidden_dim", 32)? as usize;
        if encoder_depth == 0 || hidden_dim == 0 {
            return Err(Error::Config(
                "encoder.depth and encoder.hidden_dim must be at least 1".into(),
            ));
        }

        let pooling_temperature = r.float("pooling.temperature", 1.0)?;
        if !(pooling_temperature.is_finite() && pooling_temperature > 0.0) {
            return Err(Error::Config(format!(
                "pooling.temperature must be positive, got {pooling_temperature}"
            )));
        }

        let kernel_kind = match r.string("kernel.kind")?.as_deref() {
            None | Some("dynamic") => KernelKind::Dynamic,
            Some("wl") => KernelKind::Wl,
            Some("sp") => KernelKind::Sp,
            Some("rw") => KernelKind::Rw,
            Some(other) => {
                return Err(Error::Config(format!(
                    "kernel.kind must be one of dynamic/wl/sp/rw, got {other:?}"
                )))
            }
        };
        let kernel_map_name = r.string("kernel.map")?.unwrap_or_else(|| "identity".into());
        if kernel_map_name != "identity" && kernel_map_name != "rbf" {
            return Err(Error::Config(format!(
                "kernel.map must be identity or rbf, got {kernel_map_name:?}"
            )));
        }
        let kernel_rbf_gamma = r.opt_float("kernel.rbf_gamma")?;
        if let Some(g) = kernel_rbf_gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::Config(format!(
                    "kernel.rbf_gamma must be positive, got {g}"
                )));
            }
        }

        let loss_weights = LossWeights::new(
            r.float("loss.lambda", 1.0)?,
            r.float("loss.mu", 1.0)?,
        )?;
        let refresh_period = r.uint("loss.refresh_period", 5)? as usize;
        if refresh_period == 0 {
            return Err(Error::Config("loss.refresh_period must be at least 1".into()));
        }

        let stream = match r.string("relations.enabled")? {
            None => StreamChoice::All,
            Some(s) => StreamChoice::parse(&s)?,
        };
        let relations_top_k = r.uint("relations.top_k", 5)? as usize;
        if relations_top_k == 0 {
            return Err(Error::Config("relations.top_k must be at least 1".into()));
        }

        Ok(RunConfig {
            dataset,
            k,
            batch_size,
            epochs,
            learning_rate,
            seed: r.uint("train.seed", 0)?,
            runs,
            early_stop_patience: r.uint("train.early_stop_patience", 10)? as usize,
            encoder_depth,
            hidden_dim,
            encoder_seed: r.opt_uint("encoder.seed")?,
            pooling_temperature,
            pooling_learnable_terms: r.boolean("pooling.learnable_terms", false)?,
            kernel_kind,
            kernel_wl_iterations: r.uint("kernel.wl_iterations", 3)? as usize,
            kernel_map_name,
            kernel_rbf_gamma,
            kernel_top_k: r.uint("kernel.top_k", 10)? as usize,
            loss_weights,
            refresh_period,
            view_align: r.boolean("loss.view_align", true)?,
            stream,
            relations_top_k,
            raw: map,
        })
    }

    /// Parse a JSON object of flat dotted keys.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let map = parse_flat_json(text)?;
        Self::from_map(map)
    }

    /// The feature map the dynamic kernel should use.
    pub fn feature_map(&self) -> FeatureMap {
        if self.kernel_map_name == "rbf" {
            FeatureMap::Rbf {
                gamma: self
                    .kernel_rbf_gamma
                    .unwrap_or(1.0 / self.hidden_dim as f64),
            }
        } else {
            FeatureMap::Identity
        }
    }

    /// The validated flat key map this config was built from.
    pub fn raw_map(&self) -> &BTreeMap<String, Value> {
        &self.raw
    }

    /// Rebuild with some keys replaced; unset keys fall back to defaults.
    pub fn with_overrides(&self, overrides: &[(String, Value)]) -> Result<Self> {
        let mut map = self.raw.clone();
        for (key, value) in overrides {
            map.insert(key.clone(), value.clone());
        }
        Self::from_map(map)
    }

    /// Canonical JSON rendering of the key map (sorted keys).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.raw).expect("flat string/number map serializes")
    }

    /// Hex SHA-256 of the canonical JSON; identical configs hash equal.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parse a JSON document that must be a flat object of scalar values.
pub fn parse_flat_json(text: &str) -> Result<BTreeMap<String, Value>> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
    let Value::Object(object) = value else {
        return Err(Error::Config("config must be a JSON object".into()));
    };
    let mut map = BTreeMap::new();
    for (key, value) in object {
        if value.is_object() || value.is_array() {
            return Err(Error::Config(format!(
                "config key {key:?} must hold a scalar (flat dotted keys only)"
            )));
        }
        map.insert(key, value);
    }
    Ok(map)
}

/// Parse one `key=value` override. The value is read as JSON when it
/// parses as a scalar, and as a bare string otherwise.
pub fn parse_override(arg: &str) -> Result<(String, Value)> {
    let Some((key, raw)) = arg.split_once('=') else {
        return Err(Error::Config(format!(
            "override {arg:?} must look like key=value"
        )));
    };
    let value = match serde_json::from_str::<Value>(raw) {
        Ok(v) if !v.is_object() && !v.is_array() => v,
        _ => Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}
