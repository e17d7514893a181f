//! Run configuration: cluster/node counts, model and training settings,
//! data source, and the fault plan. Parsed from JSON with unknown keys
//! rejected.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use fedchain_core::params::{HyperParams, ModelKind, ModelSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub clusters: u32,
    pub nodes: u32,
    pub rounds: u64,
    pub model: ModelCfg,
    pub hyperparams: HpCfg,
    pub data: DataSource,
    #[serde(default)]
    pub faults: Vec<FaultDirective>,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCfg {
    pub kind: String,
    pub layer_dims: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpCfg {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// Seeded Gaussian blobs; the seed is derived from the master seed.
    Synthetic {
        per_cluster: usize,
        dim: usize,
        #[serde(default)]
        skew: f64,
        /// Held-out test rows; defaults to `per_cluster`.
        #[serde(default)]
        test_rows: Option<usize>,
    },
    /// IDX image/label file pairs, one per cluster, plus a test pair.
    Idx { clusters: Vec<IdxPair>, test: IdxPair },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPair {
    pub images: PathBuf,
    pub labels: PathBuf,
}

/// Which rounds a directive applies to. Rounds are 1-based.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(untagged)]
pub enum RoundsSel {
    #[default]
    #[serde(deserialize_with = "all_literal")]
    All,
    List(Vec<u64>),
}

fn all_literal<'de, D: serde::Deserializer<'de>>(d: D) -> Result<(), D::Error> {
    let s = String::deserialize(d)?;
    if s == "all" {
        Ok(())
    } else {
        Err(serde::de::Error::custom("expected \"all\" or a list of rounds"))
    }
}

impl RoundsSel {
    pub fn applies(&self, round: u64) -> bool {
        match self {
            RoundsSel::All => true,
            RoundsSel::List(rounds) => rounds.contains(&round),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FaultDirective {
    /// The node's enclave emits an attested but perturbed aggregate:
    /// +1.0 on coordinate 0.
    CorruptAggregator {
        node: u32,
        #[serde(default)]
        rounds: RoundsSel,
    },
    /// The node's report is signed with an unregistered key.
    ForgeReport {
        node: u32,
        #[serde(default)]
        rounds: RoundsSel,
    },
    /// One body bit of the cluster's ciphertext flips in transit to `node`.
    TamperCiphertext {
        cluster: u32,
        node: u32,
        #[serde(default)]
        rounds: RoundsSel,
    },
    /// Post-run ledger edit: XORs one body byte of the block at `height`.
    TamperChain { node: u32, height: u64, byte: u64 },
    /// The node stops broadcasting (quotes, proposals, commits).
    Silent {
        node: u32,
        #[serde(default)]
        rounds: RoundsSel,
    },
}

impl FaultDirective {
    fn node(&self) -> u32 {
        match self {
            FaultDirective::CorruptAggregator { node, .. }
            | FaultDirective::ForgeReport { node, .. }
            | FaultDirective::TamperCiphertext { node, .. }
            | FaultDirective::TamperChain { node, .. }
            | FaultDirective::Silent { node, .. } => *node,
        }
    }
}

impl SimConfig {
    pub fn from_json_str(json: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text)
    }

    pub fn model_spec(&self) -> Result<ModelSpec, ConfigError> {
        let kind = match self.model.kind.as_str() {
            "logistic" => ModelKind::Logistic,
            "mlp" => ModelKind::Mlp,
            other => return Err(ConfigError::Invalid(format!("unknown model kind {other:?}"))),
        };
        ModelSpec::new(kind, self.model.layer_dims.clone())
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn hyperparams(&self) -> Result<HyperParams, ConfigError> {
        HyperParams::new(
            self.hyperparams.learning_rate,
            self.hyperparams.batch_size,
            self.hyperparams.local_epochs,
            self.hyperparams.seed,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Nodes whose aggregation output is corrupted or forged: the `f` of
    /// the honest-majority analysis.
    pub fn corrupted_nodes(&self) -> BTreeSet<u32> {
        self.faults
            .iter()
            .filter(|f| {
                matches!(
                    f,
                    FaultDirective::CorruptAggregator { .. } | FaultDirective::ForgeReport { .. }
                )
            })
            .map(|f| f.node())
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.clusters == 0 || self.nodes == 0 || self.rounds == 0 {
            return Err(ConfigError::Invalid("clusters, nodes, and rounds must be >= 1".into()));
        }
        let spec = self.model_spec()?;
        self.hyperparams()?;
        match &self.data {
            DataSource::Synthetic { per_cluster, dim, skew, test_rows } => {
                if *per_cluster == 0 {
                    return Err(ConfigError::Invalid("per_cluster must be >= 1".into()));
                }
                if *dim != spec.input_dim() {
                    return Err(ConfigError::Invalid(format!(
                        "data dim {} does not match model input dim {}",
                        dim,
                        spec.input_dim()
                    )));
                }
                if !skew.is_finite() || *skew < 0.0 {
                    return Err(ConfigError::Invalid("skew must be finite and >= 0".into()));
                }
                if test_rows == &Some(0) {
                    return Err(ConfigError::Invalid("test_rows must be >= 1".into()));
                }
            }
            DataSource::Idx { clusters, .. } => {
                if clusters.len() != self.clusters as usize {
                    return Err(ConfigError::Invalid(format!(
                        "{} idx dataset pairs for {} clusters",
                        clusters.len(),
                        self.clusters
                    )));
                }
            }
        }
        for fault in &self.faults {
            match fault {
                FaultDirective::TamperCiphertext { cluster, node, .. } => {
                    if *cluster >= self.clusters {
                        return Err(ConfigError::Invalid(format!(
                            "fault targets cluster {cluster}, only {} exist",
                            self.clusters
                        )));
                    }
                    if *node >= self.nodes {
                        return Err(ConfigError::Invalid(format!(
                            "fault targets node {node}, only {} exist",
                            self.nodes
                        )));
                    }
                }
                other => {
                    if other.node() >= self.nodes {
                        return Err(ConfigError::Invalid(format!(
                            "fault targets node {}, only {} exist",
                            other.node(),
                            self.nodes
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
