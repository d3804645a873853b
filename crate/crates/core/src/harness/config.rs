use std::fs;
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::actdist::KlMode;
use crate::analysis::ColorBy;
use crate::downstream::{LinearQConfig, MetaKind, QLearnerConfig, ReinforceConfig};
use crate::error::{Error, Result};
use crate::gridworld::EnvSpec;
use crate::hashing::content_hash;
use crate::representations::{RepKind, TrainConfig};
use crate::softgcp::SoftViParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct GcpConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub tol: f64,
}

impl Default for GcpConfig {
    fn default() -> Self {
        let p = SoftViParams::default();
        Self {
            alpha: p.alpha,
            gamma: p.gamma,
            tol: p.tol,
        }
    }
}

impl GcpConfig {
    pub fn params(&self) -> SoftViParams {
        SoftViParams {
            alpha: self.alpha,
            gamma: self.gamma,
            tol: self.tol,
            ..SoftViParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_traj: usize,
    pub horizon: usize,
    /// Mixed with the global seed.
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_traj: 500,
            horizon: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum DactMode {
    /// Expectation over every state of the environment.
    #[default]
    Exact,
    /// Expectation over the distinct states of the collected dataset.
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct DactConfig {
    pub mode: DactMode,
    pub kl: KlMode,
    pub op_budget: u64,
}

impl Default for DactConfig {
    fn default() -> Self {
        Self {
            mode: DactMode::Exact,
            kl: KlMode::Symmetric,
            op_budget: crate::actdist::DEFAULT_OP_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RepresentationConfig {
    pub kind: RepKind,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RepresentationConfig {
    pub fn new(kind: RepKind) -> Self {
        Self {
            kind,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// k values for k-means over each embedding.
    pub clusters: Vec<usize>,
    /// Scatter colouring; defaults to rooms when the environment has them.
    pub color_by: Option<ColorBy>,
    /// Base states for the perturbation spread (directed grids only).
    pub spread_bases: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            clusters: vec![4],
            color_by: None,
            spread_bases: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ShapingConfig {
    /// Side of the open grid the shaped learner runs on.
    pub large_size: usize,
    /// Side of the centred sub-region the representation is trained on.
    pub region_size: usize,
    pub representations: Vec<RepresentationConfig>,
    /// `α_scale` for every representation; 0 gives the sparse baseline.
    pub alpha_scale: f64,
    pub episodes: usize,
    pub eval_every: usize,
    pub min_start_distance: usize,
    pub learner: QLearnerConfig,
    pub seeds: Vec<u64>,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self {
            large_size: 15,
            region_size: 7,
            representations: vec![RepresentationConfig {
                kind: RepKind::Arc,
                train: TrainConfig {
                    activation: crate::nn::Activation::Relu,
                    ..TrainConfig::default()
                },
            }],
            alpha_scale: 1.0,
            episodes: 500,
            eval_every: 50,
            min_start_distance: 10,
            learner: QLearnerConfig::default(),
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    pub danger_radius: f64,
    pub episodes: usize,
    pub learner: LinearQConfig,
    pub seeds: Vec<u64>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            danger_radius: 2.0,
            episodes: 100,
            learner: LinearQConfig::default(),
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum HrlTaskKind {
    #[default]
    Rooms,
    Waypoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct HrlConfig {
    pub task: HrlTaskKind,
    pub meta: MetaKind,
    /// Checkpoints in the sequence.
    pub length: usize,
    pub meta_steps: usize,
    pub meta_horizon: usize,
    /// k for the cluster commander.
    pub clusters: usize,
    /// Minimum BFS distance between consecutive waypoints.
    pub waypoint_gap: usize,
    pub iters: usize,
    pub eval_episodes: usize,
    pub reinforce: ReinforceConfig,
    /// Decoder training for latent commands.
    pub decoder: TrainConfig,
    pub seeds: Vec<u64>,
}

impl Default for HrlConfig {
    fn default() -> Self {
        Self {
            task: HrlTaskKind::Rooms,
            meta: MetaKind::ClusterCategorical,
            length: 8,
            meta_steps: 8,
            meta_horizon: 10,
            clusters: 8,
            waypoint_gap: 4,
            iters: 200,
            eval_episodes: 500,
            reinforce: ReinforceConfig::default(),
            decoder: TrainConfig::default(),
            seeds: vec![0],
        }
    }
}

/// Axes of a sweep grid; empty axes are not swept.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub alpha: Vec<f64>,
    pub clusters: Vec<usize>,
    pub alpha_scale: Vec<f64>,
    pub latent_dim: Vec<usize>,
}

impl SweepConfig {
    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty() && self.clusters.is_empty() && self.alpha_scale.is_empty() && self.latent_dim.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub env: EnvSpec,
    pub gcp: GcpConfig,
    pub dataset: DatasetConfig,
    pub dact: DactConfig,
    pub representations: Vec<RepresentationConfig>,
    pub analysis: AnalysisConfig,
    pub shaping: Option<ShapingConfig>,
    pub features: Option<FeaturesConfig>,
    pub hrl: Option<HrlConfig>,
    pub sweep: SweepConfig,
    /// Used when no `--out` is given.
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "wall".into(),
            seed: 0,
            env: EnvSpec::by_name("wall").expect("builtin environment"),
            gcp: GcpConfig::default(),
            dataset: DatasetConfig::default(),
            dact: DactConfig::default(),
            representations: vec![
                RepresentationConfig::new(RepKind::Arc),
                RepresentationConfig::new(RepKind::Identity),
            ],
            analysis: AnalysisConfig::default(),
            shaping: None,
            features: None,
            hrl: None,
            sweep: SweepConfig::default(),
            output_dir: None,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON Schema of the config file format.
    pub fn json_schema() -> String {
        let schema = schemars::schema_for!(ExperimentConfig);
        serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"
    }

    pub fn hash(&self) -> Result<String> {
        content_hash(self)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| config_err(e.to_string());
        self.env.build().map_err(wrap)?;
        self.gcp.params().validate().map_err(wrap)?;
        if self.dataset.n_traj == 0 || self.dataset.horizon == 0 {
            return Err(config_err("dataset.n_traj and dataset.horizon must be positive"));
        }
        if self.representations.is_empty() {
            return Err(config_err("at least one representation is required"));
        }
        let mut kinds: Vec<RepKind> = self.representations.iter().map(|r| r.kind).collect();
        kinds.sort();
        if kinds.windows(2).any(|w| w[0] == w[1]) {
            return Err(config_err("representation kinds must be distinct"));
        }
        for r in &self.representations {
            r.train.validate().map_err(wrap)?;
        }
        if self.analysis.clusters.contains(&0) {
            return Err(config_err("analysis.clusters entries must be positive"));
        }
        if let Some(s) = &self.shaping {
            if s.region_size == 0 || s.region_size > s.large_size || s.episodes == 0 || s.seeds.is_empty() {
                return Err(config_err("shaping needs 0 < region_size <= large_size, episodes and seeds"));
            }
            if s.alpha_scale < 0.0 {
                return Err(config_err("shaping.alpha_scale must be >= 0"));
            }
            s.learner.validate().map_err(wrap)?;
            for r in &s.representations {
                r.train.validate().map_err(wrap)?;
            }
        }
        if let Some(f) = &self.features {
            if f.episodes == 0 || f.seeds.is_empty() || !(f.danger_radius >= 0.0) {
                return Err(config_err("features needs episodes, seeds and danger_radius >= 0"));
            }
        }
        if let Some(h) = &self.hrl {
            if h.length == 0 || h.meta_steps == 0 || h.clusters == 0 || h.seeds.is_empty() || h.eval_episodes == 0 {
                return Err(config_err("hrl needs positive length, meta_steps, clusters, eval_episodes and seeds"));
            }
            h.decoder.validate().map_err(wrap)?;
        }
        if self.sweep.alpha.iter().any(|&a| !(a > 0.0)) || self.sweep.clusters.contains(&0) {
            return Err(config_err("sweep.alpha must be positive and sweep.clusters nonzero"));
        }
        Ok(())
    }
}
