//! Experiment configuration: one TOML file, every key optional, unknown keys
//! rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fewshot::{gen_synth, Dataset, GroundTruth, SynthConfig, DEFAULT_QUERIES_PER_CLASS};
use crate::meta::{
    BaselineHead, DccdiParams, EvalParams, MetaHead, ModelShape, Stage1Params, Stage2Params, DEFAULT_INNER_LR,
    DEFAULT_INNER_STEPS, DEFAULT_OUTER_LR,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base seed for model initialization, training and evaluation. It is
    /// also added to both generator seeds.
    pub seed: u64,
    /// Evaluation worker threads; results do not depend on it.
    pub threads: usize,
    /// Classes per episode.
    pub way: usize,
    /// Support samples per class during training.
    pub shot: usize,
    /// Query samples per class, training and evaluation.
    pub query: usize,
    pub data: DataConfig,
    pub model: ModelShape,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub eval: EvalConfig,
    pub dccdi: DccdiParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset file to train on; generated from `source` when absent.
    pub source_path: Option<PathBuf>,
    /// Dataset file to evaluate on; generated from `target` when absent.
    pub target_path: Option<PathBuf>,
    pub source: SynthConfig,
    pub target: SynthConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub episodes: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub episodes: usize,
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub heads: Vec<MetaHead>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    /// One evaluation per shot count and method.
    pub shots: Vec<usize>,
    pub methods: Vec<Method>,
    /// Output widths swept by `ablate-dim`.
    pub dims: Vec<usize>,
}

/// Evaluated method, as named in the CSV `method` column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Dccdi,
    DccdiNoText,
    Prototypical,
    Matching,
    Relation,
    GraphMetric,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Dccdi,
        Method::DccdiNoText,
        Method::Prototypical,
        Method::Matching,
        Method::Relation,
        Method::GraphMetric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dccdi => "dccdi",
            Method::DccdiNoText => "dccdi-no-text",
            Method::Prototypical => "prototypical",
            Method::Matching => "matching",
            Method::Relation => "relation",
            Method::GraphMetric => "graph-metric",
        }
    }

    pub fn baseline(self) -> Option<BaselineHead> {
        match self {
            Method::Dccdi | Method::DccdiNoText => None,
            Method::Prototypical => Some(BaselineHead::Prototypical),
            Method::Matching => Some(BaselineHead::Matching),
            Method::Relation => Some(BaselineHead::Relation),
            Method::GraphMetric => Some(BaselineHead::GraphMetric),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 1,
            way: 5,
            shot: 5,
            query: DEFAULT_QUERIES_PER_CLASS,
            data: DataConfig::default(),
            model: ModelShape {
                visual_dim: 32,
                trunk: vec![64, 32],
                frozen: 1,
                way: 5,
                gnn_hidden: 16,
                gnn_edge_hidden: 8,
                gnn_rounds: 2,
                relation_hidden: 16,
            },
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            eval: EvalConfig::default(),
            dccdi: DccdiParams::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        // Source and target differ in observation geometry (mixers) and in
        // visual noise; the target's text view carries the class signal.
        Self {
            source_path: None,
            target_path: None,
            source: SynthConfig {
                num_classes: 64,
                separation: 1.5,
                visual_noise: 1.0,
                seed: 1000,
                mixer_seed: Some(11),
                bayes_samples: 0,
                ..SynthConfig::default()
            },
            target: SynthConfig {
                num_classes: 20,
                separation: 1.5,
                visual_noise: 1.5,
                seed: 2000,
                mixer_seed: Some(22),
                bayes_samples: 0,
                ..SynthConfig::default()
            },
        }
    }
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self { episodes: 200, lr: 0.01 }
    }
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            episodes: 500,
            inner_steps: DEFAULT_INNER_STEPS,
            inner_lr: DEFAULT_INNER_LR,
            outer_lr: DEFAULT_OUTER_LR,
            heads: vec![MetaHead::GraphMetric, MetaHead::Relation],
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 600,
            shots: vec![5],
            methods: Method::ALL.to_vec(),
            dims: vec![10, 15, 20, 25],
        }
    }
}

impl ExperimentConfig {
    /// Parses `s` layered over [`ExperimentConfig::default`]: a key missing
    /// from a section keeps this config's default even where the section's
    /// own type defaults differ (the two generator sections).
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let user: toml::Table = toml::from_str(s).map_err(|e| err(&e))?;
        let mut merged = toml::Table::try_from(Self::default()).map_err(|e| err(&e))?;
        merge(&mut merged, user);
        let cfg: Self = merged.try_into().map_err(|e| err(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.way < 2 || self.shot == 0 || self.query == 0 {
            return bad(format!(
                "way ({}) must be at least 2, shot ({}) and query ({}) at least 1",
                self.way, self.shot, self.query
            ));
        }
        if self.model.way != self.way {
            return bad(format!("model.way ({}) must equal way ({})", self.model.way, self.way));
        }
        if self.eval.shots.contains(&0) {
            return bad("eval.shots entries must be at least 1".into());
        }
        if self.eval.dims.contains(&0) {
            return bad("eval.dims entries must be at least 1".into());
        }
        if self.data.source_path.is_none() {
            self.data.source.validate()?;
            if self.data.source.visual_dim != self.model.visual_dim {
                return bad(format!(
                    "data.source.visual_dim ({}) must equal model.visual_dim ({})",
                    self.data.source.visual_dim, self.model.visual_dim
                ));
            }
        }
        if self.data.target_path.is_none() {
            self.data.target.validate()?;
        }
        Ok(())
    }

    fn synth(&self, base: &SynthConfig) -> SynthConfig {
        SynthConfig {
            seed: base.seed.wrapping_add(self.seed),
            ..base.clone()
        }
    }

    /// Generator settings actually used for the source domain.
    pub fn source_synth(&self) -> SynthConfig {
        self.synth(&self.data.source)
    }

    pub fn target_synth(&self) -> SynthConfig {
        self.synth(&self.data.target)
    }

    pub fn generate_source(&self) -> Result<(Dataset, GroundTruth)> {
        gen_synth(&self.source_synth())
    }

    pub fn generate_target(&self) -> Result<(Dataset, GroundTruth)> {
        gen_synth(&self.target_synth())
    }

    pub fn source_dataset(&self) -> Result<Dataset> {
        match &self.data.source_path {
            Some(p) => Dataset::load(p),
            None => Ok(self.generate_source()?.0),
        }
    }

    pub fn target_dataset(&self) -> Result<Dataset> {
        match &self.data.target_path {
            Some(p) => Dataset::load(p),
            None => Ok(self.generate_target()?.0),
        }
    }

    pub fn stage1_params(&self) -> Stage1Params {
        Stage1Params {
            episodes: self.stage1.episodes,
            way: self.way,
            shots: self.shot,
            queries: self.query,
            lr: self.stage1.lr,
            seed: self.seed,
        }
    }

    pub fn stage2_params(&self) -> Stage2Params {
        Stage2Params {
            episodes: self.stage2.episodes,
            way: self.way,
            shots: self.shot,
            queries: self.query,
            inner_steps: self.stage2.inner_steps,
            inner_lr: self.stage2.inner_lr,
            outer_lr: self.stage2.outer_lr,
            heads: self.stage2.heads.clone(),
            seed: self.seed,
        }
    }

    pub fn eval_params(&self, shots: usize) -> EvalParams {
        EvalParams {
            episodes: self.eval.episodes,
            way: self.way,
            shots,
            queries: self.query,
            seed: self.seed,
            threads: self.threads,
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
