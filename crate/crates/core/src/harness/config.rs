//! Experiment configuration: TOML with one table per concern.

use std::path::{Path, PathBuf};

use fluidsim::{SimConfig, TaskKind, TaskSpec};
use serde::{Deserialize, Serialize};

use crate::baselines::{AdamOptConfig, CemConfig};
use crate::datagen::{CollectConfig, Optimizer};
use crate::diffusion::TrainConfig;
use crate::guidance::Variant;
use crate::psample::PsConfig;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Efficiency,
    DataQuality,
    ParticleSampling,
    LambdaSweep,
    Gallery,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Efficiency => "efficiency",
            ExperimentKind::DataQuality => "data-quality",
            ExperimentKind::ParticleSampling => "particle-sampling",
            ExperimentKind::LambdaSweep => "lambda-sweep",
            ExperimentKind::Gallery => "gallery",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub experiment: ExperimentKind,
    pub root_seed: u64,
    /// Evaluation seeds; each draws its own goal.
    pub seeds: u64,
    pub task: TaskKind,
    /// Overrides the task's rollout length when set.
    pub rollout_length: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Efficiency,
            root_seed: 0,
            seeds: 5,
            task: TaskKind::Contain,
            rollout_length: None,
            dataset: None,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenSection {
    pub tasks: Vec<TaskKind>,
    pub optimizers: Vec<Optimizer>,
    pub runs_per_task: usize,
    pub adam: AdamOptConfig,
    pub cem: CemConfig,
}

impl Default for DatagenSection {
    fn default() -> Self {
        let c = CollectConfig::default();
        Self {
            tasks: vec![TaskKind::Contain],
            optimizers: vec![Optimizer::Cem, Optimizer::Adam],
            runs_per_task: c.runs_per_task,
            adam: c.adam,
            cem: c.cem,
        }
    }
}

impl DatagenSection {
    pub fn collect(&self) -> CollectConfig {
        CollectConfig { runs_per_task: self.runs_per_task, adam: self.adam.clone(), cem: self.cem.clone() }
    }
}

/// Which records of the dataset a model is trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Tasks to keep; empty keeps all.
    pub tasks: Vec<TaskKind>,
    /// Keep records whose cost is at or below this quantile of the kept costs.
    pub cutoff_quantile: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { tasks: Vec::new(), cutoff_quantile: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub samples: usize,
    pub steps: usize,
    /// Classifier-free guidance scale.
    pub lambda: f64,
    /// Percentile the model is conditioned on; 0 asks for the best designs.
    pub percentile: f64,
    pub sde: bool,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { samples: 100, steps: 50, lambda: 1.0, percentile: 0.0, sde: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Evaluation counts at which the efficiency curves are read off.
    pub budgets: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub variants: Vec<Variant>,
    pub sweep_samples: usize,
    pub sweep_steps: usize,
    pub energy_tau: f64,
    pub cutoffs: Vec<f64>,
    /// Training task sets compared by the data-quality experiment.
    pub task_sets: Vec<Vec<TaskKind>>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            budgets: vec![10, 20, 50, 100, 200, 500, 1000],
            lambdas: vec![0.1, 0.5, 1.0, 5.0, 10.0],
            variants: Variant::ALL.to_vec(),
            sweep_samples: 8,
            sweep_steps: 50,
            energy_tau: 0.1,
            cutoffs: vec![1.0],
            task_sets: Vec::new(),
        }
    }
}

fn default_train() -> TrainConfig {
    TrainConfig { conditional: true, ..TrainConfig::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub run: RunSection,
    pub sim: SimConfig,
    pub datagen: DatagenSection,
    pub data: DataSection,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    pub sample: SampleSection,
    pub cem: CemConfig,
    pub adam: AdamOptConfig,
    pub particle: PsConfig,
    pub experiment: ExperimentSection,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            sim: SimConfig::default(),
            datagen: DatagenSection::default(),
            data: DataSection::default(),
            train: default_train(),
            sample: SampleSection::default(),
            cem: CemConfig::default(),
            adam: AdamOptConfig::default(),
            particle: PsConfig::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

impl HarnessConfig {
    /// Parses a config file. A run manifest is accepted too, in which case its
    /// recorded config is used.
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let table = match (value.get("command"), value.get("config")) {
            (Some(_), Some(toml::Value::Table(inner))) => inner.clone(),
            _ => value,
        };
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, Error> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.task().validate()?;
        self.cem.validate()?;
        self.particle.validate()?;
        self.train.validate()?;
        if self.run.seeds == 0 || self.sample.samples == 0 || self.sample.steps == 0 {
            return Err(Error::Config("run.seeds, sample.samples and sample.steps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.data.cutoff_quantile) || self.experiment.cutoffs.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::Config("cutoff quantiles must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// The evaluation task, with any rollout override applied.
    pub fn task(&self) -> TaskSpec {
        self.task_spec(self.run.task)
    }

    pub fn task_spec(&self, kind: TaskKind) -> TaskSpec {
        let mut task = TaskSpec::preset(kind);
        if let Some(n) = self.run.rollout_length {
            task.rollout_length = n;
        }
        task
    }

    pub fn dataset_path(&self) -> Result<&Path, Error> {
        existing(self.run.dataset.as_deref(), "dataset", "diffdesign datagen --config <file> --out <dir>")
    }

    pub fn checkpoint_path(&self) -> Result<&Path, Error> {
        existing(self.run.checkpoint.as_deref(), "checkpoint", "diffdesign train --config <file> --out <dir>")
    }
}

fn existing<'a>(path: Option<&'a Path>, what: &str, hint: &str) -> Result<&'a Path, Error> {
    match path {
        Some(p) if p.exists() => Ok(p),
        Some(p) => Err(Error::Missing(format!("{what} {} not found; generate it with `{hint}`", p.display()))),
        None => Err(Error::Missing(format!("run.{what} is not set; generate one with `{hint}` and point run.{what} at it"))),
    }
}
