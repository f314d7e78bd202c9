//! Training data from optimizer runs: collection, filtering, percentile
//! annotation and JSON-lines persistence.

use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use fluidsim::{SimConfig, TaskKind, TaskSpec};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{adam_design_opt, cem_design_opt, AdamOptConfig, CemConfig, OptTrace};
use crate::diffusion::{Conditioning, Standardizer, TrainingSet};
use crate::energy::EnergyModel;
use crate::seeds::SeedStream;
use crate::Error;

pub const DATASET_FORMAT: &str = "diffdesign-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Adam,
    Cem,
}

impl Optimizer {
    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::Adam => "adam",
            Optimizer::Cem => "cem",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub design: Vec<f64>,
    pub cost: f64,
    pub task: TaskKind,
    /// Goal(s) the run optimized for.
    pub goal: Vec<[f64; 2]>,
    /// Cost rank within the records of the same task, 0 for the best.
    pub percentile: f64,
    pub source: Optimizer,
    pub run_id: u64,
    pub iteration: usize,
}

impl DesignRecord {
    /// Conditioning input: the first goal and the percentile.
    pub fn conditioning(&self) -> Conditioning {
        Conditioning { goal: self.goal[0], percentile: self.percentile }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<DesignRecord>,
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    format: String,
    version: u32,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, other: Dataset) {
        self.records.extend(other.records);
    }

    /// Records of the given tasks only, with percentiles recomputed.
    pub fn select_tasks(&self, tasks: &[TaskKind]) -> Dataset {
        let records = self.records.iter().filter(|r| tasks.contains(&r.task)).cloned().collect();
        percentile_rank(Dataset { records })
    }

    /// Designs and conditioning, standardized by `std`.
    pub fn training_set(&self, std: &Standardizer) -> Result<TrainingSet, Error> {
        let d = std.dim();
        let mut x = Vec::with_capacity(self.len() * d);
        for r in &self.records {
            if r.design.len() != d {
                return Err(Error::Shape(format!("record design of length {} in a {d}-dim set", r.design.len())));
            }
            x.extend(std.forward(&r.design));
        }
        TrainingSet::new(d, x, self.records.iter().map(DesignRecord::conditioning).collect())
    }

    pub fn designs_flat(&self) -> Vec<f64> {
        self.records.iter().flat_map(|r| r.design.iter().copied()).collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), Error> {
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
            let header = FileHeader { format: DATASET_FORMAT.into(), version: DATASET_VERSION };
            writeln!(w, "{}", serde_json::to_string(&header).map_err(|e| Error::Dataset(e.to_string()))?)?;
            for r in &self.records {
                writeln!(w, "{}", serde_json::to_string(r).map_err(|e| Error::Dataset(e.to_string()))?)?;
            }
            w.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Dataset, Error> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let first = lines.next().ok_or_else(|| Error::Dataset("empty dataset file".into()))??;
        let header: FileHeader =
            serde_json::from_str(&first).map_err(|e| Error::Dataset(format!("bad header: {e}")))?;
        if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
            return Err(Error::Dataset(format!("unsupported format {} v{}", header.format, header.version)));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(&line).map_err(|e| Error::Dataset(format!("line {}: {e}", i + 2)))?;
            records.push(r);
        }
        Ok(Dataset { records })
    }
}

/// Percentile of each record's cost among records of the same task: rank over
/// `count - 1`, ties sharing their average rank, a lone record at 0.
pub fn percentile_rank(mut ds: Dataset) -> Dataset {
    let mut by_task: HashMap<TaskKind, Vec<usize>> = HashMap::new();
    for (i, r) in ds.records.iter().enumerate() {
        by_task.entry(r.task).or_default().push(i);
    }
    for idx in by_task.into_values() {
        let mut order = idx.clone();
        order.sort_by(|&a, &b| ds.records[a].cost.total_cmp(&ds.records[b].cost));
        let denom = (order.len() as f64 - 1.0).max(1.0);
        let mut s = 0;
        while s < order.len() {
            let mut e = s + 1;
            while e < order.len() && ds.records[order[e]].cost == ds.records[order[s]].cost {
                e += 1;
            }
            let rank = (s + e - 1) as f64 / 2.0;
            for &i in &order[s..e] {
                ds.records[i].percentile = rank / denom;
            }
            s = e;
        }
    }
    ds
}

/// Keeps records with cost strictly below `cutoff`.
pub fn filter_by_cutoff(ds: &Dataset, cutoff: f64) -> Result<Dataset, Error> {
    let records: Vec<DesignRecord> = ds.records.iter().filter(|r| r.cost < cutoff).cloned().collect();
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(percentile_rank(Dataset { records }))
}

/// Goals drawn uniformly from each reward box.
pub fn sample_goals(task: &TaskSpec, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    task.reward_boxes
        .iter()
        .map(|b| {
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            [b.left + u * (b.right - b.left), b.bottom + v * (b.top - b.bottom)]
        })
        .collect()
}

/// Flat tools below the fluid: every angle and shift zero.
pub fn flat_init(task: &TaskSpec) -> Vec<f64> {
    vec![0.0; task.design_dim()]
}

/// Uniform random angles in `[-pi, pi)` and roots anywhere in the environment.
pub fn uniform_init(task: &TaskSpec, rng: &mut impl Rng) -> Vec<f64> {
    let mut x = vec![0.0; task.design_dim()];
    let per = task.params_per_tool();
    for (t, anchor) in task.anchors().into_iter().enumerate() {
        let base = t * per;
        let angles = if task.design_angles { task.joint_angles } else { 0 };
        for v in &mut x[base..base + angles] {
            *v = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        }
        if task.design_shift {
            for k in 0..2 {
                x[base + angles + k] = rng.random_range(0.0..task.environment_size[k]) - anchor[k];
            }
        }
    }
    x
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub runs_per_task: usize,
    pub adam: AdamOptConfig,
    pub cem: CemConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { runs_per_task: 8, adam: AdamOptConfig::default(), cem: CemConfig::default() }
    }
}

fn trace_records(trace: &OptTrace, task: &TaskSpec, source: Optimizer, run_id: u64) -> Vec<DesignRecord> {
    trace
        .records
        .iter()
        .filter(|r| r.cost.is_finite())
        .map(|r| DesignRecord {
            design: r.design.clone(),
            cost: r.cost,
            task: task.task,
            goal: task.goals.clone(),
            percentile: 0.0,
            source,
            run_id,
            iteration: r.iteration,
        })
        .collect()
}

/// Runs `cfg.runs_per_task` optimizations per task from flat tools, each for
/// a freshly sampled goal, and keeps every iterate. Runs that fail are logged
/// and skipped.
pub fn collect_dataset(
    tasks: &[TaskSpec],
    optimizer: Optimizer,
    cfg: &CollectConfig,
    sim: &SimConfig,
    seeds: &SeedStream,
) -> Result<Dataset, Error> {
    if cfg.runs_per_task == 0 {
        return Err(Error::Config("runs_per_task must be at least 1".into()));
    }
    let mut ds = Dataset::default();
    for task in tasks {
        for run in 0..cfg.runs_per_task {
            let run_id = run as u64;
            let stream = seeds.child(&format!("datagen-{}-{}", task.task, optimizer.as_str()), run_id);
            let goals = sample_goals(task, &mut stream.rng("goal", 0));
            let energy = EnergyModel::new(task.with_goals(goals), sim.clone())?;
            let trace = match optimizer {
                Optimizer::Adam => adam_design_opt(&flat_init(task), &energy, cfg.adam.steps, cfg.adam.lr),
                Optimizer::Cem => {
                    let cem = CemConfig { init_mean: Some(flat_init(task)), ..cfg.cem.clone() };
                    cem_design_opt(&cem, &energy, &stream)
                }
            };
            match trace {
                Ok(t) => {
                    if let Some(msg) = &t.aborted {
                        log::warn!("{} run {run} on {} stopped early: {msg}", optimizer.as_str(), task.task);
                    }
                    ds.records.extend(trace_records(&t, energy.task(), optimizer, run_id));
                }
                Err(e) => log::warn!("{} run {run} on {} failed: {e}", optimizer.as_str(), task.task),
            }
        }
    }
    Ok(percentile_rank(ds))
}

/// Sidecar describing how a dataset was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub root_seed: u64,
    pub optimizers: Vec<Optimizer>,
    pub collect: CollectConfig,
    pub sim: SimConfig,
    pub tasks: Vec<TaskSpec>,
    pub records: usize,
}

impl DatasetManifest {
    pub fn to_toml(&self) -> Result<String, Error> {
        toml::to_string(self).map_err(|e| Error::Dataset(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Dataset(e.to_string()))?;
        if m.format != DATASET_FORMAT || m.version != DATASET_VERSION {
            return Err(Error::Dataset(format!("unsupported manifest {} v{}", m.format, m.version)));
        }
        Ok(m)
    }
}
