//! Experiment orchestration: dataset generation, training, sampling, the
//! comparison experiments, CSV metrics, SVG plots and run manifests.

mod config;
mod experiments;
mod plot;
mod table;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fluidsim::{build_scene, TaskSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{
    DataSection, DatagenSection, ExperimentKind, ExperimentSection, HarnessConfig, RunSection, SampleSection,
};
pub use experiments::{run_experiment, LambdaRow};
pub use plot::{emit_plot, render, PlotKind};
pub use table::{median, write_cost_rows, write_csv, CostRow, RawTable, COST_COLUMNS};

use crate::baselines::{adam_design_opt, cem_design_opt};
use crate::datagen::{collect_dataset, filter_by_cutoff, flat_init, percentile_rank, sample_goals, Dataset, DatasetManifest};
use crate::datagen::{DATASET_FORMAT, DATASET_VERSION};
use crate::diffusion::{
    ode_sample, sde_sample_from, standard_normal, train_denoiser, Checkpoint, Conditioning, Denoiser, NoiseSchedule,
    Standardizer, TrainConfig,
};
use crate::energy::{Energy, EnergyModel};
use crate::guidance::ClassifierFree;
use crate::seeds::SeedStream;
use crate::Error;

/// What a command did, enough to rerun it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub root_seed: u64,
    pub seeds: Vec<u64>,
    /// SHA-256 over the resolved config and every input file.
    pub input_hash: String,
    /// Energy evaluations spent, in total and per method.
    pub evaluations: u64,
    pub wall_clock_secs: f64,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub evaluations_by_method: BTreeMap<String, u64>,
    pub config: HarnessConfig,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.toml";

    pub fn to_toml(&self) -> Result<String, Error> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }
}

/// Collects outputs and evaluation counts while a command runs.
pub(crate) struct RunLog {
    out: PathBuf,
    start: Instant,
    hasher: Sha256,
    outputs: Vec<String>,
    by_method: BTreeMap<String, u64>,
}

impl RunLog {
    pub(crate) fn new(cfg: &HarnessConfig, out: &Path) -> Result<Self, Error> {
        std::fs::create_dir_all(out)?;
        let mut hasher = Sha256::new();
        hasher.update(cfg.to_toml()?.as_bytes());
        Ok(Self { out: out.to_path_buf(), start: Instant::now(), hasher, outputs: Vec::new(), by_method: BTreeMap::new() })
    }

    pub(crate) fn input(&mut self, path: &Path) -> Result<(), Error> {
        self.hasher.update(std::fs::read(path)?);
        Ok(())
    }

    pub(crate) fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub(crate) fn wrote(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub(crate) fn spent(&mut self, method: &str, evaluations: u64) {
        *self.by_method.entry(method.to_string()).or_default() += evaluations;
    }

    pub(crate) fn finish(mut self, command: &str, cfg: &HarnessConfig) -> Result<RunManifest, Error> {
        self.wrote(RunManifest::FILE);
        let hash = self.hasher.finalize();
        let manifest = RunManifest {
            command: command.to_string(),
            root_seed: cfg.run.root_seed,
            seeds: (0..cfg.run.seeds).collect(),
            input_hash: hash.iter().map(|b| format!("{b:02x}")).collect(),
            evaluations: self.by_method.values().sum(),
            wall_clock_secs: self.start.elapsed().as_secs_f64(),
            outputs: self.outputs,
            evaluations_by_method: self.by_method,
            config: cfg.clone(),
        };
        std::fs::write(self.out.join(RunManifest::FILE), manifest.to_toml()?)?;
        Ok(manifest)
    }
}

/// Stream of evaluation seed `s`.
pub fn seed_stream(cfg: &HarnessConfig, s: u64) -> SeedStream {
    SeedStream::new(cfg.run.root_seed).child("eval-seed", s)
}

/// Goals of the evaluation task for seed `s`.
pub fn eval_task(cfg: &HarnessConfig, s: u64) -> TaskSpec {
    let task = cfg.task();
    let goals = sample_goals(&task, &mut seed_stream(cfg, s).rng("goal", 0));
    task.with_goals(goals)
}

/// Runs every configured optimizer on every configured task and ranks the
/// pooled records.
pub fn generate_dataset(cfg: &HarnessConfig) -> Result<Dataset, Error> {
    let seeds = SeedStream::new(cfg.run.root_seed);
    let tasks: Vec<TaskSpec> = cfg.datagen.tasks.iter().map(|&k| cfg.task_spec(k)).collect();
    let mut ds = Dataset::default();
    for &opt in &cfg.datagen.optimizers {
        ds.extend(collect_dataset(&tasks, opt, &cfg.datagen.collect(), &cfg.sim, &seeds)?);
    }
    Ok(percentile_rank(ds))
}

/// Records of `tasks` (all when empty) whose cost is below the `quantile`
/// of their costs.
pub fn select_training_data(ds: &Dataset, tasks: &[fluidsim::TaskKind], quantile: f64) -> Result<Dataset, Error> {
    let sel = if tasks.is_empty() { percentile_rank(ds.clone()) } else { ds.select_tasks(tasks) };
    if sel.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if quantile >= 1.0 {
        return Ok(sel);
    }
    let mut costs: Vec<f64> = sel.records.iter().map(|r| r.cost).collect();
    costs.sort_by(f64::total_cmp);
    let k = ((quantile * costs.len() as f64) as usize).clamp(1, costs.len() - 1);
    filter_by_cutoff(&sel, costs[k])
}

/// Fits the standardizer and trains a denoiser; returns the per-step losses too.
pub fn train_checkpoint(ds: &Dataset, train: &TrainConfig) -> Result<(Checkpoint, Vec<f64>), Error> {
    let dim = ds.records.first().ok_or(Error::EmptyDataset)?.design.len();
    let standardizer = Standardizer::fit(&ds.designs_flat(), dim)?;
    let schedule = NoiseSchedule::default();
    let trained = train_denoiser(&ds.training_set(&standardizer)?, train, &schedule)?;
    Ok((Checkpoint { net: trained.net, schedule, standardizer }, trained.losses))
}

/// Classifier-free guided samples for the first goal of `task`, as designs.
pub fn conditional_designs(
    ckpt: &Checkpoint,
    task: &TaskSpec,
    sample: &SampleSection,
    n: usize,
    seeds: &SeedStream,
) -> Result<Vec<Vec<f64>>, Error> {
    let d = ckpt.standardizer.dim();
    if d != task.design_dim() {
        return Err(Error::Shape(format!("checkpoint designs have {d} parameters, {} expects {}", task.task, task.design_dim())));
    }
    let cond = Conditioning::new(task.goals[0], sample.percentile)?;
    let den: Box<dyn Denoiser + '_> = if ckpt.net.config.conditional {
        Box::new(ClassifierFree { net: &ckpt.net, cond, lambda: sample.lambda })
    } else {
        Box::new(ckpt.net.with_conditioning(None))
    };
    decode(den.as_ref(), ckpt, sample, n, seeds)
}

pub(crate) fn decode(
    den: &dyn Denoiser,
    ckpt: &Checkpoint,
    sample: &SampleSection,
    n: usize,
    seeds: &SeedStream,
) -> Result<Vec<Vec<f64>>, Error> {
    let d = den.dim();
    let x1 = standard_normal(n * d, &mut seeds.rng("x1", 0));
    let z = if sample.sde {
        sde_sample_from(den, &ckpt.schedule, sample.steps, &x1, Some(&mut seeds.rng("sde", 0)))?
    } else {
        ode_sample(den, &ckpt.schedule, sample.steps, &x1)?
    };
    Ok(ckpt.standardizer.inverse(&z).chunks(d).map(<[f64]>::to_vec).collect())
}

/// Costs in order, failed evaluations as `+inf`.
pub fn costs_of(energy: &dyn Energy, designs: &[Vec<f64>]) -> Vec<f64> {
    energy
        .cost_many(designs)
        .into_iter()
        .map(|c| c.ok().filter(|c| c.is_finite()).unwrap_or(f64::INFINITY))
        .collect()
}

/// Rows of the running best cost at every budget the trace reaches, plus its end.
pub fn budget_rows(seed: u64, method: &str, costs: &[f64], budgets: &[usize]) -> Vec<CostRow> {
    let mut best = f64::INFINITY;
    let running: Vec<f64> = costs
        .iter()
        .map(|&c| {
            best = best.min(c);
            best
        })
        .collect();
    let mut marks: Vec<usize> = budgets.iter().copied().filter(|&b| b >= 1 && b <= costs.len()).collect();
    if !costs.is_empty() && !marks.contains(&costs.len()) {
        marks.push(costs.len());
    }
    marks.sort_unstable();
    marks.dedup();
    marks
        .into_iter()
        .map(|b| CostRow { seed, method: method.to_string(), evaluations: b as u64, best_cost: running[b - 1] })
        .collect()
}

pub(crate) fn check_count(method: &str, counted: u64, reported: u64) -> Result<(), Error> {
    if counted != reported {
        return Err(Error::Accounting(format!("{method}: counter says {counted}, rows say {reported}")));
    }
    Ok(())
}

/// CEM from a zero-mean, unit-variance start and Adam from a flat tool, on
/// every evaluation seed.
pub(crate) fn baseline_rows(cfg: &HarnessConfig, log: &mut RunLog, budget: usize) -> Result<Vec<CostRow>, Error> {
    let mut rows = Vec::new();
    for s in 0..cfg.run.seeds {
        let task = eval_task(cfg, s);
        let seeds = seed_stream(cfg, s);

        let energy = EnergyModel::new(task.clone(), cfg.sim.clone())?;
        let iterations = budget.div_ceil(cfg.cem.population).max(1);
        let cem = crate::baselines::CemConfig { iterations, ..cfg.cem.clone() };
        let trace = cem_design_opt(&cem, &energy, &seeds.child("cem", 0))?;
        let costs: Vec<f64> = trace.records.iter().take(budget).map(|r| r.cost).collect();
        check_count("cem", energy.evaluations(), trace.records.len() as u64)?;
        log.spent("cem", energy.evaluations());
        rows.extend(budget_rows(s, "cem", &costs, &cfg.experiment.budgets));

        let energy = EnergyModel::new(task.clone(), cfg.sim.clone())?;
        let steps = budget.saturating_sub(1).min(cfg.adam.steps.max(1));
        let trace = adam_design_opt(&flat_init(&task), &energy, steps, cfg.adam.lr)?;
        let costs: Vec<f64> = trace.records.iter().map(|r| r.cost).collect();
        check_count("adam", energy.evaluations(), costs.len() as u64)?;
        log.spent("adam", energy.evaluations());
        rows.extend(budget_rows(s, "adam", &costs, &cfg.experiment.budgets));
    }
    Ok(rows)
}

/// One row per scene element: particles, segments and goals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRow {
    pub kind: String,
    pub x: f64,
    pub y: f64,
    pub x2: f64,
    pub y2: f64,
}

pub const SCENE_COLUMNS: [&str; 5] = ["kind", "x", "y", "x2", "y2"];

/// The scene of `design` with particles at `positions` (the initial fluid when `None`).
pub fn scene_rows(design: &[f64], task: &TaskSpec, positions: Option<&[[f64; 2]]>) -> Result<Vec<SceneRow>, Error> {
    let scene = build_scene(design, task)?;
    let mut rows: Vec<SceneRow> = scene
        .segments
        .iter()
        .map(|s| {
            let kind = match s.kind {
                fluidsim::SegmentKind::Tool(_) => "tool",
                fluidsim::SegmentKind::Obstacle => "obstacle",
                fluidsim::SegmentKind::Wall => "wall",
            };
            SceneRow { kind: kind.into(), x: s.a[0], y: s.a[1], x2: s.b[0], y2: s.b[1] }
        })
        .collect();
    let initial = scene.particles.positions();
    for p in positions.unwrap_or(&initial) {
        rows.push(SceneRow { kind: "particle".into(), x: p[0], y: p[1], x2: p[0], y2: p[1] });
    }
    for g in &task.goals {
        rows.push(SceneRow { kind: "goal".into(), x: g[0], y: g[1], x2: g[0], y2: g[1] });
    }
    Ok(rows)
}

/// `datagen`: writes `dataset.jsonl` and its sidecar `dataset.toml`.
pub fn run_datagen(cfg: &HarnessConfig, out: &Path) -> Result<RunManifest, Error> {
    let mut log = RunLog::new(cfg, out)?;
    let ds = generate_dataset(cfg)?;
    ds.write_jsonl(&log.path("dataset.jsonl"))?;
    log.wrote("dataset.jsonl");
    let side = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        root_seed: cfg.run.root_seed,
        optimizers: cfg.datagen.optimizers.clone(),
        collect: cfg.datagen.collect(),
        sim: cfg.sim.clone(),
        tasks: cfg.datagen.tasks.iter().map(|&k| cfg.task_spec(k)).collect(),
        records: ds.len(),
    };
    std::fs::write(log.path("dataset.toml"), side.to_toml()?)?;
    log.wrote("dataset.toml");
    // kept records per optimizer; evaluations that failed leave no record
    for opt in &cfg.datagen.optimizers {
        let n = ds.records.iter().filter(|r| r.source == *opt).count() as u64;
        log.spent(opt.as_str(), n);
    }
    log.finish("datagen", cfg)
}

/// `train`: writes `model.ckpt` and the loss curve.
pub fn run_train(cfg: &HarnessConfig, out: &Path) -> Result<RunManifest, Error> {
    let mut log = RunLog::new(cfg, out)?;
    let path = cfg.dataset_path()?;
    log.input(path)?;
    let ds = select_training_data(&Dataset::read_jsonl(path)?, &cfg.data.tasks, cfg.data.cutoff_quantile)?;
    let (ckpt, losses) = train_checkpoint(&ds, &cfg.train)?;
    ckpt.save(&log.path("model.ckpt"))?;
    log.wrote("model.ckpt");
    #[derive(Serialize)]
    struct Loss {
        step: usize,
        loss: f64,
    }
    let losses: Vec<Loss> = losses.iter().enumerate().map(|(step, &loss)| Loss { step, loss }).collect();
    write_csv(&log.path("losses.csv"), &losses, &["step", "loss"])?;
    log.wrote("losses.csv");
    log.finish("train", cfg)
}

/// `sample`: conditional samples for every evaluation seed, with their costs.
pub fn run_sample(cfg: &HarnessConfig, out: &Path) -> Result<RunManifest, Error> {
    let mut log = RunLog::new(cfg, out)?;
    let path = cfg.checkpoint_path()?;
    log.input(path)?;
    let ckpt = Checkpoint::load(path)?;
    #[derive(Serialize)]
    struct Sample {
        seed: u64,
        index: usize,
        cost: f64,
        design: String,
    }
    let mut rows = Vec::new();
    for s in 0..cfg.run.seeds {
        let task = eval_task(cfg, s);
        let designs = conditional_designs(&ckpt, &task, &cfg.sample, cfg.sample.samples, &seed_stream(cfg, s))?;
        let energy = EnergyModel::new(task, cfg.sim.clone())?;
        let costs = costs_of(&energy, &designs);
        log.spent("sample", energy.evaluations());
        for (index, (d, cost)) in designs.iter().zip(costs).enumerate() {
            let design = d.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ");
            rows.push(Sample { seed: s, index, cost, design });
        }
    }
    write_csv(&log.path("samples.csv"), &rows, &["seed", "index", "cost", "design"])?;
    log.wrote("samples.csv");
    log.finish("sample", cfg)
}

/// `optimize`: the CEM and Adam baselines with the largest configured budget.
pub fn run_optimize(cfg: &HarnessConfig, out: &Path) -> Result<RunManifest, Error> {
    let mut log = RunLog::new(cfg, out)?;
    let budget = cfg.experiment.budgets.iter().copied().max().unwrap_or(cfg.adam.steps + 1);
    let rows = baseline_rows(cfg, &mut log, budget)?;
    write_cost_rows(&log.path("results.csv"), &rows)?;
    log.wrote("results.csv");
    emit_plot(&log.path("results.csv"), PlotKind::Line)?;
    log.wrote("results.svg");
    log.finish("optimize", cfg)
}
