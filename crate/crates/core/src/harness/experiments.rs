//! The five experiment kinds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::*;
use crate::datagen::Dataset;
use crate::energy::Reparameterized;
use crate::guidance::{EnergyGuided, GuidanceConfig, Variant};
use crate::psample::particle_search;

/// Runs the experiment named in `cfg` and writes its artifacts to `out`.
pub fn run_experiment(cfg: &HarnessConfig, out: &Path) -> Result<RunManifest, Error> {
    let mut log = RunLog::new(cfg, out)?;
    let (rows, plot) = match cfg.run.experiment {
        ExperimentKind::Efficiency => (efficiency(cfg, &mut log)?, PlotKind::Line),
        ExperimentKind::DataQuality => (data_quality(cfg, &mut log)?, PlotKind::Bar),
        ExperimentKind::ParticleSampling => (particle_sampling(cfg, &mut log)?, PlotKind::Bar),
        ExperimentKind::LambdaSweep => (lambda_sweep(cfg, &mut log)?, PlotKind::Bar),
        ExperimentKind::Gallery => (gallery(cfg, &mut log)?, PlotKind::Bar),
    };
    write_cost_rows(&log.path("results.csv"), &rows)?;
    log.wrote("results.csv");
    emit_plot(&log.path("results.csv"), plot)?;
    log.wrote("results.svg");
    log.finish(&format!("experiment {}", cfg.run.experiment.as_str()), cfg)
}

fn load_checkpoint(cfg: &HarnessConfig, log: &mut RunLog) -> Result<Checkpoint, Error> {
    let path = cfg.checkpoint_path()?;
    log.input(path)?;
    Checkpoint::load(path)
}

fn load_dataset(cfg: &HarnessConfig, log: &mut RunLog) -> Result<Dataset, Error> {
    let path = cfg.dataset_path()?;
    log.input(path)?;
    Dataset::read_jsonl(path)
}

/// Best cost of conditional samples, one row per seed.
fn sampling_rows(cfg: &HarnessConfig, log: &mut RunLog, ckpt: &Checkpoint, method: &str) -> Result<Vec<CostRow>, Error> {
    let mut rows = Vec::new();
    for s in 0..cfg.run.seeds {
        let task = eval_task(cfg, s);
        let designs = conditional_designs(ckpt, &task, &cfg.sample, cfg.sample.samples, &seed_stream(cfg, s))?;
        let energy = EnergyModel::new(task, cfg.sim.clone())?;
        let costs = costs_of(&energy, &designs);
        check_count(method, energy.evaluations(), costs.len() as u64)?;
        log.spent(method, energy.evaluations());
        let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
        rows.push(CostRow { seed: s, method: method.into(), evaluations: costs.len() as u64, best_cost: best });
    }
    Ok(rows)
}

/// Best cost against evaluations for CEM, Adam, conditional sampling and
/// particle search.
fn efficiency(cfg: &HarnessConfig, log: &mut RunLog) -> Result<Vec<CostRow>, Error> {
    let ckpt = load_checkpoint(cfg, log)?;
    let budget = cfg.experiment.budgets.iter().copied().max().unwrap_or(cfg.sample.samples);
    let mut rows = baseline_rows(cfg, log, budget)?;
    for s in 0..cfg.run.seeds {
        let task = eval_task(cfg, s);
        let seeds = seed_stream(cfg, s);
        let designs = conditional_designs(&ckpt, &task, &cfg.sample, cfg.sample.samples, &seeds)?;
        let energy = EnergyModel::new(task.clone(), cfg.sim.clone())?;
        let costs = costs_of(&energy, &designs);
        check_count("diffusion", energy.evaluations(), costs.len() as u64)?;
        log.spent("diffusion", energy.evaluations());
        rows.extend(budget_rows(s, "diffusion", &costs, &cfg.experiment.budgets));

        let r = particle_run(cfg, &ckpt, &task, &seeds)?;
        log.spent("particle", r.1);
        rows.push(CostRow { seed: s, method: "particle".into(), evaluations: r.1, best_cost: r.0 });
    }
    Ok(rows)
}

/// Best cost and evaluations of one particle search in standardized coordinates.
fn particle_run(cfg: &HarnessConfig, ckpt: &Checkpoint, task: &TaskSpec, seeds: &SeedStream) -> Result<(f64, u64), Error> {
    let energy = EnergyModel::new(task.clone(), cfg.sim.clone())?;
    let std = &ckpt.standardizer;
    let re = Reparameterized { inner: &energy, mean: &std.mean, scale: &std.scale };
    let cond = Conditioning::new(task.goals[0], cfg.sample.percentile)?;
    let den = ClassifierFree { net: &ckpt.net, cond, lambda: cfg.sample.lambda };
    let r = particle_search(&re, &den, &ckpt.schedule, &cfg.particle, &seeds.child("particle", 0))?;
    check_count("particle", energy.evaluations(), r.evaluations)?;
    Ok((r.best_cost, r.evaluations))
}

/// Particle search against best-of-i.i.d. samples with the same evaluations.
fn particle_sampling(cfg: &HarnessConfig, log: &mut RunLog) -> Result<Vec<CostRow>, Error> {
    let ckpt = load_checkpoint(cfg, log)?;
    let mut rows = Vec::new();
    for s in 0..cfg.run.seeds {
        let task = eval_task(cfg, s);
        let seeds = seed_stream(cfg, s);
        let (best, n) = particle_run(cfg, &ckpt, &task, &seeds)?;
        log.spent("particle", n);
        rows.push(CostRow { seed: s, method: "particle".into(), evaluations: n, best_cost: best });

        let sample = SampleSection { steps: cfg.particle.full_steps, ..cfg.sample.clone() };
        let designs = conditional_designs(&ckpt, &task, &sample, n as usize, &seeds.child("gaussian", 0))?;
        let energy = EnergyModel::new(task, cfg.sim.clone())?;
        let costs = costs_of(&energy, &designs);
        check_count("gaussian", energy.evaluations(), n)?;
        log.spent("gaussian", n);
        let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
        rows.push(CostRow { seed: s, method: "gaussian".into(), evaluations: n, best_cost: best });
    }
    Ok(rows)
}

fn monotonicity(medians: &[f64]) -> &'static str {
    let up = medians.windows(2).all(|w| w[1] >= w[0]);
    let down = medians.windows(2).all(|w| w[1] <= w[0]);
    match (up, down) {
        (true, true) => "constant",
        (true, false) => "nondecreasing",
        (false, true) => "nonincreasing",
        (false, false) => "not monotone",
    }
}

/// Models trained on different task sets and cost cutoffs, each sampled
/// conditionally on the evaluation task.
fn data_quality(cfg: &HarnessConfig, log: &mut RunLog) -> Result<Vec<CostRow>, Error> {
    let ds = load_dataset(cfg, log)?;
    let task_sets = if cfg.experiment.task_sets.is_empty() { vec![vec![cfg.run.task]] } else { cfg.experiment.task_sets.clone() };
    let mut cutoffs = cfg.experiment.cutoffs.clone();
    cutoffs.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    let mut report = String::from("median best cost per training set\n");
    for set in &task_sets {
        let name = set.iter().map(|t| t.as_str()).collect::<Vec<_>>().join("+");
        let mut medians = Vec::new();
        for &q in &cutoffs {
            let method = format!("{name}@{q:.2}");
            let data = select_training_data(&ds, set, q)?;
            let (ckpt, _) = train_checkpoint(&data, &cfg.train)?;
            let r = sampling_rows(cfg, log, &ckpt, &method)?;
            let m = median(&mut r.iter().map(|r| r.best_cost).collect::<Vec<_>>());
            let _ = writeln!(report, "{method}: {m:.6} from {} records", data.len());
            medians.push(m);
            rows.extend(r);
        }
        if cutoffs.len() > 1 {
            let _ = writeln!(report, "{name}: median best cost against cutoff is {}", monotonicity(&medians));
        }
    }
    std::fs::write(log.path("report.txt"), report)?;
    log.wrote("report.txt");
    Ok(rows)
}

/// Summary of one guidance scale and variant over all seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub variant: String,
    pub median_best_cost: f64,
    /// Fraction of samples whose design and cost are finite.
    pub finite_fraction: f64,
    /// Largest `|eps_guided| / |eps|` seen during sampling.
    pub max_norm_ratio: f64,
    pub status: String,
}

/// Energy guidance of the unconditional model at every scale and variant.
fn lambda_sweep(cfg: &HarnessConfig, log: &mut RunLog) -> Result<Vec<CostRow>, Error> {
    let ckpt = load_checkpoint(cfg, log)?;
    let den = ckpt.net.with_conditioning(None);
    let std = &ckpt.standardizer;
    let sample = SampleSection { steps: cfg.experiment.sweep_steps, sde: false, ..cfg.sample.clone() };
    let n = cfg.experiment.sweep_samples;
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for &lambda in &cfg.experiment.lambdas {
        for &variant in &cfg.experiment.variants {
            let method = format!("{}@{lambda}", variant.as_str());
            let gcfg = GuidanceConfig { tau: cfg.experiment.energy_tau, ..GuidanceConfig::energy(lambda, variant) };
            if let Err(e) = gcfg.validate() {
                table.push(LambdaRow::failed(lambda, variant, format!("invalid: {e}")));
                continue;
            }
            let mut bests = Vec::new();
            let (mut finite, mut total, mut ratio) = (0usize, 0usize, 0.0f64);
            let mut status = String::from("ok");
            for s in 0..cfg.run.seeds {
                let task = eval_task(cfg, s);
                let energy = EnergyModel::new(task, cfg.sim.clone())?;
                let re = Reparameterized { inner: &energy, mean: &std.mean, scale: &std.scale };
                let guided = EnergyGuided::new(&den, &re, ckpt.schedule, gcfg.clone())?;
                let designs = match decode(&guided, &ckpt, &sample, n, &seed_stream(cfg, s).child("sweep", 0)) {
                    Ok(d) => d,
                    Err(e) => {
                        status = format!("failed: {e}");
                        log.spent(&method, energy.evaluations());
                        break;
                    }
                };
                ratio = ratio.max(guided.max_norm_ratio());
                let costs = costs_of(&energy, &designs);
                total += costs.len();
                finite += designs.iter().zip(&costs).filter(|(d, c)| c.is_finite() && d.iter().all(|v| v.is_finite())).count();
                log.spent(&method, energy.evaluations());
                let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
                bests.push(best);
                rows.push(CostRow { seed: s, method: method.clone(), evaluations: energy.evaluations(), best_cost: best });
            }
            table.push(LambdaRow {
                lambda,
                variant: variant.as_str().into(),
                median_best_cost: median(&mut bests),
                finite_fraction: if total == 0 { 0.0 } else { finite as f64 / total as f64 },
                max_norm_ratio: ratio,
                status,
            });
        }
    }
    write_csv(
        &log.path("table.csv"),
        &table,
        &["lambda", "variant", "median_best_cost", "finite_fraction", "max_norm_ratio", "status"],
    )?;
    log.wrote("table.csv");
    Ok(rows)
}

impl LambdaRow {
    fn failed(lambda: f64, variant: Variant, status: String) -> Self {
        Self {
            lambda,
            variant: variant.as_str().into(),
            median_best_cost: f64::NAN,
            finite_fraction: 0.0,
            max_norm_ratio: 0.0,
            status,
        }
    }
}

/// Initial and final scenes of the best conditional sample for every seed.
fn gallery(cfg: &HarnessConfig, log: &mut RunLog) -> Result<Vec<CostRow>, Error> {
    let ckpt = load_checkpoint(cfg, log)?;
    let mut rows = Vec::new();
    let mut written = BTreeMap::new();
    for s in 0..cfg.run.seeds {
        let task = eval_task(cfg, s);
        let designs = conditional_designs(&ckpt, &task, &cfg.sample, cfg.sample.samples, &seed_stream(cfg, s))?;
        let energy = EnergyModel::new(task.clone(), cfg.sim.clone())?;
        let costs = costs_of(&energy, &designs);
        log.spent("gallery", energy.evaluations());
        let (i, best) = costs.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).ok_or(Error::EmptyDataset)?;
        rows.push(CostRow { seed: s, method: "gallery".into(), evaluations: costs.len() as u64, best_cost: best });
        let last = energy.final_state(&designs[i])?.positions();
        for (stage, positions) in [("initial", None), ("final", Some(last.as_slice()))] {
            let name = format!("scene-{s}-{stage}.csv");
            write_csv(&log.path(&name), &scene_rows(&designs[i], &task, positions)?, &SCENE_COLUMNS)?;
            let svg = emit_plot(&log.path(&name), PlotKind::Scene)?;
            written.insert(name, svg);
        }
    }
    for (csv, svg) in written {
        log.wrote(&csv);
        log.wrote(&svg.file_name().unwrap().to_string_lossy());
    }
    Ok(rows)
}
