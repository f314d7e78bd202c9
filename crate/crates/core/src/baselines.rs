//! Direct design optimizers: Adam on the exact gradient and the cross-entropy
//! method. Both serve as comparison baselines and as training data sources.

use std::time::Instant;

use adcore::{adam_step, AdamConfig, AdamState};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::energy::Energy;
use crate::seeds::SeedStream;
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub design: Vec<f64>,
    pub cost: f64,
}

/// Every design an optimizer evaluated, in order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub records: Vec<TraceRecord>,
    pub wall_clock_secs: f64,
    pub evaluations: u64,
    /// Set when the run stopped early.
    pub aborted: Option<String>,
}

impl OptTrace {
    pub fn best(&self) -> Option<&TraceRecord> {
        self.records.iter().min_by(|a, b| a.cost.total_cmp(&b.cost))
    }

    /// Running minimum of the recorded costs.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut m = f64::INFINITY;
        self.records
            .iter()
            .map(|r| {
                m = m.min(r.cost);
                m
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamOptConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for AdamOptConfig {
    fn default() -> Self {
        Self { steps: 300, lr: 0.05 }
    }
}

/// `steps` Adam updates from `init`. The trace holds `steps + 1` iterates;
/// the last one costs a plain evaluation. A failed or non-finite gradient
/// stops the run and leaves a partial trace.
pub fn adam_design_opt(init: &[f64], energy: &dyn Energy, steps: usize, lr: f64) -> Result<OptTrace, Error> {
    if steps == 0 {
        return Err(Error::Config("adam needs at least one step".into()));
    }
    if init.len() != energy.dim() {
        return Err(Error::Shape(format!("init of length {} for a {}-dim design", init.len(), energy.dim())));
    }
    let start = (Instant::now(), energy.evaluations());
    let mut state = AdamState::new(AdamConfig::with_lr(lr), &[init.len()]);
    let mut x = init.to_vec();
    let mut trace = OptTrace::default();
    for it in 0..steps {
        let step = energy.cost_and_gradient(&x).and_then(|(c, g)| {
            if !c.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient);
            }
            Ok((c, g))
        });
        let (cost, grad) = match step {
            Ok(v) => v,
            Err(e) => {
                trace.aborted = Some(format!("step {it}: {e}"));
                break;
            }
        };
        trace.records.push(TraceRecord { iteration: it, design: x.clone(), cost });
        if let Err(e) = adam_step(&mut x, &grad, &mut state) {
            trace.aborted = Some(format!("step {it}: {e}"));
            break;
        }
    }
    if trace.aborted.is_none() {
        match energy.cost(&x) {
            Ok(cost) => trace.records.push(TraceRecord { iteration: steps, design: x, cost }),
            Err(e) => trace.aborted = Some(format!("final evaluation: {e}")),
        }
    }
    trace.wall_clock_secs = start.0.elapsed().as_secs_f64();
    trace.evaluations = energy.evaluations() - start.1;
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub population: usize,
    pub elite_fraction: f64,
    pub iterations: usize,
    /// Starting mean; zeros when absent.
    pub init_mean: Option<Vec<f64>>,
    /// Starting standard deviation of every coordinate.
    pub init_std: f64,
    /// Lower bound on every variance.
    pub cov_floor: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self { population: 32, elite_fraction: 0.25, iterations: 30, init_mean: None, init_std: 1.0, cov_floor: 1e-4 }
    }
}

impl CemConfig {
    pub fn elite_count(&self) -> usize {
        ((self.elite_fraction * self.population as f64).round() as usize).clamp(1, self.population)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.population < 2 || !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(Error::Config("cem needs population >= 2 and elite_fraction in (0, 1]".into()));
        }
        if !(self.cov_floor > 0.0) || !(self.init_std > 0.0) {
            return Err(Error::Config("cem needs cov_floor > 0 and init_std > 0".into()));
        }
        Ok(())
    }
}

/// Mean and floored diagonal variance of the `elites` lowest-cost members.
pub fn cem_refit(population: &[Vec<f64>], costs: &[f64], elites: usize, floor: f64) -> (Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
    let chosen = &order[..elites.min(order.len())];
    let d = population[0].len();
    let n = chosen.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in chosen {
        for (m, v) in mean.iter_mut().zip(&population[i]) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for &i in chosen {
        for ((s, v), m) in var.iter_mut().zip(&population[i]).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    (mean, var.into_iter().map(|v| v.max(floor)).collect())
}

/// Cross-entropy method with a diagonal Gaussian. Population members that
/// fail to evaluate are recorded with infinite cost.
pub fn cem_design_opt(cfg: &CemConfig, energy: &dyn Energy, seeds: &SeedStream) -> Result<OptTrace, Error> {
    cfg.validate()?;
    let d = energy.dim();
    let mut mean = cfg.init_mean.clone().unwrap_or_else(|| vec![0.0; d]);
    if mean.len() != d {
        return Err(Error::Shape(format!("cem mean of length {} for a {d}-dim design", mean.len())));
    }
    let mut var = vec![(cfg.init_std * cfg.init_std).max(cfg.cov_floor); d];
    let start = (Instant::now(), energy.evaluations());
    let mut trace = OptTrace::default();
    for it in 0..cfg.iterations {
        let mut rng = seeds.rng("cem-population", it as u64);
        let pop: Vec<Vec<f64>> = (0..cfg.population)
            .map(|_| {
                mean.iter()
                    .zip(&var)
                    .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let costs: Vec<f64> = energy
            .cost_many(&pop)
            .into_iter()
            .map(|r| r.ok().filter(|c| c.is_finite()).unwrap_or(f64::INFINITY))
            .collect();
        for (x, &c) in pop.iter().zip(&costs) {
            trace.records.push(TraceRecord { iteration: it, design: x.clone(), cost: c });
        }
        (mean, var) = cem_refit(&pop, &costs, cfg.elite_count(), cfg.cov_floor);
    }
    trace.wall_clock_secs = start.0.elapsed().as_secs_f64();
    trace.evaluations = energy.evaluations() - start.1;
    Ok(trace)
}
