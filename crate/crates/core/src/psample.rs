//! Particle search over the base distribution: decode noise vectors cheaply,
//! weight them by `exp(-E / tau)`, resample, perturb, repeat.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{ode_sample, Denoiser, NoiseSchedule};
use crate::energy::Energy;
use crate::seeds::SeedStream;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resampling {
    Multinomial,
    Systematic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsConfig {
    /// Initial particle count `N`.
    pub n: usize,
    /// Resampling rounds `K`.
    pub k: usize,
    pub sigma_noise: f64,
    pub tau: f64,
    /// Sampler steps of the quick decode.
    pub m_steps: usize,
    /// Sampler steps of the final re-decode.
    pub full_steps: usize,
    /// Candidates re-decoded with `full_steps` at the end.
    pub redecode_top: usize,
    pub resampling: Resampling,
}

impl Default for PsConfig {
    fn default() -> Self {
        Self {
            n: 16,
            k: 3,
            sigma_noise: 0.25,
            tau: 0.1,
            m_steps: 1,
            full_steps: 50,
            redecode_top: 4,
            resampling: Resampling::Multinomial,
        }
    }
}

impl PsConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.n == 0 || self.m_steps == 0 || self.full_steps == 0 {
            return Err(Error::Config("particle search needs n, m_steps and full_steps >= 1".into()));
        }
        if !(self.tau > 0.0) || !(self.sigma_noise >= 0.0) {
            return Err(Error::Config("particle search needs tau > 0 and sigma_noise >= 0".into()));
        }
        Ok(())
    }

    /// Size of the decoded set after the last round: every round resamples as
    /// many particles as have been decoded so far, so the set doubles.
    pub fn decoded_count(&self) -> usize {
        self.n << self.k
    }

    fn redecodes(&self) -> usize {
        if self.m_steps < self.full_steps {
            self.redecode_top.min(self.decoded_count())
        } else {
            0
        }
    }

    /// Energy evaluations of one search when decoding itself costs none.
    pub fn expected_evaluations(&self) -> u64 {
        (self.decoded_count() + self.redecodes()) as u64
    }
}

/// Every particle decoded during a search.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ensemble {
    pub dim: usize,
    /// Base-space points, one per decoded design.
    pub s1: Vec<Vec<f64>>,
    pub s0: Vec<Vec<f64>>,
    /// Cost of each decoded design; failed evaluations are `+inf`.
    pub costs: Vec<f64>,
    /// Round in which each particle was decoded.
    pub round: Vec<usize>,
    /// Normalized weights from the last round.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PsResult {
    pub best: Vec<f64>,
    pub best_cost: f64,
    pub ensemble: Ensemble,
    /// Full-step re-decodes of the top candidates, with their costs.
    pub redecoded: Vec<(Vec<f64>, f64)>,
    /// Energy evaluations spent by this search.
    pub evaluations: u64,
}

/// Decodes base points with `m_steps` of the deterministic sampler.
pub fn quick_decode(den: &dyn Denoiser, schedule: &NoiseSchedule, x1: &[f64], m_steps: usize) -> Result<Vec<f64>, Error> {
    ode_sample(den, schedule, m_steps, x1)
}

/// Normalized `exp(-c / tau)`; infinite costs get zero weight.
pub fn importance_weights(costs: &[f64], tau: f64) -> Result<Vec<f64>, Error> {
    let best = costs.iter().copied().filter(|c| c.is_finite()).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::AllParticlesFailed);
    }
    let w: Vec<f64> = costs
        .iter()
        .map(|&c| if c.is_finite() { (-(c - best) / tau).exp() } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// `count` atom indices drawn from normalized `weights`.
pub fn resample_indices(weights: &[f64], count: usize, scheme: Resampling, rng: &mut impl Rng) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    let pick = |u: f64| cdf.partition_point(|&c| c <= u * acc).min(last);
    match scheme {
        Resampling::Multinomial => (0..count).map(|_| pick(rng.random::<f64>())).collect(),
        Resampling::Systematic => {
            let u0: f64 = rng.random();
            (0..count).map(|i| pick((i as f64 + u0) / count as f64)).collect()
        }
    }
}

fn evaluate(energy: &dyn Energy, designs: &[Vec<f64>]) -> Vec<f64> {
    energy
        .cost_many(designs)
        .into_iter()
        .map(|r| match r {
            Ok(c) if c.is_finite() => c,
            Ok(_) => f64::INFINITY,
            Err(e) => {
                log::warn!("particle evaluation failed: {e}");
                f64::INFINITY
            }
        })
        .collect()
}

fn decode_rows(den: &dyn Denoiser, schedule: &NoiseSchedule, x1: &[Vec<f64>], steps: usize) -> Result<Vec<Vec<f64>>, Error> {
    let d = den.dim();
    let flat: Vec<f64> = x1.iter().flatten().copied().collect();
    let out = quick_decode(den, schedule, &flat, steps)?;
    Ok(out.chunks(d).map(<[f64]>::to_vec).collect())
}

/// Runs the search. Randomness comes from per-particle streams of `seeds`, so
/// results do not depend on evaluation order.
pub fn particle_search(
    energy: &dyn Energy,
    den: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &PsConfig,
    seeds: &SeedStream,
) -> Result<PsResult, Error> {
    cfg.validate()?;
    let d = den.dim();
    let start = energy.evaluations();
    let mut ens = Ensemble { dim: d, ..Ensemble::default() };
    let mut batch: Vec<Vec<f64>> = (0..cfg.n)
        .map(|i| {
            let mut r = seeds.rng("ps-init", i as u64);
            (0..d).map(|_| r.sample(StandardNormal)).collect()
        })
        .collect();
    for k in 0..=cfg.k {
        let s0k = decode_rows(den, schedule, &batch, cfg.m_steps)?;
        let costs = evaluate(energy, &s0k);
        ens.round.extend(std::iter::repeat_n(k, batch.len()));
        ens.s1.append(&mut batch);
        ens.s0.extend(s0k);
        ens.costs.extend(costs);
        ens.weights = importance_weights(&ens.costs, cfg.tau)?;
        if k == cfg.k {
            break;
        }
        let picks = resample_indices(&ens.weights, ens.s1.len(), cfg.resampling, &mut seeds.rng("ps-resample", k as u64));
        batch = picks
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                let mut r = seeds.rng("ps-perturb", ((k as u64) << 32) | i as u64);
                ens.s1[a].iter().map(|&v| v + cfg.sigma_noise * r.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect();
    }

    let mut order: Vec<usize> = (0..ens.costs.len()).collect();
    order.sort_by(|&a, &b| ens.costs[a].total_cmp(&ens.costs[b]).then(a.cmp(&b)));
    let top: Vec<Vec<f64>> = order[..cfg.redecodes()].iter().map(|&i| ens.s1[i].clone()).collect();
    let redecoded_designs = if top.is_empty() { Vec::new() } else { decode_rows(den, schedule, &top, cfg.full_steps)? };
    let redecoded_costs = evaluate(energy, &redecoded_designs);
    let redecoded: Vec<(Vec<f64>, f64)> = redecoded_designs.into_iter().zip(redecoded_costs).collect();

    let (mut best, mut best_cost) = (ens.s0[order[0]].clone(), ens.costs[order[0]]);
    for (x, c) in &redecoded {
        if *c < best_cost {
            best = x.clone();
            best_cost = *c;
        }
    }
    if !best_cost.is_finite() {
        return Err(Error::AllParticlesFailed);
    }
    Ok(PsResult { best, best_cost, ensemble: ens, redecoded, evaluations: energy.evaluations() - start })
}
