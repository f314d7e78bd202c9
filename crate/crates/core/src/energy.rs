//! Task cost: render a design, roll it out, score the final particle positions.

use std::sync::atomic::{AtomicU64, Ordering};

use fluidsim::{build_scene, design_vjp, rollout, ParticleState, RolloutTape, SimConfig, TaskSpec};
use rayon::prelude::*;

use crate::Error;

/// Cost convention recorded in manifests: the particle-mean RBF score, negated
/// so that lower is better.
pub const COST_CONVENTION: &str = "negated-mean-rbf";

/// Anything the samplers and optimizers can minimize.
pub trait Energy: Sync {
    fn dim(&self) -> usize;

    /// One cost evaluation.
    fn cost(&self, design: &[f64]) -> Result<f64, Error>;

    /// Cost and gradient from a single evaluation.
    fn cost_and_gradient(&self, design: &[f64]) -> Result<(f64, Vec<f64>), Error>;

    /// Number of cost or gradient evaluations so far.
    fn evaluations(&self) -> u64;

    /// Costs of many designs, evaluated in parallel and returned in input order.
    fn cost_many(&self, designs: &[Vec<f64>]) -> Vec<Result<f64, Error>> {
        designs.par_iter().map(|d| self.cost(d)).collect()
    }
}

/// Thread-safe evaluation counters.
#[derive(Debug, Default)]
pub struct EvalCounter {
    total: AtomicU64,
    gradients: AtomicU64,
}

impl EvalCounter {
    pub fn record_cost(&self) {
        self.total.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_gradient(&self) {
        self.total.fetch_add(1, Ordering::Relaxed);
        self.gradients.fetch_add(1, Ordering::Relaxed);
    }

    /// Every evaluation, with or without a gradient.
    pub fn total(&self) -> u64 {
        self.total.load(Ordering::Relaxed)
    }

    pub fn gradients(&self) -> u64 {
        self.gradients.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.total.store(0, Ordering::Relaxed);
        self.gradients.store(0, Ordering::Relaxed);
    }
}

/// `-(1/n) sum_p exp(-|x_p - g_p| / sigma)` where `g_p` is the goal nearest to
/// particle `p`.
pub fn rbf_cost(positions: &[[f64; 2]], goals: &[[f64; 2]], sigma: f64) -> f64 {
    if positions.is_empty() {
        return 0.0;
    }
    let total: f64 = positions.iter().map(|&p| (-nearest(p, goals).0 / sigma).exp()).sum();
    -total / positions.len() as f64
}

fn nearest(p: [f64; 2], goals: &[[f64; 2]]) -> (f64, [f64; 2]) {
    goals
        .iter()
        .map(|g| ((p[0] - g[0]).hypot(p[1] - g[1]), *g))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap_or((f64::INFINITY, [0.0, 0.0]))
}

/// Cost of a final state and its cotangent with respect to that state.
pub fn rbf_cost_cotangent(state: &ParticleState, goals: &[[f64; 2]], sigma: f64) -> (f64, ParticleState) {
    let n = state.len();
    let mut cot = ParticleState { x: vec![0.0; n], y: vec![0.0; n], vx: vec![0.0; n], vy: vec![0.0; n] };
    if n == 0 {
        return (0.0, cot);
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for p in 0..n {
        let (d, g) = nearest([state.x[p], state.y[p]], goals);
        let k = (-d / sigma).exp();
        total += k;
        if d > 0.0 {
            // d/dx of -k/n is (k / (n sigma)) (x - g) / d
            let s = k * inv_n / (sigma * d);
            cot.x[p] = s * (state.x[p] - g[0]);
            cot.y[p] = s * (state.y[p] - g[1]);
        }
    }
    (-total * inv_n, cot)
}

/// The task cost `E(x)` over designs.
#[derive(Debug)]
pub struct EnergyModel {
    task: TaskSpec,
    sim: SimConfig,
    counter: EvalCounter,
}

impl EnergyModel {
    pub fn new(task: TaskSpec, sim: SimConfig) -> Result<Self, Error> {
        task.validate()?;
        sim.validate().map_err(|m| Error::Config(format!("simulator: {m}")))?;
        Ok(Self { task, sim, counter: EvalCounter::default() })
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn sim(&self) -> &SimConfig {
        &self.sim
    }

    pub fn counter(&self) -> &EvalCounter {
        &self.counter
    }

    pub fn evaluate_cost(&self, design: &[f64]) -> Result<f64, Error> {
        self.counter.record_cost();
        let state = self.final_state(design)?;
        Ok(rbf_cost(&state.positions(), &self.task.goals, self.task.reward_sigma))
    }

    pub fn cost_gradient(&self, design: &[f64]) -> Result<Vec<f64>, Error> {
        self.evaluate_with_gradient(design).map(|(_, g)| g)
    }

    /// Cost and exact reverse-mode gradient through scene build, rollout and score.
    pub fn evaluate_with_gradient(&self, design: &[f64]) -> Result<(f64, Vec<f64>), Error> {
        self.counter.record_gradient();
        let scene = build_scene(design, &self.task)?;
        let tape = RolloutTape::record(&scene, self.task.rollout_length, &self.sim)?;
        let (cost, cot) = rbf_cost_cotangent(tape.final_state(), &self.task.goals, self.task.reward_sigma);
        let (_, seg_adj) = tape.backward(&cot)?;
        let grad = design_vjp(design, &self.task, &seg_adj)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        Ok((cost, grad))
    }

    /// Final particle state of a design. Not counted as an evaluation.
    pub fn final_state(&self, design: &[f64]) -> Result<ParticleState, Error> {
        let scene = build_scene(design, &self.task)?;
        Ok(rollout(&scene, &self.task, &self.sim)?.final_state)
    }
}

impl Energy for EnergyModel {
    fn dim(&self) -> usize {
        self.task.design_dim()
    }

    fn cost(&self, design: &[f64]) -> Result<f64, Error> {
        self.evaluate_cost(design)
    }

    fn cost_and_gradient(&self, design: &[f64]) -> Result<(f64, Vec<f64>), Error> {
        self.evaluate_with_gradient(design)
    }

    fn evaluations(&self) -> u64 {
        self.counter.total()
    }
}

/// `|x - center|^2`, for tests and calibration of the optimizers.
#[derive(Debug)]
pub struct QuadraticEnergy {
    pub center: Vec<f64>,
    counter: EvalCounter,
}

impl QuadraticEnergy {
    pub fn new(center: Vec<f64>) -> Self {
        Self { center, counter: EvalCounter::default() }
    }

    fn check(&self, x: &[f64]) -> Result<(), Error> {
        if x.len() != self.center.len() {
            return Err(Error::Shape(format!("design of length {} for a {}-dim bowl", x.len(), self.center.len())));
        }
        Ok(())
    }
}

impl Energy for QuadraticEnergy {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn cost(&self, x: &[f64]) -> Result<f64, Error> {
        self.check(x)?;
        self.counter.record_cost();
        Ok(x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum())
    }

    fn cost_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>), Error> {
        self.check(x)?;
        self.counter.record_gradient();
        let cost = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        Ok((cost, x.iter().zip(&self.center).map(|(a, c)| 2.0 * (a - c)).collect()))
    }

    fn evaluations(&self) -> u64 {
        self.counter.total()
    }
}

/// An energy seen through an affine reparameterization `design = mean + scale * z`.
pub struct Reparameterized<'a, E: Energy + ?Sized> {
    pub inner: &'a E,
    pub mean: &'a [f64],
    pub scale: &'a [f64],
}

impl<E: Energy + ?Sized> Reparameterized<'_, E> {
    pub fn to_design(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.mean).zip(self.scale).map(|((z, m), s)| m + s * z).collect()
    }
}

impl<E: Energy + ?Sized> Energy for Reparameterized<'_, E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn cost(&self, z: &[f64]) -> Result<f64, Error> {
        self.inner.cost(&self.to_design(z))
    }

    fn cost_and_gradient(&self, z: &[f64]) -> Result<(f64, Vec<f64>), Error> {
        let (c, g) = self.inner.cost_and_gradient(&self.to_design(z))?;
        Ok((c, g.iter().zip(self.scale).map(|(g, s)| g * s).collect()))
    }

    fn evaluations(&self) -> u64 {
        self.inner.evaluations()
    }
}
