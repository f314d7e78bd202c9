use adcore::{Graph, Tensor};

use crate::dynamics::{interaction_lists, substep, substep_graph, SegmentArrays, SegmentVars, SimConfig, StateVars};
use crate::scene::{tool_segments_graph, ParticleState, Scene};
use crate::task::TaskSpec;
use crate::SimError;

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub final_state: ParticleState,
    /// States after every step, starting with the initial one, when requested.
    pub states: Option<Vec<ParticleState>>,
}

/// Advances one step (all substeps). `step_index` only labels errors.
pub fn step(
    state: &ParticleState,
    segs: &SegmentArrays,
    cfg: &SimConfig,
    step_index: usize,
) -> Result<ParticleState, SimError> {
    let mut s = state.clone();
    for _ in 0..cfg.substeps {
        let lists = interaction_lists(&s, segs, cfg);
        s = substep(&s, segs, &lists, cfg);
    }
    if !s.all_finite() {
        return Err(SimError::NonFinite { step: step_index });
    }
    Ok(s)
}

/// Applies `steps` steps to the scene's particles.
pub fn rollout_steps(scene: &Scene, steps: usize, cfg: &SimConfig, keep_states: bool) -> Result<Rollout, SimError> {
    cfg.validate().map_err(SimError::InvalidConfig)?;
    let segs = SegmentArrays::from_scene(scene);
    let mut s = scene.particles.clone();
    let mut states = keep_states.then(|| vec![s.clone()]);
    for k in 0..steps {
        s = step(&s, &segs, cfg, k)?;
        if let Some(v) = states.as_mut() {
            v.push(s.clone());
        }
    }
    Ok(Rollout { final_state: s, states })
}

/// Rollout over the task's horizon.
pub fn rollout(scene: &Scene, task: &TaskSpec, cfg: &SimConfig) -> Result<Rollout, SimError> {
    rollout_steps(scene, task.rollout_length, cfg, false)
}

/// Forward rollout that keeps every substep's input state for the reverse pass.
#[derive(Clone, Debug)]
pub struct RolloutTape {
    segs: SegmentArrays,
    checkpoints: Vec<ParticleState>,
    final_state: ParticleState,
    cfg: SimConfig,
}

impl RolloutTape {
    pub fn record(scene: &Scene, steps: usize, cfg: &SimConfig) -> Result<Self, SimError> {
        cfg.validate().map_err(SimError::InvalidConfig)?;
        let segs = SegmentArrays::from_scene(scene);
        let mut checkpoints = Vec::with_capacity(steps * cfg.substeps);
        let mut s = scene.particles.clone();
        for k in 0..steps {
            for _ in 0..cfg.substeps {
                let lists = interaction_lists(&s, &segs, cfg);
                let next = substep(&s, &segs, &lists, cfg);
                checkpoints.push(std::mem::replace(&mut s, next));
            }
            if !s.all_finite() {
                return Err(SimError::NonFinite { step: k });
            }
        }
        Ok(Self { segs, checkpoints, final_state: s, cfg: cfg.clone() })
    }

    pub fn final_state(&self) -> &ParticleState {
        &self.final_state
    }

    pub fn segments(&self) -> &SegmentArrays {
        &self.segs
    }

    /// Pulls a cotangent on the final state back to the initial state and to
    /// the contact segment endpoints.
    pub fn backward(&self, final_cotangent: &ParticleState) -> Result<(ParticleState, SegmentArrays), SimError> {
        let n = self.final_state.len();
        let c = final_cotangent;
        if [c.x.len(), c.y.len(), c.vx.len(), c.vy.len()] != [n; 4] {
            return Err(SimError::CotangentShape);
        }
        let mut adj = c.clone();
        let mut seg_adj = SegmentArrays::zeros(self.segs.len());
        seg_adj.extent = self.segs.extent;
        for (k, state) in self.checkpoints.iter().enumerate().rev() {
            let lists = interaction_lists(state, &self.segs, &self.cfg);
            let mut g = Graph::new();
            let sv = StateVars::input(&mut g, state);
            let gv = SegmentVars::input(&mut g, &self.segs);
            let out = substep_graph(&mut g, sv, gv, self.segs.extent, &lists, &self.cfg)?;
            let seeds = [
                (out.x, Tensor::vector(adj.x)),
                (out.y, Tensor::vector(adj.y)),
                (out.vx, Tensor::vector(adj.vx)),
                (out.vy, Tensor::vector(adj.vy)),
            ];
            let mut grads = g.vjp(&seeds).map_err(|e| match e {
                adcore::AdError::NonFinite { .. } | adcore::AdError::NonFiniteGradient { .. } => {
                    SimError::NonFinite { step: k / self.cfg.substeps }
                }
                other => other.into(),
            })?;
            adj = ParticleState {
                x: grads.take(sv.x).into_data(),
                y: grads.take(sv.y).into_data(),
                vx: grads.take(sv.vx).into_data(),
                vy: grads.take(sv.vy).into_data(),
            };
            for (acc, v) in [
                (&mut seg_adj.ax, gv.ax),
                (&mut seg_adj.ay, gv.ay),
                (&mut seg_adj.bx, gv.bx),
                (&mut seg_adj.by, gv.by),
            ] {
                for (a, d) in acc.iter_mut().zip(grads.take(v).data()) {
                    *a += d;
                }
            }
        }
        Ok((adj, seg_adj))
    }
}

/// Pulls segment endpoint cotangents back to the design. Tool segments come
/// first among contact segments; obstacle entries are ignored.
pub fn design_vjp(design: &[f64], task: &TaskSpec, seg_cotangent: &SegmentArrays) -> Result<Vec<f64>, SimError> {
    let d = task.design_dim();
    if design.len() != d {
        return Err(SimError::DesignLength { expected: d, got: design.len() });
    }
    let n_tool = task.tools * task.joint_angles;
    if seg_cotangent.len() < n_tool {
        return Err(SimError::CotangentShape);
    }
    let mut g = Graph::new();
    let dv = g.input(Tensor::matrix(1, d, design.to_vec())?);
    let segs = tool_segments_graph(&mut g, dv, task)?;
    let take = |v: &Vec<f64>| Tensor::vector(v[..n_tool].to_vec());
    let seeds = [
        (segs.ax, take(&seg_cotangent.ax)),
        (segs.ay, take(&seg_cotangent.ay)),
        (segs.bx, take(&seg_cotangent.bx)),
        (segs.by, take(&seg_cotangent.by)),
    ];
    let grads = g.vjp(&seeds)?;
    Ok(grads.wrt(dv).into_data())
}
