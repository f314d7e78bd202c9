//! Scene construction: tools rendered from a design, fluid, obstacles, walls.

use adcore::{AdError, Graph, Tensor, Var};

use crate::task::TaskSpec;
use crate::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    /// Segment of the tool with this index.
    Tool(usize),
    Obstacle,
    Wall,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub kind: SegmentKind,
}

/// Particle positions and velocities in structure-of-arrays layout.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParticleState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
}

impl ParticleState {
    pub fn at_rest(points: &[[f64; 2]]) -> Self {
        let n = points.len();
        Self {
            x: points.iter().map(|p| p[0]).collect(),
            y: points.iter().map(|p| p[1]).collect(),
            vx: vec![0.0; n],
            vy: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.x.iter().zip(&self.y).map(|(&x, &y)| [x, y]).collect()
    }

    pub fn all_finite(&self) -> bool {
        [&self.x, &self.y, &self.vx, &self.vy].iter().all(|v| v.iter().all(|a| a.is_finite()))
    }
}

/// Simulator input: fluid particles plus static segments.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub particles: ParticleState,
    pub segments: Vec<Segment>,
}

impl Scene {
    /// Segments that take part in particle contact (tools and obstacles).
    pub fn contact_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.kind != SegmentKind::Wall)
    }

    pub fn tool_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| matches!(s.kind, SegmentKind::Tool(_)))
    }
}

fn check_design(design: &[f64], task: &TaskSpec) -> Result<(), SimError> {
    if design.len() != task.design_dim() {
        return Err(SimError::DesignLength { expected: task.design_dim(), got: design.len() });
    }
    Ok(())
}

/// Root of tool `t` after shifting; shifts are clamped to the environment.
fn tool_root(design: &[f64], task: &TaskSpec, t: usize, anchor: [f64; 2]) -> ([f64; 2], [bool; 2]) {
    if !task.design_shift {
        return (anchor, [false, false]);
    }
    let off = t * task.params_per_tool() + if task.design_angles { task.joint_angles } else { 0 };
    let mut root = [0.0; 2];
    let mut clamped = [false; 2];
    for k in 0..2 {
        let raw = anchor[k] + design[off + k];
        root[k] = raw.clamp(0.0, task.environment_size[k]);
        clamped[k] = root[k] != raw;
    }
    (root, clamped)
}

/// Tool polyline vertices for every tool, in tool order.
pub fn tool_vertices(design: &[f64], task: &TaskSpec) -> Result<Vec<Vec<[f64; 2]>>, SimError> {
    check_design(design, task)?;
    let seg_len = task.segment_length();
    let per_tool = task.params_per_tool();
    let mut tools = Vec::with_capacity(task.tools);
    for (t, anchor) in task.anchors().into_iter().enumerate() {
        let (root, _) = tool_root(design, task, t, anchor);
        let mut verts = Vec::with_capacity(task.joint_angles + 1);
        verts.push(root);
        let mut theta = 0.0;
        let mut p = root;
        for j in 0..task.joint_angles {
            if task.design_angles {
                theta += design[t * per_tool + j];
            }
            p = [p[0] + seg_len * theta.cos(), p[1] + seg_len * theta.sin()];
            verts.push(p);
        }
        tools.push(verts);
    }
    Ok(tools)
}

/// Renders the design into a scene for this task.
pub fn build_scene(design: &[f64], task: &TaskSpec) -> Result<Scene, SimError> {
    let tools = tool_vertices(design, task)?;
    let mut segments = Vec::new();
    for (t, verts) in tools.iter().enumerate() {
        for w in verts.windows(2) {
            segments.push(Segment { a: w[0], b: w[1], kind: SegmentKind::Tool(t) });
        }
    }
    for o in &task.obstacles {
        segments.push(Segment { a: [o[0], o[1]], b: [o[2], o[3]], kind: SegmentKind::Obstacle });
    }
    let [w, h] = task.environment_size;
    let corners = [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]];
    for i in 0..4 {
        segments.push(Segment { a: corners[i], b: corners[(i + 1) % 4], kind: SegmentKind::Wall });
    }
    Ok(Scene { particles: ParticleState::at_rest(&task.fluid_particles()), segments })
}

/// Endpoint coordinates of all tool segments as graph nodes of shape `[n_tool_segments]`.
pub struct ToolSegmentVars {
    pub ax: Var,
    pub ay: Var,
    pub bx: Var,
    pub by: Var,
}

/// Differentiable counterpart of the tool part of [`build_scene`]: `design`
/// must be a `[1, design_dim]` node. Segment order matches `build_scene`.
pub fn tool_segments_graph(g: &mut Graph, design: Var, task: &TaskSpec) -> Result<ToolSegmentVars, SimError> {
    let d = task.design_dim();
    if g.shape(design) != [1, d] {
        return Err(SimError::DesignLength { expected: d, got: g.value(design).len() });
    }
    let design_vals = g.value(design).data().to_vec();
    let j = task.joint_angles;
    let seg_len = task.segment_length();
    let per_tool = task.params_per_tool();
    // upper[i][k] = 1 for i <= k turns relative angles into absolute ones;
    // strict[i][k] = 1 for i < k sums segment offsets into vertex offsets.
    let upper = g.constant(triangular(j, j, |i, k| i <= k));
    let strict = g.constant(triangular(j, j + 1, |i, k| i < k));
    let ones = g.constant(Tensor::matrix(1, j + 1, vec![1.0; j + 1])?);

    let (mut axs, mut ays, mut bxs, mut bys) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (t, anchor) in task.anchors().into_iter().enumerate() {
        let off = t * per_tool;
        let rel = if task.design_angles {
            g.slice(design, off, j)?
        } else {
            g.constant(Tensor::matrix(1, j, vec![0.0; j])?)
        };
        let theta = g.matmul(rel, upper)?;
        let c = g.cos(theta)?;
        let c = g.scale(c, seg_len)?;
        let s = g.sin(theta)?;
        let s = g.scale(s, seg_len)?;
        let mut vx = g.matmul(c, strict)?;
        let mut vy = g.matmul(s, strict)?;
        let (root, clamped) = tool_root(&design_vals, task, t, anchor);
        let shift_off = off + if task.design_angles { j } else { 0 };
        for (k, v) in [&mut vx, &mut vy].into_iter().enumerate() {
            *v = if task.design_shift && !clamped[k] {
                let sh = g.slice(design, shift_off + k, 1)?;
                let r = g.add_scalar(sh, anchor[k])?;
                let r = g.matmul(r, ones)?;
                g.add(*v, r)?
            } else {
                g.add_scalar(*v, root[k])?
            };
        }
        axs.push(g.slice(vx, 0, j)?);
        bxs.push(g.slice(vx, 1, j)?);
        ays.push(g.slice(vy, 0, j)?);
        bys.push(g.slice(vy, 1, j)?);
    }
    let n = task.tools * j;
    let mut flat = |parts: &[Var]| -> Result<Var, AdError> {
        let c = g.concat(parts)?;
        g.reshape(c, vec![n])
    };
    Ok(ToolSegmentVars { ax: flat(&axs)?, ay: flat(&ays)?, bx: flat(&bxs)?, by: flat(&bys)? })
}

fn triangular(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Tensor {
    let data = (0..rows * cols).map(|i| if f(i / cols, i % cols) { 1.0 } else { 0.0 }).collect();
    Tensor::new(vec![rows, cols], data).expect("sized")
}
