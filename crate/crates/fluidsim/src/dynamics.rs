//! Smooth particle dynamics.
//!
//! One substep applies gravity, pairwise repulsion between neighbors, penalty
//! contact against tool and obstacle segments, and soft walls, then integrates
//! with symplectic Euler: `v <- (v + dt * f) * (1 - damping)`, `x <- x + dt * v`.
//! Particles have unit mass.
//!
//! Neighbor and contact lists are discrete and are rebuilt from plain
//! positions before each substep; every force vanishes smoothly at the list
//! cutoff, so list changes do not introduce jumps. The same substep exists
//! twice: a fast `f64` path for rollouts and a graph path used to pull
//! cotangents back through a substep. Both perform the same floating-point
//! operations in the same order.

use std::sync::Arc;

use adcore::{smooth_max, smooth_min, softplus, AdError, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::scene::{ParticleState, Scene, SegmentKind};

/// Guards the direction normalization when two points coincide.
const DIST_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Time per rollout step.
    pub dt: f64,
    pub substeps: usize,
    pub gravity: f64,
    /// Pair interaction radius `h`; also the neighbor grid cell size.
    pub interaction_radius: f64,
    pub repulsion_stiffness: f64,
    /// Pair force along the center line is `q^2 * (repulsion * q - cohesion)`
    /// with `q = 1 - d / h`; positive cohesion gives a rest distance of
    /// `h * (1 - cohesion / repulsion)` and a bound blob.
    pub cohesion: f64,
    /// Distance from a segment at which contact starts pushing.
    pub contact_radius: f64,
    pub contact_stiffness: f64,
    pub contact_smoothing: f64,
    /// Velocity drag on particles in contact, scaled by the contact overlap term.
    pub contact_friction: f64,
    /// Smoothing of the closest-point clamp, in segment-parameter units.
    pub clamp_smoothing: f64,
    /// Contact list reach beyond `contact_radius`, in multiples of `contact_smoothing`.
    pub contact_cutoff: f64,
    pub wall_stiffness: f64,
    /// Fraction of velocity removed every substep.
    pub damping: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            substeps: 2,
            gravity: 0.4,
            interaction_radius: 0.0175,
            repulsion_stiffness: 300.0,
            cohesion: 85.0,
            contact_radius: 0.01,
            contact_stiffness: 2000.0,
            contact_smoothing: 0.005,
            contact_friction: 3.0,
            clamp_smoothing: 0.05,
            contact_cutoff: 16.0,
            wall_stiffness: 2000.0,
            damping: 0.025,
        }
    }
}

impl SimConfig {
    pub fn substep_dt(&self) -> f64 {
        self.dt / self.substeps as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        let stiff = [self.repulsion_stiffness, self.contact_stiffness, self.wall_stiffness];
        if stiff.iter().any(|k| !(*k >= 0.0)) {
            return Err("stiffnesses must be non-negative".into());
        }
        if self.substeps == 0 || !(self.dt > 0.0) {
            return Err("dt and substeps must be positive".into());
        }
        if !(self.interaction_radius > 0.0 && self.contact_smoothing > 0.0 && self.clamp_smoothing > 0.0) {
            return Err("radii and smoothing widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err("damping must lie in [0, 1)".into());
        }
        Ok(())
    }

    fn contact_reach(&self) -> f64 {
        self.contact_radius + self.contact_cutoff * self.contact_smoothing
    }
}

/// Contact segments as parallel coordinate arrays, plus the wall box
/// `[0, extent[0]] x [0, extent[1]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentArrays {
    pub ax: Vec<f64>,
    pub ay: Vec<f64>,
    pub bx: Vec<f64>,
    pub by: Vec<f64>,
    pub extent: [f64; 2],
}

impl Default for SegmentArrays {
    fn default() -> Self {
        Self { ax: Vec::new(), ay: Vec::new(), bx: Vec::new(), by: Vec::new(), extent: [1.0, 1.0] }
    }
}

impl SegmentArrays {
    pub fn from_scene(scene: &Scene) -> Self {
        let mut s = Self::default();
        let walls: Vec<_> = scene.segments.iter().filter(|w| w.kind == SegmentKind::Wall).collect();
        if !walls.is_empty() {
            for k in 0..2 {
                s.extent[k] = walls.iter().map(|w| w.a[k].max(w.b[k])).fold(f64::MIN, f64::max);
            }
        }
        for seg in scene.contact_segments() {
            s.ax.push(seg.a[0]);
            s.ay.push(seg.a[1]);
            s.bx.push(seg.b[0]);
            s.by.push(seg.b[1]);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.ax.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ax.is_empty()
    }

    pub fn zeros(n: usize) -> Self {
        Self { ax: vec![0.0; n], ay: vec![0.0; n], bx: vec![0.0; n], by: vec![0.0; n], extent: [1.0, 1.0] }
    }
}

/// Index lists for one substep.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionLists {
    pub pair_i: Arc<[usize]>,
    pub pair_j: Arc<[usize]>,
    pub contact_particle: Arc<[usize]>,
    pub contact_segment: Arc<[usize]>,
    /// Particles within reach of the left, right, bottom and top wall.
    pub walls: [Arc<[usize]>; 4],
}

/// Coordinate index, offset and scale of each wall's penalty argument.
fn wall_terms(extent: [f64; 2], cfg: &SimConfig) -> [(usize, f64, f64); 4] {
    let r = cfg.contact_radius;
    let inv_w = 1.0 / cfg.contact_smoothing;
    [(0, -r, -inv_w), (0, r - extent[0], inv_w), (1, -r, -inv_w), (1, r - extent[1], inv_w)]
}

/// Unordered pairs `i < j` closer than `h`, found with a uniform grid of cell
/// size `h` over the particles' bounding box.
pub fn neighbor_pairs(x: &[f64], y: &[f64], h: f64) -> (Vec<usize>, Vec<usize>) {
    if x.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let lo_x = x.iter().copied().fold(f64::INFINITY, f64::min);
    let lo_y = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_x = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let hi_y = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // cap the grid so a runaway particle cannot blow up memory
    let nx = (((hi_x - lo_x) / h) as usize + 1).min(4096);
    let ny = (((hi_y - lo_y) / h) as usize + 1).min(4096);
    let cell_of = |v: f64, lo: f64, n: usize| (((v - lo) / h) as usize).min(n - 1);
    let cells: Vec<(usize, usize)> =
        x.iter().zip(y).map(|(&a, &b)| (cell_of(a, lo_x, nx), cell_of(b, lo_y, ny))).collect();

    let mut start = vec![0usize; nx * ny + 1];
    for &(cx, cy) in &cells {
        start[cy * nx + cx + 1] += 1;
    }
    for k in 0..nx * ny {
        start[k + 1] += start[k];
    }
    let mut fill = start.clone();
    let mut entries = vec![0usize; x.len()];
    for (i, &(cx, cy)) in cells.iter().enumerate() {
        let c = cy * nx + cx;
        entries[fill[c]] = i;
        fill[c] += 1;
    }

    let h2 = h * h;
    let (mut pi, mut pj) = (Vec::new(), Vec::new());
    for (i, &(cx, cy)) in cells.iter().enumerate() {
        for gy in cy.saturating_sub(1)..=(cy + 1).min(ny - 1) {
            for gx in cx.saturating_sub(1)..=(cx + 1).min(nx - 1) {
                let c = gy * nx + gx;
                for &j in &entries[start[c]..start[c + 1]] {
                    if j <= i {
                        continue;
                    }
                    let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
                    if dx * dx + dy * dy < h2 {
                        pi.push(i);
                        pj.push(j);
                    }
                }
            }
        }
    }
    (pi, pj)
}

/// Particle/segment pairs whose smoothed contact distance is within `reach`,
/// segment-major.
pub fn contact_candidates(
    x: &[f64],
    y: &[f64],
    segs: &SegmentArrays,
    reach: f64,
    clamp_smoothing: f64,
) -> (Vec<usize>, Vec<usize>) {
    let (mut cp, mut cs) = (Vec::new(), Vec::new());
    for s in 0..segs.len() {
        let (ax, ay, bx, by) = (segs.ax[s], segs.ay[s], segs.bx[s], segs.by[s]);
        let (lo_x, hi_x) = (ax.min(bx) - reach, ax.max(bx) + reach);
        let (lo_y, hi_y) = (ay.min(by) - reach, ay.max(by) + reach);
        let (ex, ey) = (bx - ax, by - ay);
        let l2 = ex * ex + ey * ey;
        // the smooth clamp moves the closest point by at most 2 ln2 ws along the segment
        let loose = reach + 2.0 * std::f64::consts::LN_2 * clamp_smoothing * l2.sqrt();
        for p in 0..x.len() {
            let (px, py) = (x[p], y[p]);
            if px < lo_x || px > hi_x || py < lo_y || py > hi_y {
                continue;
            }
            let t = if l2 > 0.0 { (((px - ax) * ex + (py - ay) * ey) / l2).clamp(0.0, 1.0) } else { 0.0 };
            let (dx, dy) = (px - (ax + t * ex), py - (ay + t * ey));
            if dx * dx + dy * dy >= loose * loose {
                continue;
            }
            if contact_offset(px, py, [ax, ay, bx, by], clamp_smoothing).2 < reach {
                cp.push(p);
                cs.push(s);
            }
        }
    }
    (cp, cs)
}

/// Offset from the smoothly clamped closest point of segment `[ax, ay, bx, by]`
/// to `(px, py)`, and its length.
fn contact_offset(px: f64, py: f64, seg: [f64; 4], ws: f64) -> (f64, f64, f64) {
    let [ax, ay, bx, by] = seg;
    let ex = bx - ax;
    let ey = by - ay;
    let l2 = ex * ex + ey * ey;
    let relx = px - ax;
    let rely = py - ay;
    let dot = relx * ex + rely * ey;
    let t = dot / l2;
    let tc = smooth_max(0.0, smooth_min(t, 1.0, ws), ws);
    let rx = px - (ax + tc * ex);
    let ry = py - (ay + tc * ey);
    (rx, ry, (rx * rx + ry * ry).sqrt())
}

fn cutoff_floor(cfg: &SimConfig) -> f64 {
    softplus(-cfg.contact_cutoff)
}

pub fn interaction_lists(state: &ParticleState, segs: &SegmentArrays, cfg: &SimConfig) -> InteractionLists {
    let (pi, pj) = neighbor_pairs(&state.x, &state.y, cfg.interaction_radius);
    let reach = cfg.contact_reach();
    let (cp, cs) = contact_candidates(&state.x, &state.y, segs, reach, cfg.clamp_smoothing);
    let near = |coord: &[f64], inside: &dyn Fn(f64) -> bool| -> Arc<[usize]> {
        coord.iter().enumerate().filter(|(_, &c)| inside(c)).map(|(p, _)| p).collect()
    };
    let [w, h] = segs.extent;
    let walls = [
        near(&state.x, &|c| c < reach),
        near(&state.x, &|c| c > w - reach),
        near(&state.y, &|c| c < reach),
        near(&state.y, &|c| c > h - reach),
    ];
    InteractionLists {
        pair_i: pi.into(),
        pair_j: pj.into(),
        contact_particle: cp.into(),
        contact_segment: cs.into(),
        walls,
    }
}

/// Plain `f64` substep. Mirrors [`substep_graph`] operation by operation.
pub fn substep(state: &ParticleState, segs: &SegmentArrays, lists: &InteractionLists, cfg: &SimConfig) -> ParticleState {
    let n = state.len();
    let h = cfg.interaction_radius;
    let w = cfg.contact_smoothing;
    let ws = cfg.clamp_smoothing;
    let (x, y) = (&state.x, &state.y);

    let (mut pix, mut piy, mut pjx, mut pjy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (&i, &j) in lists.pair_i.iter().zip(lists.pair_j.iter()) {
        let dx = x[i] - x[j];
        let dy = y[i] - y[j];
        let d = (dx * dx + dy * dy).sqrt();
        let q = d * (-1.0 / h) + 1.0;
        let qq = q * q;
        let mag = qq * (q * cfg.repulsion_stiffness + -cfg.cohesion);
        let inv = mag / (d + DIST_EPS);
        let fx = dx * inv;
        let fy = dy * inv;
        pix[i] += fx;
        piy[i] += fy;
        pjx[j] += fx;
        pjy[j] += fy;
    }

    // softplus at the edge of reach, so forces vanish where the lists cut off
    let floor = cutoff_floor(cfg);
    let (mut cfx, mut cfy) = (vec![0.0; n], vec![0.0; n]);
    for (&p, &s) in lists.contact_particle.iter().zip(lists.contact_segment.iter()) {
        let (rx, ry, d) = contact_offset(x[p], y[p], [segs.ax[s], segs.ay[s], segs.bx[s], segs.by[s]], ws);
        let z = (d + -cfg.contact_radius) * (-1.0 / w);
        let sp = softplus(z) + -floor;
        let mag = sp * (cfg.contact_stiffness * w);
        let inv = mag / (d + DIST_EPS);
        let drag = sp * cfg.contact_friction;
        cfx[p] += rx * inv - state.vx[p] * drag;
        cfy[p] += ry * inv - state.vy[p] * drag;
    }

    let dt = cfg.substep_dt();
    let keep = 1.0 - cfg.damping;
    let kw = cfg.wall_stiffness * w;
    let mut wall = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (k, (axis, offset, scale)) in wall_terms(segs.extent, cfg).into_iter().enumerate() {
        let coord = if axis == 0 { x } else { y };
        for &p in lists.walls[k].iter() {
            wall[k][p] += (softplus((coord[p] + offset) * scale) + -floor) * kw;
        }
    }
    let mut out = ParticleState {
        x: vec![0.0; n],
        y: vec![0.0; n],
        vx: vec![0.0; n],
        vy: vec![0.0; n],
    };
    for p in 0..n {
        let fx = (pix[p] - pjx[p]) + cfx[p] + (wall[0][p] - wall[1][p]);
        let fy = ((pjy[p] * -1.0 + piy[p]) + cfy[p] + (wall[2][p] - wall[3][p])) + -cfg.gravity;
        let vx = (state.vx[p] + fx * dt) * keep;
        let vy = (state.vy[p] + fy * dt) * keep;
        out.vx[p] = vx;
        out.vy[p] = vy;
    }
    for p in 0..n {
        out.x[p] = x[p] + out.vx[p] * dt;
        out.y[p] = y[p] + out.vy[p] * dt;
    }
    out
}

/// Graph nodes holding a particle state.
#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub x: Var,
    pub y: Var,
    pub vx: Var,
    pub vy: Var,
}

impl StateVars {
    pub fn input(g: &mut Graph, s: &ParticleState) -> Self {
        Self {
            x: g.input(Tensor::vector(s.x.clone())),
            y: g.input(Tensor::vector(s.y.clone())),
            vx: g.input(Tensor::vector(s.vx.clone())),
            vy: g.input(Tensor::vector(s.vy.clone())),
        }
    }

    pub fn read(&self, g: &Graph) -> ParticleState {
        ParticleState {
            x: g.value(self.x).data().to_vec(),
            y: g.value(self.y).data().to_vec(),
            vx: g.value(self.vx).data().to_vec(),
            vy: g.value(self.vy).data().to_vec(),
        }
    }
}

/// Graph nodes holding the contact segment endpoints, each `[n_segments]`.
#[derive(Clone, Copy, Debug)]
pub struct SegmentVars {
    pub ax: Var,
    pub ay: Var,
    pub bx: Var,
    pub by: Var,
}

impl SegmentVars {
    pub fn input(g: &mut Graph, s: &SegmentArrays) -> Self {
        Self {
            ax: g.input(Tensor::vector(s.ax.clone())),
            ay: g.input(Tensor::vector(s.ay.clone())),
            bx: g.input(Tensor::vector(s.bx.clone())),
            by: g.input(Tensor::vector(s.by.clone())),
        }
    }
}

/// Differentiable substep over graph nodes.
pub fn substep_graph(
    g: &mut Graph,
    s: StateVars,
    segs: SegmentVars,
    extent: [f64; 2],
    lists: &InteractionLists,
    cfg: &SimConfig,
) -> Result<StateVars, AdError> {
    let n = g.value(s.x).len();
    let h = cfg.interaction_radius;
    let w = cfg.contact_smoothing;
    let ws = cfg.clamp_smoothing;

    // pair repulsion
    let (pi, pj) = (lists.pair_i.clone(), lists.pair_j.clone());
    let xi = g.gather(s.x, pi.clone())?;
    let xj = g.gather(s.x, pj.clone())?;
    let yi = g.gather(s.y, pi.clone())?;
    let yj = g.gather(s.y, pj.clone())?;
    let dx = g.sub(xi, xj)?;
    let dy = g.sub(yi, yj)?;
    let d = g.hypot(dx, dy)?;
    let q = g.scale(d, -1.0 / h)?;
    let q = g.add_scalar(q, 1.0)?;
    let qq = g.square(q)?;
    let lin = g.scale(q, cfg.repulsion_stiffness)?;
    let lin = g.add_scalar(lin, -cfg.cohesion)?;
    let mag = g.mul(qq, lin)?;
    let den = g.add_scalar(d, DIST_EPS)?;
    let inv = g.div(mag, den)?;
    let fpx = g.mul(dx, inv)?;
    let fpy = g.mul(dy, inv)?;
    let pix = g.scatter_add(fpx, pi.clone(), n)?;
    let piy = g.scatter_add(fpy, pi, n)?;
    let pjx = g.scatter_add(fpx, pj.clone(), n)?;
    let pjy = g.scatter_add(fpy, pj, n)?;

    // segment contact
    let floor = cutoff_floor(cfg);
    let (cp, cs) = (lists.contact_particle.clone(), lists.contact_segment.clone());
    let m = cp.len();
    let px = g.gather(s.x, cp.clone())?;
    let py = g.gather(s.y, cp.clone())?;
    let ax = g.gather(segs.ax, cs.clone())?;
    let ay = g.gather(segs.ay, cs.clone())?;
    let bx = g.gather(segs.bx, cs.clone())?;
    let by = g.gather(segs.by, cs)?;
    let ex = g.sub(bx, ax)?;
    let ey = g.sub(by, ay)?;
    let ex2 = g.square(ex)?;
    let ey2 = g.square(ey)?;
    let l2 = g.add(ex2, ey2)?;
    let relx = g.sub(px, ax)?;
    let rely = g.sub(py, ay)?;
    let dotx = g.mul(relx, ex)?;
    let doty = g.mul(rely, ey)?;
    let dot = g.add(dotx, doty)?;
    let t = g.div(dot, l2)?;
    let ones = g.constant(Tensor::filled(&[m], 1.0));
    let zeros = g.constant(Tensor::zeros(&[m]));
    let tc = g.smooth_min(t, ones, ws)?;
    let tc = g.smooth_max(zeros, tc, ws)?;
    let ox = g.mul(tc, ex)?;
    let oy = g.mul(tc, ey)?;
    let cx = g.add(ax, ox)?;
    let cy = g.add(ay, oy)?;
    let rx = g.sub(px, cx)?;
    let ry = g.sub(py, cy)?;
    let d = g.hypot(rx, ry)?;
    let z = g.add_scalar(d, -cfg.contact_radius)?;
    let z = g.scale(z, -1.0 / w)?;
    let sp = g.softplus(z)?;
    let sp = g.add_scalar(sp, -floor)?;
    let mag = g.scale(sp, cfg.contact_stiffness * w)?;
    let den = g.add_scalar(d, DIST_EPS)?;
    let inv = g.div(mag, den)?;
    let drag = g.scale(sp, cfg.contact_friction)?;
    let vxp = g.gather(s.vx, cp.clone())?;
    let vyp = g.gather(s.vy, cp.clone())?;
    let nx = g.mul(rx, inv)?;
    let tx = g.mul(vxp, drag)?;
    let fcx = g.sub(nx, tx)?;
    let ny = g.mul(ry, inv)?;
    let ty = g.mul(vyp, drag)?;
    let fcy = g.sub(ny, ty)?;
    let cfx = g.scatter_add(fcx, cp.clone(), n)?;
    let cfy = g.scatter_add(fcy, cp, n)?;

    // soft walls
    let kw = cfg.wall_stiffness * w;
    let mut wall = Vec::with_capacity(4);
    for (k, (axis, offset, scale)) in wall_terms(extent, cfg).into_iter().enumerate() {
        let idx = lists.walls[k].clone();
        let coord = g.gather(if axis == 0 { s.x } else { s.y }, idx.clone())?;
        let z = g.add_scalar(coord, offset)?;
        let z = g.scale(z, scale)?;
        let z = g.softplus(z)?;
        let z = g.add_scalar(z, -floor)?;
        let f = g.scale(z, kw)?;
        wall.push(g.scatter_add(f, idx, n)?);
    }
    let (left, right, floor, ceil) = (wall[0], wall[1], wall[2], wall[3]);

    let fx = g.sub(pix, pjx)?;
    let fx = g.add(fx, cfx)?;
    let wx = g.sub(left, right)?;
    let fx = g.add(fx, wx)?;
    let fy = g.scale(pjy, -1.0)?;
    let fy = g.add(fy, piy)?;
    let fy = g.add(fy, cfy)?;
    let wy = g.sub(floor, ceil)?;
    let fy = g.add(fy, wy)?;
    let fy = g.add_scalar(fy, -cfg.gravity)?;

    let dt = cfg.substep_dt();
    let keep = 1.0 - cfg.damping;
    let mut integrate = |v: Var, f: Var, pos: Var| -> Result<(Var, Var), AdError> {
        let a = g.scale(f, dt)?;
        let v = g.add(v, a)?;
        let v = g.scale(v, keep)?;
        let dp = g.scale(v, dt)?;
        Ok((v, g.add(pos, dp)?))
    };
    let (vx, x) = integrate(s.vx, fx, s.x)?;
    let (vy, y) = integrate(s.vy, fy, s.y)?;
    Ok(StateVars { x, y, vx, vy })
}
