//! Task descriptions: fluid sources, goals, tool layout and obstacles.

use serde::{Deserialize, Serialize};

use crate::SimError;

/// Spacing of the initial fluid particle grid, in environment units.
pub const FLUID_SPACING: f64 = 0.0125;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Contain,
    ContainShift,
    Ramp,
    Obstacle,
    Bimodal,
    Multitool,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Contain,
        TaskKind::ContainShift,
        TaskKind::Ramp,
        TaskKind::Obstacle,
        TaskKind::Bimodal,
        TaskKind::Multitool,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Contain => "contain",
            TaskKind::ContainShift => "contain-shift",
            TaskKind::Ramp => "ramp",
            TaskKind::Obstacle => "obstacle",
            TaskKind::Bimodal => "bimodal",
            TaskKind::Multitool => "multitool",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SimError::InvalidTask(format!("unknown task id {s:?}")))
    }
}

/// Axis-aligned box in environment units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub left: f64,
    pub right: f64,
    pub bottom: f64,
    pub top: f64,
}

impl Rect {
    pub const fn new(left: f64, right: f64, bottom: f64, top: f64) -> Self {
        Self { left, right, bottom, top }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.left && p[0] <= self.right && p[1] >= self.bottom && p[1] <= self.top
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.left + self.right), 0.5 * (self.bottom + self.top)]
    }

    fn is_inside_unit(&self) -> bool {
        self.left >= 0.0 && self.right <= 1.0 && self.bottom >= 0.0 && self.top <= 1.0
    }
}

/// Range of tool root positions. A single tool sits at the low corner; several
/// tools are spread on a square grid over the range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorRange {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

/// One task row: environment, fluid, reward and tool parameterization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: TaskKind,
    /// Width and height of the environment.
    pub environment_size: [f64; 2],
    pub rollout_length: usize,
    pub fluid_boxes: Vec<Rect>,
    /// One box per goal; goals are sampled inside them.
    pub reward_boxes: Vec<Rect>,
    pub reward_sigma: f64,
    pub tools: usize,
    pub joint_angles: usize,
    pub tool_position: AnchorRange,
    /// Total length of each tool.
    pub tool_length: f64,
    pub design_angles: bool,
    pub design_shift: bool,
    /// Static obstacle segments as `[x0, y0, x1, y1]`.
    #[serde(default)]
    pub obstacles: Vec<[f64; 4]>,
    /// Current goal(s), one per reward box.
    pub goals: Vec<[f64; 2]>,
}

impl TaskSpec {
    /// Preset rows; goals start at the centers of the reward boxes.
    pub fn preset(kind: TaskKind) -> Self {
        let base = |fluid: Vec<Rect>, reward: Vec<Rect>| TaskSpec {
            task: kind,
            environment_size: [1.0, 1.0],
            rollout_length: 150,
            goals: reward.iter().map(Rect::center).collect(),
            fluid_boxes: fluid,
            reward_boxes: reward,
            reward_sigma: 0.1,
            tools: 1,
            joint_angles: 16,
            tool_position: AnchorRange { x: [0.15, 0.15], y: [0.35, 0.35] },
            tool_length: 0.8,
            design_angles: true,
            design_shift: false,
            obstacles: Vec::new(),
        };
        match kind {
            TaskKind::Contain => base(vec![Rect::new(0.2, 0.3, 0.5, 0.6)], vec![Rect::new(0.4, 0.6, 0.1, 0.3)]),
            TaskKind::ContainShift => TaskSpec {
                design_shift: true,
                ..TaskSpec::preset(TaskKind::Contain).with_kind(kind)
            },
            TaskKind::Ramp => base(vec![Rect::new(0.2, 0.3, 0.5, 0.6)], vec![Rect::new(0.8, 1.0, 0.0, 0.2)]),
            TaskKind::Obstacle => {
                let goal = [0.2, 0.2];
                TaskSpec {
                    reward_sigma: 0.05,
                    tool_position: AnchorRange { x: [0.25, 0.25], y: [0.35, 0.35] },
                    tool_length: 0.6,
                    design_shift: true,
                    obstacles: obstacle_course(goal, 0.5),
                    ..base(vec![Rect::new(0.45, 0.55, 0.5, 0.6)], vec![Rect::new(0.2, 0.2, 0.2, 0.2)])
                }
            }
            TaskKind::Bimodal => TaskSpec {
                tool_position: AnchorRange { x: [0.3, 0.3], y: [0.6, 0.6] },
                tool_length: 0.4,
                design_shift: true,
                ..base(
                    vec![Rect::new(0.25, 0.35, 0.5, 0.6), Rect::new(0.65, 0.75, 0.5, 0.6)],
                    vec![Rect::new(0.25, 0.35, 0.1, 0.2), Rect::new(0.65, 0.75, 0.1, 0.2)],
                )
            },
            TaskKind::Multitool => TaskSpec {
                tools: 16,
                joint_angles: 1,
                tool_position: AnchorRange { x: [0.15, 0.2], y: [0.35, 0.4] },
                tool_length: 0.1,
                design_shift: true,
                ..base(vec![Rect::new(0.2, 0.3, 0.5, 0.6)], vec![Rect::new(0.2, 0.3, 0.2, 0.5)])
            },
        }
    }

    fn with_kind(mut self, kind: TaskKind) -> Self {
        self.task = kind;
        self
    }

    /// Copy of the task with new goal(s).
    pub fn with_goals(&self, goals: Vec<[f64; 2]>) -> Self {
        TaskSpec { goals, ..self.clone() }
    }

    pub fn params_per_tool(&self) -> usize {
        let angles = if self.design_angles { self.joint_angles } else { 0 };
        let shift = if self.design_shift { 2 } else { 0 };
        angles + shift
    }

    pub fn design_dim(&self) -> usize {
        self.tools * self.params_per_tool()
    }

    pub fn segment_length(&self) -> f64 {
        self.tool_length / self.joint_angles as f64
    }

    /// Root position of each tool before any shift.
    pub fn anchors(&self) -> Vec<[f64; 2]> {
        let n = self.tools;
        let cols = (n as f64).sqrt().ceil() as usize;
        let rows = n.div_ceil(cols.max(1));
        let lerp = |r: [f64; 2], i: usize, k: usize| {
            if k <= 1 {
                r[0]
            } else {
                r[0] + (r[1] - r[0]) * i as f64 / (k - 1) as f64
            }
        };
        (0..n)
            .map(|i| {
                let (cx, cy) = (i % cols, i / cols);
                [lerp(self.tool_position.x, cx, cols), lerp(self.tool_position.y, cy, rows)]
            })
            .collect()
    }

    /// Initial fluid particle positions on a regular grid filling each fluid box.
    pub fn fluid_particles(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        for b in &self.fluid_boxes {
            let nx = ((b.right - b.left) / FLUID_SPACING).round() as usize;
            let ny = ((b.top - b.bottom) / FLUID_SPACING).round() as usize;
            for j in 0..ny {
                for i in 0..nx {
                    out.push([
                        b.left + FLUID_SPACING * (i as f64 + 0.5),
                        b.bottom + FLUID_SPACING * (j as f64 + 0.5),
                    ]);
                }
            }
        }
        out
    }

    pub fn particle_count(&self) -> usize {
        self.fluid_particles().len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidTask(m));
        if self.environment_size != [1.0, 1.0] {
            return bad(format!("environment must be 1x1, got {:?}", self.environment_size));
        }
        if self.tools * self.joint_angles < 1 {
            return bad("need at least one tool joint".into());
        }
        if !(self.reward_sigma > 0.0) {
            return bad("reward_sigma must be positive".into());
        }
        for b in self.fluid_boxes.iter().chain(&self.reward_boxes) {
            if !b.is_inside_unit() || b.left > b.right || b.bottom > b.top {
                return bad(format!("box {b:?} is not inside the unit square"));
            }
        }
        if self.goals.is_empty() || self.goals.len() != self.reward_boxes.len() {
            return bad(format!(
                "expected one goal per reward box ({}), got {}",
                self.reward_boxes.len(),
                self.goals.len()
            ));
        }
        for (g, b) in self.goals.iter().zip(&self.reward_boxes) {
            if !b.contains(*g) {
                return bad(format!("goal {g:?} lies outside its reward box {b:?}"));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("task spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let spec: TaskSpec = toml::from_str(text).map_err(|e| SimError::InvalidTask(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Three-segment cup around the goal plus a vertical barrier halfway between
/// the cup and the fluid column at `fluid_x`.
fn obstacle_course(goal: [f64; 2], fluid_x: f64) -> Vec<[f64; 4]> {
    let half = 0.07;
    let (l, r) = (goal[0] - half, goal[0] + half);
    let (b, t) = (goal[1] - half, goal[1] + half);
    let barrier_x = 0.5 * (goal[0] + fluid_x);
    vec![
        [l, t, l, b],
        [l, b, r, b],
        [r, b, r, t],
        [barrier_x, 0.0, barrier_x, 0.28],
    ]
}
