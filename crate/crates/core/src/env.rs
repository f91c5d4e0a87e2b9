//! Discrete-time multi-agent world.
//!
//! Each step turns every active agent by its commanded heading change, sets
//! its velocity to the commanded speed along the new heading and advances the
//! position by `dt · velocity` (first-order kinematics). Overlaps are checked
//! at sample times only. Arrived agents stay where they arrived and remain
//! obstacles; collided agents freeze and drop out of collision checks.

use std::f64::consts::PI;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    d_min, surface_gap, AgentState, AgentStatus, Dimension, Heading, ObservableState, Scenario,
    Vector, WorldConfig,
};

/// Largest heading change (each angle) per step.
pub const MAX_TURN: f64 = PI / 6.0;
/// A step shorter than this counts as staying in place.
pub const MOVE_EPSILON: f64 = 0.02;
pub const ARRIVAL_TOLERANCE_FLOOR: f64 = 0.1;
/// Neighbour slots in the observation vector.
pub const OBSERVED_NEIGHBORS: usize = 4;
/// Bumped whenever the observation layout changes; recorded in model files.
pub const OBSERVATION_LAYOUT_VERSION: u32 = 1;
pub const TRAJECTORY_SCHEMA: &str = "densenav.trajectory";
pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

const ACTION_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("expected {expected} action slots, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("agent {0} is not active but received an action")]
    ActionForInactive(usize),
    #[error("active agent {0} has no action")]
    MissingAction(usize),
    #[error("action for agent {id} violates limits: {reason}")]
    InvalidAction { id: usize, reason: String },
    #[error("unknown agent id {0}")]
    UnknownAgent(usize),
    #[error("agent {0} is not active")]
    NotActive(usize),
}

/// Commanded speed and heading change; `dphi` is zero in 2D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub speed: f64,
    pub dpsi: f64,
    pub dphi: f64,
}

impl Action {
    pub const STOP: Action = Action { speed: 0.0, dpsi: 0.0, dphi: 0.0 };

    pub fn new(speed: f64, dpsi: f64, dphi: f64) -> Self {
        Action { speed, dpsi, dphi }
    }

    pub fn check(&self, agent: &AgentState) -> Result<(), String> {
        if !(self.speed.is_finite() && self.dpsi.is_finite() && self.dphi.is_finite()) {
            return Err("non-finite component".into());
        }
        if self.speed < -ACTION_SLACK || self.speed > agent.v_pref + ACTION_SLACK {
            return Err(format!("speed {} outside [0, {}]", self.speed, agent.v_pref));
        }
        if self.dpsi.abs() > MAX_TURN + ACTION_SLACK || self.dphi.abs() > MAX_TURN + ACTION_SLACK {
            return Err("heading change exceeds π/6".into());
        }
        if agent.dim() == Dimension::Two && self.dphi != 0.0 {
            return Err("planar action with polar change".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerMode {
    Policy,
    Fmp,
}

/// Why the hybrid controller picked its mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchReason {
    HighRisk,
    Simple,
    Stuck,
    Normal,
}

/// Controller tag attached to one agent's step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModeTag {
    pub mode: Option<ControllerMode>,
    pub reason: Option<SwitchReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub position: Vector,
    pub velocity: Vector,
    pub heading: Heading,
    pub status: AgentStatus,
    /// Against non-collided agents; `None` when there is nobody to measure.
    pub d_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ControllerMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<SwitchReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub agents: Vec<AgentRecord>,
}

/// What changed during one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub arrived: Vec<usize>,
    pub collided: Vec<usize>,
    /// Post-step `d_min` per agent, measured against non-collided agents.
    pub d_min: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentOutcome {
    Success,
    Collision,
    Stuck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioOutcome {
    Success,
    Collision,
    Stuck,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminationReport {
    pub done: bool,
    /// Per-agent classification; `None` for agents still running.
    pub agents: Vec<Option<AgentOutcome>>,
    /// Set once `done`. Collision beats stuck.
    pub scenario: Option<ScenarioOutcome>,
}

pub fn arrival_tolerance(radius: f64) -> f64 {
    ARRIVAL_TOLERANCE_FLOOR.max(radius / 2.0)
}

/// Observation length for a world dimension.
pub fn observation_len(dim: Dimension) -> usize {
    ego_len(dim) + OBSERVED_NEIGHBORS * neighbor_block_len(dim)
}

fn ego_len(dim: Dimension) -> usize {
    match dim {
        Dimension::Two => 5,
        Dimension::Three => 6,
    }
}

fn neighbor_block_len(dim: Dimension) -> usize {
    2 * dim.count() + 4
}

#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub world: WorldConfig,
    pub agents: Vec<AgentState>,
    pub t: f64,
    pub steps: u64,
    pub stuck_counters: Vec<u32>,
    pub arrival_times: Vec<Option<f64>>,
    pub trajectory: Vec<StepRecord>,
    record: bool,
}

impl EpisodeState {
    /// Starts an episode from a validated scenario. With `record` set, every
    /// step (and the initial state at `t = 0`) is appended to `trajectory`.
    pub fn new(scenario: &Scenario, record: bool) -> Self {
        let n = scenario.agents.len();
        let mut state = EpisodeState {
            world: scenario.world.clone(),
            agents: scenario.agents.clone(),
            t: 0.0,
            steps: 0,
            stuck_counters: vec![0; n],
            arrival_times: vec![None; n],
            trajectory: Vec::new(),
            record,
        };
        if record {
            let d = state.all_d_min();
            state.push_record(&d, &vec![ModeTag::default(); n]);
        }
        state
    }

    pub fn agent(&self, id: usize) -> Result<&AgentState, EnvError> {
        self.agents.get(id).ok_or(EnvError::UnknownAgent(id))
    }

    /// Other agents within `neighbor_radius` (centre distance), any status.
    pub fn neighbors(&self, id: usize) -> Result<Vec<ObservableState>, EnvError> {
        let me = self.agent(id)?;
        Ok(self
            .agents
            .iter()
            .filter(|o| o.id != id && o.position.distance(&me.position) <= self.world.neighbor_radius)
            .map(AgentState::observable)
            .collect())
    }

    pub fn active_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.agents.iter().filter(|a| a.is_active()).map(|a| a.id)
    }

    /// Surface distance to the nearest non-collided other agent.
    pub fn d_min_of(&self, id: usize) -> f64 {
        let me = &self.agents[id];
        let others: Vec<ObservableState> = self
            .agents
            .iter()
            .filter(|o| o.id != id && o.status != AgentStatus::Collided)
            .map(AgentState::observable)
            .collect();
        d_min(me, &others)
    }

    fn all_d_min(&self) -> Vec<f64> {
        (0..self.agents.len()).map(|i| self.d_min_of(i)).collect()
    }

    pub fn step(&mut self, actions: &[Option<Action>]) -> Result<StepReport, EnvError> {
        let tags = vec![ModeTag::default(); self.agents.len()];
        self.step_tagged(actions, &tags)
    }

    /// Advances one `dt`. `actions[i]` must be `Some` exactly for active agents.
    pub fn step_tagged(
        &mut self,
        actions: &[Option<Action>],
        tags: &[ModeTag],
    ) -> Result<StepReport, EnvError> {
        let n = self.agents.len();
        if actions.len() != n {
            return Err(EnvError::ActionCount { expected: n, got: actions.len() });
        }
        for (agent, action) in self.agents.iter().zip(actions) {
            match (agent.is_active(), action) {
                (true, None) => return Err(EnvError::MissingAction(agent.id)),
                (false, Some(_)) => return Err(EnvError::ActionForInactive(agent.id)),
                (true, Some(a)) => a
                    .check(agent)
                    .map_err(|reason| EnvError::InvalidAction { id: agent.id, reason })?,
                (false, None) => {}
            }
        }

        let dt = self.world.dt;
        let before: Vec<Vector> = self.agents.iter().map(|a| a.position).collect();
        let was_collided: Vec<bool> =
            self.agents.iter().map(|a| a.status == AgentStatus::Collided).collect();

        for (agent, action) in self.agents.iter_mut().zip(actions) {
            let Some(action) = action else { continue };
            let speed = action.speed.clamp(0.0, agent.v_pref);
            agent.heading = agent.heading.turned(action.dpsi, action.dphi);
            agent.velocity = agent.heading.direction() * speed;
            agent.position = agent.position + agent.velocity * dt;
        }

        self.steps += 1;
        self.t = self.steps as f64 * dt;

        // Collisions among agents that were not already collided.
        let mut hit = vec![false; n];
        for i in 0..n {
            if was_collided[i] {
                continue;
            }
            for j in i + 1..n {
                if was_collided[j] {
                    continue;
                }
                let (a, b) = (&self.agents[i], &self.agents[j]);
                if surface_gap(&a.position, a.radius, &b.position, b.radius) < 0.0 {
                    hit[i] = true;
                    hit[j] = true;
                }
            }
        }

        let mut report = StepReport::default();
        for i in 0..n {
            let agent = &mut self.agents[i];
            if !agent.is_active() {
                continue;
            }
            if hit[i] {
                agent.status = AgentStatus::Collided;
                agent.velocity = Vector::zero(agent.dim());
                report.collided.push(i);
            } else if agent.goal_distance() <= arrival_tolerance(agent.radius) {
                agent.status = AgentStatus::Arrived;
                agent.velocity = Vector::zero(agent.dim());
                self.arrival_times[i] = Some(self.t);
                report.arrived.push(i);
            }
            if agent.position.distance(&before[i]) > MOVE_EPSILON {
                self.stuck_counters[i] = 0;
            } else {
                self.stuck_counters[i] += 1;
            }
        }

        report.d_min = self.all_d_min();
        if self.record {
            self.push_record(&report.d_min, tags);
        }
        Ok(report)
    }

    fn push_record(&mut self, d_min: &[f64], tags: &[ModeTag]) {
        let agents = self
            .agents
            .iter()
            .zip(d_min)
            .zip(tags)
            .map(|((a, d), tag)| AgentRecord {
                position: a.position,
                velocity: a.velocity,
                heading: a.heading,
                status: a.status,
                d_min: d.is_finite().then_some(*d),
                mode: tag.mode,
                reason: tag.reason,
            })
            .collect();
        self.trajectory.push(StepRecord { t: self.t, agents });
    }

    /// Fixed-length observation for `id`.
    ///
    /// Layout: ego block `[goal_dist, v_pref, radius, goal direction in the
    /// heading frame]` (2 components `cos, sin` in 2D, a unit 3-vector in 3D),
    /// then [`OBSERVED_NEIGHBORS`] blocks `[relative position, relative
    /// velocity, neighbour radius, combined radius, surface distance,
    /// presence]`, vectors expressed in the frame whose first axis points at
    /// the goal. Neighbours are ordered by ascending surface distance (ties by
    /// id); missing slots are all zero.
    pub fn observe(&self, id: usize) -> Result<Vec<f64>, EnvError> {
        let me = self.agent(id)?;
        if !me.is_active() {
            return Err(EnvError::NotActive(id));
        }
        let dim = me.dim();
        let mut obs = Vec::with_capacity(observation_len(dim));

        let to_goal = me.goal - me.position;
        let goal_dist = to_goal.norm();
        let heading_frame = Frame::from_forward(&me.heading.direction());
        let goal_dir = to_goal.normalized().unwrap_or_else(|| me.heading.direction());
        obs.extend([goal_dist, me.v_pref, me.radius]);
        let local = heading_frame.to_local(&goal_dir);
        match dim {
            Dimension::Two => obs.extend([local.x(), local.y()]),
            Dimension::Three => obs.extend([local.x(), local.y(), local.z()]),
        }

        let goal_frame = Frame::from_forward(&goal_dir);
        let mut neighbors = self.neighbors(id)?;
        let gap = |o: &ObservableState| surface_gap(&me.position, me.radius, &o.position, o.radius);
        neighbors.sort_by(|a, b| gap(a).total_cmp(&gap(b)).then(a.id.cmp(&b.id)));

        let block = neighbor_block_len(dim);
        for slot in 0..OBSERVED_NEIGHBORS {
            match neighbors.get(slot) {
                Some(o) => {
                    let rel_p = goal_frame.to_local(&(o.position - me.position));
                    let rel_v = goal_frame.to_local(&(o.velocity - me.velocity));
                    obs.extend_from_slice(rel_p.components());
                    obs.extend_from_slice(rel_v.components());
                    obs.extend([o.radius, o.radius + me.radius, gap(o), 1.0]);
                }
                None => obs.extend(std::iter::repeat(0.0).take(block)),
            }
        }
        debug_assert_eq!(obs.len(), observation_len(dim));
        Ok(obs)
    }

    pub fn termination(&self) -> TerminationReport {
        let timed_out = self.t >= self.world.t_max - 1e-9;
        let any_active = self.agents.iter().any(AgentState::is_active);
        let done = timed_out || !any_active;
        let agents: Vec<Option<AgentOutcome>> = self
            .agents
            .iter()
            .map(|a| match a.status {
                AgentStatus::Arrived => Some(AgentOutcome::Success),
                AgentStatus::Collided => Some(AgentOutcome::Collision),
                AgentStatus::Active => done.then_some(AgentOutcome::Stuck),
            })
            .collect();
        let scenario = done.then(|| {
            if agents.contains(&Some(AgentOutcome::Collision)) {
                ScenarioOutcome::Collision
            } else if agents.iter().all(|o| *o == Some(AgentOutcome::Success)) {
                ScenarioOutcome::Success
            } else {
                ScenarioOutcome::Stuck
            }
        });
        TerminationReport { done, agents, scenario }
    }
}

/// Orthonormal frame with its first axis along `forward`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Frame {
    axes: [Vector; 3],
    dim: Dimension,
}

impl Frame {
    pub(crate) fn from_forward(forward: &Vector) -> Frame {
        let f = forward.normalized().unwrap_or_else(|| unit_x(forward.dim()));
        match f.dim() {
            Dimension::Two => {
                let left = Vector::new2(-f.y(), f.x());
                Frame { axes: [f, left, left], dim: Dimension::Two }
            }
            Dimension::Three => {
                // Up axis: world +z made orthogonal to forward; +y if parallel.
                let up_hint = if f.z().abs() < 0.999 {
                    Vector::new3(0.0, 0.0, 1.0)
                } else {
                    Vector::new3(0.0, 1.0, 0.0)
                };
                let up = (up_hint - f * f.dot(&up_hint)).normalized().expect("non-parallel hint");
                let left = cross(&up, &f);
                Frame { axes: [f, left, up], dim: Dimension::Three }
            }
        }
    }

    pub(crate) fn to_local(&self, v: &Vector) -> Vector {
        match self.dim {
            Dimension::Two => Vector::new2(v.dot(&self.axes[0]), v.dot(&self.axes[1])),
            Dimension::Three => Vector::new3(
                v.dot(&self.axes[0]),
                v.dot(&self.axes[1]),
                v.dot(&self.axes[2]),
            ),
        }
    }
}

fn unit_x(dim: Dimension) -> Vector {
    match dim {
        Dimension::Two => Vector::new2(1.0, 0.0),
        Dimension::Three => Vector::new3(1.0, 0.0, 0.0),
    }
}

fn cross(a: &Vector, b: &Vector) -> Vector {
    Vector::new3(
        a.y() * b.z() - a.z() * b.y(),
        a.z() * b.x() - a.x() * b.z(),
        a.x() * b.y() - a.y() * b.x(),
    )
}

/// First line of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub schema: String,
    pub version: u32,
    pub planner: String,
    /// Overlaps are only checked at sample times.
    pub collision_check: String,
    pub scenario: Scenario,
}

impl TrajectoryHeader {
    pub fn new(planner: &str, scenario: &Scenario) -> Self {
        TrajectoryHeader {
            schema: TRAJECTORY_SCHEMA.to_string(),
            version: TRAJECTORY_SCHEMA_VERSION,
            planner: planner.to_string(),
            collision_check: format!("sampled every {} s", scenario.world.dt),
            scenario: scenario.clone(),
        }
    }
}

/// Writes a JSON-lines trajectory log: header line, then one record per line.
pub fn write_trajectory<W: Write>(
    mut out: W,
    header: &TrajectoryHeader,
    records: &[StepRecord],
) -> io::Result<()> {
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectory<R: BufRead>(input: R) -> io::Result<(TrajectoryHeader, Vec<StepRecord>)> {
    let invalid = |e: String| io::Error::new(io::ErrorKind::InvalidData, e);
    let mut lines = input.lines();
    let first = lines.next().ok_or_else(|| invalid("empty trajectory log".into()))??;
    let header: TrajectoryHeader = serde_json::from_str(&first).map_err(|e| invalid(e.to_string()))?;
    if header.schema != TRAJECTORY_SCHEMA || header.version != TRAJECTORY_SCHEMA_VERSION {
        return Err(invalid(format!(
            "unsupported trajectory schema {} v{}",
            header.schema, header.version
        )));
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| invalid(e.to_string()))?);
    }
    Ok((header, records))
}
