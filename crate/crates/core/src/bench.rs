//! Scenario generation, batch evaluation and result export.
//!
//! Scenarios draw radius and preferred speed uniformly from
//! [`RADIUS_RANGE`] and [`V_PREF_RANGE`], and place starts and goals
//! uniformly inside the world by rejection sampling. Evaluation runs every
//! scenario to termination and classifies it as success (all arrived),
//! collision (any collided) or stuck (everything else).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AgentState, AgentStatus, Dimension, DomainError, Scenario, Vector, WorldConfig};
use crate::env::{
    AgentOutcome, ControllerMode, EpisodeState, ModeTag, ScenarioOutcome, StepRecord, SwitchReason,
};
use crate::planner::{Planner, PlannerError};
use crate::policy::PolicyError;

pub const RADIUS_RANGE: (f64, f64) = (0.2, 0.8);
pub const V_PREF_RANGE: (f64, f64) = (0.5, 2.0);
/// Minimum surface clearance between starts and between goals.
pub const PLACEMENT_MARGIN: f64 = 0.1;
pub const PLACEMENT_TRIES: usize = 10_000;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("could not place agent {agent} of {agent_count} after {tries} tries")]
    Capacity { agent_count: usize, agent: usize, tries: usize },
    #[error("invalid bench request: {0}")]
    Invalid(String),
    #[error("agent {0} did not arrive; extra time is undefined")]
    NotArrived(usize),
    #[error("safety assertion failed in scenario {scenario} at t = {t}: agent {agent} overlaps but is not collided")]
    Safety { scenario: usize, t: f64, agent: usize },
    #[error("cannot render an empty trajectory")]
    EmptyTrajectory,
    #[error(transparent)]
    Model(#[from] PolicyError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

fn uniform_point<R: Rng>(rng: &mut R, world: &WorldConfig, margin: f64) -> Vector {
    let c: Vec<f64> = world
        .bounds
        .components()
        .iter()
        .map(|e| {
            let h = e / 2.0 - margin;
            rng.gen_range(-h..=h)
        })
        .collect();
    Vector::from_slice(&c).expect("bounds have 2 or 3 components")
}

fn place<R: Rng>(
    rng: &mut R,
    world: &WorldConfig,
    radius: f64,
    taken: &[(Vector, f64)],
) -> Option<Vector> {
    (0..PLACEMENT_TRIES).find_map(|_| {
        let p = uniform_point(rng, world, radius);
        taken
            .iter()
            .all(|(q, r)| p.distance(q) > radius + r + PLACEMENT_MARGIN)
            .then_some(p)
    })
}

/// One random scenario drawn from `rng`.
pub fn generate_scenario<R: Rng>(
    rng: &mut R,
    agent_count: usize,
    world: &WorldConfig,
    seed: u64,
    label: &str,
) -> Result<Scenario, BenchError> {
    let mut starts: Vec<(Vector, f64)> = Vec::with_capacity(agent_count);
    let mut goals: Vec<(Vector, f64)> = Vec::with_capacity(agent_count);
    let mut agents = Vec::with_capacity(agent_count);
    let capacity = |agent| BenchError::Capacity { agent_count, agent, tries: PLACEMENT_TRIES };
    for id in 0..agent_count {
        let radius = rng.gen_range(RADIUS_RANGE.0..=RADIUS_RANGE.1);
        let v_pref = rng.gen_range(V_PREF_RANGE.0..=V_PREF_RANGE.1);
        let start = place(rng, world, radius, &starts).ok_or_else(|| capacity(id))?;
        let goal = place(rng, world, radius, &goals).ok_or_else(|| capacity(id))?;
        starts.push((start, radius));
        goals.push((goal, radius));
        agents.push(AgentState::new(id, start, goal, radius, v_pref));
    }
    let scenario = Scenario { world: world.clone(), agents, seed, label: label.to_string() };
    scenario.validate()?;
    Ok(scenario)
}

/// `n` scenarios; scenario `i` is reproducible from its own `seed` field.
pub fn generate_scenarios(
    n: usize,
    agent_count: usize,
    world: &WorldConfig,
    seed: u64,
) -> Result<Vec<Scenario>, BenchError> {
    if n == 0 {
        return Err(BenchError::Invalid("scenario count must be >= 1".into()));
    }
    world.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let s: u64 = master.gen();
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            generate_scenario(&mut rng, agent_count, world, s, &format!("random-{agent_count}-{i}"))
        })
        .collect()
}

/// `t_goal − ‖p₀ − p_g‖ / v_pref`, floored at `−dt`.
pub fn extra_time(start: &AgentState, t_goal: Option<f64>, dt: f64) -> Result<f64, BenchError> {
    let t = t_goal.ok_or(BenchError::NotArrived(start.id))?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(BenchError::Invalid(format!("arrival time {t} must be finite and >= 0")));
    }
    Ok((t - start.goal_distance() / start.v_pref).max(-dt))
}

/// Per-scenario result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub index: usize,
    pub seed: u64,
    pub label: String,
    pub outcome: ScenarioOutcome,
    pub agents: Vec<AgentOutcome>,
    pub arrival_times: Vec<Option<f64>>,
    /// Mean over agents; only set for successful scenarios.
    pub extra_time: Option<f64>,
    pub steps: u64,
    pub t_end: f64,
    /// Agent-step counts per switching reason (hybrid only).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub mode_steps: BTreeMap<String, u64>,
    /// Per-step `(agent, reason)` for steps not in normal mode (hybrid, when recorded).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mode_trace: Vec<ModeTraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTraceEntry {
    pub step: u64,
    pub agent: usize,
    pub reason: SwitchReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub planner: String,
    pub agents: usize,
    pub world: String,
    pub pct_success: f64,
    pub pct_collision: f64,
    pub pct_stuck: f64,
    /// Seconds, averaged over successful scenarios; empty if none succeeded.
    pub mean_extra_time: Option<f64>,
    pub n_cases: usize,
    pub frac_high_risk: Option<f64>,
    pub frac_simple: Option<f64>,
    pub frac_stuck: Option<f64>,
    pub frac_normal: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Keep full trajectories.
    pub record: bool,
    /// Abort if an active agent ends a step overlapping another agent.
    pub safety_assertions: bool,
    /// Keep the non-normal mode trace for hybrid runs.
    pub mode_trace: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { record: false, safety_assertions: true, mode_trace: false }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub row: MetricsRow,
    pub outcomes: Vec<RunOutcome>,
    /// Present when recording was requested, in scenario order.
    pub trajectories: Vec<Vec<StepRecord>>,
}

fn reason_key(r: SwitchReason) -> &'static str {
    match r {
        SwitchReason::HighRisk => "high_risk",
        SwitchReason::Simple => "simple",
        SwitchReason::Stuck => "stuck",
        SwitchReason::Normal => "normal",
    }
}

/// Runs one scenario to termination.
pub fn run_scenario(
    planner: &Planner,
    scenario: &Scenario,
    index: usize,
    opts: EvalOptions,
) -> Result<(RunOutcome, Vec<StepRecord>), BenchError> {
    let mut state = EpisodeState::new(scenario, opts.record);
    let n = scenario.agents.len();
    let mut mode_steps = BTreeMap::new();
    let mut mode_trace = Vec::new();
    let check_safety =
        opts.safety_assertions && matches!(planner, Planner::Fmp(_) | Planner::Hybrid { .. });

    while !state.termination().done {
        let mut actions = vec![None; n];
        let mut tags = vec![ModeTag::default(); n];
        for id in 0..n {
            if !state.agents[id].is_active() {
                continue;
            }
            let (action, tag) = planner.act(&state, id)?;
            actions[id] = Some(action);
            tags[id] = tag;
            if let Some(reason) = tag.reason {
                *mode_steps.entry(reason_key(reason).to_string()).or_insert(0) += 1;
                if opts.mode_trace && tag.mode == Some(ControllerMode::Fmp) {
                    mode_trace.push(ModeTraceEntry { step: state.steps, agent: id, reason });
                }
            }
        }
        let report = state.step_tagged(&actions, &tags).map_err(PlannerError::from)?;
        if check_safety {
            for (id, d) in report.d_min.iter().enumerate() {
                if *d < 0.0 && state.agents[id].status == AgentStatus::Active {
                    return Err(BenchError::Safety { scenario: index, t: state.t, agent: id });
                }
            }
        }
    }

    let term = state.termination();
    let outcome = term.scenario.expect("terminated");
    let agents: Vec<AgentOutcome> = term.agents.into_iter().map(|o| o.expect("terminated")).collect();
    let extra = if outcome == ScenarioOutcome::Success {
        let mut sum = 0.0;
        for (a, t) in scenario.agents.iter().zip(&state.arrival_times) {
            sum += extra_time(a, *t, scenario.world.dt)?;
        }
        Some(sum / n.max(1) as f64)
    } else {
        None
    };
    let run = RunOutcome {
        index,
        seed: scenario.seed,
        label: scenario.label.clone(),
        outcome,
        agents,
        arrival_times: state.arrival_times.clone(),
        extra_time: extra,
        steps: state.steps,
        t_end: state.t,
        mode_steps,
        mode_trace,
    };
    Ok((run, state.trajectory))
}

/// Evaluates `planner` on every scenario. Scenarios run in parallel on the
/// current rayon pool; results keep scenario order.
pub fn evaluate(planner: &Planner, scenarios: &[Scenario], opts: EvalOptions) -> Result<Evaluation, BenchError> {
    let first = scenarios.first().ok_or_else(|| BenchError::Invalid("no scenarios".into()))?;
    let dim = first.world.dimension;
    if scenarios.iter().any(|s| s.world.dimension != dim) {
        return Err(BenchError::Invalid("scenarios mix world dimensions".into()));
    }
    let agent_count = first.agents.len();
    if scenarios.iter().any(|s| s.agents.len() != agent_count) {
        return Err(BenchError::Invalid("scenarios in one batch must have equal agent counts".into()));
    }
    planner.check_compatible(dim)?;

    let results: Vec<Result<(RunOutcome, Vec<StepRecord>), BenchError>> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| run_scenario(planner, s, i, opts))
        .collect();
    let mut outcomes = Vec::with_capacity(scenarios.len());
    let mut trajectories = Vec::new();
    for r in results {
        let (o, t) = r?;
        outcomes.push(o);
        if opts.record {
            trajectories.push(t);
        }
    }
    let row = metrics_row(planner.name(), agent_count, &first.world.size_label(), &outcomes);
    Ok(Evaluation { row, outcomes, trajectories })
}

pub fn metrics_row(planner: &str, agents: usize, world: &str, outcomes: &[RunOutcome]) -> MetricsRow {
    let n = outcomes.len();
    let pct = |k: ScenarioOutcome| {
        if n == 0 {
            0.0
        } else {
            100.0 * outcomes.iter().filter(|o| o.outcome == k).count() as f64 / n as f64
        }
    };
    let extras: Vec<f64> = outcomes.iter().filter_map(|o| o.extra_time).collect();
    let mean_extra_time = (!extras.is_empty()).then(|| extras.iter().sum::<f64>() / extras.len() as f64);

    let mut totals: BTreeMap<&str, u64> = BTreeMap::new();
    for o in outcomes {
        for (k, v) in &o.mode_steps {
            *totals.entry(k.as_str()).or_insert(0) += v;
        }
    }
    let all: u64 = totals.values().sum();
    let frac = |k: &str| (all > 0).then(|| *totals.get(k).unwrap_or(&0) as f64 / all as f64);

    MetricsRow {
        planner: planner.to_string(),
        agents,
        world: world.to_string(),
        pct_success: pct(ScenarioOutcome::Success),
        pct_collision: pct(ScenarioOutcome::Collision),
        pct_stuck: pct(ScenarioOutcome::Stuck),
        mean_extra_time,
        n_cases: n,
        frac_high_risk: frac("high_risk"),
        frac_simple: frac("simple"),
        frac_stuck: frac("stuck"),
        frac_normal: frac("normal"),
    }
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_outcomes_jsonl<W: Write>(mut out: W, outcomes: &[RunOutcome]) -> std::io::Result<()> {
    for o in outcomes {
        serde_json::to_writer(&mut out, o)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Markdown table: one row per planner and density.
pub fn summary_markdown(rows: &[MetricsRow]) -> String {
    let mut s = String::from(
        "| planner | agents | world | success % | collision % | stuck % | extra time (s) | cases |\n\
         |---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let extra = r.mean_extra_time.map_or("-".to_string(), |e| format!("{e:.2}"));
        writeln!(
            s,
            "| {} | {} | {} | {:.1} | {:.1} | {:.1} | {} | {} |",
            r.planner, r.agents, r.world, r.pct_success, r.pct_collision, r.pct_stuck, extra, r.n_cases
        )
        .unwrap();
    }
    s
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22"];
const PX_PER_M: f64 = 60.0;

/// Static SVG of a run: one polyline per agent, start circles, goal squares
/// and a red cross wherever an agent became collided. 3D runs are drawn as
/// a top-down projection.
pub fn render_svg(scenario: &Scenario, records: &[StepRecord]) -> Result<String, BenchError> {
    if records.is_empty() || scenario.agents.is_empty() {
        return Err(BenchError::EmptyTrajectory);
    }
    let b = scenario.world.bounds;
    let (w, h) = (b.x() * PX_PER_M, b.y() * PX_PER_M);
    let px = |v: &Vector| ((v.x() + b.x() / 2.0) * PX_PER_M, (b.y() / 2.0 - v.y()) * PX_PER_M);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#)
        .unwrap();
    if scenario.world.dimension == Dimension::Three {
        s.push_str("<!-- top-down projection onto the x-y plane -->\n");
    }
    writeln!(s, r##"<rect x="0" y="0" width="{w:.0}" height="{h:.0}" fill="#ffffff" stroke="#000000"/>"##).unwrap();
    for (i, a) in scenario.agents.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = records
            .iter()
            .filter_map(|r| r.agents.get(i))
            .map(|r| {
                let (x, y) = px(&r.position);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        writeln!(
            s,
            r#"<polyline class="path" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        )
        .unwrap();
        let (sx, sy) = px(&a.position);
        let r = a.radius * PX_PER_M;
        writeln!(s, r#"<circle class="start" cx="{sx:.2}" cy="{sy:.2}" r="{r:.2}" fill="none" stroke="{color}"/>"#)
            .unwrap();
        let (gx, gy) = px(&a.goal);
        writeln!(
            s,
            r#"<rect class="goal" x="{:.2}" y="{:.2}" width="8" height="8" fill="{color}"/>"#,
            gx - 4.0,
            gy - 4.0
        )
        .unwrap();
        if let Some(hit) = records
            .iter()
            .filter_map(|r| r.agents.get(i))
            .find(|r| r.status == AgentStatus::Collided)
        {
            let (cx, cy) = px(&hit.position);
            writeln!(
                s,
                r##"<path class="collision" d="M {:.2} {:.2} L {:.2} {:.2} M {:.2} {:.2} L {:.2} {:.2}" stroke="#d62728" stroke-width="3"/>"##,
                cx - 6.0,
                cy - 6.0,
                cx + 6.0,
                cy + 6.0,
                cx - 6.0,
                cy + 6.0,
                cx + 6.0,
                cy - 6.0
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Agents evenly spaced on a circle, each heading for the antipodal point.
pub fn antipodal_circle(
    world: &WorldConfig,
    agent_count: usize,
    circle_radius: f64,
    radius: f64,
    v_pref: f64,
) -> Result<Scenario, BenchError> {
    let agents = (0..agent_count)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / agent_count as f64;
            let (c, s) = (circle_radius * a.cos(), circle_radius * a.sin());
            let (p, g) = match world.dimension {
                Dimension::Two => (Vector::new2(c, s), Vector::new2(-c, -s)),
                Dimension::Three => (Vector::new3(c, s, 0.0), Vector::new3(-c, -s, 0.0)),
            };
            AgentState::new(i, p, g, radius, v_pref)
        })
        .collect();
    let scenario =
        Scenario { world: world.clone(), agents, seed: 0, label: format!("antipodal-{agent_count}") };
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extra_time_examples() {
        let a = AgentState::new(0, Vector::new2(0.0, 0.0), Vector::new2(4.0, 0.0), 0.3, 2.0);
        assert!((extra_time(&a, Some(2.5), 0.1).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(extra_time(&a, None, 0.1), Err(BenchError::NotArrived(0))));
        let same = AgentState::new(0, Vector::new2(1.0, 1.0), Vector::new2(1.0, 1.0), 0.3, 2.0);
        assert_eq!(extra_time(&same, Some(0.7), 0.1).unwrap(), 0.7);
    }

    #[test]
    fn summary_has_one_line_per_row() {
        let row = metrics_row("fmp", 2, "8x8", &[]);
        let md = summary_markdown(&[row.clone(), row]);
        assert_eq!(md.lines().count(), 4);
    }
}
