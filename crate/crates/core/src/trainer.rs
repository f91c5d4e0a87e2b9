//! Synchronous advantage actor-critic training with a multi-stage curriculum.
//!
//! Each update gathers up to `n_step` steps from `parallel_envs` independent
//! environments that all act with the same parameter snapshot. Every agent in
//! an environment is its own learning sample; all agents share the one
//! model. The minimized objective per sample is
//!
//! ```text
//! (R_t − V(s_t))²  −  [ log π(u_t | s_t) · (R_t − V(s_t)) + β · H(π(s_t)) ]
//! ```
//!
//! with the advantage held constant in the policy term and
//! `R_t = Σ_{i<k} γ^i r_{t+i} + γ^k V(s_{t+k})`. Rollouts may run on several
//! threads; their results are merged in environment order, so a fixed seed
//! yields bit-identical training regardless of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{generate_scenario, BenchError};
use crate::domain::{Dimension, WorldConfig};
use crate::env::{EnvError, EpisodeState};
use crate::policy::{entropy, sample_action, ActionSpace, PolicyError, PolicyModel, DEFAULT_HIDDEN};
use crate::reward::{RewardConfig, RewardError, RewardVariant};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),
    #[error("batch does not match the model: {0}")]
    Shape(String),
    #[error("training diverged at update {update} of stage {stage}: {reason}")]
    Diverged {
        stage: usize,
        update: usize,
        reason: String,
        /// Parameters before the failing update.
        last_good: Box<PolicyModel>,
    },
    #[error("reward invariant violated: {0}")]
    RewardInvariant(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Scenario(#[from] BenchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub agent_count: usize,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Entropy bonus weight.
    pub beta: f64,
    /// Bootstrap horizon `k`.
    pub n_step: usize,
    pub learning_rate: f64,
    pub parallel_envs: usize,
    pub stages: Vec<Stage>,
    pub seed: u64,
    pub reward: RewardConfig,
    /// Training world; the step defaults to 0.2 s.
    pub world: WorldConfig,
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.97,
            beta: 1e-4,
            n_step: 8,
            learning_rate: 3e-4,
            parallel_envs: 8,
            stages: vec![Stage { agent_count: 2, episodes: 20_000 }, Stage { agent_count: 4, episodes: 20_000 }],
            seed: 0,
            reward: RewardConfig::nsl(),
            world: WorldConfig::planar().with_dt(0.2),
            hidden: DEFAULT_HIDDEN.to_vec(),
            adam: AdamConfig::default(),
            max_grad_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn for_dimension(dim: Dimension) -> Self {
        TrainConfig { world: WorldConfig::for_dimension(dim).with_dt(0.2), ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be >= 0");
        }
        if self.n_step < 1 {
            return bad("n_step must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be >= 0");
        }
        if self.parallel_envs < 1 {
            return bad("parallel_envs must be >= 1");
        }
        if self.stages.is_empty() {
            return bad("stages must not be empty");
        }
        if self.stages.iter().any(|s| s.episodes == 0 || s.agent_count == 0) {
            return bad("every stage needs agents and a positive episode budget");
        }
        if self.stages.windows(2).any(|w| w[1].agent_count <= w[0].agent_count) {
            return bad("stage agent counts must be strictly increasing");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return bad("max_grad_norm must be positive");
            }
        }
        self.world.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        self.reward.validate()?;
        Ok(())
    }

    pub fn new_model(&self) -> PolicyModel {
        let dim = self.world.dimension;
        let mut model = PolicyModel::new(
            dim,
            crate::env::observation_len(dim),
            &self.hidden,
            ActionSpace::for_dimension(dim).len(),
            self.seed,
        );
        model
            .metadata
            .insert("train_config".into(), serde_json::to_value(self).expect("config serializes"));
        model
    }
}

/// `R_t` for every position of a `k`-step segment, computed backward from
/// `bootstrap` (pass 0 for segments that end in a terminal state).
pub fn discounted_return(rewards: &[f64], bootstrap: f64, gamma: f64) -> Result<Vec<f64>, TrainError> {
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(TrainError::NonFiniteReward(*r));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    Ok(out)
}

/// One agent's consecutive transitions within an update window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Segment {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// The segment ends in a terminal state (arrived or collided).
    pub done: bool,
    /// `V(s_{t+k})` for truncated segments, 0 for terminal ones.
    pub bootstrap: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBatch {
    pub segments: Vec<Segment>,
}

impl RolloutBatch {
    pub fn sample_count(&self) -> usize {
        self.segments.iter().map(|s| s.actions.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    /// Mean of `(R − V)²`.
    pub value_loss: f64,
    /// Mean of `log π(u|s)·A + β·H` (the quantity being increased).
    pub policy_objective: f64,
    /// Mean policy entropy.
    pub entropy: f64,
    pub samples: usize,
}

impl LossReport {
    /// The minimized scalar `value_loss − policy_objective`.
    pub fn total(&self) -> f64 {
        self.value_loss - self.policy_objective
    }
}

/// Loss diagnostics without gradients.
pub fn losses(batch: &RolloutBatch, model: &PolicyModel, gamma: f64, beta: f64) -> Result<LossReport, TrainError> {
    Ok(evaluate_batch(batch, model, gamma, beta, false)?.0)
}

/// Loss diagnostics and the gradient of `value_loss − policy_objective`
/// with respect to every model parameter.
pub fn loss_gradient(
    batch: &RolloutBatch,
    model: &PolicyModel,
    gamma: f64,
    beta: f64,
) -> Result<(LossReport, Vec<f64>), TrainError> {
    evaluate_batch(batch, model, gamma, beta, true)
}

fn evaluate_batch(
    batch: &RolloutBatch,
    model: &PolicyModel,
    gamma: f64,
    beta: f64,
    with_grad: bool,
) -> Result<(LossReport, Vec<f64>), TrainError> {
    for (i, s) in batch.segments.iter().enumerate() {
        if s.observations.len() != s.actions.len() || s.rewards.len() != s.actions.len() {
            return Err(TrainError::Shape(format!("segment {i} has ragged fields")));
        }
        if let Some(a) = s.actions.iter().find(|a| **a >= model.action_count()) {
            return Err(TrainError::Shape(format!("segment {i} has action {a} out of range")));
        }
        if !s.bootstrap.is_finite() {
            return Err(TrainError::NonFiniteReward(s.bootstrap));
        }
    }
    let n = batch.sample_count();
    if n == 0 {
        return Ok((LossReport::default(), vec![0.0; if with_grad { model.param_count() } else { 0 }]));
    }
    let scale = 1.0 / n as f64;

    let per_segment: Vec<Result<(LossReport, Vec<f64>), TrainError>> = batch
        .segments
        .par_iter()
        .map(|seg| {
            let returns = discounted_return(&seg.rewards, seg.bootstrap, gamma)?;
            let mut grad = if with_grad { vec![0.0; model.param_count()] } else { Vec::new() };
            let mut rep = LossReport::default();
            for ((obs, &action), ret) in seg.observations.iter().zip(&seg.actions).zip(returns) {
                let pass = model.forward_pass(obs)?;
                let advantage = ret - pass.value;
                let h = entropy(&pass.probs);
                let log_p = pass.probs[action].ln();
                rep.value_loss += advantage * advantage * scale;
                rep.policy_objective += (log_p * advantage + beta * h) * scale;
                rep.entropy += h * scale;
                if with_grad {
                    // d/dV of (R − V)²
                    let d_value = -2.0 * advantage * scale;
                    // d/dz_k of −[A·log π_a + β·H]
                    let d_logits: Vec<f64> = pass
                        .probs
                        .iter()
                        .enumerate()
                        .map(|(k, &p)| {
                            let indicator = if k == action { 1.0 } else { 0.0 };
                            let log_pk = if p > 0.0 { p.ln() } else { 0.0 };
                            scale * (-advantage * (indicator - p) + beta * p * (log_pk + h))
                        })
                        .collect();
                    model.backward(&pass, &d_logits, d_value, &mut grad);
                }
            }
            Ok((rep, grad))
        })
        .collect();

    let mut report = LossReport { samples: n, ..LossReport::default() };
    let mut grad = if with_grad { vec![0.0; model.param_count()] } else { Vec::new() };
    for item in per_segment {
        let (rep, g) = item?;
        report.value_loss += rep.value_loss;
        report.policy_objective += rep.policy_objective;
        report.entropy += rep.entropy;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    Ok((report, grad))
}

#[derive(Debug, Clone)]
struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(cfg: AdamConfig, n: usize) -> Self {
        Adam { cfg, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
        }
    }
}

/// Per-agent bookkeeping inside a running training episode.
#[derive(Debug, Clone)]
struct AgentLedger {
    prev_goal_dist: f64,
    start_goal_dist: f64,
    goal_part_sum: f64,
    total: f64,
    reached: bool,
}

#[derive(Debug, Clone)]
struct RunningEpisode {
    state: EpisodeState,
    ledgers: Vec<AgentLedger>,
}

#[derive(Debug, Clone)]
struct Worker {
    rng: ChaCha8Rng,
    episode: Option<RunningEpisode>,
}

struct WorkerYield {
    segments: Vec<Segment>,
    finished_episodes: Vec<f64>,
}

fn worker_seed(seed: u64, stage: usize, worker: usize) -> u64 {
    seed ^ (stage as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (worker as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

impl Worker {
    fn start_episode(&mut self, world: &WorldConfig, agents: usize) -> Result<RunningEpisode, TrainError> {
        let seed = self.rng.gen();
        let scenario = generate_scenario(&mut self.rng, agents, world, seed, "train")?;
        let state = EpisodeState::new(&scenario, false);
        let ledgers = state
            .agents
            .iter()
            .map(|a| {
                let d = a.goal_distance();
                AgentLedger { prev_goal_dist: d, start_goal_dist: d, goal_part_sum: 0.0, total: 0.0, reached: false }
            })
            .collect();
        Ok(RunningEpisode { state, ledgers })
    }

    fn collect(
        &mut self,
        model: &PolicyModel,
        space: &ActionSpace,
        cfg: &TrainConfig,
        agents: usize,
    ) -> Result<WorkerYield, TrainError> {
        let mut ep = match self.episode.take() {
            Some(ep) => ep,
            None => self.start_episode(&cfg.world, agents)?,
        };
        let n = ep.state.agents.len();
        let mut open: Vec<Option<Segment>> = vec![None; n];
        let mut closed = Vec::new();
        let mut finished = Vec::new();

        for _ in 0..cfg.n_step {
            let mut actions = vec![None; n];
            for id in 0..n {
                if !ep.state.agents[id].is_active() {
                    continue;
                }
                let obs = ep.state.observe(id)?;
                let (probs, _) = model.forward(&obs)?;
                let a = sample_action(&probs, &mut self.rng)?;
                actions[id] = Some(space.decode(a, ep.state.agents[id].v_pref)?);
                let seg = open[id].get_or_insert_with(Segment::default);
                seg.observations.push(obs);
                seg.actions.push(a);
            }

            let report = ep.state.step(&actions)?;
            for id in 0..n {
                if actions[id].is_none() {
                    continue;
                }
                let agent = &ep.state.agents[id];
                let now = agent.goal_distance();
                let reached = report.arrived.contains(&id);
                let ledger = &mut ep.ledgers[id];
                let parts = cfg.reward.breakdown(reached, report.d_min[id], ledger.prev_goal_dist, now)?;
                if cfg.reward.variant == RewardVariant::Nsl
                    && !(cfg.reward.collision_penalty..=0.0).contains(&parts.collision)
                {
                    return Err(TrainError::RewardInvariant(format!(
                        "collision term {} outside [{}, 0]",
                        parts.collision, cfg.reward.collision_penalty
                    )));
                }
                let r = parts.collision + parts.goal;
                if !r.is_finite() {
                    return Err(TrainError::NonFiniteReward(r));
                }
                if !reached {
                    ledger.goal_part_sum += parts.goal;
                }
                ledger.reached |= reached;
                ledger.prev_goal_dist = now;
                ledger.total += r;
                let seg = open[id].as_mut().expect("segment opened when acting");
                seg.rewards.push(r);
                if !agent.is_active() {
                    let mut seg = open[id].take().unwrap();
                    seg.done = true;
                    closed.push(seg);
                }
            }

            if ep.state.termination().done {
                break;
            }
        }

        // Truncated segments bootstrap from the current value estimate.
        for (id, seg) in open.iter_mut().enumerate() {
            if let Some(mut seg) = seg.take() {
                let obs = ep.state.observe(id)?;
                seg.bootstrap = model.forward(&obs)?.1;
                closed.push(seg);
            }
        }

        if ep.state.termination().done {
            if cfg.reward.variant == RewardVariant::Nsl {
                for (agent, ledger) in ep.state.agents.iter().zip(&ep.ledgers) {
                    if ledger.reached {
                        continue;
                    }
                    let expect = cfg.reward.alpha * (ledger.start_goal_dist - agent.goal_distance());
                    if (ledger.goal_part_sum - expect).abs() > 1e-9 {
                        return Err(TrainError::RewardInvariant(format!(
                            "shaping sum {} differs from telescoped {}",
                            ledger.goal_part_sum, expect
                        )));
                    }
                }
            }
            let mean = ep.ledgers.iter().map(|l| l.total).sum::<f64>() / n as f64;
            finished.push(mean);
        } else {
            self.episode = Some(ep);
        }
        Ok(WorkerYield { segments: closed, finished_episodes: finished })
    }
}

/// Per-episode rewards of one stage and their rolling mean.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardCurve {
    pub stage: usize,
    pub agent_count: usize,
    pub window: usize,
    pub episode_rewards: Vec<f64>,
    pub rolling: Vec<f64>,
}

impl RewardCurve {
    fn new(stage: usize, agent_count: usize, budget: usize, episode_rewards: Vec<f64>) -> Self {
        let window = rolling_window(budget);
        let rolling = rolling_mean(&episode_rewards, window);
        RewardCurve { stage, agent_count, window, episode_rewards, rolling }
    }

    /// Rolling mean once the first full window is available.
    pub fn initial_rolling(&self) -> Option<f64> {
        self.rolling.get(self.window.saturating_sub(1)).copied()
    }

    pub fn final_rolling(&self) -> Option<f64> {
        self.rolling.last().copied()
    }
}

/// `min(1000, budget / 10)`, at least 1.
pub fn rolling_window(budget: usize) -> usize {
    (budget / 10).clamp(1, 1000)
}

pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub model: PolicyModel,
    pub curve: RewardCurve,
    pub updates: usize,
}

/// Trains `model` on `config.stages[stage]` until its episode budget is used.
pub fn train_stage(config: &TrainConfig, model: PolicyModel, stage: usize) -> Result<StageResult, TrainError> {
    config.validate()?;
    let plan = *config
        .stages
        .get(stage)
        .ok_or_else(|| TrainError::Config(format!("no stage {stage}")))?;
    model.check_compatible(config.world.dimension)?;
    let space = ActionSpace::for_dimension(config.world.dimension);

    let mut model = model;
    let mut adam = Adam::new(config.adam.clone(), model.param_count());
    let mut workers: Vec<Worker> = (0..config.parallel_envs)
        .map(|w| Worker { rng: ChaCha8Rng::seed_from_u64(worker_seed(config.seed, stage, w)), episode: None })
        .collect();
    let mut rewards = Vec::with_capacity(plan.episodes);
    let mut updates = 0;

    while rewards.len() < plan.episodes {
        let yields: Vec<Result<WorkerYield, TrainError>> = workers
            .par_iter_mut()
            .map(|w| w.collect(&model, &space, config, plan.agent_count))
            .collect();
        let mut batch = RolloutBatch::default();
        for y in yields {
            let y = y?;
            batch.segments.extend(y.segments);
            rewards.extend(y.finished_episodes);
        }

        let (_, mut grad) = loss_gradient(&batch, &model, config.gamma, config.beta)?;
        if let Some(limit) = config.max_grad_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > limit {
                grad.iter_mut().for_each(|g| *g *= limit / norm);
            }
        }
        let last_good = model.clone();
        adam.step(model.params_mut(), &grad, config.learning_rate);
        updates += 1;
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(TrainError::Diverged {
                stage,
                update: updates,
                reason: "non-finite parameters".into(),
                last_good: Box::new(last_good),
            });
        }
    }

    let curve = RewardCurve::new(stage, plan.agent_count, plan.episodes, rewards);
    Ok(StageResult { model, curve, updates })
}

#[derive(Debug, Clone)]
pub struct CurriculumResult {
    pub model: PolicyModel,
    pub stages: Vec<StageResult>,
}

/// Runs every stage in order, warm-starting each from the previous stage's
/// model. `on_stage` sees each stage result as it finishes (checkpointing).
pub fn train_curriculum_with<F>(config: &TrainConfig, mut on_stage: F) -> Result<CurriculumResult, TrainError>
where
    F: FnMut(&StageResult) -> Result<(), TrainError>,
{
    config.validate()?;
    let mut model = config.new_model();
    let mut stages = Vec::with_capacity(config.stages.len());
    for i in 0..config.stages.len() {
        let result = train_stage(config, model, i)?;
        on_stage(&result)?;
        model = result.model.clone();
        stages.push(result);
    }
    Ok(CurriculumResult { model, stages })
}

pub fn train_curriculum(config: &TrainConfig) -> Result<CurriculumResult, TrainError> {
    train_curriculum_with(config, |_| Ok(()))
}

/// CSV rows `episode,reward,rolling_reward,stage` for a sequence of curves;
/// episode numbers run on across stages.
pub fn write_curves<W: std::io::Write>(out: W, curves: &[&RewardCurve]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "reward", "rolling_reward", "stage"])?;
    let mut episode = 0usize;
    for c in curves {
        for (r, roll) in c.episode_rewards.iter().zip(&c.rolling) {
            w.write_record([episode.to_string(), r.to_string(), roll.to_string(), c.stage.to_string()])?;
            episode += 1;
        }
    }
    w.flush()?;
    Ok(())
}
