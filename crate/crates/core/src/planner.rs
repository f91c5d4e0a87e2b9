//! Uniform dispatch over the available planners.

use crate::domain::{wrap_angle, Dimension, Heading};
use crate::env::{Action, ControllerMode, EnvError, EpisodeState, ModeTag, MAX_TURN};
use crate::fmp::{fmp_action, FmpConfig};
use crate::hybrid::{hybrid_action, policy_action, HybridConfig, HybridError};
use crate::policy::{ActionSpace, PolicyError, PolicyModel};

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
}

#[derive(Debug, Clone)]
pub enum Planner {
    Fmp(FmpConfig),
    /// Greedy decode of the learned policy.
    Policy { model: PolicyModel, space: ActionSpace },
    Hybrid { model: PolicyModel, space: ActionSpace, config: HybridConfig },
    /// Heads for the goal at `v_pref`, ignoring everyone else.
    StraightLine,
}

impl Planner {
    pub fn policy(model: PolicyModel) -> Self {
        let space = ActionSpace::for_dimension(model.dimension());
        Planner::Policy { model, space }
    }

    pub fn hybrid(model: PolicyModel, config: HybridConfig) -> Self {
        let space = ActionSpace::for_dimension(model.dimension());
        Planner::Hybrid { model, space, config }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Planner::Fmp(_) => "fmp",
            Planner::Policy { .. } => "policy",
            Planner::Hybrid { .. } => "hybrid",
            Planner::StraightLine => "straight",
        }
    }

    pub fn check_compatible(&self, dim: Dimension) -> Result<(), PolicyError> {
        match self {
            Planner::Policy { model, .. } | Planner::Hybrid { model, .. } => model.check_compatible(dim),
            _ => Ok(()),
        }
    }

    /// Action for active agent `id` from the current snapshot of `state`.
    pub fn act(&self, state: &EpisodeState, id: usize) -> Result<(Action, ModeTag), PlannerError> {
        let agent = state.agent(id)?;
        let v_max = state.world.v_max(agent.v_pref);
        match self {
            Planner::Fmp(cfg) => {
                let neighbors = state.neighbors(id)?;
                let tag = ModeTag { mode: Some(ControllerMode::Fmp), reason: None };
                Ok((fmp_action(agent, &neighbors, cfg, v_max, state.world.dt), tag))
            }
            Planner::Policy { model, space } => {
                let obs = state.observe(id)?;
                let tag = ModeTag { mode: Some(ControllerMode::Policy), reason: None };
                Ok((policy_action(model, space, &obs, agent.v_pref)?, tag))
            }
            Planner::Hybrid { model, space, config } => {
                let neighbors = state.neighbors(id)?;
                let counter = state.stuck_counters[id];
                let mut obs_err = None;
                let result = hybrid_action(agent, &neighbors, counter, model, space, config, &state.world, || {
                    state.observe(id).unwrap_or_else(|e| {
                        obs_err = Some(e);
                        Vec::new()
                    })
                });
                if let Some(e) = obs_err {
                    return Err(e.into());
                }
                Ok(result?)
            }
            Planner::StraightLine => {
                let to_goal = agent.goal - agent.position;
                let dist = to_goal.norm();
                if dist < 1e-12 {
                    return Ok((Action::STOP, ModeTag::default()));
                }
                let target = Heading::along(&to_goal);
                let dpsi = wrap_angle(target.psi - agent.heading.psi).clamp(-MAX_TURN, MAX_TURN);
                let dphi = match agent.dim() {
                    Dimension::Two => 0.0,
                    Dimension::Three => (target.phi - agent.heading.phi).clamp(-MAX_TURN, MAX_TURN),
                };
                let reached = agent.heading.turned(dpsi, dphi).direction();
                let along = to_goal.dot(&reached) / dist;
                let speed = (along * agent.v_pref.min(dist / state.world.dt)).clamp(0.0, agent.v_pref);
                Ok((Action { speed, dpsi, dphi }, ModeTag::default()))
            }
        }
    }
}
