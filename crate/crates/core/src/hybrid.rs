//! Per-agent switching between the learned policy and the force-based planner.
//!
//! The force-based planner takes over when the nearest surface is inside the
//! activation radius (high risk), when no neighbour is in range (simple), or
//! when the agent has stayed in place for more than `c_stuck` steps (stuck).
//! Otherwise the greedy policy action is used.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{d_min, AgentState, ObservableState, WorldConfig};
use crate::env::{Action, ControllerMode, ModeTag, SwitchReason};
use crate::fmp::{fmp_action, r_fmp, FmpConfig, FmpError};
use crate::policy::{greedy_action, ActionSpace, PolicyError, PolicyModel};

#[derive(Debug, Error, PartialEq)]
pub enum HybridError {
    #[error("invalid hybrid config: {0}")]
    Config(String),
    #[error(transparent)]
    Fmp(#[from] FmpError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridConfig {
    /// Stay-in-place steps tolerated before the stuck predicate fires.
    pub c_stuck: u32,
    pub fmp: FmpConfig,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig { c_stuck: 20, fmp: FmpConfig::default() }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<(), HybridError> {
        if self.c_stuck < 1 {
            return Err(HybridError::Config("c_stuck must be >= 1".into()));
        }
        self.fmp.validate()?;
        Ok(())
    }

    /// Switching that never leaves the policy while a neighbour is present.
    pub fn disabled() -> Self {
        HybridConfig { c_stuck: u32::MAX, fmp: FmpConfig { rho: f64::MAX, ..FmpConfig::default() } }
    }
}

/// Mode and reason for one agent. Reasons are checked in the order
/// high risk, simple, stuck; all comparisons are strict.
pub fn select_mode(
    agent: &AgentState,
    neighbors: &[ObservableState],
    stuck_counter: u32,
    cfg: &HybridConfig,
) -> Result<ModeTag, HybridError> {
    let radius = r_fmp(agent.v_pref, cfg.fmp.rho)?;
    let reason = if d_min(agent, neighbors) < radius {
        SwitchReason::HighRisk
    } else if neighbors.is_empty() {
        SwitchReason::Simple
    } else if stuck_counter > cfg.c_stuck {
        SwitchReason::Stuck
    } else {
        SwitchReason::Normal
    };
    let mode = if reason == SwitchReason::Normal { ControllerMode::Policy } else { ControllerMode::Fmp };
    Ok(ModeTag { mode: Some(mode), reason: Some(reason) })
}

/// Greedy policy action for one observation.
pub fn policy_action(
    model: &PolicyModel,
    space: &ActionSpace,
    observation: &[f64],
    v_pref: f64,
) -> Result<Action, PolicyError> {
    let (probs, _) = model.forward(observation)?;
    space.decode(greedy_action(&probs)?, v_pref)
}

/// Selects a mode and computes the matching action. `observation` is only
/// evaluated in policy mode.
pub fn hybrid_action<F>(
    agent: &AgentState,
    neighbors: &[ObservableState],
    stuck_counter: u32,
    model: &PolicyModel,
    space: &ActionSpace,
    cfg: &HybridConfig,
    world: &WorldConfig,
    observation: F,
) -> Result<(Action, ModeTag), HybridError>
where
    F: FnOnce() -> Vec<f64>,
{
    let tag = select_mode(agent, neighbors, stuck_counter, cfg)?;
    let v_max = world.v_max(agent.v_pref);
    let action = match tag.reason {
        Some(SwitchReason::Normal) => policy_action(model, space, &observation(), agent.v_pref)?,
        // Simple mode has no neighbours, so only the navigational force acts.
        _ => fmp_action(agent, neighbors, &cfg.fmp, v_max, world.dt),
    };
    Ok((action, tag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Vector;

    fn agent(v_pref: f64) -> AgentState {
        AgentState::new(0, Vector::new2(0.0, 0.0), Vector::new2(3.0, 0.0), 0.3, v_pref)
    }

    fn at_gap(gap: f64, r: f64) -> ObservableState {
        ObservableState { id: 1, position: Vector::new2(0.3 + r + gap, 0.0), velocity: Vector::new2(0.0, 0.0), radius: r }
    }

    fn reason(a: &AgentState, n: &[ObservableState], c: u32) -> SwitchReason {
        select_mode(a, n, c, &HybridConfig::default()).unwrap().reason.unwrap()
    }

    #[test]
    fn examples() {
        let a = agent(2.0);
        assert_eq!(reason(&a, &[at_gap(0.005, 0.3)], 0), SwitchReason::HighRisk);
        assert_eq!(reason(&a, &[], 0), SwitchReason::Simple);
        assert_eq!(reason(&a, &[at_gap(1.0, 0.3)], 21), SwitchReason::Stuck);
        assert_eq!(reason(&a, &[at_gap(1.0, 0.3)], 20), SwitchReason::Normal);
    }

    #[test]
    fn disabled_switching_stays_on_policy_with_neighbors() {
        let a = agent(1.0);
        let cfg = HybridConfig::disabled();
        let tag = select_mode(&a, &[at_gap(1e-6, 0.3)], u32::MAX - 1, &cfg).unwrap();
        assert_eq!(tag.mode, Some(ControllerMode::Policy));
    }

    #[test]
    fn rejects_zero_c_stuck() {
        assert!(HybridConfig { c_stuck: 0, ..HybridConfig::default() }.validate().is_err());
    }
}
