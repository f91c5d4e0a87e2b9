//! Per-step rewards.
//!
//! Two variants are provided: the legacy collision reward (goal bonus plus a
//! proximity/collision penalty) and the shaped reward that adds a dense
//! goal-progress term `α · (goal_dist_prev − goal_dist_now)`. The progress
//! term is potential-based, so its sum over a trajectory telescopes to
//! `α · (goal_dist_start − goal_dist_end)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("goal distances must be non-negative (prev {prev}, now {now})")]
    NegativeDistance { prev: f64, now: f64 },
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardVariant {
    Legacy,
    Nsl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub variant: RewardVariant,
    /// Reward per metre of progress toward the goal.
    pub alpha: f64,
    pub arrival_reward: f64,
    pub collision_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig::nsl()
    }
}

impl RewardConfig {
    pub fn nsl() -> Self {
        RewardConfig { variant: RewardVariant::Nsl, alpha: 0.08, arrival_reward: 1.0, collision_penalty: -1.0 }
    }

    pub fn legacy() -> Self {
        RewardConfig {
            variant: RewardVariant::Legacy,
            alpha: 0.08,
            arrival_reward: 1.0,
            collision_penalty: -0.25,
        }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(RewardError::InvalidConfig("alpha must be positive".into()));
        }
        if !(self.collision_penalty <= 0.0 && self.arrival_reward.is_finite()) {
            return Err(RewardError::InvalidConfig("collision penalty must be <= 0".into()));
        }
        Ok(())
    }

    /// Reward for one agent's step. `reached_goal` must already be false when
    /// the agent collided in the same step.
    pub fn step_reward(
        &self,
        reached_goal: bool,
        dmin: f64,
        goal_dist_prev: f64,
        goal_dist_now: f64,
    ) -> Result<f64, RewardError> {
        let parts = self.breakdown(reached_goal, dmin, goal_dist_prev, goal_dist_now)?;
        Ok(parts.collision + parts.goal)
    }

    /// The collision and goal parts of [`RewardConfig::step_reward`].
    pub fn breakdown(
        &self,
        reached_goal: bool,
        dmin: f64,
        goal_dist_prev: f64,
        goal_dist_now: f64,
    ) -> Result<RewardParts, RewardError> {
        match self.variant {
            RewardVariant::Legacy => Ok(if reached_goal {
                RewardParts { collision: 0.0, goal: self.arrival_reward }
            } else {
                RewardParts { collision: legacy_collision(dmin, self.collision_penalty), goal: 0.0 }
            }),
            RewardVariant::Nsl => Ok(RewardParts {
                collision: nsl_collision(dmin, self.collision_penalty),
                goal: goal_term(reached_goal, goal_dist_prev, goal_dist_now, self.alpha, self.arrival_reward)?,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParts {
    pub collision: f64,
    pub goal: f64,
}

fn legacy_collision(dmin: f64, penalty: f64) -> f64 {
    if dmin < 0.0 {
        penalty
    } else if dmin > 0.0 && dmin < 0.2 {
        -0.1 + 0.05 * dmin
    } else {
        0.0
    }
}

fn nsl_collision(dmin: f64, penalty: f64) -> f64 {
    if dmin < 0.0 {
        penalty
    } else if dmin > 0.0 && dmin < 0.1 {
        // Linear ramp from the full penalty at contact to zero at 0.1 m.
        penalty * (1.0 - 10.0 * dmin)
    } else {
        0.0
    }
}

fn goal_term(reached: bool, prev: f64, now: f64, alpha: f64, arrival: f64) -> Result<f64, RewardError> {
    if !(prev >= 0.0 && now >= 0.0) {
        return Err(RewardError::NegativeDistance { prev, now });
    }
    Ok(if reached { arrival } else { alpha * (prev - now) })
}

/// `1` at the goal, `−0.25` on overlap, `−0.1 + 0.05·dmin` for
/// `0 < dmin < 0.2`, else `0`.
pub fn legacy_reward(reached_goal: bool, dmin: f64) -> f64 {
    if reached_goal {
        1.0
    } else {
        legacy_collision(dmin, -0.25)
    }
}

/// `−1` on overlap, `10·dmin − 1` for `0 < dmin < 0.1`, else `0`.
/// `dmin == 0` exactly falls through to `0`.
pub fn nsl_collision_term(dmin: f64) -> f64 {
    if dmin < 0.0 {
        -1.0
    } else if dmin > 0.0 && dmin < 0.1 {
        10.0 * dmin - 1.0
    } else {
        0.0
    }
}

pub fn nsl_goal_term(
    reached_goal: bool,
    goal_dist_prev: f64,
    goal_dist_now: f64,
    alpha: f64,
) -> Result<f64, RewardError> {
    goal_term(reached_goal, goal_dist_prev, goal_dist_now, alpha, 1.0)
}

pub fn nsl_reward(
    reached_goal: bool,
    dmin: f64,
    goal_dist_prev: f64,
    goal_dist_now: f64,
    alpha: f64,
) -> Result<f64, RewardError> {
    Ok(nsl_collision_term(dmin) + nsl_goal_term(reached_goal, goal_dist_prev, goal_dist_now, alpha)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn legacy_examples() {
        assert_eq!(legacy_reward(true, 5.0), 1.0);
        assert_eq!(legacy_reward(false, -0.05), -0.25);
        assert!((legacy_reward(false, 0.1) + 0.095).abs() < 1e-15);
        assert_eq!(legacy_reward(false, 0.2), 0.0);
    }

    #[test]
    fn nsl_examples() {
        assert_eq!(nsl_collision_term(-0.3), -1.0);
        assert!((nsl_collision_term(0.05) + 0.5).abs() < 1e-15);
        assert_eq!(nsl_collision_term(0.1), 0.0);
        assert_eq!(nsl_goal_term(true, 3.0, 2.0, 0.08).unwrap(), 1.0);
        assert!((nsl_goal_term(false, 5.0, 4.5, 0.08).unwrap() - 0.04).abs() < 1e-15);
        assert!((nsl_goal_term(false, 4.5, 5.0, 0.08).unwrap() + 0.04).abs() < 1e-15);
        assert!((nsl_reward(false, 0.05, 5.0, 4.5, 0.08).unwrap() + 0.46).abs() < 1e-15);
        assert_eq!(nsl_reward(true, 10.0, 0.3, 0.05, 0.08).unwrap(), 1.0);
        assert_eq!(nsl_reward(false, -0.1, 2.0, 2.0, 0.08).unwrap(), -1.0);
    }

    #[test]
    fn negative_distance_rejected() {
        assert!(nsl_goal_term(false, -1.0, 0.0, 0.08).is_err());
    }

    #[test]
    fn config_matches_free_functions() {
        let nsl = RewardConfig::nsl();
        let legacy = RewardConfig::legacy();
        for d in [-0.5, -1e-9, 0.0, 0.03, 0.0999, 0.1, 0.15, 0.2, 3.0] {
            for reached in [false, true] {
                assert_eq!(
                    nsl.step_reward(reached, d, 2.0, 1.7).unwrap(),
                    nsl_reward(reached, d, 2.0, 1.7, 0.08).unwrap()
                );
                assert_eq!(legacy.step_reward(reached, d, 2.0, 1.7).unwrap(), legacy_reward(reached, d));
            }
        }
    }

    proptest! {
        #[test]
        fn collision_terms_bounded(d in -5.0f64..5.0) {
            let rc = nsl_collision_term(d);
            prop_assert!((-1.0..=0.0).contains(&rc));
            if d < 0.2 {
                let l = legacy_reward(false, d);
                prop_assert!((-0.25..=0.0).contains(&l));
            }
            if d < 0.0 {
                prop_assert_eq!(rc, 4.0 * legacy_reward(false, d));
            }
        }
    }
}
