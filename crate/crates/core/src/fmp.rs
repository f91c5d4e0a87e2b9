//! Force-based motion planning.
//!
//! Each agent sums a navigational force pulling it to its goal and a
//! short-range repulsive force pushing it away from neighbours whose surface
//! is closer than the activation radius `r_fmp = ∛(3 v_pref² / 2ρ)`. The
//! repulsion `ρ (r_fmp − d)²` does exactly `ρ r_fmp³ / 3 = v_pref² / 2` of
//! work over the activation band, enough to stop an agent arriving at
//! `v_pref` before contact. The summed command is suppressed while the agent
//! is already at `V_max` and the command would speed it up further.
//!
//! The command is an acceleration; [`fmp_action`] integrates it over one step
//! and converts the result into the same speed/heading-change [`Action`] the
//! learned policy emits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{surface_gap, wrap_angle, AgentState, Dimension, Heading, ObservableState, Vector};
use crate::env::{Action, MAX_TURN};

#[derive(Debug, Error, PartialEq)]
pub enum FmpError {
    #[error("r_fmp needs positive inputs (v_pref {v_pref}, rho {rho})")]
    NonPositive { v_pref: f64, rho: f64 },
    #[error("invalid fmp config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmpConfig {
    /// Repulsion gain.
    pub rho: f64,
    /// Goal attraction gain (1/s²).
    pub c1: f64,
    /// Velocity damping gain (1/s).
    pub c2: f64,
}

pub const DEFAULT_RHO: f64 = 7.5e6;

impl Default for FmpConfig {
    fn default() -> Self {
        FmpConfig { rho: DEFAULT_RHO, c1: 1.0, c2: 2.0 }
    }
}

impl FmpConfig {
    pub fn validate(&self) -> Result<(), FmpError> {
        for (name, v) in [("rho", self.rho), ("c1", self.c1), ("c2", self.c2)] {
            if !(v > 0.0) || v.is_nan() {
                return Err(FmpError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Activation radius `∛(3 v_pref² / (2 ρ))`.
pub fn r_fmp(v_pref: f64, rho: f64) -> Result<f64, FmpError> {
    if !(v_pref > 0.0 && rho > 0.0) {
        return Err(FmpError::NonPositive { v_pref, rho });
    }
    Ok((3.0 * v_pref * v_pref / (2.0 * rho)).cbrt())
}

pub fn navigational_force(agent: &AgentState, c1: f64, c2: f64) -> Vector {
    (agent.position - agent.goal) * -c1 - agent.velocity * c2
}

pub fn repulsive_force(agent: &AgentState, neighbors: &[ObservableState], rho: f64) -> Vector {
    let mut total = Vector::zero(agent.dim());
    let Ok(radius) = r_fmp(agent.v_pref, rho) else {
        return total;
    };
    for n in neighbors {
        let d = surface_gap(&agent.position, agent.radius, &n.position, n.radius);
        if d >= radius {
            continue;
        }
        let away = (agent.position - n.position)
            .normalized()
            .unwrap_or_else(|| tie_break_direction(agent.id, n.id, agent.dim()));
        let depth = radius - d;
        total = total + away * (rho * depth * depth);
    }
    total
}

/// Deterministic unit vector for coincident centres. The pair `(i, j)` gets
/// the exact opposite of `(j, i)`, so both agents are pushed apart.
fn tie_break_direction(me: usize, other: usize, dim: Dimension) -> Vector {
    let (lo, hi, sign) = if me < other { (me, other, 1.0) } else { (other, me, -1.0) };
    let h = splitmix64(((lo as u64) << 32) ^ hi as u64);
    let a = (h >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU;
    let dir = match dim {
        Dimension::Two => Vector::new2(a.cos(), a.sin()),
        Dimension::Three => {
            let z = ((splitmix64(h) >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0;
            let s = (1.0 - z * z).sqrt();
            Vector::new3(s * a.cos(), s * a.sin(), z)
        }
    };
    dir * sign
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Acceleration command: `f_R + f_γ`, or zero while the agent is at or above
/// `v_max` and the command has a positive component along its velocity.
pub fn fmp_control(agent: &AgentState, neighbors: &[ObservableState], cfg: &FmpConfig, v_max: f64) -> Vector {
    let u = repulsive_force(agent, neighbors, cfg.rho) + navigational_force(agent, cfg.c1, cfg.c2);
    if agent.velocity.dot(&u) > 0.0 && agent.velocity.norm() >= v_max {
        Vector::zero(agent.dim())
    } else {
        u
    }
}

/// Converts an acceleration command into a one-step [`Action`].
///
/// The integrated velocity `v' = clamp(v + dt·u, v_max)` sets the desired
/// heading; each heading angle moves toward it by at most [`MAX_TURN`]. The
/// commanded speed is the component of `v'` along the heading actually
/// reached, so a command that asks to reverse slows the agent down instead of
/// carrying it forward.
pub fn action_from_command(agent: &AgentState, u: &Vector, v_max: f64, dt: f64) -> Action {
    let v_new = (agent.velocity + *u * dt).clamp_norm(v_max);
    if v_new.norm() < 1e-12 {
        return Action::STOP;
    }
    let target = Heading::along(&v_new);
    let dpsi = wrap_angle(target.psi - agent.heading.psi).clamp(-MAX_TURN, MAX_TURN);
    let dphi = match agent.dim() {
        Dimension::Two => 0.0,
        Dimension::Three => (target.phi - agent.heading.phi).clamp(-MAX_TURN, MAX_TURN),
    };
    let reached = agent.heading.turned(dpsi, dphi).direction();
    let speed = v_new.dot(&reached).clamp(0.0, agent.v_pref);
    Action { speed, dpsi, dphi }
}

pub fn fmp_action(
    agent: &AgentState,
    neighbors: &[ObservableState],
    cfg: &FmpConfig,
    v_max: f64,
    dt: f64,
) -> Action {
    let u = fmp_control(agent, neighbors, cfg, v_max);
    action_from_command(agent, &u, v_max, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn agent2(p: (f64, f64), goal: (f64, f64), v: (f64, f64), v_pref: f64) -> AgentState {
        let mut a = AgentState::new(0, Vector::new2(p.0, p.1), Vector::new2(goal.0, goal.1), 0.5, v_pref);
        a.velocity = Vector::new2(v.0, v.1);
        a
    }

    fn neighbor(id: usize, p: Vector, r: f64) -> ObservableState {
        ObservableState { id, position: p, velocity: Vector::zero(p.dim()), radius: r }
    }

    // Independent evaluation of ∛(3v²/2ρ) via bisection on x³ = 3v²/(2ρ).
    fn cube_root_oracle(v: f64, rho: f64) -> f64 {
        let target = 3.0 * v * v / (2.0 * rho);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid * mid < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn r_fmp_examples() {
        // Frozen from the bisection oracle.
        assert!((cube_root_oracle(2.0, 7.5e6) - 9.283_177_667e-3).abs() < 1e-12);
        assert!((r_fmp(2.0, 7.5e6).unwrap() - 9.283e-3).abs() < 1e-6);
        assert!((r_fmp(0.5, 7.5e6).unwrap() - 3.684e-3).abs() < 1e-6);
        for v in [0.5, 1.0, 2.0] {
            assert!((r_fmp(v, 7.5e6).unwrap() - cube_root_oracle(v, 7.5e6)).abs() < 1e-15);
        }
        let r = r_fmp(1.3, 7.5e6).unwrap();
        assert!((r_fmp(1.3, 8.0 * 7.5e6).unwrap() - r / 2.0).abs() < 1e-15);
        assert!(r_fmp(0.0, 1.0).is_err());
        assert!(r_fmp(1.0, -1.0).is_err());
    }

    #[test]
    fn navigational_force_examples() {
        let a = agent2((1.0, 1.0), (1.0, 1.0), (0.0, 0.0), 1.0);
        assert_eq!(navigational_force(&a, 1.0, 2.0), Vector::new2(0.0, 0.0));
        let a = agent2((1.0, 0.0), (0.0, 0.0), (0.0, 0.0), 1.0);
        assert_eq!(navigational_force(&a, 1.0, 2.0), Vector::new2(-1.0, 0.0));
        let a = agent2((0.0, 0.0), (0.0, 0.0), (2.0, 0.0), 2.0);
        assert_eq!(navigational_force(&a, 1.0, 2.0), Vector::new2(-4.0, 0.0));
    }

    #[test]
    fn repulsion_examples() {
        let rho = DEFAULT_RHO;
        let a = agent2((0.0, 0.0), (3.0, 0.0), (0.0, 0.0), 2.0);
        let r = r_fmp(2.0, rho).unwrap();
        let far = neighbor(1, Vector::new2(1.0 + 2.0 * r, 0.0), 0.5);
        assert_eq!(repulsive_force(&a, &[far], rho), Vector::new2(0.0, 0.0));

        // Touching neighbour: ρ r² with r from the oracle ≈ 646.3 m/s², pointing away.
        let touching = neighbor(1, Vector::new2(1.0, 0.0), 0.5);
        let f = repulsive_force(&a, &[touching], rho);
        let expect = rho * cube_root_oracle(2.0, rho).powi(2);
        assert!((expect - 646.3).abs() < 0.05);
        assert!((f.norm() - expect).abs() < 1e-9);
        assert!(f.x() < 0.0 && f.y() == 0.0);

        let left = neighbor(1, Vector::new2(0.2, 1.0 + r / 2.0), 0.5);
        let right = neighbor(2, Vector::new2(0.2, -1.0 - r / 2.0), 0.5);
        let left = ObservableState { position: Vector::new2(0.0, 1.0 + r / 2.0), ..left };
        let right = ObservableState { position: Vector::new2(0.0, -1.0 - r / 2.0), ..right };
        let f = repulsive_force(&a, &[left, right], rho);
        assert!(f.y().abs() < 1e-9 && f.x().abs() < 1e-9);
    }

    #[test]
    fn coincident_centres_push_apart() {
        let mut a = agent2((0.0, 0.0), (3.0, 0.0), (0.0, 0.0), 2.0);
        let mut b = a.clone();
        b.id = 1;
        a.id = 0;
        let fa = repulsive_force(&a, &[b.observable()], DEFAULT_RHO);
        let fb = repulsive_force(&b, &[a.observable()], DEFAULT_RHO);
        assert!(fa.norm() > 0.0);
        assert!((fa + fb).norm() < 1e-9);
        assert_eq!(fa, repulsive_force(&a, &[b.observable()], DEFAULT_RHO));
    }

    #[test]
    fn control_clamp_cases() {
        let cfg = FmpConfig::default();
        // At V_max heading toward the goal: command suppressed.
        let a = agent2((0.0, 0.0), (5.0, 0.0), (1.0, 0.0), 1.0);
        assert_eq!(fmp_control(&a, &[], &cfg, 1.0), Vector::new2(0.0, 0.0));
        // At V_max heading away from the goal: braking passes through.
        let a = agent2((0.0, 0.0), (-5.0, 0.0), (1.0, 0.0), 1.0);
        let u = fmp_control(&a, &[], &cfg, 1.0);
        assert!(u.x() < 0.0);
        assert_eq!(u, navigational_force(&a, cfg.c1, cfg.c2));
        // Stationary, no neighbours: pure navigation.
        let a = agent2((0.0, 0.0), (2.0, 1.0), (0.0, 0.0), 1.0);
        assert_eq!(fmp_control(&a, &[], &cfg, 1.0), navigational_force(&a, 1.0, 2.0));
    }

    #[test]
    fn action_examples() {
        let cfg = FmpConfig::default();
        // From rest, the goal at +60° is reached by turning the full cap.
        let mut a = agent2((0.0, 0.0), (1.0, 3f64.sqrt()), (0.0, 0.0), 1.0);
        a.heading = Heading::planar(0.0);
        let act = fmp_action(&a, &[], &cfg, 1.0, 0.1);
        assert!((act.dpsi - PI / 6.0).abs() < 1e-12);
        assert!(act.speed > 0.0);

        // Zero command at full speed keeps speed and heading.
        let mut a = agent2((0.0, 0.0), (9.0, 0.0), (2.0, 0.0), 2.0);
        a.heading = Heading::planar(0.0);
        let act = action_from_command(&a, &Vector::new2(0.0, 0.0), 2.0, 0.1);
        assert_eq!(act, Action::new(2.0, 0.0, 0.0));

        // A quarter turn is capped at π/6.
        let mut a = agent2((0.0, 0.0), (0.0, 3.0), (0.0, 0.0), 1.0);
        a.heading = Heading::planar(0.0);
        let act = action_from_command(&a, &Vector::new2(0.0, 5.0), 1.0, 0.1);
        assert!((act.dpsi - PI / 6.0).abs() < 1e-12);
        assert!((act.speed - 0.5 * (PI / 6.0).sin()).abs() < 1e-12);
    }

    #[test]
    fn reversal_command_stops_instead_of_advancing() {
        let mut a = agent2((0.0, 0.0), (9.0, 0.0), (1.0, 0.0), 1.0);
        a.heading = Heading::planar(0.0);
        let act = action_from_command(&a, &Vector::new2(-50.0, 0.0), 1.0, 0.1);
        assert_eq!(act.speed, 0.0);
    }

    #[test]
    fn spatial_action_turns_polar_angle() {
        let cfg = FmpConfig::default();
        let mut a = AgentState::new(0, Vector::new3(0.0, 0.0, 0.0), Vector::new3(0.0, 0.0, 3.0), 0.3, 1.0);
        a.heading = Heading::spatial(0.0, FRAC_PI_2);
        let act = fmp_action(&a, &[], &cfg, 1.0, 0.1);
        assert!((act.dphi + PI / 6.0).abs() < 1e-12);
    }
}
