//! Shared domain types: vectors tagged with their dimension, agent state,
//! world configuration, scenarios, and the surface-distance geometry every
//! other module builds on.
//!
//! Agents are discs in the plane or spheres in space; the radius is the only
//! shape parameter. World coordinates are centred on the origin, so an
//! `8 × 8` world spans `[-4, 4]²`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch(Dimension, Dimension),
    #[error("surface distance of agent {0} to itself is undefined")]
    SameAgent(usize),
    #[error("invalid world config: {0}")]
    InvalidWorld(String),
    #[error("invalid agent {id}: {reason}")]
    InvalidAgent { id: usize, reason: String },
    #[error("agents {0} and {1} overlap at start")]
    InitialOverlap(usize, usize),
    #[error("scenario json: {0}")]
    Json(String),
}

/// Spatial dimension of a world. Serialized as the integer `2` or `3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Dimension {
    Two,
    Three,
}

impl Dimension {
    pub fn count(self) -> usize {
        match self {
            Dimension::Two => 2,
            Dimension::Three => 3,
        }
    }
}

impl TryFrom<u8> for Dimension {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            2 => Ok(Dimension::Two),
            3 => Ok(Dimension::Three),
            other => Err(format!("dimension must be 2 or 3, got {other}")),
        }
    }
}

impl From<Dimension> for u8 {
    fn from(d: Dimension) -> u8 {
        d.count() as u8
    }
}

/// A 2- or 3-component real vector. In 2D the third slot is kept at zero.
///
/// The arithmetic operators assert matching dimensions: mixing a planar and a
/// spatial vector is a programming error once inputs have been validated.
/// Use [`Vector::checked_sub`] on unvalidated data.
#[derive(Clone, Copy, PartialEq)]
pub struct Vector {
    dim: Dimension,
    xyz: [f64; 3],
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.components()).finish()
    }
}

impl Vector {
    pub fn new2(x: f64, y: f64) -> Self {
        Vector { dim: Dimension::Two, xyz: [x, y, 0.0] }
    }

    pub fn new3(x: f64, y: f64, z: f64) -> Self {
        Vector { dim: Dimension::Three, xyz: [x, y, z] }
    }

    pub fn zero(dim: Dimension) -> Self {
        Vector { dim, xyz: [0.0; 3] }
    }

    pub fn from_slice(c: &[f64]) -> Option<Self> {
        match *c {
            [x, y] => Some(Vector::new2(x, y)),
            [x, y, z] => Some(Vector::new3(x, y, z)),
            _ => None,
        }
    }

    pub fn dim(&self) -> Dimension {
        self.dim
    }

    pub fn components(&self) -> &[f64] {
        &self.xyz[..self.dim.count()]
    }

    pub fn x(&self) -> f64 {
        self.xyz[0]
    }

    pub fn y(&self) -> f64 {
        self.xyz[1]
    }

    pub fn z(&self) -> f64 {
        self.xyz[2]
    }

    pub fn is_finite(&self) -> bool {
        self.xyz.iter().all(|c| c.is_finite())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        self.assert_same(other);
        self.xyz[0] * other.xyz[0] + self.xyz[1] * other.xyz[1] + self.xyz[2] * other.xyz[2]
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector, or `None` for a (numerically) zero vector.
    pub fn normalized(&self) -> Option<Vector> {
        let n = self.norm();
        (n > 1e-12).then(|| *self * (1.0 / n))
    }

    /// Rescales to at most `max_norm`, leaving shorter vectors untouched.
    pub fn clamp_norm(&self, max_norm: f64) -> Vector {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            *self * (max_norm / n)
        } else {
            *self
        }
    }

    pub fn checked_sub(&self, other: &Vector) -> Result<Vector, DomainError> {
        if self.dim != other.dim {
            return Err(DomainError::DimensionMismatch(self.dim, other.dim));
        }
        Ok(*self - *other)
    }

    pub fn distance(&self, other: &Vector) -> f64 {
        (*self - *other).norm()
    }

    fn assert_same(&self, other: &Vector) {
        assert_eq!(self.dim, other.dim, "mixed-dimension vector arithmetic");
    }
}

impl Add for Vector {
    type Output = Vector;
    fn add(self, rhs: Vector) -> Vector {
        self.assert_same(&rhs);
        Vector {
            dim: self.dim,
            xyz: [self.xyz[0] + rhs.xyz[0], self.xyz[1] + rhs.xyz[1], self.xyz[2] + rhs.xyz[2]],
        }
    }
}

impl Sub for Vector {
    type Output = Vector;
    fn sub(self, rhs: Vector) -> Vector {
        self.assert_same(&rhs);
        Vector {
            dim: self.dim,
            xyz: [self.xyz[0] - rhs.xyz[0], self.xyz[1] - rhs.xyz[1], self.xyz[2] - rhs.xyz[2]],
        }
    }
}

impl Mul<f64> for Vector {
    type Output = Vector;
    fn mul(self, s: f64) -> Vector {
        Vector { dim: self.dim, xyz: [self.xyz[0] * s, self.xyz[1] * s, self.xyz[2] * s] }
    }
}

impl Neg for Vector {
    type Output = Vector;
    fn neg(self) -> Vector {
        self * -1.0
    }
}

impl Serialize for Vector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let c = self.components();
        let mut seq = serializer.serialize_seq(Some(c.len()))?;
        for v in c {
            seq.serialize_element(v)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Vector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let c = Vec::<f64>::deserialize(deserializer)?;
        Vector::from_slice(&c)
            .ok_or_else(|| de::Error::invalid_length(c.len(), &"2 or 3 components"))
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Orientation. `psi` is the azimuth from +x; `phi` is the polar angle from +z
/// (physics convention). Planar headings keep `phi = π/2`, which makes the
/// same direction formula valid in both dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heading {
    pub psi: f64,
    pub phi: f64,
    dim: Dimension,
}

impl Heading {
    pub fn planar(psi: f64) -> Self {
        Heading { psi: wrap_angle(psi), phi: FRAC_PI_2, dim: Dimension::Two }
    }

    pub fn spatial(psi: f64, phi: f64) -> Self {
        let (psi, phi) = normalize_spherical(psi, phi);
        Heading { psi, phi, dim: Dimension::Three }
    }

    /// Heading pointing along `v`; falls back to `+x` for a zero vector.
    pub fn along(v: &Vector) -> Self {
        match v.dim() {
            Dimension::Two => Heading::planar(v.y().atan2(v.x())),
            Dimension::Three => {
                let n = v.norm();
                if n < 1e-12 {
                    Heading::spatial(0.0, FRAC_PI_2)
                } else {
                    let phi = (v.z() / n).clamp(-1.0, 1.0).acos();
                    Heading::spatial(v.y().atan2(v.x()), phi)
                }
            }
        }
    }

    pub fn dim(&self) -> Dimension {
        self.dim
    }

    pub fn direction(&self) -> Vector {
        match self.dim {
            Dimension::Two => Vector::new2(self.psi.cos(), self.psi.sin()),
            Dimension::Three => {
                let s = self.phi.sin();
                Vector::new3(s * self.psi.cos(), s * self.psi.sin(), self.phi.cos())
            }
        }
    }

    /// Applies a heading change. Planar headings ignore `dphi`.
    pub fn turned(&self, dpsi: f64, dphi: f64) -> Heading {
        match self.dim {
            Dimension::Two => Heading::planar(self.psi + dpsi),
            Dimension::Three => Heading::spatial(self.psi + dpsi, self.phi + dphi),
        }
    }

    pub fn is_normalized(&self) -> bool {
        let psi_ok = self.psi > -PI && self.psi <= PI;
        match self.dim {
            Dimension::Two => psi_ok && self.phi == FRAC_PI_2,
            Dimension::Three => psi_ok && (0.0..=PI).contains(&self.phi),
        }
    }
}

/// Continues a polar angle through the poles: `phi` outside `[0, π]` is
/// reflected and the azimuth flipped by `π`.
fn normalize_spherical(psi: f64, phi: f64) -> (f64, f64) {
    let mut phi = phi.rem_euclid(2.0 * PI);
    let mut psi = psi;
    if phi > PI {
        phi = 2.0 * PI - phi;
        psi += PI;
    }
    (wrap_angle(psi), phi)
}

impl Serialize for Heading {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.dim {
            Dimension::Two => serializer.serialize_f64(self.psi),
            Dimension::Three => (self.psi, self.phi).serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for Heading {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct HeadingVisitor;

        impl<'de> Visitor<'de> for HeadingVisitor {
            type Value = Heading;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an azimuth in radians or a [psi, phi] pair")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Heading, E> {
                Ok(Heading { psi: v, phi: FRAC_PI_2, dim: Dimension::Two })
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Heading, E> {
                self.visit_f64(v as f64)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Heading, E> {
                self.visit_f64(v as f64)
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Heading, A::Error> {
                let psi: f64 = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let phi: f64 = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(1, &self))?;
                if seq.next_element::<f64>()?.is_some() {
                    return Err(de::Error::invalid_length(3, &self));
                }
                // Stored verbatim; `Scenario::validate` rejects unnormalized angles.
                Ok(Heading { psi, phi, dim: Dimension::Three })
            }
        }

        deserializer.deserialize_any(HeadingVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentStatus {
    Active,
    Arrived,
    Collided,
}

/// Full state of one agent: the observable part (position, velocity, radius)
/// and the hidden part (goal, preferred speed, heading).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub position: Vector,
    pub velocity: Vector,
    pub radius: f64,
    pub goal: Vector,
    pub v_pref: f64,
    pub heading: Heading,
    pub status: AgentStatus,
}

impl AgentState {
    /// A stationary, active agent facing its goal.
    pub fn new(id: usize, position: Vector, goal: Vector, radius: f64, v_pref: f64) -> Self {
        let to_goal = goal - position;
        let heading = if to_goal.norm() > 1e-12 {
            Heading::along(&to_goal)
        } else {
            match position.dim() {
                Dimension::Two => Heading::planar(0.0),
                Dimension::Three => Heading::spatial(0.0, FRAC_PI_2),
            }
        };
        AgentState {
            id,
            position,
            velocity: Vector::zero(position.dim()),
            radius,
            goal,
            v_pref,
            heading,
            status: AgentStatus::Active,
        }
    }

    pub fn dim(&self) -> Dimension {
        self.position.dim()
    }

    pub fn observable(&self) -> ObservableState {
        ObservableState {
            id: self.id,
            position: self.position,
            velocity: self.velocity,
            radius: self.radius,
        }
    }

    pub fn goal_distance(&self) -> f64 {
        self.position.distance(&self.goal)
    }

    pub fn is_active(&self) -> bool {
        self.status == AgentStatus::Active
    }
}

/// What a neighbour can see of an agent. `id` is a label, not state; it is
/// only used to break ties deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableState {
    pub id: usize,
    pub position: Vector,
    pub velocity: Vector,
    pub radius: f64,
}

/// Centre distance minus both radii; negative iff the bodies overlap.
pub fn surface_gap(p_a: &Vector, r_a: f64, p_b: &Vector, r_b: f64) -> f64 {
    p_a.distance(p_b) - (r_a + r_b)
}

pub fn surface_distance(a: &AgentState, b: &AgentState) -> Result<f64, DomainError> {
    if a.id == b.id {
        return Err(DomainError::SameAgent(a.id));
    }
    let delta = a.position.checked_sub(&b.position)?;
    // Summing the radii first keeps the result exactly symmetric.
    Ok(delta.norm() - (a.radius + b.radius))
}

/// Smallest surface distance to any of `others`; `+∞` when there are none.
pub fn d_min(agent: &AgentState, others: &[ObservableState]) -> f64 {
    others
        .iter()
        .map(|o| surface_gap(&agent.position, agent.radius, &o.position, o.radius))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub dimension: Dimension,
    /// Box extents in metres; the world spans `[-e/2, e/2]` on each axis.
    pub bounds: Vector,
    pub dt: f64,
    pub t_max: f64,
    pub neighbor_radius: f64,
    /// `v_max = v_max_factor · v_pref`.
    pub v_max_factor: f64,
}

impl WorldConfig {
    /// 8 m × 8 m plane at the evaluation step of 0.1 s.
    pub fn planar() -> Self {
        WorldConfig {
            dimension: Dimension::Two,
            bounds: Vector::new2(8.0, 8.0),
            dt: 0.1,
            t_max: 50.0,
            neighbor_radius: 4.0,
            v_max_factor: 1.0,
        }
    }

    /// 8 m × 8 m × 4 m volume at the evaluation step of 0.1 s.
    pub fn spatial() -> Self {
        WorldConfig {
            dimension: Dimension::Three,
            bounds: Vector::new3(8.0, 8.0, 4.0),
            ..WorldConfig::planar()
        }
    }

    pub fn for_dimension(dim: Dimension) -> Self {
        match dim {
            Dimension::Two => WorldConfig::planar(),
            Dimension::Three => WorldConfig::spatial(),
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn v_max(&self, v_pref: f64) -> f64 {
        self.v_max_factor * v_pref
    }

    /// `"8x8"` / `"8x8x4"`.
    pub fn size_label(&self) -> String {
        self.bounds
            .components()
            .iter()
            .map(|c| format!("{c}"))
            .collect::<Vec<_>>()
            .join("x")
    }

    /// True if `p` lies in the box shrunk by `margin` on every side.
    pub fn contains(&self, p: &Vector, margin: f64) -> bool {
        p.components()
            .iter()
            .zip(self.bounds.components())
            .all(|(c, e)| c.abs() <= e / 2.0 - margin)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |m: &str| Err(DomainError::InvalidWorld(m.to_string()));
        if self.bounds.dim() != self.dimension {
            return bad("bounds dimension does not match the dimension tag");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.t_max >= self.dt && self.t_max.is_finite()) {
            return bad("t_max must be at least dt");
        }
        if !self.bounds.components().iter().all(|e| *e > 0.0 && e.is_finite()) {
            return bad("all extents must be positive");
        }
        if !(self.neighbor_radius > 0.0) {
            return bad("neighbor_radius must be positive");
        }
        if !(self.v_max_factor >= 1.0 && self.v_max_factor.is_finite()) {
            return bad("v_max_factor must be at least 1");
        }
        Ok(())
    }
}

/// A reproducible test case. Field order is the canonical serialization
/// order: `world`, `agents`, `seed`, `label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub world: WorldConfig,
    pub agents: Vec<AgentState>,
    pub seed: u64,
    pub label: String,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), DomainError> {
        self.world.validate()?;
        let dim = self.world.dimension;
        for (idx, a) in self.agents.iter().enumerate() {
            let bad = |reason: &str| {
                Err(DomainError::InvalidAgent { id: a.id, reason: reason.to_string() })
            };
            if a.id != idx {
                return bad("agent ids must be 0..n in order");
            }
            for v in [&a.position, &a.velocity, &a.goal] {
                if v.dim() != dim {
                    return Err(DomainError::DimensionMismatch(v.dim(), dim));
                }
                if !v.is_finite() {
                    return bad("non-finite component");
                }
            }
            if a.heading.dim() != dim {
                return Err(DomainError::DimensionMismatch(a.heading.dim(), dim));
            }
            if !a.heading.is_normalized() {
                return bad("heading angles not normalized");
            }
            if !(a.radius > 0.0 && a.radius.is_finite()) {
                return bad("radius must be positive");
            }
            if !(a.v_pref > 0.0 && a.v_pref.is_finite()) {
                return bad("v_pref must be positive");
            }
            if a.velocity.norm() > self.world.v_max(a.v_pref) + 1e-9 {
                return bad("speed exceeds v_max");
            }
            if !self.world.contains(&a.position, 0.0) || !self.world.contains(&a.goal, 0.0) {
                return bad("position or goal outside world bounds");
            }
        }
        for (i, a) in self.agents.iter().enumerate() {
            for b in &self.agents[i + 1..] {
                if surface_distance(a, b)? <= 0.0 {
                    return Err(DomainError::InitialOverlap(a.id, b.id));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Scenario, DomainError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| DomainError::Json(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization is infallible")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(id: usize, p: Vector, r: f64) -> AgentState {
        AgentState::new(id, p, p, r, 1.0)
    }

    #[test]
    fn surface_distance_examples() {
        let a = disc(0, Vector::new2(0.0, 0.0), 0.5);
        let b = disc(1, Vector::new2(2.0, 0.0), 0.5);
        assert_eq!(surface_distance(&a, &b).unwrap(), 1.0);
        let b = disc(1, Vector::new2(0.8, 0.0), 0.5);
        assert!((surface_distance(&a, &b).unwrap() + 0.2).abs() < 1e-15);
        let a = disc(0, Vector::new3(0.0, 0.0, 0.0), 0.3);
        let b = disc(1, Vector::new3(3.0, 4.0, 0.0), 0.7);
        assert_eq!(surface_distance(&a, &b).unwrap(), 4.0);
    }

    #[test]
    fn surface_distance_rejects_mixed_dimensions() {
        let a = disc(0, Vector::new2(0.0, 0.0), 0.5);
        let b = disc(1, Vector::new3(1.0, 0.0, 0.0), 0.5);
        assert!(matches!(surface_distance(&a, &b), Err(DomainError::DimensionMismatch(..))));
        assert!(matches!(surface_distance(&a, &a), Err(DomainError::SameAgent(0))));
    }

    #[test]
    fn d_min_examples() {
        let a = disc(0, Vector::new2(0.0, 0.0), 0.5);
        let at = |id, gap: f64| ObservableState {
            id,
            position: Vector::new2(1.0 + gap, 0.0),
            velocity: Vector::zero(Dimension::Two),
            radius: 0.5,
        };
        assert!((d_min(&a, &[at(1, 0.3)]) - 0.3).abs() < 1e-12);
        let many = [at(1, 0.3), at(2, -0.1), at(3, 1.2)];
        assert!((d_min(&a, &many) + 0.1).abs() < 1e-12);
        assert_eq!(d_min(&a, &[]), f64::INFINITY);
    }

    #[test]
    fn heading_through_pole_stays_normalized() {
        let h = Heading::spatial(0.5, 0.2).turned(0.0, -0.4);
        assert!(h.is_normalized());
        assert!((h.phi - 0.2).abs() < 1e-12);
        assert!((h.psi - wrap_angle(0.5 + PI)).abs() < 1e-12);
        // Direction is continuous through the pole.
        let d = h.direction();
        let expect = Heading::spatial(0.5, -0.2).direction();
        assert!((d - expect).norm() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn scenario_rejects_overlap_and_out_of_bounds() {
        let world = WorldConfig::planar();
        let mut s = Scenario {
            world,
            agents: vec![
                AgentState::new(0, Vector::new2(0.0, 0.0), Vector::new2(3.0, 0.0), 0.5, 1.0),
                AgentState::new(1, Vector::new2(0.9, 0.0), Vector::new2(-3.0, 0.0), 0.5, 1.0),
            ],
            seed: 1,
            label: "x".into(),
        };
        assert_eq!(s.validate(), Err(DomainError::InitialOverlap(0, 1)));
        s.agents[1].position = Vector::new2(5.0, 0.0);
        assert!(matches!(s.validate(), Err(DomainError::InvalidAgent { id: 1, .. })));
    }

    #[test]
    fn heading_json_forms() {
        let h: Heading = serde_json::from_str("1.5").unwrap();
        assert_eq!(h, Heading::planar(1.5));
        let h: Heading = serde_json::from_str("[0.25, 1.0]").unwrap();
        assert_eq!(h, Heading::spatial(0.25, 1.0));
        assert!(serde_json::from_str::<Heading>("[1, 2, 3]").is_err());
    }
}
