use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::domain::Dimension;
use crate::env::Action;

use super::PolicyError;

/// One discrete command: speed as a fraction of `v_pref` plus heading changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionEntry {
    pub speed_fraction: f64,
    pub dpsi: f64,
    pub dphi: f64,
}

/// Ordered discrete action set. Entry 0 is always "straight at full speed".
///
/// Planar (11 entries): full speed × {0, ±π/12, ±π/6}, half speed × {0, ±π/6},
/// stop × {0, ±π/6}.
///
/// Spatial (43 entries): full and half speed each over the 5 × 5 grid
/// `dpsi, dphi ∈ {0, ±π/12, ±π/6}` minus the four corners where both angles
/// are ±π/6 (21 pairs per speed), plus a single stop.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    dimension: Dimension,
    entries: Vec<ActionEntry>,
}

const STEPS: [f64; 5] = [0.0, PI / 12.0, -PI / 12.0, PI / 6.0, -PI / 6.0];

impl ActionSpace {
    pub fn for_dimension(dim: Dimension) -> Self {
        match dim {
            Dimension::Two => Self::planar(),
            Dimension::Three => Self::spatial(),
        }
    }

    pub fn planar() -> Self {
        let e = |speed_fraction, dpsi| ActionEntry { speed_fraction, dpsi, dphi: 0.0 };
        let mut entries: Vec<ActionEntry> = STEPS.iter().map(|d| e(1.0, *d)).collect();
        for speed in [0.5, 0.0] {
            entries.extend([e(speed, 0.0), e(speed, PI / 6.0), e(speed, -PI / 6.0)]);
        }
        ActionSpace { dimension: Dimension::Two, entries }
    }

    pub fn spatial() -> Self {
        let mut entries = Vec::with_capacity(43);
        for speed_fraction in [1.0, 0.5] {
            for dpsi in STEPS {
                for dphi in STEPS {
                    let corner = dpsi.abs() > PI / 8.0 && dphi.abs() > PI / 8.0;
                    if !corner {
                        entries.push(ActionEntry { speed_fraction, dpsi, dphi });
                    }
                }
            }
        }
        entries.push(ActionEntry { speed_fraction: 0.0, dpsi: 0.0, dphi: 0.0 });
        ActionSpace { dimension: Dimension::Three, entries }
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ActionEntry] {
        &self.entries
    }

    /// Index of the zero-speed, zero-turn entry.
    pub fn stop_index(&self) -> usize {
        self.entries
            .iter()
            .position(|e| e.speed_fraction == 0.0 && e.dpsi == 0.0 && e.dphi == 0.0)
            .expect("every action space has a stop entry")
    }

    pub fn decode(&self, index: usize, v_pref: f64) -> Result<Action, PolicyError> {
        let e = self
            .entries
            .get(index)
            .ok_or(PolicyError::ActionIndex { index, len: self.entries.len() })?;
        Ok(Action { speed: e.speed_fraction * v_pref, dpsi: e.dpsi, dphi: e.dphi })
    }
}
