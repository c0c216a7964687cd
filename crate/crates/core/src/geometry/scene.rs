use serde::{Deserialize, Serialize};

use super::angle::wrap_angle;
use super::obb::OrientedBox;
use super::route::RouteSpec;
use crate::error::{Error, Result};

/// Planning step shared by trajectories, history and replay.
pub const DT: f64 = 0.2;
/// Number of past scene snapshots kept in a [`SceneContext`].
pub const HISTORY_LEN: usize = 5;

/// Ego footprint, centered on the geometric center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
}

impl Default for Footprint {
    fn default() -> Self {
        Self {
            length: 4.9,
            width: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub steering: f64,
}

impl EgoState {
    /// Builds a state with a wrapped heading and a non-negative speed.
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
            v: v.max(0.0),
            a: 0.0,
            steering: 0.0,
        }
    }

    pub fn with_accel(mut self, a: f64) -> Self {
        self.a = a;
        self
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn footprint(&self, fp: Footprint) -> OrientedBox {
        OrientedBox::new(self.x, self.y, self.theta, fp.length, fp.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
    Bicyclist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: u64,
    pub kind: AgentKind,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub length: f64,
    pub width: f64,
    pub v: f64,
    pub has_lane: bool,
}

impl AgentTrack {
    pub fn footprint(&self) -> OrientedBox {
        OrientedBox::new(self.x, self.y, self.theta, self.length, self.width)
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(Error::InvalidScene(format!("agent {} has non-positive extent", self.id)));
        }
        if !(self.v >= 0.0) {
            return Err(Error::InvalidScene(format!("agent {} has negative speed", self.id)));
        }
        Ok(())
    }
}

/// A past snapshot: timestamp, ego state and agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub timestamp: f64,
    pub ego: EgoState,
    pub agents: Vec<AgentTrack>,
}

/// Everything the planner sees at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneContext {
    pub ego: EgoState,
    pub agents: Vec<AgentTrack>,
    pub route: RouteSpec,
    /// Oldest first; `HISTORY_LEN` entries, the last one `DT` before `timestamp`.
    pub history: Vec<HistoryEntry>,
    pub timestamp: f64,
    pub footprint: Footprint,
}

impl SceneContext {
    pub fn validate(&self) -> Result<()> {
        if self.history.len() != HISTORY_LEN {
            return Err(Error::InvalidScene(format!(
                "history has {} entries, expected {HISTORY_LEN}",
                self.history.len()
            )));
        }
        for (k, h) in self.history.iter().enumerate() {
            let expected = self.timestamp - DT * (HISTORY_LEN - k) as f64;
            if (h.timestamp - expected).abs() > 1e-6 {
                return Err(Error::InvalidScene(format!(
                    "history entry {k} at {} s, expected {expected} s",
                    h.timestamp
                )));
            }
        }
        for a in &self.agents {
            a.validate()?;
        }
        Ok(())
    }

    /// Scene with a history of the ego standing or moving at constant speed
    /// along its heading. Mostly for tests and benches.
    pub fn with_constant_history(ego: EgoState, agents: Vec<AgentTrack>, route: RouteSpec) -> Self {
        let (s, c) = ego.theta.sin_cos();
        let history = (0..HISTORY_LEN)
            .map(|k| {
                let back = DT * (HISTORY_LEN - k) as f64;
                HistoryEntry {
                    timestamp: -back,
                    ego: EgoState {
                        x: ego.x - ego.v * back * c,
                        y: ego.y - ego.v * back * s,
                        a: 0.0,
                        ..ego
                    },
                    agents: agents.clone(),
                }
            })
            .collect();
        Self {
            ego,
            agents,
            route,
            history,
            timestamp: 0.0,
            footprint: Footprint::default(),
        }
    }
}
