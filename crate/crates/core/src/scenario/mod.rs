//! Scenario records: 1 s of ego history, a 10 s expert future and 11 s of
//! replayed agents, all on the 0.2 s grid. Stored as JSON Lines.

mod synthetic;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    lerp_angle, AgentKind, AgentTrack, EgoState, Footprint, HistoryEntry, RouteSpec, SceneContext, Trajectory, DT,
    HISTORY_LEN, TRAJECTORY_LEN,
};
use crate::io::atomic_write;

pub use synthetic::{generate_synthetic_scenarios, simulate_expert, ExpertParams, ScriptKind, SyntheticSpec};

pub const FORMAT_VERSION: u32 = 1;
/// Closed-loop ticks per scenario (10 s).
pub const SCENARIO_TICKS: usize = 50;
/// Replay samples per agent: t = -1.0 .. 10.0 s.
pub const REPLAY_LEN: usize = HISTORY_LEN + SCENARIO_TICKS + 1;

/// Seed of the fixed held-out evaluation suite.
pub const TEST_SUITE_SEED: u64 = 0x7E57_5EED;
pub const TEST_SUITE_SIZE: usize = 200;
/// Added to the run seed for the validation split.
pub const VAL_SEED_OFFSET: u64 = 0x9E37_79B9;
pub const TRAIN_SUITE_SIZE: usize = 500;
pub const VAL_SUITE_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReplay {
    pub id: u64,
    pub kind: AgentKind,
    pub length: f64,
    pub width: f64,
    pub has_lane: bool,
    /// `REPLAY_LEN` poses, the first at t = -1.0 s.
    pub poses: Vec<AgentPose>,
}

impl AgentReplay {
    fn track(&self, p: AgentPose) -> AgentTrack {
        AgentTrack {
            id: self.id,
            kind: self.kind,
            x: p.x,
            y: p.y,
            theta: p.theta,
            length: self.length,
            width: self.width,
            v: p.v,
            has_lane: self.has_lane,
        }
    }

    /// Track at replay sample `index` (0 is t = -1.0 s).
    pub fn track_at_index(&self, index: usize) -> AgentTrack {
        self.track(self.poses[index.min(self.poses.len() - 1)])
    }

    /// Pose at scenario time `t`, interpolated between samples and continued
    /// at constant velocity past the last one.
    pub fn pose_at(&self, t: f64) -> AgentPose {
        let u = (t + HISTORY_LEN as f64 * DT) / DT;
        let last = self.poses.len() - 1;
        if u <= 0.0 {
            return self.poses[0];
        }
        if u >= last as f64 {
            let p = self.poses[last];
            let extra = (u - last as f64) * DT;
            let (s, c) = p.theta.sin_cos();
            return AgentPose {
                x: p.x + p.v * extra * c,
                y: p.y + p.v * extra * s,
                ..p
            };
        }
        let i = u.floor() as usize;
        let f = u - i as f64;
        let (a, b) = (self.poses[i], self.poses[i + 1]);
        AgentPose {
            x: a.x + f * (b.x - a.x),
            y: a.y + f * (b.y - a.y),
            theta: lerp_angle(a.theta, b.theta, f),
            v: a.v + f * (b.v - a.v),
        }
    }

    pub fn track_at_time(&self, t: f64) -> AgentTrack {
        self.track(self.pose_at(t))
    }
}

/// Route arclength interval flagged as an intersection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationInterval {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub speed_limit: f64,
    pub seed: u64,
    pub script: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub format_version: u32,
    pub id: String,
    pub route: RouteSpec,
    #[serde(default)]
    pub footprint: Footprint,
    /// `HISTORY_LEN + 1` states, t = -1.0 .. 0.0 s; the last is the initial state.
    pub ego_history: Vec<EgoState>,
    /// `SCENARIO_TICKS` states, t = 0.2 .. 10.0 s.
    pub expert_future: Vec<EgoState>,
    pub agents: Vec<AgentReplay>,
    #[serde(default)]
    pub intersections: Vec<StationInterval>,
    pub meta: ScenarioMeta,
}

impl ScenarioRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(format!("scenario {}: {m}", self.id)));
        if self.format_version != FORMAT_VERSION {
            return bad(format!("format version {}, expected {FORMAT_VERSION}", self.format_version));
        }
        if self.ego_history.len() != HISTORY_LEN + 1 {
            return bad(format!("{} history states", self.ego_history.len()));
        }
        if self.expert_future.len() != SCENARIO_TICKS {
            return bad(format!("{} expert states", self.expert_future.len()));
        }
        if let Some(a) = self.agents.iter().find(|a| a.poses.len() != REPLAY_LEN) {
            return bad(format!("agent {} has {} replay poses", a.id, a.poses.len()));
        }
        Ok(())
    }

    pub fn initial_ego(&self) -> EgoState {
        self.ego_history[HISTORY_LEN]
    }

    /// Expert states at ticks 0..=SCENARIO_TICKS.
    pub fn expert_states(&self) -> Vec<EgoState> {
        let mut out = Vec::with_capacity(SCENARIO_TICKS + 1);
        out.push(self.initial_ego());
        out.extend_from_slice(&self.expert_future);
        out
    }

    /// Expert state at `tick`, continued at constant velocity past the end.
    pub fn expert_state_at(&self, tick: usize) -> EgoState {
        if tick == 0 {
            return self.initial_ego();
        }
        if tick <= SCENARIO_TICKS {
            return self.expert_future[tick - 1];
        }
        let last = self.expert_future[SCENARIO_TICKS - 1];
        let extra = (tick - SCENARIO_TICKS) as f64 * DT;
        let (s, c) = last.theta.sin_cos();
        EgoState {
            x: last.x + last.v * extra * c,
            y: last.y + last.v * extra * s,
            a: 0.0,
            ..last
        }
    }

    /// The expert's 6 s plan from `tick`.
    pub fn expert_trajectory_at(&self, tick: usize) -> Trajectory {
        let states = (0..TRAJECTORY_LEN).map(|k| self.expert_state_at(tick + k)).collect();
        Trajectory {
            states,
            dt: DT,
            origin_timestamp: tick as f64 * DT,
            path: None,
        }
    }

    /// Replayed agents at `tick` (negative ticks reach into the history).
    pub fn agents_at(&self, tick: isize) -> Vec<AgentTrack> {
        let idx = (tick + HISTORY_LEN as isize).max(0) as usize;
        self.agents.iter().map(|a| a.track_at_index(idx)).collect()
    }

    /// Planner input at `tick` given the ego's last `HISTORY_LEN + 1` states
    /// (oldest first, the last being the current state).
    pub fn scene_at(&self, tick: usize, ego: &[EgoState]) -> Result<SceneContext> {
        if ego.len() != HISTORY_LEN + 1 {
            return Err(Error::InvalidScene(format!("{} ego states, expected {}", ego.len(), HISTORY_LEN + 1)));
        }
        let t0 = tick as f64 * DT;
        let history = (0..HISTORY_LEN)
            .map(|k| {
                let back = (HISTORY_LEN - k) as isize;
                HistoryEntry {
                    timestamp: t0 - back as f64 * DT,
                    ego: ego[k],
                    agents: self.agents_at(tick as isize - back),
                }
            })
            .collect();
        Ok(SceneContext {
            ego: ego[HISTORY_LEN],
            agents: self.agents_at(tick as isize),
            route: self.route.clone(),
            history,
            timestamp: t0,
            footprint: self.footprint,
        })
    }

    /// Scene at `tick` as seen when the ego has followed the expert.
    pub fn expert_scene_at(&self, tick: usize) -> Result<SceneContext> {
        let ego: Vec<EgoState> = (0..=HISTORY_LEN)
            .map(|k| {
                let t = tick as isize - (HISTORY_LEN - k) as isize;
                if t >= 0 {
                    self.expert_state_at(t as usize)
                } else {
                    self.ego_history[(t + HISTORY_LEN as isize) as usize]
                }
            })
            .collect();
        self.scene_at(tick, &ego)
    }
}

pub fn write_scenarios(path: &Path, records: &[ScenarioRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.write_all(b"\n")?;
    }
    atomic_write(path, &buf)
}

pub fn read_scenarios(path: &Path) -> Result<Vec<ScenarioRecord>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScenarioRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}
