//! Closed-loop replay: plan, teleport the ego one step along the plan, replay
//! the other agents, repeat.

mod metrics;
mod summary;
mod tags;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AgentTrack, EgoState, Footprint, SceneContext, Trajectory, HISTORY_LEN};
use crate::scenario::{ScenarioRecord, SCENARIO_TICKS};

pub use metrics::{
    compute_metrics, front_collision, lead_vehicle, min_ttc_over_rollout, off_road, tailgate, ComfortMetrics, L2Metrics,
    LeadVehicle, MetricsReport, ProgressMetrics, SafetyMetrics, COMFORT_LIMITS, DIVERGENCE_LIMIT, OFF_ROAD_MARGIN,
    PROGRESS_MIN, TAILGATE_GAP, TTC_HORIZON, TTC_THRESHOLD, YAW_WEIGHT,
};
pub use summary::{aggregate, write_summary_csv, write_tag_csv, Summary, SummaryRow};
pub use tags::{tag_scenario, Tag};

pub struct PlanRequest<'a> {
    pub scene: &'a SceneContext,
    pub scenario: &'a ScenarioRecord,
    pub tick: usize,
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub trajectory: Trajectory,
    /// Index of the chosen candidate in the generated set.
    pub chosen: usize,
    pub candidates: usize,
    /// Candidates that passed the safety filter (all of them when unfiltered).
    pub accepted: usize,
    pub fallback: bool,
}

impl Plan {
    pub fn single(trajectory: Trajectory) -> Self {
        Self {
            trajectory,
            chosen: 0,
            candidates: 1,
            accepted: 1,
            fallback: false,
        }
    }
}

pub trait Planner {
    fn name(&self) -> String;
    fn plan(&mut self, req: &PlanRequest) -> Result<Plan>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    pub chosen: usize,
    pub candidates: usize,
    pub accepted: usize,
    pub fallback: bool,
    pub plan_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub scenario_id: String,
    pub planner: String,
    pub footprint: Footprint,
    /// Executed ego states at ticks 0..=SCENARIO_TICKS.
    pub ego: Vec<EgoState>,
    pub ticks: Vec<TickRecord>,
    /// Replayed agents at ticks 0..=SCENARIO_TICKS.
    pub agents: Vec<Vec<AgentTrack>>,
}

impl Rollout {
    /// Constant-velocity continuation so lookahead queries past the end stay defined.
    pub(crate) fn agent_at(&self, agent: usize, t: f64) -> AgentTrack {
        let dt = crate::geometry::DT;
        let last = self.agents.len() - 1;
        let u = (t / dt).max(0.0);
        if u >= last as f64 {
            let a = &self.agents[last][agent];
            let extra = t - last as f64 * dt;
            let (s, c) = a.theta.sin_cos();
            return AgentTrack {
                x: a.x + a.v * extra * c,
                y: a.y + a.v * extra * s,
                ..a.clone()
            };
        }
        let i = u.floor() as usize;
        let f = u - i as f64;
        let (a, b) = (&self.agents[i][agent], &self.agents[i + 1][agent]);
        AgentTrack {
            x: a.x + f * (b.x - a.x),
            y: a.y + f * (b.y - a.y),
            theta: crate::geometry::lerp_angle(a.theta, b.theta, f),
            v: a.v + f * (b.v - a.v),
            ..a.clone()
        }
    }
}

/// Runs `planner` for `SCENARIO_TICKS` ticks.
pub fn run_closed_loop(scenario: &ScenarioRecord, planner: &mut dyn Planner) -> Result<Rollout> {
    scenario.validate()?;
    let mut window: Vec<EgoState> = scenario.ego_history.clone();
    let mut ego = vec![scenario.initial_ego()];
    let mut ticks = Vec::with_capacity(SCENARIO_TICKS);
    for tick in 0..SCENARIO_TICKS {
        let scene = scenario.scene_at(tick, &window)?;
        let start = Instant::now();
        let plan = planner
            .plan(&PlanRequest { scene: &scene, scenario, tick })
            .map_err(|e| Error::PlannerFailure { tick, reason: e.to_string() })?;
        let plan_ms = start.elapsed().as_secs_f64() * 1e3;
        let Some(&next) = plan.trajectory.states.get(1) else {
            return Err(Error::PlannerFailure { tick, reason: "plan has fewer than two states".into() });
        };
        if ![next.x, next.y, next.theta, next.v].iter().all(|v| v.is_finite()) {
            return Err(Error::PlannerFailure { tick, reason: "non-finite plan state".into() });
        }
        ticks.push(TickRecord {
            tick,
            chosen: plan.chosen,
            candidates: plan.candidates,
            accepted: plan.accepted,
            fallback: plan.fallback,
            plan_ms,
        });
        ego.push(next);
        window.remove(0);
        window.push(next);
        debug_assert_eq!(window.len(), HISTORY_LEN + 1);
    }
    let agents = (0..=SCENARIO_TICKS).map(|k| scenario.agents_at(k as isize)).collect();
    Ok(Rollout {
        scenario_id: scenario.id.clone(),
        planner: planner.name(),
        footprint: scenario.footprint,
        ego,
        ticks,
        agents,
    })
}

#[cfg(test)]
mod tests;
