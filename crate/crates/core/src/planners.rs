//! Baseline and learned planners for closed-loop replay.

use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::compute_bundles;
use crate::geometry::{PathGeometry, SceneContext, Trajectory};
use crate::prediction::{idm_accel, predict_agents, IdmParams, PredictedTracks};
use crate::safety::{filter_set, SafetyConfig};
use crate::scorer::{score_bundles, ScorerParams};
use crate::scenario::ScenarioRecord;
use crate::sim::{compute_metrics, run_closed_loop, MetricsReport, Plan, PlanRequest, Planner, Rollout};
use crate::trajgen::{generate_trajectories, trajectory_along, trajectory_with_profile, GeneratorConfig, TrajectorySet};

/// Horizon of agent predictions handed to the features.
pub const PREDICTION_HORIZON: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Learned,
    LearnedPlusSafety,
    Idm,
    ConstantSpeed,
    ExpertReplay,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 5] = [
        PlannerKind::Learned,
        PlannerKind::LearnedPlusSafety,
        PlannerKind::Idm,
        PlannerKind::ConstantSpeed,
        PlannerKind::ExpertReplay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Learned => "learned",
            PlannerKind::LearnedPlusSafety => "learned_plus_safety",
            PlannerKind::Idm => "idm",
            PlannerKind::ConstantSpeed => "constant_speed",
            PlannerKind::ExpertReplay => "expert_replay",
        }
    }

    pub fn needs_params(self) -> bool {
        matches!(self, PlannerKind::Learned | PlannerKind::LearnedPlusSafety)
    }
}

impl FromStr for PlannerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PlannerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown planner {s:?}")))
    }
}

/// Stage configuration shared by the learned planner and dataset assembly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub generator: GeneratorConfig,
    pub safety: SafetyConfig,
    pub prediction: IdmParams,
}

/// Path the baselines drive along: the generator's centerline or merge path.
fn baseline_path(scene: &SceneContext, cfg: &GeneratorConfig) -> Result<(TrajectorySet, Arc<PathGeometry>)> {
    let set = generate_trajectories(scene, cfg);
    let path = set
        .trajectories
        .first()
        .and_then(|t| t.path.as_ref())
        .map(|p| Arc::clone(&p.geometry))
        .ok_or_else(|| Error::InvalidTrajectory("generator returned no path".into()))?;
    Ok((set, path))
}

/// Current speed held along the route for the whole horizon.
pub fn cs_planner_step(scene: &SceneContext, cfg: &GeneratorConfig) -> Result<Trajectory> {
    let (_, path) = baseline_path(scene, cfg)?;
    Ok(trajectory_along(&path, &scene.ego, 0.0, cfg, scene.timestamp))
}

/// IDM rolled along the route against the predicted lead, semi-implicit Euler.
pub fn idm_planner_step(scene: &SceneContext, params: &IdmParams, cfg: &GeneratorConfig) -> Result<Trajectory> {
    let (_, path) = baseline_path(scene, cfg)?;
    let preds = predict_agents(scene, cfg.horizon, params);
    let route = &scene.route;
    let fp = scene.footprint;
    let half = route.lane_half_width();
    let steps = cfg.steps();
    let dt = cfg.dt;
    let (mut s, mut v) = (0.0, scene.ego.v);
    let mut profile = Vec::with_capacity(steps + 1);
    for k in 0..steps {
        let t = k as f64 * dt;
        let ego_station = path.route_station_at(s).unwrap_or_else(|| route.project(path_point(&path, s)).station);
        let ego_lat = route.project(path_point(&path, s)).lateral;
        let lead = lead_from_predictions(&preds, route, t, ego_station, ego_lat, half, fp.length);
        let limit = route.speed_limit_at(ego_station);
        let p = IdmParams { v_desired: limit, ..*params };
        let a = match lead {
            Some((gap, lv)) => idm_accel(v, gap, lv, &p),
            None => idm_accel(v, f64::INFINITY, v, &p),
        };
        if k == 0 {
            profile.push((0.0, v, a));
        }
        let v_next = (v + a * dt).max(0.0);
        s += v_next * dt;
        v = v_next;
        profile.push((s, v, a));
    }
    Ok(trajectory_with_profile(&path, &scene.ego, &profile, dt, scene.timestamp))
}

fn path_point(path: &PathGeometry, s: f64) -> [f64; 2] {
    let (x, y, _) = path.pose_at(s);
    [x, y]
}

fn lead_from_predictions(
    preds: &PredictedTracks,
    route: &crate::geometry::RouteSpec,
    t: f64,
    ego_station: f64,
    ego_lat: f64,
    half: f64,
    ego_length: f64,
) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for a in &preds.agents {
        if a.kind != crate::geometry::AgentKind::Vehicle {
            continue;
        }
        let smp = a.at(t, preds.dt);
        let pr = route.project([smp.x, smp.y]);
        if pr.station <= ego_station || (pr.lateral - ego_lat).abs() > half {
            continue;
        }
        let gap = (pr.station - ego_station - 0.5 * (ego_length + a.length)).max(0.0);
        let lv = smp.v * crate::geometry::angle_diff(smp.theta, pr.heading).cos();
        if best.map_or(true, |b| gap < b.0) {
            best = Some((gap, lv));
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct LearnedPlan {
    pub trajectory: Trajectory,
    /// Index into the generated set.
    pub index: usize,
    pub candidates: usize,
    /// Rewards of the scored candidates, in scoring order.
    pub rewards: Vec<f64>,
    pub mask: Vec<bool>,
    pub fallback: bool,
}

/// Generate, optionally filter, featurize, score and pick the argmax
/// (first index on ties).
pub fn learned_planner_step(scene: &SceneContext, params: &ScorerParams, use_safety_filter: bool, cfg: &PipelineConfig) -> Result<LearnedPlan> {
    let set = generate_trajectories(scene, &cfg.generator);
    let (mask, fallback, scored) = if use_safety_filter {
        let f = filter_set(&set, scene, &cfg.safety);
        let scored: Vec<usize> = if f.fallback {
            set.hardest_brake().into_iter().collect()
        } else {
            (0..set.len()).filter(|&i| f.mask[i]).collect()
        };
        (f.mask, f.fallback, scored)
    } else {
        (vec![true; set.len()], false, (0..set.len()).collect())
    };
    if scored.is_empty() {
        return Err(Error::InvalidTrajectory("no candidate trajectories".into()));
    }
    let trajs: Vec<Trajectory> = scored.iter().map(|&i| set.trajectories[i].clone()).collect();
    let rewards = if trajs.len() == 1 {
        vec![0.0]
    } else {
        let preds = predict_agents(scene, PREDICTION_HORIZON, &cfg.prediction);
        let bundles = compute_bundles(&trajs, scene, &preds);
        let refs: Vec<_> = bundles.iter().collect();
        score_bundles(params, &refs)?
    };
    let mut best = 0;
    for (i, &r) in rewards.iter().enumerate() {
        if r > rewards[best] {
            best = i;
        }
    }
    if !rewards[best].is_finite() {
        return Err(Error::InvalidTrajectory("non-finite reward".into()));
    }
    let index = scored[best];
    Ok(LearnedPlan {
        trajectory: set.trajectories[index].clone(),
        index,
        candidates: set.len(),
        rewards,
        mask,
        fallback,
    })
}

pub struct LearnedPlanner {
    pub params: Arc<ScorerParams>,
    pub use_safety_filter: bool,
    pub pipeline: PipelineConfig,
}

impl Planner for LearnedPlanner {
    fn name(&self) -> String {
        if self.use_safety_filter { PlannerKind::LearnedPlusSafety } else { PlannerKind::Learned }
            .name()
            .to_string()
    }

    fn plan(&mut self, req: &PlanRequest) -> Result<Plan> {
        let p = learned_planner_step(req.scene, &self.params, self.use_safety_filter, &self.pipeline)?;
        Ok(Plan {
            accepted: p.mask.iter().filter(|&&m| m).count(),
            trajectory: p.trajectory,
            chosen: p.index,
            candidates: p.candidates,
            fallback: p.fallback,
        })
    }
}

pub struct IdmPlanner {
    pub params: IdmParams,
    pub generator: GeneratorConfig,
}

impl Planner for IdmPlanner {
    fn name(&self) -> String {
        PlannerKind::Idm.name().into()
    }

    fn plan(&mut self, req: &PlanRequest) -> Result<Plan> {
        Ok(Plan::single(idm_planner_step(req.scene, &self.params, &self.generator)?))
    }
}

pub struct ConstantSpeedPlanner {
    pub generator: GeneratorConfig,
}

impl Planner for ConstantSpeedPlanner {
    fn name(&self) -> String {
        PlannerKind::ConstantSpeed.name().into()
    }

    fn plan(&mut self, req: &PlanRequest) -> Result<Plan> {
        Ok(Plan::single(cs_planner_step(req.scene, &self.generator)?))
    }
}

/// Replays the recorded expert plan from the current tick.
pub struct ExpertReplayPlanner;

impl Planner for ExpertReplayPlanner {
    fn name(&self) -> String {
        PlannerKind::ExpertReplay.name().into()
    }

    fn plan(&mut self, req: &PlanRequest) -> Result<Plan> {
        Ok(Plan::single(req.scenario.expert_trajectory_at(req.tick)))
    }
}

/// Planner of `kind`; the learned kinds need `params`.
pub fn make_planner(kind: PlannerKind, params: Option<Arc<ScorerParams>>, pipeline: &PipelineConfig) -> Result<Box<dyn Planner + Send>> {
    Ok(match kind {
        PlannerKind::Learned | PlannerKind::LearnedPlusSafety => Box::new(LearnedPlanner {
            params: params.ok_or_else(|| Error::Format(format!("planner {} needs trained parameters", kind.name())))?,
            use_safety_filter: kind == PlannerKind::LearnedPlusSafety,
            pipeline: pipeline.clone(),
        }),
        PlannerKind::Idm => Box::new(IdmPlanner {
            params: pipeline.prediction,
            generator: pipeline.generator.clone(),
        }),
        PlannerKind::ConstantSpeed => Box::new(ConstantSpeedPlanner {
            generator: pipeline.generator.clone(),
        }),
        PlannerKind::ExpertReplay => Box::new(ExpertReplayPlanner),
    })
}

/// Closed-loop rollouts and metrics of one planner over `scenarios`, in
/// parallel on the current rayon pool, output in input order.
pub fn evaluate_planner(
    scenarios: &[ScenarioRecord],
    kind: PlannerKind,
    params: Option<Arc<ScorerParams>>,
    pipeline: &PipelineConfig,
) -> Result<Vec<(Rollout, MetricsReport)>> {
    make_planner(kind, params.clone(), pipeline)?;
    scenarios
        .par_iter()
        .map(|rec| {
            let mut planner = make_planner(kind, params.clone(), pipeline)?;
            let rollout = run_closed_loop(rec, planner.as_mut())?;
            let report = compute_metrics(&rollout, rec);
            Ok((rollout, report))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AgentKind, AgentTrack, EgoState, RouteSpec};
    use crate::scenario::{generate_synthetic_scenarios, SyntheticSpec};
    use crate::scorer::{init_params, ScorerConfig};

    fn road(limit: f64) -> RouteSpec {
        RouteSpec::straight([-50.0, 0.0], 0.0, 500.0, limit, 1.75).unwrap()
    }

    fn ego(v: f64) -> EgoState {
        EgoState::new(0.0, 0.0, 0.0, v)
    }

    fn car(x: f64, v: f64) -> AgentTrack {
        AgentTrack {
            id: 1,
            kind: AgentKind::Vehicle,
            x,
            y: 0.0,
            theta: 0.0,
            length: 4.7,
            width: 1.9,
            v,
            has_lane: true,
        }
    }

    #[test]
    fn constant_speed_covers_sixty_metres() {
        let scene = SceneContext::with_constant_history(ego(10.0), Vec::new(), road(15.0));
        let t = cs_planner_step(&scene, &GeneratorConfig::default()).unwrap();
        let last = t.states.last().unwrap();
        assert!((last.x - 60.0).abs() < 1e-6, "{}", last.x);
        assert!(t.states.iter().all(|s| (s.v - 10.0).abs() < 1e-12));

        let still = SceneContext::with_constant_history(ego(0.0), Vec::new(), road(15.0));
        let t = cs_planner_step(&still, &GeneratorConfig::default()).unwrap();
        assert!(t.states.iter().all(|s| s.x.abs() < 1e-9 && s.v == 0.0));
    }

    #[test]
    fn idm_holds_the_limit_on_a_free_road() {
        let scene = SceneContext::with_constant_history(ego(15.0), Vec::new(), road(15.0));
        let t = idm_planner_step(&scene, &IdmParams::default(), &GeneratorConfig::default()).unwrap();
        assert!(t.states.iter().all(|s| (s.v - 15.0).abs() < 1e-9));
    }

    #[test]
    fn idm_starts_at_full_acceleration() {
        let p = IdmParams::default();
        let scene = SceneContext::with_constant_history(ego(0.0), Vec::new(), road(15.0));
        let t = idm_planner_step(&scene, &p, &GeneratorConfig::default()).unwrap();
        assert!((t.states[1].v - p.a_max * 0.2).abs() < 1e-12);
        assert!(t.states.windows(2).all(|w| w[1].v >= w[0].v));
    }

    #[test]
    fn idm_stops_short_of_a_stopped_lead() {
        let p = IdmParams::default();
        let gap0 = 10.0;
        let lead_x = gap0 + 0.5 * (4.9 + 4.7);
        let parked = AgentTrack { has_lane: false, ..car(lead_x, 0.0) };
        let scene = SceneContext::with_constant_history(ego(5.0), vec![parked], road(15.0));
        let t = idm_planner_step(&scene, &p, &GeneratorConfig::default()).unwrap();
        let last = t.states.last().unwrap();
        let gap = lead_x - last.x - 0.5 * (scene.footprint.length + 4.7);
        assert!(gap >= p.s0, "final gap {gap}");
        assert!(last.v < 0.1);
    }

    fn sample_scenes(n: usize) -> Vec<SceneContext> {
        let recs = generate_synthetic_scenarios(&SyntheticSpec::all_scripts(n, "pl"), 41).unwrap();
        recs.iter().flat_map(|r| [r.expert_scene_at(0).unwrap(), r.expert_scene_at(25).unwrap()]).collect()
    }

    #[test]
    fn learned_step_is_argmax_within_the_mask() {
        let params = init_params(&ScorerConfig::reduced(), 3);
        let cfg = PipelineConfig::default();
        for scene in sample_scenes(7) {
            for filter in [false, true] {
                let plan = learned_planner_step(&scene, &params, filter, &cfg).unwrap();
                let scored: Vec<usize> = if plan.fallback {
                    assert!(filter);
                    continue;
                } else {
                    (0..plan.candidates).filter(|&i| plan.mask[i]).collect()
                };
                assert!(plan.mask[plan.index]);
                let pos = scored.iter().position(|&i| i == plan.index).unwrap();
                let best = plan.rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(plan.rewards[pos], best);
                assert_eq!(plan.rewards.iter().position(|&r| r == best), Some(pos));
                if !filter {
                    assert!(plan.mask.iter().all(|&m| m));
                }
            }
        }
    }

    #[test]
    fn single_candidate_is_returned_unscored() {
        let scene = SceneContext::with_constant_history(ego(8.0), Vec::new(), road(15.0));
        let cfg = PipelineConfig {
            generator: GeneratorConfig {
                accel_min: 0.0,
                accel_max: 0.0,
                ..GeneratorConfig::default()
            },
            ..PipelineConfig::default()
        };
        let params = init_params(&ScorerConfig::reduced(), 0);
        let plan = learned_planner_step(&scene, &params, false, &cfg).unwrap();
        assert_eq!((plan.candidates, plan.index), (1, 0));
        assert_eq!(plan.rewards, vec![0.0]);
    }

    #[test]
    fn planner_kinds_parse_and_build() {
        for name in ["learned", "learned_plus_safety", "idm", "constant_speed", "expert_replay"] {
            let kind: PlannerKind = name.parse().unwrap();
            assert_eq!(kind.name(), name);
            let params = kind.needs_params().then(|| Arc::new(init_params(&ScorerConfig::reduced(), 0)));
            assert!(make_planner(kind, params, &PipelineConfig::default()).is_ok());
        }
        assert!("nope".parse::<PlannerKind>().is_err());
        assert!(make_planner(PlannerKind::Learned, None, &PipelineConfig::default()).is_err());
    }
}
