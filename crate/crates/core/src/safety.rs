//! Safety filter: each candidate is followed for a short window and then
//! braked firmly, and must keep a minimum gap to the track ahead while that
//! track brakes as hard as it plausibly can.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{EgoState, PathGeometry, PathRef, SceneContext, Trajectory, DT, TRAJECTORY_LEN};
use crate::prediction::{AgentPrediction, PredictedSample, PredictedTracks};
use crate::trajgen::{profile_at, TrajectorySet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyConfig {
    pub min_gap: f64,
    pub lead_hard_brake: f64,
    pub ego_firm_brake: f64,
    pub ego_jerk_limit: f64,
    pub follow_time: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            min_gap: 1.5,
            lead_hard_brake: 3.5,
            ego_firm_brake: 2.5,
            ego_jerk_limit: 3.5,
            follow_time: 1.0,
        }
    }
}

/// Kinematics of the braking tail, relative to the start of the tail.
#[derive(Debug, Clone, Copy)]
struct BrakeTail {
    v1: f64,
    a0: f64,
    jerk: f64,
    brake: f64,
    /// End of the jerk ramp (equals `t_stop` if the ego stops during the ramp).
    t_ramp: f64,
    t_stop: f64,
}

impl BrakeTail {
    fn new(v1: f64, a0: f64, cfg: &SafetyConfig) -> Self {
        let (j, b) = (cfg.ego_jerk_limit, cfg.ego_firm_brake);
        if v1 <= 0.0 {
            return Self { v1: 0.0, a0: 0.0, jerk: j, brake: b, t_ramp: 0.0, t_stop: 0.0 };
        }
        if a0 <= -b {
            // already braking at least as hard as the firm brake: keep that rate
            let t_stop = v1 / -a0;
            return Self { v1, a0, jerk: 0.0, brake: -a0, t_ramp: 0.0, t_stop };
        }
        let t_ramp = (a0 + b) / j;
        let t_zero = (a0 + (a0 * a0 + 2.0 * j * v1).sqrt()) / j;
        if t_zero <= t_ramp {
            return Self { v1, a0, jerk: j, brake: b, t_ramp: t_zero, t_stop: t_zero };
        }
        let v_r = v1 + a0 * t_ramp - 0.5 * j * t_ramp * t_ramp;
        Self { v1, a0, jerk: j, brake: b, t_ramp, t_stop: t_ramp + v_r / b }
    }

    /// `(distance, speed, accel)` after `tau` seconds of tail.
    fn at(&self, tau: f64) -> (f64, f64, f64) {
        let ramp = |t: f64| {
            (
                self.v1 * t + 0.5 * self.a0 * t * t - self.jerk * t * t * t / 6.0,
                self.v1 + self.a0 * t - 0.5 * self.jerk * t * t,
                self.a0 - self.jerk * t,
            )
        };
        let tau = tau.min(self.t_stop);
        if tau <= self.t_ramp {
            let (s, v, a) = ramp(tau);
            return if tau >= self.t_stop { (s, 0.0, 0.0) } else { (s, v.max(0.0), a) };
        }
        let (sr, vr, _) = ramp(self.t_ramp);
        let u = tau - self.t_ramp;
        let s = sr + vr * u - 0.5 * self.brake * u * u;
        if tau >= self.t_stop {
            return (s, 0.0, 0.0);
        }
        (s, (vr - self.brake * u).max(0.0), -self.brake)
    }
}

fn path_of(traj: &Trajectory) -> PathRef {
    if let Some(p) = &traj.path {
        return p.clone();
    }
    let geometry = PathGeometry::from_states(&traj.states);
    let mut stations = vec![0.0];
    for w in traj.states.windows(2) {
        let d = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
        stations.push(stations.last().unwrap() + d);
    }
    PathRef {
        geometry: Arc::new(geometry),
        stations,
    }
}

/// Follows `traj` for `follow_time`, then brakes: a jerk-limited ramp from the
/// trajectory's acceleration at that moment to the firm brake, held until
/// stopped. Positions stay on the original path. The result is extended past
/// the original horizon until the stop.
pub fn modify_trajectory(traj: &Trajectory, cfg: &SafetyConfig) -> Trajectory {
    let n_follow = (cfg.follow_time / traj.dt).round() as usize;
    if traj.len() <= n_follow + 1 {
        return traj.clone();
    }
    let path = path_of(traj);
    let s1 = path.stations[n_follow];
    let p1 = traj.states[n_follow];
    let a0 = if n_follow > 0 {
        (p1.v - traj.states[n_follow - 1].v) / traj.dt
    } else {
        p1.a
    };
    let tail = BrakeTail::new(p1.v, a0, cfg);
    let tail_steps = (tail.t_stop / traj.dt - 1e-9).ceil().max(0.0) as usize;
    let total = (n_follow + 1 + tail_steps).max(traj.len().max(TRAJECTORY_LEN));

    let mut states: Vec<EgoState> = traj.states[..=n_follow].to_vec();
    let mut stations: Vec<f64> = path.stations[..=n_follow].to_vec();
    if p1.v <= 0.0 {
        let hold = EgoState { v: 0.0, a: 0.0, ..p1 };
        states.resize(total, hold);
        stations.resize(total, s1);
    } else {
        for k in n_follow + 1..total {
            let tau = (k - n_follow) as f64 * traj.dt;
            let (ds, v, a) = tail.at(tau);
            let s = s1 + ds;
            let (x, y, theta) = path.geometry.pose_at(s);
            states.push(EgoState { x, y, theta, v, a, steering: 0.0 });
            stations.push(s);
        }
    }
    Trajectory {
        states,
        dt: traj.dt,
        origin_timestamp: traj.origin_timestamp,
        path: None,
    }
    .with_path(PathRef {
        geometry: path.geometry,
        stations,
    })
}

fn hard_brake_samples(x: f64, y: f64, theta: f64, v: f64, brake: f64, steps: usize) -> Vec<PredictedSample> {
    let (s, c) = theta.sin_cos();
    (0..=steps)
        .map(|k| {
            let t = k as f64 * DT;
            let (d, vt) = profile_at(v, -brake, t);
            PredictedSample { t, x: x + d * c, y: y + d * s, theta, v: vt }
        })
        .collect()
}

/// Every agent, pedestrians included, brakes at `lead_hard_brake` along its heading.
pub fn worst_case_lead(scene: &SceneContext, cfg: &SafetyConfig, horizon: f64) -> PredictedTracks {
    let steps = (horizon / DT).round() as usize;
    PredictedTracks {
        dt: DT,
        horizon: steps as f64 * DT,
        agents: scene
            .agents
            .iter()
            .map(|a| AgentPrediction {
                id: a.id,
                kind: a.kind,
                length: a.length,
                width: a.width,
                samples: hard_brake_samples(a.x, a.y, a.theta, a.v, cfg.lead_hard_brake, steps),
            })
            .collect(),
    }
}

/// Index of the nearest agent ahead of the ego along the route within the lane corridor.
pub fn track_ahead(scene: &SceneContext) -> Option<usize> {
    let route = &scene.route;
    let ego_s = route.project(scene.ego.position()).station;
    let hw = route.lane_half_width();
    scene
        .agents
        .iter()
        .enumerate()
        .filter_map(|(i, a)| {
            let pr = route.project(a.position());
            (pr.station > ego_s && pr.lateral.abs() <= hw).then_some((i, pr.station))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// The track ahead's worst-case rear-bumper station at each 0.2 s step,
/// shared by every candidate of one planning tick.
#[derive(Debug, Clone)]
pub struct LeadEnvelope {
    rear_stations: Vec<f64>,
}

impl LeadEnvelope {
    pub fn new(scene: &SceneContext, cfg: &SafetyConfig) -> Option<Self> {
        let lead = &scene.agents[track_ahead(scene)?];
        let route = &scene.route;
        let t_stop = lead.v.max(0.0) / cfg.lead_hard_brake;
        let steps = (t_stop / DT).ceil() as usize + 1;
        let samples = hard_brake_samples(lead.x, lead.y, lead.theta, lead.v, cfg.lead_hard_brake, steps);
        let mut hint = route.project(lead.position()).station;
        let rear_stations = samples
            .iter()
            .map(|p| {
                hint = route.project_near([p.x, p.y], hint, 5.0 + lead.v * DT).station;
                hint - 0.5 * lead.length
            })
            .collect();
        Some(Self { rear_stations })
    }

    pub fn rear_station(&self, k: usize) -> f64 {
        self.rear_stations[k.min(self.rear_stations.len() - 1)]
    }

    /// True if `modified`, sampled on the 0.2 s grid from the tick, keeps `min_gap` at every step.
    pub fn admits(&self, modified: &Trajectory, scene: &SceneContext, cfg: &SafetyConfig) -> bool {
        let half = 0.5 * scene.footprint.length;
        modified
            .route_stations(&scene.route)
            .iter()
            .enumerate()
            .all(|(k, &s)| self.rear_station(k) - (s + half) >= cfg.min_gap)
    }
}

/// Gap check of an already-modified trajectory against the worst-case track ahead.
pub fn check_trajectory(modified: &Trajectory, scene: &SceneContext, cfg: &SafetyConfig) -> bool {
    match LeadEnvelope::new(scene, cfg) {
        Some(env) => env.admits(modified, scene, cfg),
        None => true,
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub set: TrajectorySet,
    /// Pass/fail per input candidate.
    pub mask: Vec<bool>,
    /// No candidate passed; `set` holds only the hardest-brake candidate.
    pub fallback: bool,
}

pub fn filter_set(set: &TrajectorySet, scene: &SceneContext, cfg: &SafetyConfig) -> FilterOutcome {
    let env = LeadEnvelope::new(scene, cfg);
    let mask: Vec<bool> = set
        .trajectories
        .iter()
        .map(|t| match &env {
            Some(env) => env.admits(&modify_trajectory(t, cfg), scene, cfg),
            None => true,
        })
        .collect();
    if mask.iter().any(|&m| m) {
        return FilterOutcome {
            set: set.subset(&mask),
            mask,
            fallback: false,
        };
    }
    let mut keep = vec![false; set.len()];
    if let Some(i) = set.hardest_brake() {
        keep[i] = true;
    }
    FilterOutcome {
        set: set.subset(&keep),
        mask,
        fallback: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AgentKind, AgentTrack, RouteSpec};
    use crate::trajgen::{generate_trajectories, GeneratorConfig};

    fn route() -> RouteSpec {
        RouteSpec::straight([-50.0, 0.0], 0.0, 600.0, 15.0, 1.75).unwrap()
    }

    fn lead(x: f64, v: f64) -> AgentTrack {
        AgentTrack { id: 7, kind: AgentKind::Vehicle, x, y: 0.0, theta: 0.0, length: 4.9, width: 2.0, v, has_lane: true }
    }

    fn constant_speed(v: f64) -> Trajectory {
        let states = (0..31).map(|k| EgoState::new(v * 0.2 * k as f64, 0.0, 0.0, v)).collect();
        Trajectory::new(states, DT, 0.0).unwrap()
    }

    #[test]
    fn stopped_trajectory_is_unchanged() {
        let t = Trajectory::stationary(EgoState::new(1.0, 2.0, 0.3, 0.0), 0.0);
        assert_eq!(modify_trajectory(&t, &SafetyConfig::default()).states, t.states);
    }

    #[test]
    fn constant_speed_stopping_distance() {
        // closed form: 10 m follow, ramp t = 2.5/3.5 s, then v_r^2 / (2 * 2.5)
        let tr: f64 = 2.5 / 3.5;
        let ramp = 10.0 * tr - 3.5 * tr.powi(3) / 6.0;
        let v_r = 10.0 - 0.5 * 3.5 * tr * tr;
        let expected = 10.0 + ramp + v_r * v_r / 5.0;
        assert!((expected - 33.52).abs() < 0.01);
        let m = modify_trajectory(&constant_speed(10.0), &SafetyConfig::default());
        let last = m.states.last().unwrap();
        assert_eq!(last.v, 0.0);
        assert!((last.x - expected).abs() < 1e-9);
        assert_eq!(m.len(), 31);
        // at 20 m/s the stop comes after the 6 s horizon
        let fast = modify_trajectory(&constant_speed(20.0), &SafetyConfig::default());
        assert!(fast.len() > 31 && fast.states.last().unwrap().v == 0.0);
    }

    #[test]
    fn early_hard_brake_is_unchanged() {
        let scene = SceneContext::with_constant_history(EgoState::new(0.0, 0.0, 0.0, 4.0), vec![], route());
        let set = generate_trajectories(&scene, &GeneratorConfig::default());
        let i = set.hardest_brake().unwrap();
        let m = modify_trajectory(&set.trajectories[i], &SafetyConfig::default());
        assert_eq!(m.states, set.trajectories[i].states);
    }

    #[test]
    fn worst_case_stopping() {
        let cfg = SafetyConfig::default();
        let scene = SceneContext::with_constant_history(
            EgoState::new(0.0, 0.0, 0.0, 0.0),
            vec![lead(20.0, 8.0), lead(60.0, 0.0), lead(90.0, 3.5)],
            route(),
        );
        let w = worst_case_lead(&scene, &cfg, 10.0);
        let last = w.agents[0].samples.last().unwrap();
        assert!((last.x - 20.0 - 64.0 / 7.0).abs() < 1e-9);
        assert!((64.0f64 / 7.0 - 9.143).abs() < 1e-3 && (8.0f64 / 3.5 - 2.286).abs() < 1e-3);
        assert!(w.agents[1].samples.iter().all(|s| s.x == 60.0));
        assert_eq!(w.agents[2].samples[5].v, 0.0);
        assert!(w.agents[2].samples[4].v > 0.0);
    }

    #[test]
    fn gap_threshold() {
        let cfg = SafetyConfig::default();
        let ego = EgoState::new(0.0, 0.0, 0.0, 0.0);
        let stopped = Trajectory::stationary(ego, 0.0);
        let scene = |gap: f64| SceneContext::with_constant_history(ego, vec![lead(4.9 + gap, 0.0)], route());
        assert!(!check_trajectory(&modify_trajectory(&stopped, &cfg), &scene(1.4), &cfg));
        assert!(check_trajectory(&modify_trajectory(&stopped, &cfg), &scene(1.6), &cfg));
        let empty = SceneContext::with_constant_history(ego, vec![], route());
        assert!(check_trajectory(&stopped, &empty, &cfg));
    }

    #[test]
    fn stationary_lead_forty_meters_ahead() {
        let cfg = SafetyConfig::default();
        let ego = EgoState::new(0.0, 0.0, 0.0, 10.0);
        let scene = SceneContext::with_constant_history(ego, vec![lead(40.0 + 4.9, 0.0)], route());
        let m = modify_trajectory(&constant_speed(10.0), &cfg);
        // step oracle over the modified samples
        let min_gap = m.states.iter().map(|s| 40.0 + 4.9 - 2.45 - (s.x + 2.45)).fold(f64::INFINITY, f64::min);
        assert!((min_gap - (40.0 - 33.52)).abs() < 0.01);
        assert_eq!(check_trajectory(&m, &scene, &cfg), min_gap >= 1.5);
        assert!(check_trajectory(&m, &scene, &cfg));
    }

    #[test]
    fn empty_scene_passes_everything() {
        let scene = SceneContext::with_constant_history(EgoState::new(0.0, 0.0, 0.0, 12.0), vec![], route());
        let set = generate_trajectories(&scene, &GeneratorConfig::default());
        let out = filter_set(&set, &scene, &SafetyConfig::default());
        assert_eq!(out.set.len(), set.len());
        assert!(!out.fallback);
    }

    #[test]
    fn all_fail_falls_back_to_hardest_brake() {
        let ego = EgoState::new(0.0, 0.0, 0.0, 15.0);
        let scene = SceneContext::with_constant_history(ego, vec![lead(8.0, 0.0)], route());
        let set = generate_trajectories(&scene, &GeneratorConfig::default());
        let out = filter_set(&set, &scene, &SafetyConfig::default());
        assert!(out.fallback);
        assert_eq!(out.set.len(), 1);
        assert_eq!(out.set.provenance[0].accel, -5.0);
        assert!(out.mask.iter().all(|&m| !m));
    }

    #[test]
    fn tail_respects_brake_and_jerk_limits() {
        let cfg = SafetyConfig::default();
        for v in [0.5, 3.0, 10.0, 25.0] {
            let scene = SceneContext::with_constant_history(EgoState::new(0.0, 0.0, 0.0, v), vec![], route());
            let set = generate_trajectories(&scene, &GeneratorConfig::default());
            for (t, p) in set.trajectories.iter().zip(&set.provenance) {
                if p.accel < -cfg.ego_firm_brake {
                    continue;
                }
                let m = modify_trajectory(t, &cfg);
                let acc: Vec<f64> = m.states.windows(2).map(|w| (w[1].v - w[0].v) / DT).collect();
                for k in 5..acc.len() {
                    assert!(acc[k] >= -cfg.ego_firm_brake - 1e-6, "v={v} a={} k={k}", p.accel);
                    if k > 5 {
                        assert!(acc[k - 1] - acc[k] <= cfg.ego_jerk_limit * DT + 1e-6);
                    }
                }
            }
        }
    }
}
