//! Candidate trajectory generation: constant-acceleration speed profiles
//! integrated along the route, with Dubins merges for off-route ego poses.

mod dubins;
mod profile;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use dubins::{DubinsPath, Pose, Turn, Word};
pub use profile::{profile_at, speed_profile};

use crate::error::{Error, Result};
use crate::geometry::{angle_diff, EgoState, PathGeometry, PathRef, RouteSpec, SceneContext, Trajectory};

/// Dubins paths are sampled at this arclength spacing.
const MERGE_SAMPLE_SPACING: f64 = 0.25;
/// Length over which a small on-route offset is blended out.
const ON_ROUTE_BLEND: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub accel_min: f64,
    pub accel_max: f64,
    pub accel_step: f64,
    pub turning_radii: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub merge_lateral_threshold: f64,
    /// Heading error below which an ego within the lateral threshold counts as on-route.
    pub merge_heading_threshold: f64,
    /// Largest lateral offset a Dubins merge is attempted from.
    pub merge_max_offset: f64,
    pub merge_lookahead: f64,
    pub merge_lookahead_step: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            accel_min: -5.0,
            accel_max: 1.5,
            accel_step: 0.5,
            turning_radii: vec![6.0, 9.0, 13.0, 20.0, 40.0],
            dt: 0.2,
            horizon: 6.0,
            merge_lateral_threshold: 0.15,
            merge_heading_threshold: 0.05,
            merge_max_offset: 4.0,
            merge_lookahead: 40.0,
            merge_lookahead_step: 1.0,
        }
    }
}

impl GeneratorConfig {
    /// Acceleration grid from `accel_min` to `accel_max` inclusive.
    pub fn accelerations(&self) -> Vec<f64> {
        let n = ((self.accel_max - self.accel_min) / self.accel_step + 1e-9).floor() as usize;
        let mut out: Vec<f64> = (0..=n).map(|k| self.accel_min + k as f64 * self.accel_step).collect();
        if (self.accel_max - out.last().unwrap()).abs() > 1e-9 {
            out.push(self.accel_max);
        } else {
            *out.last_mut().unwrap() = self.accel_max;
        }
        out
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn min_radius(&self) -> f64 {
        self.turning_radii.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.accel_min < self.accel_max
            && self.accel_step > 0.0
            && !self.turning_radii.is_empty()
            && self.turning_radii.iter().all(|&r| r > 0.0)
            && self.dt > 0.0
            && ((self.horizon / self.dt) - (self.horizon / self.dt).round()).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScene("invalid generator config".into()))
        }
    }
}

/// How a candidate's geometric path was built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PathKind {
    Centerline,
    Merge { radius: f64 },
    /// Direct snap to the centerline after every merge failed.
    Snap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub accel: f64,
    pub path: PathKind,
}

#[derive(Debug, Clone, Default)]
pub struct TrajectorySet {
    pub trajectories: Vec<Trajectory>,
    pub provenance: Vec<Provenance>,
    /// Set when no radius admitted a merge and the snap fallback was used.
    pub merge_failed: bool,
}

impl TrajectorySet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn push(&mut self, traj: Trajectory, prov: Provenance) {
        self.trajectories.push(traj);
        self.provenance.push(prov);
    }

    /// Index of the hardest-braking candidate (lowest acceleration, first on ties).
    pub fn hardest_brake(&self) -> Option<usize> {
        self.provenance
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.accel.total_cmp(&b.1.accel))
            .map(|(i, _)| i)
    }

    pub fn subset(&self, keep: &[bool]) -> TrajectorySet {
        let mut out = TrajectorySet {
            merge_failed: self.merge_failed,
            ..Default::default()
        };
        for (i, &k) in keep.iter().enumerate() {
            if k {
                out.push(self.trajectories[i].clone(), self.provenance[i]);
            }
        }
        out
    }
}

/// A merge from the ego pose onto the centerline.
#[derive(Debug, Clone, PartialEq)]
pub struct MergePath {
    pub dubins: DubinsPath,
    /// Route arclength where the merge joins the centerline.
    pub target_station: f64,
}

/// Shortest Dubins path from the ego pose to a centerline pose aligned with
/// the route, scanning targets ahead of the ego's projection.
pub fn dubins_merge(ego: Pose, route: &RouteSpec, radius: f64, cfg: &GeneratorConfig) -> Result<MergePath> {
    let pr = route.project([ego.0, ego.1]);
    if pr.lateral.abs() > cfg.merge_max_offset {
        return Err(Error::NoMergeFound);
    }
    let n = (cfg.merge_lookahead / cfg.merge_lookahead_step).round() as usize;
    let mut best: Option<MergePath> = None;
    for k in 1..=n {
        let target_station = pr.station + k as f64 * cfg.merge_lookahead_step;
        let (tx, ty, th) = route.pose_at(target_station, 0.0);
        let Some(path) = DubinsPath::shortest(ego, (tx, ty, th), radius) else {
            continue;
        };
        if path.length() >= cfg.merge_lookahead {
            continue;
        }
        if best.as_ref().map_or(true, |b| path.length() < b.dubins.length()) {
            best = Some(MergePath {
                dubins: path,
                target_station,
            });
        }
    }
    best.ok_or(Error::NoMergeFound)
}

/// Route vertices strictly after `from`, through `from + length`.
fn route_tail(route: &RouteSpec, from: f64, length: f64, s_offset: f64, out: &mut Vec<(f64, f64, f64, f64)>, stations: &mut Vec<f64>) {
    let end = from + length;
    for &st in route.cumulative_arclength() {
        if st <= from + 1e-9 {
            continue;
        }
        if st > end {
            break;
        }
        let (x, y, h) = route.pose_at(st, 0.0);
        out.push((s_offset + st - from, x, y, h));
        stations.push(st);
    }
    let last_s = out.last().map_or(0.0, |p| p.0);
    if last_s < s_offset + length - 1e-9 {
        let (x, y, h) = route.pose_at(end, 0.0);
        out.push((s_offset + length, x, y, h));
        stations.push(end);
    }
}

fn merge_geometry(m: &MergePath, route: &RouteSpec, length: f64) -> PathGeometry {
    let total = m.dubins.length();
    let n = (total / MERGE_SAMPLE_SPACING).ceil().max(1.0) as usize;
    let mut samples = Vec::with_capacity(n + 64);
    for k in 0..n {
        let s = total * k as f64 / n as f64;
        let (x, y, h) = m.dubins.sample(s);
        samples.push((s, x, y, h));
    }
    let (x, y, h) = route.pose_at(m.target_station, 0.0);
    samples.push((total, x, y, h));
    let mut stations = Vec::new();
    let mut hint = route.project([samples[0].1, samples[0].2]).station;
    for p in &samples[..samples.len() - 1] {
        hint = route.project_near([p.1, p.2], hint, 5.0 + MERGE_SAMPLE_SPACING).station;
        stations.push(hint);
    }
    stations.push(m.target_station);
    route_tail(route, m.target_station, (length - total).max(1.0), total, &mut samples, &mut stations);
    PathGeometry::with_route_stations(&samples, stations)
}

/// Centerline from the ego's projection, with a residual offset (lateral and
/// heading) blended out over a few meters so the path starts at the ego pose.
fn centerline_geometry(route: &RouteSpec, ego: &EgoState, length: f64, blend: bool) -> PathGeometry {
    let pr = route.project(ego.position());
    let (lat0, dth0) = if blend {
        (pr.lateral, angle_diff(ego.theta, pr.heading))
    } else {
        (0.0, 0.0)
    };
    let mut samples = Vec::new();
    let mut stations = Vec::new();
    if lat0 != 0.0 || dth0 != 0.0 {
        let n = (ON_ROUTE_BLEND / MERGE_SAMPLE_SPACING).round() as usize;
        for k in 0..n {
            let s = k as f64 * MERGE_SAMPLE_SPACING;
            let u = s / ON_ROUTE_BLEND;
            let w = (1.0 - u) * (1.0 - u) * (1.0 + 2.0 * u);
            let (x, y, h) = route.pose_at(pr.station + s, w * lat0);
            let h = if k == 0 { ego.theta } else { h + w * dth0 };
            let (x, y) = if k == 0 { (ego.x, ego.y) } else { (x, y) };
            samples.push((s, x, y, crate::geometry::wrap_angle(h)));
            stations.push(pr.station + s);
        }
        let (x, y, h) = route.pose_at(pr.station + ON_ROUTE_BLEND, 0.0);
        samples.push((ON_ROUTE_BLEND, x, y, h));
        stations.push(pr.station + ON_ROUTE_BLEND);
        route_tail(route, pr.station + ON_ROUTE_BLEND, (length - ON_ROUTE_BLEND).max(1.0), ON_ROUTE_BLEND, &mut samples, &mut stations);
    } else {
        let (x, y, h) = route.pose_at(pr.station, 0.0);
        samples.push((0.0, x, y, h));
        stations.push(pr.station);
        route_tail(route, pr.station, length, 0.0, &mut samples, &mut stations);
    }
    PathGeometry::with_route_stations(&samples, stations)
}

/// Samples a trajectory along `geometry` with a constant-acceleration profile.
/// The first state is the ego state itself.
pub fn trajectory_along(geometry: &Arc<PathGeometry>, ego: &EgoState, accel: f64, cfg: &GeneratorConfig, origin: f64) -> Trajectory {
    let profile: Vec<(f64, f64, f64)> = speed_profile(ego.v, accel, cfg.horizon, cfg.dt)
        .into_iter()
        .map(|(s, v)| (s, v, if v > 0.0 { accel } else { 0.0 }))
        .collect();
    trajectory_with_profile(geometry, ego, &profile, cfg.dt, origin)
}

/// Trajectory along `geometry` visiting `(arclength, speed, accel)` samples.
/// The first sample is replaced by the ego state.
pub fn trajectory_with_profile(geometry: &Arc<PathGeometry>, ego: &EgoState, profile: &[(f64, f64, f64)], dt: f64, origin: f64) -> Trajectory {
    let mut states = Vec::with_capacity(profile.len());
    let mut stations = Vec::with_capacity(profile.len());
    for (k, &(s, v, a)) in profile.iter().enumerate() {
        stations.push(s);
        if k == 0 {
            states.push(*ego);
            continue;
        }
        let (x, y, th) = geometry.pose_at(s);
        states.push(EgoState {
            x,
            y,
            theta: th,
            v,
            a,
            steering: 0.0,
        });
    }
    Trajectory {
        states,
        dt,
        origin_timestamp: origin,
        path: None,
    }
    .with_path(PathRef {
        geometry: Arc::clone(geometry),
        stations,
    })
}

/// Whether the ego is close enough to the centerline to skip merging.
pub fn is_on_route(ego: &EgoState, route: &RouteSpec, cfg: &GeneratorConfig) -> bool {
    let pr = route.project(ego.position());
    pr.lateral.abs() <= cfg.merge_lateral_threshold && angle_diff(ego.theta, pr.heading).abs() <= cfg.merge_heading_threshold
}

/// Cartesian product of acceleration profiles and geometric paths.
pub fn generate_trajectories(scene: &SceneContext, cfg: &GeneratorConfig) -> TrajectorySet {
    let ego = scene.ego;
    let route = &scene.route;
    let accels = cfg.accelerations();
    let a_top = accels.iter().copied().fold(0.0, f64::max);
    let length = ego.v * cfg.horizon + 0.5 * a_top * cfg.horizon * cfg.horizon + 20.0;
    let mut set = TrajectorySet::default();

    let mut paths: Vec<(Arc<PathGeometry>, PathKind)> = Vec::new();
    if is_on_route(&ego, route, cfg) {
        paths.push((Arc::new(centerline_geometry(route, &ego, length, true)), PathKind::Centerline));
    } else {
        for &r in &cfg.turning_radii {
            if let Ok(m) = dubins_merge((ego.x, ego.y, ego.theta), route, r, cfg) {
                paths.push((Arc::new(merge_geometry(&m, route, length)), PathKind::Merge { radius: r }));
            }
        }
    }

    for (geom, kind) in &paths {
        for &a in &accels {
            let traj = trajectory_along(geom, &ego, a, cfg, scene.timestamp);
            if validate_trajectory(&traj, cfg) {
                set.push(traj, Provenance { accel: a, path: *kind });
            }
        }
    }

    if set.is_empty() {
        let geom = Arc::new(centerline_geometry(route, &ego, length, false));
        for &a in &accels {
            let traj = trajectory_along(&geom, &ego, a, cfg, scene.timestamp);
            set.push(traj, Provenance { accel: a, path: PathKind::Snap });
        }
        set.merge_failed = true;
    }
    set
}

/// Dynamic feasibility: bounded discrete curvature, non-negative speeds and
/// per-step displacement consistent with the sampled speeds.
pub fn validate_trajectory(traj: &Trajectory, cfg: &GeneratorConfig) -> bool {
    let kappa_max = 1.05 / cfg.min_radius();
    let dt = traj.dt;
    if traj.states.iter().any(|s| !(s.v >= 0.0)) {
        return false;
    }
    for w in traj.states.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let ds = (b.x - a.x).hypot(b.y - a.y);
        let dth = angle_diff(b.theta, a.theta).abs();
        if ds >= 1e-3 {
            if dth / ds > kappa_max {
                return false;
            }
        } else if dth > kappa_max * 1e-3 + 1e-9 {
            // heading may not rotate in place
            return false;
        }
        let expected = 0.5 * (a.v + b.v) * dt;
        let slack = 0.1 * expected + 0.5 * (b.v - a.v).abs() * dt + 1e-6;
        if (ds - expected).abs() > slack {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{polyline_route, SceneContext, DT};
    use std::f64::consts::FRAC_PI_2;

    fn straight_route() -> RouteSpec {
        RouteSpec::straight([-20.0, 0.0], 0.0, 300.0, 15.0, 1.75).unwrap()
    }

    fn scene_at(ego: EgoState) -> SceneContext {
        SceneContext::with_constant_history(ego, vec![], straight_route())
    }

    #[test]
    fn accelerations_span_the_configured_range() {
        let a = GeneratorConfig::default().accelerations();
        assert_eq!(a.len(), 14);
        assert_eq!(a[0], -5.0);
        assert_eq!(*a.last().unwrap(), 1.5);
    }

    #[test]
    fn on_route_ego_gets_one_path_per_profile() {
        let set = generate_trajectories(&scene_at(EgoState::new(0.0, 0.0, 0.0, 8.0)), &GeneratorConfig::default());
        assert_eq!(set.len(), 14);
        assert!(set.provenance.iter().all(|p| p.path == PathKind::Centerline));
    }

    #[test]
    fn off_route_ego_gets_seventy_candidates() {
        let set = generate_trajectories(&scene_at(EgoState::new(0.0, 1.0, 0.0, 8.0)), &GeneratorConfig::default());
        assert_eq!(set.len(), 70);
        assert!((50..=150).contains(&set.len()));
    }

    #[test]
    fn stopped_ego_with_zero_accel_stays_put() {
        let ego = EgoState::new(3.0, 0.0, 0.0, 0.0);
        let set = generate_trajectories(&scene_at(ego), &GeneratorConfig::default());
        let i = set.provenance.iter().position(|p| p.accel == 0.0).unwrap();
        for s in &set.trajectories[i].states {
            assert_eq!((s.x, s.y, s.theta, s.v), (ego.x, ego.y, ego.theta, 0.0));
        }
    }

    #[test]
    fn first_state_is_the_ego_state() {
        let ego = EgoState::new(1.0, 0.8, 0.1, 6.0);
        let set = generate_trajectories(&scene_at(ego), &GeneratorConfig::default());
        for t in &set.trajectories {
            assert_eq!(t.states[0], ego);
            assert_eq!(t.len(), 31);
        }
    }

    #[test]
    fn aligned_offset_merge_converges_monotonically() {
        let cfg = GeneratorConfig::default();
        let route = straight_route();
        let m = dubins_merge((0.0, 1.0, 0.0), &route, 10.0, &cfg).unwrap();
        // sample the arc-segment sequence finely and check the lateral offset
        let n = 400;
        let mut prev = f64::INFINITY;
        for k in 0..=n {
            let (x, y, _) = m.dubins.sample(m.dubins.length() * k as f64 / n as f64);
            let lat = route.project([x, y]).lateral.abs();
            assert!(lat <= prev + 1e-9);
            prev = lat;
        }
        assert!(prev <= cfg.merge_lateral_threshold);
    }

    #[test]
    fn perpendicular_heading_merge_respects_curvature_or_fails() {
        let cfg = GeneratorConfig::default();
        match dubins_merge((0.0, 1.0, FRAC_PI_2), &straight_route(), 10.0, &cfg) {
            Ok(m) => {
                let segs = m.dubins.segment_lengths();
                // turning segments have radius 10: curvature 0.1
                assert_eq!(m.dubins.radius, 10.0);
                assert!(segs.iter().sum::<f64>() < cfg.merge_lookahead);
                let end = m.dubins.end();
                assert!(straight_route().project([end.0, end.1]).lateral.abs() < 1e-6);
            }
            Err(e) => assert!(matches!(e, Error::NoMergeFound)),
        }
    }

    #[test]
    fn validation_rejects_heading_jumps() {
        let cfg = GeneratorConfig::default();
        let mut states: Vec<EgoState> = (0..31).map(|k| EgoState::new(2.0 * k as f64, 0.0, 0.0, 10.0)).collect();
        let straight = Trajectory::new(states.clone(), DT, 0.0).unwrap();
        assert!(validate_trajectory(&straight, &cfg));
        assert!(validate_trajectory(&Trajectory::stationary(EgoState::new(0.0, 0.0, 0.0, 0.0), 0.0), &cfg));
        states[10].theta = FRAC_PI_2;
        assert!(!validate_trajectory(&Trajectory::new(states, DT, 0.0).unwrap(), &cfg));
    }

    #[test]
    fn curved_route_candidates_are_feasible() {
        let pts: Vec<[f64; 2]> = (0..=60)
            .map(|k| {
                let a = k as f64 / 60.0 * FRAC_PI_2;
                [30.0 * a.sin(), 30.0 * (1.0 - a.cos())]
            })
            .collect();
        let route = polyline_route(pts, 12.0, 1.75).unwrap();
        let (x, y, h) = route.pose_at(5.0, 0.6);
        let scene = SceneContext::with_constant_history(EgoState::new(x, y, h, 7.0), vec![], route);
        let set = generate_trajectories(&scene, &GeneratorConfig::default());
        assert!(set.len() >= 50);
        assert!(!set.merge_failed);
    }

    #[test]
    fn set_diversity_spans_the_accel_range() {
        let cfg = GeneratorConfig::default();
        let set = generate_trajectories(&scene_at(EgoState::new(0.0, 0.0, 0.0, 30.0)), &cfg);
        let finals: Vec<f64> = set.trajectories.iter().map(|t| t.path.as_ref().unwrap().stations[30]).collect();
        let spread = finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - finals.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread >= (cfg.accel_max - cfg.accel_min) * 36.0 / 2.0 * 0.5);
    }
}
