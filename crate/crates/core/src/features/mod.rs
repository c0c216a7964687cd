//! Interpretable per-trajectory features consumed by the scorer.

mod cache;

use ndarray::Array2;

pub use cache::{
    decode_feature_cache, encode_feature_cache, read_feature_cache, write_feature_cache, CachedSample, FeatureCache,
    SampleMeta, CACHE_MAGIC, CACHE_VERSION,
};

use crate::geometry::{angle_diff, wrap_angle, OrientedBox, SceneContext, Trajectory, DT};
use crate::prediction::PredictedTracks;

/// Sample times (seconds after the tick) for the sequence features.
pub const SUBSAMPLE_TIMES: [f64; 6] = [0.2, 0.4, 0.6, 1.0, 2.0, 4.0];
pub const TTC_SATURATION: f64 = 4.0;
/// Time step of the collision search.
pub const TTC_STEP: f64 = 0.1;
pub const AHEAD_FLAG_DISTANCE: f64 = 20.0;
pub const AHEAD_DISTANCE_CAP: f64 = 100.0;
pub const JERK_FLAG_STEP: f64 = 0.5;
pub const JERK_FLAGS: usize = 20;
pub const LAT_ACCEL_FLAG_STEP: f64 = 0.2;
pub const LAT_ACCEL_FLAGS: usize = 25;
pub const PAST_COUPLING_ROWS: usize = 35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Ttc,
    AccInfo,
    MaxJerk,
    MaxLatAccel,
    PastCoupling,
    SpeedLimit,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 6] = [
        FeatureKind::Ttc,
        FeatureKind::AccInfo,
        FeatureKind::MaxJerk,
        FeatureKind::MaxLatAccel,
        FeatureKind::PastCoupling,
        FeatureKind::SpeedLimit,
    ];

    /// `(sequence length, channels)`.
    pub fn shape(self) -> (usize, usize) {
        match self {
            FeatureKind::Ttc => (6, 1),
            FeatureKind::AccInfo => (6, 5),
            FeatureKind::MaxJerk => (1, JERK_FLAGS + 1),
            FeatureKind::MaxLatAccel => (1, LAT_ACCEL_FLAGS + 1),
            FeatureKind::PastCoupling => (PAST_COUPLING_ROWS, 5),
            FeatureKind::SpeedLimit => (6, 2),
        }
    }

    pub fn index(self) -> usize {
        FeatureKind::ALL.iter().position(|&k| k == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Ttc => "ttc",
            FeatureKind::AccInfo => "acc_info",
            FeatureKind::MaxJerk => "max_jerk",
            FeatureKind::MaxLatAccel => "max_lat_accel",
            FeatureKind::PastCoupling => "past_coupling",
            FeatureKind::SpeedLimit => "speed_limit",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        FeatureKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// The six feature tensors of one trajectory, each `(sequence, channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub tensors: [Array2<f32>; 6],
}

impl FeatureBundle {
    pub fn get(&self, kind: FeatureKind) -> &Array2<f32> {
        &self.tensors[kind.index()]
    }

    pub fn ttc(&self) -> &Array2<f32> {
        self.get(FeatureKind::Ttc)
    }

    pub fn acc_info(&self) -> &Array2<f32> {
        self.get(FeatureKind::AccInfo)
    }

    pub fn max_jerk(&self) -> &Array2<f32> {
        self.get(FeatureKind::MaxJerk)
    }

    pub fn max_lat_accel(&self) -> &Array2<f32> {
        self.get(FeatureKind::MaxLatAccel)
    }

    pub fn past_coupling(&self) -> &Array2<f32> {
        self.get(FeatureKind::PastCoupling)
    }

    pub fn speed_limit(&self) -> &Array2<f32> {
        self.get(FeatureKind::SpeedLimit)
    }

    pub fn has_expected_shapes(&self) -> bool {
        FeatureKind::ALL.iter().all(|&k| {
            let (r, c) = k.shape();
            self.get(k).dim() == (r, c)
        })
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

fn rows_to_array(rows: Vec<Vec<f64>>) -> Array2<f32> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    Array2::from_shape_vec((r, c), rows.into_iter().flatten().map(|v| v as f32).collect()).unwrap()
}

fn subsample_index(t: f64) -> usize {
    (t / DT).round() as usize
}

/// Per-scene data shared by every candidate: agent boxes on the collision
/// grid and agent route positions at the sub-sample times.
#[derive(Debug, Clone)]
pub struct FeatureContext<'a> {
    pub scene: &'a SceneContext,
    grid: usize,
    /// `boxes[agent][j]` at time `j * TTC_STEP`.
    boxes: Vec<Vec<OrientedBox>>,
    /// `(rear station, front station, lateral, speed)` per agent per sub-sample.
    along: Vec<[(f64, f64, f64, f64); 6]>,
}

impl<'a> FeatureContext<'a> {
    pub fn new(scene: &'a SceneContext, predictions: &PredictedTracks) -> Self {
        let t_max = SUBSAMPLE_TIMES[5] + TTC_SATURATION;
        let grid = (t_max / TTC_STEP).round() as usize;
        let boxes = predictions
            .agents
            .iter()
            .map(|a| (0..=grid).map(|j| a.footprint_at(j as f64 * TTC_STEP, predictions.dt)).collect())
            .collect();
        let route = &scene.route;
        let along = predictions
            .agents
            .iter()
            .map(|a| {
                let mut out = [(0.0, 0.0, 0.0, 0.0); 6];
                for (k, &t) in SUBSAMPLE_TIMES.iter().enumerate() {
                    let s = a.at(t, predictions.dt);
                    let pr = route.project([s.x, s.y]);
                    out[k] = (pr.station - 0.5 * a.length, pr.station + 0.5 * a.length, pr.lateral, s.v);
                }
                out
            })
            .collect();
        Self { scene, grid, boxes, along }
    }
}

/// Time to first footprint overlap, re-anchored at each sub-sample time and
/// saturated; zero once a contact has happened. The ego continues at its
/// final speed past the trajectory end.
pub fn compute_ttc(traj: &Trajectory, ctx: &FeatureContext) -> Array2<f32> {
    let fp = ctx.scene.footprint;
    let n = ctx.grid + 1;
    let mut hit = vec![false; n];
    if !ctx.boxes.is_empty() {
        let ego_boxes: Vec<OrientedBox> = (0..n)
            .map(|j| traj.state_extrapolated(j as f64 * TTC_STEP).footprint(fp))
            .collect();
        for agent in &ctx.boxes {
            for j in 0..n {
                if !hit[j] && ego_boxes[j].overlaps(&agent[j]) {
                    hit[j] = true;
                }
            }
        }
    }
    // a contact persists: the ego does not drive through another road user
    for j in 1..n {
        hit[j] |= hit[j - 1];
    }
    let rows = SUBSAMPLE_TIMES
        .iter()
        .map(|&t| {
            let j0 = (t / TTC_STEP).round() as usize;
            let steps = (TTC_SATURATION / TTC_STEP).round() as usize;
            let first = (j0..=(j0 + steps).min(n - 1)).find(|&j| hit[j]);
            let ttc = first.map_or(TTC_SATURATION, |j| ((j - j0) as f64 * TTC_STEP).min(TTC_SATURATION));
            vec![ttc]
        })
        .collect();
    rows_to_array(rows)
}

/// `(d_ahead, b_ahead, v_ego, v_ahead, v_ego - v_ahead)` at each sub-sample time.
pub fn compute_acc_info(traj: &Trajectory, ctx: &FeatureContext) -> Array2<f32> {
    let route = &ctx.scene.route;
    let hw = route.lane_half_width();
    let half = 0.5 * ctx.scene.footprint.length;
    let stations = traj.route_stations(route);
    let rows = SUBSAMPLE_TIMES
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let i = subsample_index(t);
            let ego_s = stations[i];
            let v_ego = traj.states[i].v;
            let lead = ctx
                .along
                .iter()
                .map(|a| a[k])
                .filter(|&(rear, front, lat, _)| 0.5 * (rear + front) > ego_s && lat.abs() <= hw)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            match lead {
                Some((rear, _, _, v)) => {
                    let d = (rear - (ego_s + half)).min(AHEAD_DISTANCE_CAP);
                    let b = if d <= AHEAD_FLAG_DISTANCE { 1.0 } else { 0.0 };
                    vec![d, b, v_ego, v, v_ego - v]
                }
                None => vec![AHEAD_DISTANCE_CAP, 0.0, v_ego, 0.0, v_ego],
            }
        })
        .collect();
    rows_to_array(rows)
}

fn flags(value: f64, step: f64, count: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (0..count)
        .map(|k| if value < step * (k + 1) as f64 { 1.0 } else { 0.0 })
        .collect();
    out.push(value);
    out
}

/// Past ego speeds followed by the trajectory's speeds.
fn speed_sequence(traj: &Trajectory, scene: &SceneContext) -> Vec<f64> {
    scene
        .history
        .iter()
        .map(|h| h.ego.v)
        .chain(traj.states.iter().map(|s| s.v))
        .collect()
}

/// Largest absolute jerk from second differences of the past-plus-future speeds.
pub fn max_jerk(traj: &Trajectory, scene: &SceneContext) -> f64 {
    let v = speed_sequence(traj, scene);
    v.windows(3)
        .map(|w| ((w[2] - 2.0 * w[1] + w[0]) / (DT * DT)).abs())
        .fold(0.0, f64::max)
}

pub fn compute_max_jerk(traj: &Trajectory, scene: &SceneContext) -> Array2<f32> {
    rows_to_array(vec![flags(max_jerk(traj, scene), JERK_FLAG_STEP, JERK_FLAGS)])
}

/// Largest `v^2 * |dtheta / ds|` over consecutive states.
pub fn max_lat_accel(traj: &Trajectory) -> f64 {
    traj.states
        .windows(2)
        .map(|w| {
            let ds = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            if ds < 1e-3 {
                return 0.0;
            }
            let kappa = angle_diff(w[1].theta, w[0].theta) / ds;
            let v = 0.5 * (w[0].v + w[1].v);
            v * v * kappa.abs()
        })
        .fold(0.0, f64::max)
}

pub fn compute_max_lat_accel(traj: &Trajectory) -> Array2<f32> {
    rows_to_array(vec![flags(max_lat_accel(traj), LAT_ACCEL_FLAG_STEP, LAT_ACCEL_FLAGS)])
}

/// The 1 s of past ego states and the first 30 trajectory states as
/// `(x, y, theta, v, a)` in the current ego frame. `a` is the forward
/// difference of speed.
pub fn compute_past_coupling(traj: &Trajectory, scene: &SceneContext) -> Array2<f32> {
    let origin = traj.states[0];
    let (sn, cs) = origin.theta.sin_cos();
    let seq: Vec<_> = scene.history.iter().map(|h| h.ego).chain(traj.states.iter().copied()).collect();
    let rows = (0..PAST_COUPLING_ROWS)
        .map(|i| {
            let s = seq[i];
            let dx = s.x - origin.x;
            let dy = s.y - origin.y;
            let next_v = seq.get(i + 1).map_or(s.v, |n| n.v);
            vec![
                cs * dx + sn * dy,
                -sn * dx + cs * dy,
                wrap_angle(s.theta - origin.theta),
                s.v,
                (next_v - s.v) / DT,
            ]
        })
        .collect();
    rows_to_array(rows)
}

/// `((v - limit) / limit, v > limit)` at each sub-sample time.
pub fn compute_speed_limit(traj: &Trajectory, scene: &SceneContext) -> Array2<f32> {
    let stations = traj.route_stations(&scene.route);
    let rows = SUBSAMPLE_TIMES
        .iter()
        .map(|&t| {
            let i = subsample_index(t);
            let v = traj.states[i].v;
            let limit = scene.route.speed_limit_at(stations[i]);
            vec![(v - limit) / limit, if v > limit { 1.0 } else { 0.0 }]
        })
        .collect();
    rows_to_array(rows)
}

pub fn compute_feature_bundle(traj: &Trajectory, ctx: &FeatureContext) -> FeatureBundle {
    FeatureBundle {
        tensors: [
            compute_ttc(traj, ctx),
            compute_acc_info(traj, ctx),
            compute_max_jerk(traj, ctx.scene),
            compute_max_lat_accel(traj),
            compute_past_coupling(traj, ctx.scene),
            compute_speed_limit(traj, ctx.scene),
        ],
    }
}

/// Bundles for every trajectory of one tick.
pub fn compute_bundles(trajs: &[Trajectory], scene: &SceneContext, predictions: &PredictedTracks) -> Vec<FeatureBundle> {
    let ctx = FeatureContext::new(scene, predictions);
    trajs.iter().map(|t| compute_feature_bundle(t, &ctx)).collect()
}
