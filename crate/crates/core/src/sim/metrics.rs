use serde::{Deserialize, Serialize};

use super::Rollout;
use crate::geometry::{angle_diff, AgentKind, AgentTrack, EgoState, Footprint, OrientedBox, RouteSpec, DT};
use crate::scenario::ScenarioRecord;

pub const TTC_THRESHOLD: f64 = 0.95;
/// Lookahead of the rollout TTC; values at or above it mean no contact ahead.
pub const TTC_HORIZON: f64 = 4.0;
const TTC_STEP: f64 = 0.1;
pub const TAILGATE_GAP: f64 = 1.5;
pub const OFF_ROAD_MARGIN: f64 = 0.5;
pub const PROGRESS_MIN: f64 = 1.0;
pub const DIVERGENCE_LIMIT: f64 = 4.0;
pub const YAW_WEIGHT: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComfortLimits {
    pub lon_accel_min: f64,
    pub lon_accel_max: f64,
    pub lat_accel: f64,
    pub yaw_rate: f64,
    pub yaw_accel: f64,
    pub lon_jerk: f64,
    pub jerk: f64,
}

pub const COMFORT_LIMITS: ComfortLimits = ComfortLimits {
    lon_accel_min: -4.05,
    lon_accel_max: 2.40,
    lat_accel: 4.89,
    yaw_rate: 0.95,
    yaw_accel: 1.93,
    lon_jerk: 4.13,
    jerk: 8.37,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyMetrics {
    pub front_collision: bool,
    pub off_road: bool,
    pub min_ttc: f64,
    pub min_ttc_ok: bool,
    pub tailgate_ok: bool,
    pub category_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComfortMetrics {
    pub lon_accel_ok: bool,
    pub lat_accel_ok: bool,
    pub yaw_rate_ok: bool,
    pub yaw_accel_ok: bool,
    pub lon_jerk_ok: bool,
    pub jerk_ok: bool,
    pub category_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressMetrics {
    /// Route progress of the ego over the rollout.
    pub progress: f64,
    pub made_progress: bool,
    pub max_route_distance: f64,
    pub stayed_on_route: bool,
    pub category_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Metrics {
    pub avg_l2_with_yaw: f64,
    pub avg_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario_id: String,
    pub safety: SafetyMetrics,
    pub comfort: ComfortMetrics,
    pub progress: ProgressMetrics,
    pub l2: L2Metrics,
}

fn fraction(checks: &[bool]) -> f64 {
    checks.iter().filter(|&&c| c).count() as f64 / checks.len() as f64
}

fn ego_box(e: &EgoState, fp: Footprint) -> OrientedBox {
    e.footprint(fp)
}

/// Whether a contact between the ego box and `other` lies in the ego's front half.
fn front_contact(ego: &OrientedBox, other: &OrientedBox) -> Option<bool> {
    ego.contact_point(other).map(|p| ego.to_local(p)[0] >= 0.0)
}

/// The ego hit a road user with its front half. Each agent's contact is
/// attributed at its first overlapping tick.
pub fn front_collision(rollout: &Rollout) -> bool {
    let n_agents = rollout.agents.first().map_or(0, |a| a.len());
    (0..n_agents).any(|i| {
        rollout
            .ego
            .iter()
            .zip(&rollout.agents)
            .find_map(|(e, agents)| front_contact(&ego_box(e, rollout.footprint), &agents[i].footprint()))
            .unwrap_or(false)
    })
}

/// Minimum over ticks of the time until the constant-velocity ego first
/// makes front contact with a replayed agent, capped at `TTC_HORIZON`.
pub fn min_ttc_over_rollout(rollout: &Rollout) -> f64 {
    let steps = (TTC_HORIZON / TTC_STEP).round() as usize;
    let n_agents = rollout.agents.first().map_or(0, |a| a.len());
    let mut best = TTC_HORIZON;
    for (k, e) in rollout.ego.iter().enumerate() {
        let (s, c) = e.theta.sin_cos();
        let t0 = k as f64 * DT;
        for j in 0..steps {
            let tau = j as f64 * TTC_STEP;
            if tau >= best {
                break;
            }
            let future = EgoState {
                x: e.x + e.v * tau * c,
                y: e.y + e.v * tau * s,
                ..*e
            };
            let eb = ego_box(&future, rollout.footprint);
            let hit = (0..n_agents).any(|i| {
                let a = rollout.agent_at(i, t0 + tau);
                front_contact(&eb, &a.footprint()).unwrap_or(false)
            });
            if hit {
                best = tau;
                break;
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadVehicle {
    pub index: usize,
    /// Bumper-to-bumper gap along the route.
    pub gap: f64,
    pub speed: f64,
}

/// Nearest vehicle ahead in the ego's lane, measured along the route.
pub fn lead_vehicle(route: &RouteSpec, ego: &EgoState, fp: Footprint, agents: &[AgentTrack]) -> Option<LeadVehicle> {
    let pe = route.project(ego.position());
    let mut best: Option<LeadVehicle> = None;
    for (i, a) in agents.iter().enumerate() {
        if a.kind != AgentKind::Vehicle {
            continue;
        }
        let pa = route.project(a.position());
        if pa.station <= pe.station || (pa.lateral - pe.lateral).abs() > route.lane_half_width() {
            continue;
        }
        let gap = pa.station - pe.station - 0.5 * (fp.length + a.length);
        let speed = a.v * angle_diff(a.theta, pa.heading).cos();
        if best.map_or(true, |b| gap < b.gap) {
            best = Some(LeadVehicle { index: i, gap, speed });
        }
    }
    best
}

/// Bumper gap to the lead dropped below `TAILGATE_GAP` at some tick.
pub fn tailgate(rollout: &Rollout, route: &RouteSpec) -> bool {
    rollout
        .ego
        .iter()
        .zip(&rollout.agents)
        .any(|(e, agents)| lead_vehicle(route, e, rollout.footprint, agents).is_some_and(|l| l.gap < TAILGATE_GAP))
}

/// Some footprint corner left the lane corridor.
pub fn off_road(rollout: &Rollout, route: &RouteSpec) -> bool {
    let limit = route.lane_half_width() + OFF_ROAD_MARGIN;
    rollout.ego.iter().any(|e| {
        ego_box(e, rollout.footprint)
            .corners()
            .iter()
            .any(|&p| route.project(p).lateral.abs() > limit)
    })
}

fn comfort(ego: &[EgoState]) -> ComfortMetrics {
    let l = COMFORT_LIMITS;
    let n = ego.len();
    let mut acc = Vec::with_capacity(n);
    let mut yaw_rate = Vec::with_capacity(n);
    let mut lat = Vec::with_capacity(n);
    for w in ego.windows(2) {
        let a = (w[1].v - w[0].v) / DT;
        let r = angle_diff(w[1].theta, w[0].theta) / DT;
        acc.push(a);
        yaw_rate.push(r);
        lat.push(0.5 * (w[0].v + w[1].v) * r);
    }
    let lon_accel_ok = acc.iter().all(|&a| a > l.lon_accel_min && a < l.lon_accel_max);
    let lat_accel_ok = lat.iter().all(|a| a.abs() < l.lat_accel);
    let yaw_rate_ok = yaw_rate.iter().all(|r| r.abs() < l.yaw_rate);
    let yaw_accel_ok = yaw_rate.windows(2).all(|w| ((w[1] - w[0]) / DT).abs() < l.yaw_accel);
    let lon_jerk_ok = acc.windows(2).all(|w| ((w[1] - w[0]) / DT).abs() < l.lon_jerk);
    let jerk_ok = (1..acc.len()).all(|k| ((acc[k] - acc[k - 1]).hypot(lat[k] - lat[k - 1]) / DT) < l.jerk);
    let checks = [lon_accel_ok, lat_accel_ok, yaw_rate_ok, yaw_accel_ok, lon_jerk_ok, jerk_ok];
    ComfortMetrics {
        lon_accel_ok,
        lat_accel_ok,
        yaw_rate_ok,
        yaw_accel_ok,
        lon_jerk_ok,
        jerk_ok,
        category_score: fraction(&checks),
    }
}

fn route_progress(route: &RouteSpec, states: &[EgoState]) -> f64 {
    match (states.first(), states.last()) {
        (Some(a), Some(b)) => route.project(b.position()).station - route.project(a.position()).station,
        _ => 0.0,
    }
}

pub fn compute_metrics(rollout: &Rollout, scenario: &ScenarioRecord) -> MetricsReport {
    let route = &scenario.route;
    let front = front_collision(rollout);
    let off = off_road(rollout, route);
    let min_ttc = min_ttc_over_rollout(rollout);
    let min_ttc_ok = min_ttc > TTC_THRESHOLD;
    let tailgate_ok = !tailgate(rollout, route);
    let safety = SafetyMetrics {
        front_collision: front,
        off_road: off,
        min_ttc,
        min_ttc_ok,
        tailgate_ok,
        category_score: fraction(&[!front, !off, min_ttc_ok, tailgate_ok]),
    };

    let expert = scenario.expert_states();
    let progress = route_progress(route, &rollout.ego);
    // progress is only demanded up to what the expert itself achieved
    let made_progress = progress > PROGRESS_MIN || progress >= route_progress(route, &expert);
    let max_route_distance = rollout
        .ego
        .iter()
        .map(|e| route.project(e.position()).distance)
        .fold(0.0, f64::max);
    let stayed_on_route = max_route_distance <= DIVERGENCE_LIMIT;
    let progress = ProgressMetrics {
        progress,
        made_progress,
        max_route_distance,
        stayed_on_route,
        category_score: fraction(&[made_progress, stayed_on_route]),
    };

    let n = rollout.ego.len().min(expert.len());
    let (mut with_yaw, mut plain) = (0.0, 0.0);
    for k in 1..n {
        let (e, x) = (&rollout.ego[k], &expert[k]);
        let d2 = (e.x - x.x).powi(2) + (e.y - x.y).powi(2);
        let dy = YAW_WEIGHT * angle_diff(e.theta, x.theta);
        with_yaw += (d2 + dy * dy).sqrt();
        plain += d2.sqrt();
    }
    let m = (n.max(2) - 1) as f64;
    MetricsReport {
        scenario_id: scenario.id.clone(),
        safety,
        comfort: comfort(&rollout.ego),
        progress,
        l2: L2Metrics {
            avg_l2_with_yaw: with_yaw / m,
            avg_l2: plain / m,
        },
    }
}
