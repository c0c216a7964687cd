//! Scripted synthetic scenarios with an IDM expert that stays within the
//! comfort limits. Drafts whose expert fails any safety, comfort or progress
//! check are redrawn.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AgentPose, AgentReplay, ScenarioMeta, ScenarioRecord, StationInterval, FORMAT_VERSION, REPLAY_LEN, SCENARIO_TICKS};
use crate::error::{Error, Result};
use crate::geometry::{angle_diff, AgentKind, EgoState, Footprint, RouteSpec, SpeedZone, DT, HISTORY_LEN};
use crate::prediction::{idm_accel, IdmParams};
use crate::sim::{compute_metrics, run_closed_loop};

const EGO_START_STATION: f64 = 60.0;
const LANE_OFFSET: f64 = 3.5;
const HALF_WIDTH: f64 = 1.75;
const MAX_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptKind {
    FreeFlow,
    LeadFollow,
    LeadBrake,
    StopAndGo,
    CutIn,
    Stopped,
    Turn,
}

impl ScriptKind {
    pub const ALL: [ScriptKind; 7] = [
        ScriptKind::FreeFlow,
        ScriptKind::LeadFollow,
        ScriptKind::LeadBrake,
        ScriptKind::StopAndGo,
        ScriptKind::CutIn,
        ScriptKind::Stopped,
        ScriptKind::Turn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScriptKind::FreeFlow => "free_flow",
            ScriptKind::LeadFollow => "lead_follow",
            ScriptKind::LeadBrake => "lead_brake",
            ScriptKind::StopAndGo => "stop_and_go",
            ScriptKind::CutIn => "cut_in",
            ScriptKind::Stopped => "stopped",
            ScriptKind::Turn => "turn",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        ScriptKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownScript(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub count: usize,
    /// Script names, assigned round-robin.
    pub scripts: Vec<String>,
    pub id_prefix: String,
}

impl SyntheticSpec {
    pub fn all_scripts(count: usize, id_prefix: &str) -> Self {
        Self {
            count,
            scripts: ScriptKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            id_prefix: id_prefix.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertParams {
    pub idm: IdmParams,
    pub jerk: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    /// Lateral acceleration the expert plans curves for.
    pub lat_accel: f64,
    /// Deceleration used to slow down ahead of curves.
    pub curve_decel: f64,
    /// Lateral offset at which a vehicle counts as being in the expert's lane.
    pub lane_capture: f64,
}

impl Default for ExpertParams {
    fn default() -> Self {
        Self {
            idm: IdmParams {
                a_max: 1.2,
                b_comf: 2.0,
                v_desired: 15.0,
                headway_t: 1.4,
                s0: 3.0,
                delta: 4.0,
            },
            jerk: 2.5,
            accel_min: -3.8,
            accel_max: 1.8,
            lat_accel: 2.0,
            curve_decel: 1.0,
            lane_capture: 2.6,
        }
    }
}

fn curvature(route: &RouteSpec, s: f64) -> f64 {
    (angle_diff(route.heading_at(s + 1.0), route.heading_at(s - 1.0)) / 2.0).abs()
}

fn curve_speed(route: &RouteSpec, s: f64, v: f64, p: &ExpertParams) -> f64 {
    let mut allowed = route.speed_limit_at(s);
    let reach = 40.0 + 3.0 * v;
    let mut d = 0.0;
    while d <= reach {
        let k = curvature(route, s + d);
        if k > 1e-4 {
            let vc = (p.lat_accel / k).sqrt();
            allowed = allowed.min((vc * vc + 2.0 * p.curve_decel * d).sqrt());
        }
        d += 2.0;
    }
    allowed
}

/// Expert states at t = 0.2 .. 10 s, following the centerline from
/// `station` at speed `v`.
pub fn simulate_expert(route: &RouteSpec, fp: Footprint, station: f64, v: f64, agents: &[AgentReplay], p: &ExpertParams) -> Vec<EgoState> {
    let (mut s, mut v, mut a_prev) = (station, v, 0.0);
    let j = p.jerk * DT;
    let mut out = Vec::with_capacity(SCENARIO_TICKS);
    for k in 0..SCENARIO_TICKS {
        let mut lead: Option<(f64, f64)> = None;
        for ag in agents.iter().filter(|a| a.has_lane && a.kind == AgentKind::Vehicle) {
            let pose = ag.poses[k + HISTORY_LEN];
            let pr = route.project([pose.x, pose.y]);
            if pr.station <= s || pr.lateral.abs() > p.lane_capture {
                continue;
            }
            let gap = pr.station - s - 0.5 * (fp.length + ag.length);
            let lv = pose.v * angle_diff(pose.theta, pr.heading).cos();
            if lead.map_or(true, |l| gap < l.0) {
                lead = Some((gap, lv));
            }
        }
        let idm = IdmParams {
            v_desired: curve_speed(route, s, v, p),
            ..p.idm
        };
        let a_cmd = match lead {
            Some((gap, lv)) => idm_accel(v, gap.max(0.0), lv, &idm),
            None => idm_accel(v, f64::INFINITY, v, &idm),
        };
        let mut a = a_cmd.clamp(a_prev - j, a_prev + j).clamp(p.accel_min, p.accel_max);
        // ease off the brake so the stop ends with zero deceleration
        if a_prev < 0.0 && v > 0.0 && v <= a_prev * a_prev / (2.0 * p.jerk) + 0.5 * a_prev.abs() * DT {
            a = a.max((a_prev + j).min(0.0));
        }
        if v <= 0.0 && a < 0.0 {
            a = 0.0;
        }
        if v + a * DT < 0.0 {
            a = -v / DT;
        }
        let v_next = (v + a * DT).max(0.0);
        s += 0.5 * (v + v_next) * DT;
        v = v_next;
        a_prev = a;
        let (x, y, th) = route.pose_at(s, 0.0);
        out.push(EgoState { x, y, theta: th, v, a, steering: 0.0 });
    }
    out
}

/// Integrates a lane agent's station and speed over the replay window.
/// Before t = 0 it moves at its initial speed.
fn lane_agent(
    route: &RouteSpec,
    id: u64,
    station: f64,
    v0: f64,
    lateral: &dyn Fn(f64) -> f64,
    accel: &mut dyn FnMut(f64, f64) -> f64,
) -> AgentReplay {
    let mut samples = Vec::with_capacity(REPLAY_LEN);
    for k in 0..HISTORY_LEN {
        let t = -((HISTORY_LEN - k) as f64) * DT;
        samples.push((t, station + v0 * t, v0));
    }
    let (mut s, mut v) = (station, v0);
    samples.push((0.0, s, v));
    for k in 0..SCENARIO_TICKS {
        let t = k as f64 * DT;
        let a = accel(t, v);
        let v_next = (v + a * DT).max(0.0);
        s += 0.5 * (v + v_next) * DT;
        v = v_next;
        samples.push((t + DT, s, v));
    }
    let poses = samples
        .iter()
        .map(|&(t, s, v)| {
            let l = lateral(t);
            let dl = (lateral(t + 0.05) - lateral(t - 0.05)) / 0.1;
            let (x, y, th) = route.pose_at(s, l);
            let th = th + dl.atan2(v.max(0.5));
            AgentPose { x, y, theta: crate::geometry::wrap_angle(th), v: v.hypot(dl) }
        })
        .collect();
    AgentReplay {
        id,
        kind: AgentKind::Vehicle,
        length: 4.7,
        width: 1.9,
        has_lane: true,
        poses,
    }
}

fn straight_route(rng: &mut ChaCha8Rng, limit: f64) -> Result<RouteSpec> {
    let heading = rng.random_range(-PI..PI);
    let start = [rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0)];
    RouteSpec::straight(start, heading, EGO_START_STATION + 18.0 * limit + 150.0, limit, HALF_WIDTH)
}

/// Straight approach, clothoid, arc, clothoid, straight exit. Returns the
/// route and the station interval of the turn.
fn turn_route(rng: &mut ChaCha8Rng, limit: f64) -> Result<(RouteSpec, StationInterval)> {
    let heading0 = rng.random_range(-PI..PI);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let radius = rng.random_range(18.0..32.0);
    let approach = EGO_START_STATION + rng.random_range(15.0..60.0);
    let clothoid = 15.0;
    let turn = FRAC_PI_2;
    let arc = (turn - clothoid / radius) * radius;
    let exit = 20.0 * limit + 100.0;
    let total = approach + 2.0 * clothoid + arc + exit;
    let kappa = |s: f64| -> f64 {
        let u = s - approach;
        let k = if u < 0.0 {
            0.0
        } else if u < clothoid {
            u / clothoid / radius
        } else if u < clothoid + arc {
            1.0 / radius
        } else if u < 2.0 * clothoid + arc {
            (2.0 * clothoid + arc - u) / clothoid / radius
        } else {
            0.0
        };
        sign * k
    };
    let step = 0.5;
    let start = [rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0)];
    let (mut x, mut y, mut th) = (start[0], start[1], heading0);
    let mut pts = vec![[x, y]];
    let n = (total / step).ceil() as usize;
    for i in 0..n {
        let s = i as f64 * step;
        let mid = th + 0.5 * step * kappa(s + 0.5 * step);
        x += step * mid.cos();
        y += step * mid.sin();
        th += step * kappa(s + 0.5 * step);
        if i % 2 == 1 {
            pts.push([x, y]);
        }
    }
    let route = RouteSpec::new(pts, vec![SpeedZone { start: 0.0, limit }], HALF_WIDTH)?;
    let iv = StationInterval {
        start: approach - 10.0,
        end: approach + 2.0 * clothoid + arc + 10.0,
    };
    Ok((route, iv))
}

struct Draft {
    route: RouteSpec,
    limit: f64,
    v0: f64,
    agents: Vec<AgentReplay>,
    intersections: Vec<StationInterval>,
}

fn no_lateral(_: f64) -> f64 {
    0.0
}

fn adjacent_traffic(rng: &mut ChaCha8Rng, route: &RouteSpec, v_ego: f64, first_id: u64) -> Vec<AgentReplay> {
    let n = rng.random_range(0..=2usize);
    (0..n)
        .map(|i| {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let off = side * LANE_OFFSET;
            let st = EGO_START_STATION + rng.random_range(-30.0..50.0);
            let v = (v_ego + rng.random_range(-3.0..3.0)).max(0.0);
            lane_agent(route, first_id + i as u64, st, v, &move |_| off, &mut |_, _| 0.0)
        })
        .collect()
}

fn draft(script: ScriptKind, rng: &mut ChaCha8Rng) -> Result<Draft> {
    let limit = rng.random_range(10.0..16.0);
    let ego_len = Footprint::default().length;
    let lead_station = |gap: f64| EGO_START_STATION + gap + 0.5 * (ego_len + 4.7);
    let mut intersections = Vec::new();
    let (route, v0, agents) = match script {
        ScriptKind::FreeFlow => {
            let route = straight_route(rng, limit)?;
            (route, limit * rng.random_range(0.6..1.0), Vec::new())
        }
        ScriptKind::LeadFollow => {
            let route = straight_route(rng, limit)?;
            let vl = limit * rng.random_range(0.5..0.95);
            let v0 = (vl + rng.random_range(-1.5..1.5)).max(0.0);
            let gap = rng.random_range((v0 * 1.3 + 3.0)..(v0 * 2.5 + 12.0));
            let mut agents = vec![lane_agent(&route, 1, lead_station(gap), vl, &no_lateral, &mut |_, _| 0.0)];
            agents.extend(adjacent_traffic(rng, &route, v0, 10));
            (route, v0, agents)
        }
        ScriptKind::LeadBrake => {
            let route = straight_route(rng, limit)?;
            let vl = limit * rng.random_range(0.6..0.95);
            let v0 = (vl + rng.random_range(-1.0..1.0)).max(0.0);
            let gap = rng.random_range((v0 * 1.4 + 3.0)..(v0 * 2.5 + 8.0));
            let v_end = if rng.random_bool(0.6) { 0.0 } else { vl * rng.random_range(0.2..0.5) };
            let t_brake = 2.0;
            let mut brake = move |t: f64, v: f64| -> f64 {
                if t < t_brake || v <= v_end {
                    0.0
                } else {
                    (-3.0f64).max((v_end - v) / DT)
                }
            };
            let mut agents = vec![lane_agent(&route, 1, lead_station(gap), vl, &no_lateral, &mut brake)];
            agents.extend(adjacent_traffic(rng, &route, v0, 10));
            (route, v0, agents)
        }
        ScriptKind::StopAndGo => {
            let route = straight_route(rng, limit)?;
            let vl = limit * rng.random_range(0.4..0.8);
            let v0 = (vl + rng.random_range(-1.0..1.0)).max(0.0);
            let gap = rng.random_range((v0 * 1.4 + 3.0)..(v0 * 2.5 + 8.0));
            let t1 = rng.random_range(0.5..2.5);
            let hold = rng.random_range(1.0..2.5);
            // phase: 0 cruise, 1 brake, 2 hold, 3 accelerate
            let (mut phase, mut since) = (0u8, 0.0);
            let mut program = move |t: f64, v: f64| -> f64 {
                let a = match phase {
                    0 if t >= t1 && t - since >= t1 => {
                        phase = 1;
                        -2.0
                    }
                    0 => 0.0,
                    1 if v <= 0.0 => {
                        phase = 2;
                        since = t;
                        0.0
                    }
                    1 => (-2.0f64).max(-v / DT),
                    2 if t - since >= hold => {
                        phase = 3;
                        1.0
                    }
                    2 => 0.0,
                    _ if v >= vl => {
                        phase = 0;
                        since = t;
                        0.0
                    }
                    _ => 1.0f64.min((vl - v) / DT),
                };
                a
            };
            (route.clone(), v0, vec![lane_agent(&route, 1, lead_station(gap), vl, &no_lateral, &mut program)])
        }
        ScriptKind::CutIn => {
            let route = straight_route(rng, limit)?;
            let v0 = limit * rng.random_range(0.6..0.95);
            let vc = v0 * rng.random_range(0.6..0.9);
            let gap = rng.random_range(10.0..25.0);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let t_c = rng.random_range(0.5..3.0);
            let dur = 3.0;
            let lateral = move |t: f64| -> f64 {
                let u = ((t - t_c) / dur).clamp(0.0, 1.0);
                side * LANE_OFFSET * 0.5 * (1.0 + (PI * u).cos())
            };
            let agents = vec![lane_agent(&route, 1, lead_station(gap), vc, &lateral, &mut |_, _| 0.0)];
            (route, v0, agents)
        }
        ScriptKind::Stopped => {
            let route = straight_route(rng, limit)?;
            if rng.random_bool(0.4) {
                let gap = rng.random_range(2.2..2.9);
                (route.clone(), 0.0, vec![lane_agent(&route, 1, lead_station(gap), 0.0, &no_lateral, &mut |_, _| 0.0)])
            } else {
                let v0 = limit * rng.random_range(0.5..1.0);
                let gap = rng.random_range((v0 * 3.0)..(v0 * 5.0 + 20.0));
                let mut agents = vec![lane_agent(&route, 1, lead_station(gap), 0.0, &no_lateral, &mut |_, _| 0.0)];
                agents.extend(adjacent_traffic(rng, &route, v0, 10));
                (route, v0, agents)
            }
        }
        ScriptKind::Turn => {
            let limit = rng.random_range(8.0..12.0);
            let (route, iv) = turn_route(rng, limit)?;
            intersections.push(iv);
            (route, limit * rng.random_range(0.5..0.9), Vec::new())
        }
    };
    Ok(Draft {
        route,
        limit,
        v0,
        agents,
        intersections,
    })
}

fn assemble(d: Draft, id: String, seed: u64, script: ScriptKind, p: &ExpertParams) -> ScenarioRecord {
    let fp = Footprint::default();
    let ego_history = (0..=HISTORY_LEN)
        .map(|k| {
            let s = EGO_START_STATION - d.v0 * (HISTORY_LEN - k) as f64 * DT;
            let (x, y, th) = d.route.pose_at(s, 0.0);
            EgoState::new(x, y, th, d.v0)
        })
        .collect();
    let expert_future = simulate_expert(&d.route, fp, EGO_START_STATION, d.v0, &d.agents, p);
    ScenarioRecord {
        format_version: FORMAT_VERSION,
        id,
        route: d.route,
        footprint: fp,
        ego_history,
        expert_future,
        agents: d.agents,
        intersections: d.intersections,
        meta: ScenarioMeta {
            speed_limit: d.limit,
            seed,
            script: script.name().to_string(),
        },
    }
}

/// Whether the expert of `rec` passes every safety, comfort and progress check.
pub(crate) fn expert_is_clean(rec: &ScenarioRecord) -> Result<bool> {
    let rollout = run_closed_loop(rec, &mut crate::planners::ExpertReplayPlanner)?;
    let m = compute_metrics(&rollout, rec);
    Ok(m.safety.category_score == 1.0 && m.comfort.category_score == 1.0 && m.progress.category_score == 1.0)
}

fn scenario_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_synthetic_scenarios(spec: &SyntheticSpec, seed: u64) -> Result<Vec<ScenarioRecord>> {
    let scripts = spec
        .scripts
        .iter()
        .map(|s| ScriptKind::from_name(s))
        .collect::<Result<Vec<_>>>()?;
    if scripts.is_empty() {
        return Err(Error::UnknownScript(String::new()));
    }
    let p = ExpertParams::default();
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let script = scripts[i % scripts.len()];
        let s = scenario_seed(seed, i);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let id = format!("{}{i:05}", spec.id_prefix);
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let rec = assemble(draft(script, &mut rng)?, id.clone(), s, script, &p);
            if expert_is_clean(&rec)? {
                accepted = Some(rec);
                break;
            }
        }
        out.push(accepted.ok_or_else(|| {
            Error::InvalidScene(format!("no clean {} draft for {id} after {MAX_ATTEMPTS} attempts", script.name()))
        })?);
    }
    Ok(out)
}
