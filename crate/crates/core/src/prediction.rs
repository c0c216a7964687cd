//! Agent futures: IDM along the route for lane-following vehicles, constant
//! velocity for everything else.

use serde::{Deserialize, Serialize};

use crate::geometry::{lerp_angle, AgentKind, AgentTrack, OrientedBox, SceneContext, DT};

/// Hard floor on predicted deceleration.
pub const IDM_MAX_BRAKE: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    pub a_max: f64,
    pub b_comf: f64,
    /// Only used by direct [`idm_accel`] calls; rollouts take the route speed limit.
    pub v_desired: f64,
    pub headway_t: f64,
    pub s0: f64,
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            a_max: 1.0,
            b_comf: 1.5,
            v_desired: 15.0,
            headway_t: 1.5,
            s0: 2.0,
            delta: 4.0,
        }
    }
}

impl IdmParams {
    pub fn is_valid(&self) -> bool {
        [self.a_max, self.b_comf, self.v_desired, self.headway_t, self.s0, self.delta]
            .iter()
            .all(|&x| x > 0.0 && x.is_finite())
    }
}

/// IDM acceleration, clamped to `[-IDM_MAX_BRAKE, a_max]`. `gap = inf` is free road.
pub fn idm_accel(v: f64, gap: f64, lead_v: f64, p: &IdmParams) -> f64 {
    let free = 1.0 - (v / p.v_desired).powf(p.delta);
    let interaction = if gap.is_finite() {
        let s_star = p.s0 + v * p.headway_t + v * (v - lead_v) / (2.0 * (p.a_max * p.b_comf).sqrt());
        let s_star = s_star.max(0.0);
        let r = s_star / gap.max(1e-6);
        r * r
    } else {
        0.0
    };
    (p.a_max * (free - interaction)).clamp(-IDM_MAX_BRAKE, p.a_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPrediction {
    pub id: u64,
    pub kind: AgentKind,
    pub length: f64,
    pub width: f64,
    pub samples: Vec<PredictedSample>,
}

impl AgentPrediction {
    /// Linear interpolation between samples; the last sample is held beyond the horizon.
    pub fn at(&self, t: f64, dt: f64) -> PredictedSample {
        let n = self.samples.len();
        let u = (t / dt).max(0.0);
        let i = u.floor() as usize;
        if i >= n - 1 {
            let last = self.samples[n - 1];
            return PredictedSample { t, ..last };
        }
        let f = u - i as f64;
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        PredictedSample {
            t,
            x: a.x + f * (b.x - a.x),
            y: a.y + f * (b.y - a.y),
            theta: lerp_angle(a.theta, b.theta, f),
            v: a.v + f * (b.v - a.v),
        }
    }

    pub fn footprint_at(&self, t: f64, dt: f64) -> OrientedBox {
        let s = self.at(t, dt);
        OrientedBox::new(s.x, s.y, s.theta, self.length, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTracks {
    pub dt: f64,
    pub horizon: f64,
    pub agents: Vec<AgentPrediction>,
}

impl PredictedTracks {
    pub fn empty(horizon: f64) -> Self {
        Self {
            dt: DT,
            horizon,
            agents: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
}

fn steps_for(horizon: f64) -> usize {
    (horizon / DT).round() as usize
}

fn constant_velocity(agent: &AgentTrack, steps: usize) -> Vec<PredictedSample> {
    let (s, c) = agent.theta.sin_cos();
    let v = agent.v.max(0.0);
    (0..=steps)
        .map(|k| {
            let t = k as f64 * DT;
            PredictedSample {
                t,
                x: agent.x + v * t * c,
                y: agent.y + v * t * s,
                theta: agent.theta,
                v,
            }
        })
        .collect()
}

fn blank(agent: &AgentTrack, samples: Vec<PredictedSample>) -> AgentPrediction {
    AgentPrediction {
        id: agent.id,
        kind: agent.kind,
        length: agent.length,
        width: agent.width,
        samples,
    }
}

/// Rolls every agent forward over `horizon` seconds at 0.2 s.
///
/// Lane-following vehicles (`has_lane`) move along the route at their current
/// lateral offset and follow the nearest lane-following vehicle ahead within
/// half a lane width. They do not react to the ego. The desired speed is the
/// route speed limit at the agent's station.
pub fn predict_agents(scene: &SceneContext, horizon: f64, params: &IdmParams) -> PredictedTracks {
    let steps = steps_for(horizon);
    let route = &scene.route;
    let hw = route.lane_half_width();
    let mut out: Vec<Option<AgentPrediction>> = vec![None; scene.agents.len()];

    struct Lane {
        idx: usize,
        s: f64,
        lat: f64,
        v: f64,
        half_len: f64,
        lead: Option<usize>,
    }
    let mut lane: Vec<Lane> = Vec::new();
    for (i, a) in scene.agents.iter().enumerate() {
        if a.has_lane && a.kind == AgentKind::Vehicle {
            let pr = route.project(a.position());
            lane.push(Lane {
                idx: i,
                s: pr.station,
                lat: pr.lateral,
                v: a.v.max(0.0),
                half_len: 0.5 * a.length,
                lead: None,
            });
        } else {
            out[i] = Some(blank(a, constant_velocity(a, steps)));
        }
    }

    // order by station once; the lead of each is resolved before rollout
    lane.sort_by(|a, b| a.s.total_cmp(&b.s));
    for j in 0..lane.len() {
        lane[j].lead = (j + 1..lane.len()).find(|&m| lane[m].s > lane[j].s && (lane[m].lat - lane[j].lat).abs() <= hw);
    }

    let mut tracks: Vec<Vec<PredictedSample>> = lane
        .iter()
        .map(|l| {
            let a = &scene.agents[l.idx];
            vec![PredictedSample {
                t: 0.0,
                x: a.x,
                y: a.y,
                theta: a.theta,
                v: l.v,
            }]
        })
        .collect();

    for k in 1..=steps {
        let accel: Vec<f64> = lane
            .iter()
            .map(|l| {
                let p = IdmParams {
                    v_desired: route.speed_limit_at(l.s),
                    ..*params
                };
                match l.lead {
                    Some(m) => {
                        let ld = &lane[m];
                        let gap = ld.s - l.s - ld.half_len - l.half_len;
                        if gap <= 0.0 {
                            -IDM_MAX_BRAKE
                        } else {
                            idm_accel(l.v, gap, ld.v, &p)
                        }
                    }
                    None => idm_accel(l.v, f64::INFINITY, 0.0, &p),
                }
            })
            .collect();
        // update front to back so a follower sees its lead's new position
        for j in (0..lane.len()).rev() {
            let v = (lane[j].v + accel[j] * DT).max(0.0);
            let mut s = lane[j].s + v * DT;
            let mut v = v;
            if let Some(m) = lane[j].lead {
                let cap = lane[m].s - lane[m].half_len - lane[j].half_len;
                let cap = cap.max(lane[j].s);
                if s > cap {
                    s = cap;
                    v = v.min(lane[m].v);
                }
            }
            lane[j].s = s;
            lane[j].v = v;
            let (x, y, th) = route.pose_at(s, lane[j].lat);
            tracks[j].push(PredictedSample {
                t: k as f64 * DT,
                x,
                y,
                theta: th,
                v,
            });
        }
    }

    for (l, samples) in lane.iter().zip(tracks) {
        out[l.idx] = Some(blank(&scene.agents[l.idx], samples));
    }
    PredictedTracks {
        dt: DT,
        horizon: steps as f64 * DT,
        agents: out.into_iter().map(|a| a.unwrap()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{EgoState, RouteSpec};

    fn agent(id: u64, x: f64, v: f64, has_lane: bool, kind: AgentKind) -> AgentTrack {
        AgentTrack {
            id,
            kind,
            x,
            y: 0.0,
            theta: 0.0,
            length: 4.5,
            width: 2.0,
            v,
            has_lane,
        }
    }

    fn scene(agents: Vec<AgentTrack>) -> SceneContext {
        let route = RouteSpec::straight([-50.0, 0.0], 0.0, 500.0, 13.0, 1.75).unwrap();
        SceneContext::with_constant_history(EgoState::new(0.0, 0.0, 0.0, 10.0), agents, route)
    }

    #[test]
    fn free_flow_equilibrium_and_standstill() {
        let p = IdmParams {
            v_desired: 13.0,
            ..Default::default()
        };
        assert_eq!(idm_accel(13.0, f64::INFINITY, 0.0, &p), 0.0);
        assert_eq!(idm_accel(0.0, f64::INFINITY, 0.0, &p), 1.0);
    }

    #[test]
    fn idm_matches_closed_form() {
        let p = IdmParams {
            v_desired: 13.0,
            ..Default::default()
        };
        // s* = 2 + 15 + 0 = 17; a = 1 * (1 - (10/13)^4 - (17/30)^2)
        let expected = 1.0 - (10.0f64 / 13.0).powi(4) - (17.0f64 / 30.0).powi(2);
        assert!((idm_accel(10.0, 30.0, 10.0, &p) - expected).abs() < 1e-12);
    }

    #[test]
    fn stationary_laneless_vehicle_stays_put() {
        let pr = predict_agents(&scene(vec![agent(1, 30.0, 0.0, false, AgentKind::Vehicle)]), 10.0, &IdmParams::default());
        assert_eq!(pr.agents[0].samples.len(), 51);
        assert!(pr.agents[0].samples.iter().all(|s| s.x == 30.0 && s.y == 0.0));
    }

    #[test]
    fn pedestrian_moves_linearly() {
        let mut ped = agent(2, 0.0, 1.5, false, AgentKind::Pedestrian);
        ped.theta = 0.7;
        ped.y = 5.0;
        let pr = predict_agents(&scene(vec![ped]), 10.0, &IdmParams::default());
        for s in &pr.agents[0].samples {
            assert!((s.x - 1.5 * s.t * 0.7f64.cos()).abs() < 1e-12);
            assert!((s.y - 5.0 - 1.5 * s.t * 0.7f64.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn stopped_queue_stays_stopped() {
        // gap 1.5 m <= s0
        let pr = predict_agents(
            &scene(vec![agent(1, 20.0, 0.0, true, AgentKind::Vehicle), agent(2, 26.0, 0.0, true, AgentKind::Vehicle)]),
            10.0,
            &IdmParams {
                a_max: 1.0,
                ..Default::default()
            },
        );
        // the lead has free road and pulls away; the follower holds while the gap is within s0
        let (f, l) = (&pr.agents[0].samples, &pr.agents[1].samples);
        let mut held = 0;
        for k in 1..f.len() {
            if l[k - 1].x - f[k - 1].x - 4.5 <= 2.0 {
                assert_eq!(f[k].v, 0.0, "step {k}");
                held += 1;
            }
        }
        assert!(held >= 2);
    }

    #[test]
    fn rear_faster_never_closes_below_zero_gap() {
        let sc = scene(vec![agent(1, 10.0, 13.0, true, AgentKind::Vehicle), agent(2, 22.0, 2.0, true, AgentKind::Vehicle)]);
        let pr = predict_agents(&sc, 10.0, &IdmParams::default());
        // independent step oracle: semi-implicit Euler on the pair
        let p = IdmParams {
            v_desired: 13.0,
            ..Default::default()
        };
        let (mut s1, mut v1, mut s2, mut v2) = (10.0, 13.0, 22.0, 2.0);
        for k in 1..=50 {
            let a2 = idm_accel(v2, f64::INFINITY, 0.0, &p);
            let a1 = idm_accel(v1, s2 - s1 - 4.5, v2, &p);
            v2 = (v2 + a2 * DT).max(0.0);
            s2 += v2 * DT;
            v1 = (v1 + a1 * DT).max(0.0);
            s1 += v1 * DT;
            if s1 > s2 - 4.5 {
                // contact: the follower is held at the lead's bumper at the lead's speed
                s1 = s2 - 4.5;
                v1 = v1.min(v2);
            }
            let rear = &pr.agents[0].samples[k];
            let front = &pr.agents[1].samples[k];
            assert!(front.x - rear.x - 4.5 >= 0.0);
            assert!((rear.x - s1).abs() < 1e-6 && (front.x - s2).abs() < 1e-6, "step {k}");
            assert!(rear.v >= 0.0);
        }
    }
}
