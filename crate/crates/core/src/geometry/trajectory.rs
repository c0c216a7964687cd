use std::sync::Arc;

use super::angle::{angle_diff, lerp_angle};
use super::route::RouteSpec;
use super::scene::{EgoState, DT};
use crate::error::{Error, Result};

/// Number of states in a planned trajectory: the current state plus 6 s at 0.2 s.
pub const TRAJECTORY_LEN: usize = 31;
/// Planning horizon in seconds.
pub const HORIZON: f64 = 6.0;

/// A geometric path sampled densely in arclength, with linear interpolation
/// of position and shortest-arc interpolation of heading between samples.
///
/// Past the last sample the path continues straight along the final heading.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGeometry {
    s: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    theta: Vec<f64>,
    route_station: Vec<f64>,
}

impl PathGeometry {
    /// `samples` are `(s, x, y, theta)` with strictly increasing `s` starting at 0.
    /// When a route is given, each sample's route arclength is found by chained
    /// local projection.
    pub fn from_samples(samples: &[(f64, f64, f64, f64)], route: Option<&RouteSpec>) -> Self {
        let stations = route.map(|route| {
            let mut out = Vec::with_capacity(samples.len());
            let mut hint = route.project([samples[0].1, samples[0].2]).station;
            let mut prev_s = 0.0;
            for p in samples {
                let pr = route.project_near([p.1, p.2], hint, 5.0 + (p.0 - prev_s));
                hint = pr.station;
                prev_s = p.0;
                out.push(pr.station);
            }
            out
        });
        Self::with_route_stations(samples, stations.unwrap_or_default())
    }

    /// Like [`from_samples`](Self::from_samples) with route arclengths supplied
    /// by the caller (empty if unknown).
    pub fn with_route_stations(samples: &[(f64, f64, f64, f64)], route_station: Vec<f64>) -> Self {
        assert!(!samples.is_empty());
        assert!(route_station.is_empty() || route_station.len() == samples.len());
        Self {
            s: samples.iter().map(|p| p.0).collect(),
            x: samples.iter().map(|p| p.1).collect(),
            y: samples.iter().map(|p| p.2).collect(),
            theta: samples.iter().map(|p| p.3).collect(),
            route_station,
        }
    }

    /// Polyline through trajectory positions; stationary repeats are dropped.
    pub fn from_states(states: &[EgoState]) -> Self {
        let mut samples = vec![(0.0, states[0].x, states[0].y, states[0].theta)];
        for st in &states[1..] {
            let last = *samples.last().unwrap();
            let d = (st.x - last.1).hypot(st.y - last.2);
            if d > 1e-9 {
                samples.push((last.0 + d, st.x, st.y, st.theta));
            }
        }
        Self::from_samples(&samples, None)
    }

    pub fn length(&self) -> f64 {
        *self.s.last().unwrap()
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let n = self.s.len();
        if n == 1 || s <= 0.0 {
            return (0, 0.0);
        }
        let i = match self.s.binary_search_by(|v| v.total_cmp(&s)) {
            Ok(i) => return (i.min(n - 1), 0.0),
            Err(i) => i - 1,
        };
        if i >= n - 1 {
            return (n - 1, 0.0);
        }
        (i, (s - self.s[i]) / (self.s[i + 1] - self.s[i]))
    }

    /// Pose `(x, y, theta)` at arclength `s`.
    pub fn pose_at(&self, s: f64) -> (f64, f64, f64) {
        let end = self.length();
        if s > end {
            let n = self.s.len() - 1;
            let (sn, cs) = self.theta[n].sin_cos();
            let d = s - end;
            return (self.x[n] + d * cs, self.y[n] + d * sn, self.theta[n]);
        }
        let (i, f) = self.locate(s);
        if f == 0.0 {
            return (self.x[i], self.y[i], self.theta[i]);
        }
        (
            self.x[i] + f * (self.x[i + 1] - self.x[i]),
            self.y[i] + f * (self.y[i + 1] - self.y[i]),
            lerp_angle(self.theta[i], self.theta[i + 1], f),
        )
    }

    /// Route arclength of the path point at `s`, if route stations were computed.
    pub fn route_station_at(&self, s: f64) -> Option<f64> {
        if self.route_station.is_empty() {
            return None;
        }
        let end = self.length();
        if s > end {
            return Some(self.route_station.last().unwrap() + (s - end));
        }
        let (i, f) = self.locate(s);
        if f == 0.0 {
            return Some(self.route_station[i]);
        }
        Some(self.route_station[i] + f * (self.route_station[i + 1] - self.route_station[i]))
    }
}

/// A path shared by several trajectories plus each state's arclength on it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRef {
    pub geometry: Arc<PathGeometry>,
    pub stations: Vec<f64>,
}

/// Time-indexed ego states at a fixed step, starting at the planning time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<EgoState>,
    pub dt: f64,
    pub origin_timestamp: f64,
    pub path: Option<PathRef>,
}

impl Trajectory {
    pub fn new(states: Vec<EgoState>, dt: f64, origin_timestamp: f64) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidTrajectory("no states".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidTrajectory("dt must be positive".into()));
        }
        if states
            .iter()
            .any(|s| !(s.x.is_finite() && s.y.is_finite() && s.theta.is_finite() && s.v.is_finite()))
        {
            return Err(Error::InvalidTrajectory("non-finite state".into()));
        }
        Ok(Self {
            states,
            dt,
            origin_timestamp,
            path: None,
        })
    }

    pub fn with_path(mut self, path: PathRef) -> Self {
        debug_assert_eq!(path.stations.len(), self.states.len());
        self.path = Some(path);
        self
    }

    /// Trajectory holding `state` for the full horizon.
    pub fn stationary(state: EgoState, origin_timestamp: f64) -> Self {
        let st = EgoState { v: 0.0, a: 0.0, ..state };
        Self {
            states: vec![st; TRAJECTORY_LEN],
            dt: DT,
            origin_timestamp,
            path: None,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.states.len() - 1) as f64 * self.dt
    }

    /// Linear interpolation of position and speed, shortest-arc for heading.
    pub fn interpolate_state(&self, t: f64) -> Result<EgoState> {
        let end = self.duration();
        if !(t >= -1e-9 && t <= end + 1e-9) {
            return Err(Error::TimeOutOfRange { t, end });
        }
        Ok(self.sample(t.clamp(0.0, end)))
    }

    fn sample(&self, t: f64) -> EgoState {
        let u = t / self.dt;
        let i = u.floor() as usize;
        let f = u - i as f64;
        let last = self.states.len() - 1;
        if i >= last {
            return self.states[last];
        }
        if f.abs() < 1e-12 {
            return self.states[i];
        }
        if 1.0 - f < 1e-12 {
            return self.states[i + 1];
        }
        let a = &self.states[i];
        let b = &self.states[i + 1];
        EgoState {
            x: a.x + f * (b.x - a.x),
            y: a.y + f * (b.y - a.y),
            theta: lerp_angle(a.theta, b.theta, f),
            v: a.v + f * (b.v - a.v),
            a: a.a + f * (b.a - a.a),
            steering: a.steering + f * (b.steering - a.steering),
        }
    }

    /// Like [`interpolate_state`](Self::interpolate_state) but continues at
    /// constant final speed along the final heading past the end.
    pub fn state_extrapolated(&self, t: f64) -> EgoState {
        let end = self.duration();
        if t <= end {
            return self.sample(t.max(0.0));
        }
        let last = *self.states.last().unwrap();
        let d = last.v * (t - end);
        let (s, c) = last.theta.sin_cos();
        EgoState {
            x: last.x + d * c,
            y: last.y + d * s,
            a: 0.0,
            ..last
        }
    }

    /// Route arclength of each state.
    pub fn route_stations(&self, route: &RouteSpec) -> Vec<f64> {
        if let Some(p) = &self.path {
            if p.geometry.route_station_at(0.0).is_some() {
                return p
                    .stations
                    .iter()
                    .map(|&s| p.geometry.route_station_at(s).unwrap())
                    .collect();
            }
        }
        let mut out = Vec::with_capacity(self.states.len());
        let mut hint = route.project(self.states[0].position()).station;
        out.push(hint);
        for w in self.states.windows(2) {
            let step = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            let pr = route.project_near(w[1].position(), hint, 5.0 + 2.0 * step);
            hint = pr.station;
            out.push(hint);
        }
        out
    }

    /// Largest absolute wrapped heading change between consecutive states.
    pub fn max_heading_step(&self) -> f64 {
        self.states
            .windows(2)
            .map(|w| angle_diff(w[1].theta, w[0].theta).abs())
            .fold(0.0, f64::max)
    }
}
