use serde::{Deserialize, Serialize};

use super::angle::{lerp_angle, wrap_angle};
use crate::error::{Error, Result};

/// Maximum spacing between consecutive centerline waypoints after loading.
pub const MAX_WAYPOINT_SPACING: f64 = 1.0;

/// Piecewise-constant speed limit starting at `start` meters of arclength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedZone {
    pub start: f64,
    pub limit: f64,
}

/// Closest-point projection of a point onto the route centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteProjection {
    /// Arclength of the closest point.
    pub station: f64,
    /// Signed distance, positive to the left of the route direction.
    pub lateral: f64,
    pub distance: f64,
    /// Smoothed route heading at `station`.
    pub heading: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RouteRaw {
    centerline: Vec<[f64; 2]>,
    speed_limit: Vec<SpeedZone>,
    lane_half_width: f64,
}

/// A single-lane route: an arclength-parameterized centerline polyline with
/// speed limits and a lane corridor half-width.
///
/// The polyline is extended by rays past both ends, so projection and pose
/// lookup are defined for any station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RouteRaw", into = "RouteRaw")]
pub struct RouteSpec {
    points: Vec<[f64; 2]>,
    stations: Vec<f64>,
    seg_dirs: Vec<[f64; 2]>,
    vertex_headings: Vec<f64>,
    speed_limit: Vec<SpeedZone>,
    lane_half_width: f64,
}

impl TryFrom<RouteRaw> for RouteSpec {
    type Error = Error;
    fn try_from(raw: RouteRaw) -> Result<Self> {
        RouteSpec::new(raw.centerline, raw.speed_limit, raw.lane_half_width)
    }
}

impl From<RouteSpec> for RouteRaw {
    fn from(r: RouteSpec) -> Self {
        RouteRaw {
            centerline: r.points,
            speed_limit: r.speed_limit,
            lane_half_width: r.lane_half_width,
        }
    }
}

impl RouteSpec {
    /// Builds a route, densifying the centerline to at most 1 m spacing.
    pub fn new(
        waypoints: Vec<[f64; 2]>,
        mut speed_limit: Vec<SpeedZone>,
        lane_half_width: f64,
    ) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidRoute("need at least two waypoints".into()));
        }
        if !(lane_half_width > 0.0) {
            return Err(Error::InvalidRoute("lane half width must be positive".into()));
        }
        if speed_limit.is_empty() || speed_limit.iter().any(|z| !(z.limit > 0.0)) {
            return Err(Error::InvalidRoute("speed limit must be positive everywhere".into()));
        }
        speed_limit.sort_by(|a, b| a.start.total_cmp(&b.start));

        let mut points = Vec::with_capacity(waypoints.len());
        points.push(waypoints[0]);
        for w in waypoints.windows(2) {
            let (a, b) = (w[0], w[1]);
            let d = (b[0] - a[0]).hypot(b[1] - a[1]);
            if !(d > 1e-9) {
                return Err(Error::InvalidRoute("duplicate consecutive waypoints".into()));
            }
            let n = (d / MAX_WAYPOINT_SPACING).ceil() as usize;
            for k in 1..n {
                let t = k as f64 / n as f64;
                points.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
            points.push(b);
        }

        let mut stations = Vec::with_capacity(points.len());
        let mut seg_dirs = Vec::with_capacity(points.len() - 1);
        stations.push(0.0);
        for w in points.windows(2) {
            let d = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
            let len = d[0].hypot(d[1]);
            seg_dirs.push([d[0] / len, d[1] / len]);
            stations.push(stations.last().unwrap() + len);
        }
        let seg_heading = |i: usize| seg_dirs[i][1].atan2(seg_dirs[i][0]);
        let n_seg = seg_dirs.len();
        let mut vertex_headings = Vec::with_capacity(points.len());
        vertex_headings.push(seg_heading(0));
        for i in 1..n_seg {
            vertex_headings.push(lerp_angle(seg_heading(i - 1), seg_heading(i), 0.5));
        }
        vertex_headings.push(seg_heading(n_seg - 1));

        Ok(Self {
            points,
            stations,
            seg_dirs,
            vertex_headings,
            speed_limit,
            lane_half_width,
        })
    }

    /// Straight route along +x from `start` for `length` meters.
    pub fn straight(start: [f64; 2], heading: f64, length: f64, speed_limit: f64, half_width: f64) -> Result<Self> {
        let (s, c) = heading.sin_cos();
        Self::new(
            vec![start, [start[0] + length * c, start[1] + length * s]],
            vec![SpeedZone { start: 0.0, limit: speed_limit }],
            half_width,
        )
    }

    pub fn centerline(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn cumulative_arclength(&self) -> &[f64] {
        &self.stations
    }

    pub fn length(&self) -> f64 {
        *self.stations.last().unwrap()
    }

    pub fn lane_half_width(&self) -> f64 {
        self.lane_half_width
    }

    pub fn speed_zones(&self) -> &[SpeedZone] {
        &self.speed_limit
    }

    pub fn speed_limit_at(&self, station: f64) -> f64 {
        self.speed_limit
            .iter()
            .rev()
            .find(|z| z.start <= station)
            .unwrap_or(&self.speed_limit[0])
            .limit
    }

    fn segment_count(&self) -> usize {
        self.seg_dirs.len()
    }

    /// Index of the segment containing `station` (clamped to the ends).
    fn segment_at(&self, station: f64) -> usize {
        let n = self.segment_count();
        match self.stations.binary_search_by(|s| s.total_cmp(&station)) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    /// Smooth heading: vertex headings interpolated along each segment.
    pub fn heading_at(&self, station: f64) -> f64 {
        let n = self.segment_count();
        if station <= 0.0 {
            return self.vertex_headings[0];
        }
        if station >= self.length() {
            return self.vertex_headings[n];
        }
        let i = self.segment_at(station);
        let frac = (station - self.stations[i]) / (self.stations[i + 1] - self.stations[i]);
        lerp_angle(self.vertex_headings[i], self.vertex_headings[i + 1], frac)
    }

    /// Centerline point at `station` (rays past the ends).
    pub fn point_at(&self, station: f64) -> [f64; 2] {
        let i = self.segment_at(station);
        let t = station - self.stations[i];
        let a = self.points[i];
        let u = self.seg_dirs[i];
        [a[0] + t * u[0], a[1] + t * u[1]]
    }

    /// Pose `(x, y, heading)` at `station`, shifted `lateral` meters to the left.
    pub fn pose_at(&self, station: f64, lateral: f64) -> (f64, f64, f64) {
        let p = self.point_at(station);
        let h = self.heading_at(station);
        let (s, c) = h.sin_cos();
        (p[0] - lateral * s, p[1] + lateral * c, h)
    }

    fn project_segment(&self, i: usize, p: [f64; 2]) -> (f64, f64, f64) {
        let a = self.points[i];
        let u = self.seg_dirs[i];
        let len = self.stations[i + 1] - self.stations[i];
        let d = [p[0] - a[0], p[1] - a[1]];
        let mut t = d[0] * u[0] + d[1] * u[1];
        let last = self.segment_count() - 1;
        if i != 0 {
            t = t.max(0.0);
        }
        if i != last {
            t = t.min(len);
        }
        let foot = [a[0] + t * u[0], a[1] + t * u[1]];
        let dist = (p[0] - foot[0]).hypot(p[1] - foot[1]);
        let cross = u[0] * d[1] - u[1] * d[0];
        (self.stations[i] + t, dist, if cross < 0.0 { -1.0 } else { 1.0 })
    }

    fn project_range(&self, p: [f64; 2], lo: usize, hi: usize) -> RouteProjection {
        let mut best = (f64::INFINITY, 0.0, 1.0);
        for i in lo..=hi {
            let (s, d, sign) = self.project_segment(i, p);
            if d < best.0 {
                best = (d, s, sign);
            }
        }
        let (distance, station, sign) = best;
        RouteProjection {
            station,
            lateral: sign * distance,
            distance,
            heading: self.heading_at(station),
        }
    }

    /// Closest point on the (ray-extended) centerline; ties go to the lowest segment.
    pub fn project(&self, p: [f64; 2]) -> RouteProjection {
        self.project_range(p, 0, self.segment_count() - 1)
    }

    /// Projection restricted to segments within `window` meters of `hint`.
    pub fn project_near(&self, p: [f64; 2], hint: f64, window: f64) -> RouteProjection {
        let lo = self.segment_at(hint - window);
        let hi = self.segment_at(hint + window);
        self.project_range(p, lo, hi)
    }
}

/// Convenience wrapper for [`RouteSpec::project`].
pub fn project_to_route(p: [f64; 2], route: &RouteSpec) -> RouteProjection {
    route.project(p)
}

/// Route through `points` with a constant speed limit.
pub fn polyline_route(points: Vec<[f64; 2]>, speed_limit: f64, half_width: f64) -> Result<RouteSpec> {
    RouteSpec::new(points, vec![SpeedZone { start: 0.0, limit: speed_limit }], half_width)
}

/// Heading of a segment, for callers that build routes from headings.
pub fn segment_heading(a: [f64; 2], b: [f64; 2]) -> f64 {
    wrap_angle((b[1] - a[1]).atan2(b[0] - a[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(route: &RouteSpec, p: [f64; 2]) -> (f64, f64) {
        // exhaustive per-segment closest point, with the end rays
        let pts = route.centerline();
        let n = pts.len() - 1;
        let mut best = (f64::INFINITY, 0.0);
        let mut acc = 0.0;
        for i in 0..n {
            let a = pts[i];
            let b = pts[i + 1];
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            let mut t = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])) / (len * len);
            if i > 0 {
                t = t.max(0.0);
            }
            if i < n - 1 {
                t = t.min(1.0);
            }
            let f = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            let d = (p[0] - f[0]).hypot(p[1] - f[1]);
            if d < best.0 {
                best = (d, acc + t * len);
            }
            acc += len;
        }
        best
    }

    #[test]
    fn densifies_to_one_meter() {
        let r = polyline_route(vec![[0.0, 0.0], [10.5, 0.0], [10.5, 3.0]], 10.0, 1.75).unwrap();
        for w in r.centerline().windows(2) {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            assert!(d <= 1.0 + 1e-12 && d > 0.0);
        }
        assert!((r.length() - 13.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_duplicates_and_bad_limits() {
        assert!(polyline_route(vec![[0.0, 0.0], [0.0, 0.0]], 10.0, 1.75).is_err());
        assert!(polyline_route(vec![[0.0, 0.0], [1.0, 0.0]], 0.0, 1.75).is_err());
        assert!(polyline_route(vec![[0.0, 0.0]], 5.0, 1.75).is_err());
    }

    #[test]
    fn on_curve_point_has_zero_offset() {
        let r = polyline_route(vec![[0.0, 0.0], [20.0, 0.0]], 10.0, 1.75).unwrap();
        let pr = r.project([7.3, 0.0]);
        assert_eq!(pr.lateral, 0.0);
        assert!((pr.station - 7.3).abs() < 1e-12);
    }

    #[test]
    fn left_offset_is_positive() {
        let r = polyline_route(vec![[0.0, 0.0], [20.0, 0.0]], 10.0, 1.75).unwrap();
        let pr = r.project([5.0, 2.0]);
        assert!((pr.lateral - 2.0).abs() < 1e-12);
        assert!((r.project([5.0, -2.0]).lateral + 2.0).abs() < 1e-12);
    }

    #[test]
    fn corner_projection_matches_brute_force() {
        let r = polyline_route(vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]], 10.0, 1.75).unwrap();
        for p in [[9.0, 1.0], [11.0, -1.0], [9.5, 0.4], [10.4, 0.2], [8.0, 3.0]] {
            let pr = r.project(p);
            let (d, s) = brute(&r, p);
            assert!((pr.distance - d).abs() < 1e-9);
            assert!((pr.station - s).abs() < 1e-9, "{p:?}: {} vs {}", pr.station, s);
        }
    }

    #[test]
    fn pose_at_round_trips_lateral_offset_on_straight() {
        let r = polyline_route(vec![[0.0, 0.0], [30.0, 0.0]], 10.0, 1.75).unwrap();
        let (x, y, h) = r.pose_at(12.0, -0.7);
        assert!((x - 12.0).abs() < 1e-12 && (y + 0.7).abs() < 1e-12 && h == 0.0);
        assert_eq!(r.speed_limit_at(5.0), 10.0);
    }

    proptest! {
        #[test]
        fn projection_distance_matches_exhaustive_oracle(
            pts in proptest::collection::vec((-30.0f64..30.0, -30.0f64..30.0), 2..7),
            px in -40.0f64..40.0, py in -40.0f64..40.0,
        ) {
            let mut wp: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            wp.dedup_by(|a, b| (a[0] - b[0]).hypot(a[1] - b[1]) < 1e-3);
            prop_assume!(wp.len() >= 2);
            let r = polyline_route(wp, 10.0, 1.75).unwrap();
            let pr = r.project([px, py]);
            let (d, _) = brute(&r, [px, py]);
            prop_assert!((pr.distance - d).abs() <= 1e-9);
        }
    }
}
