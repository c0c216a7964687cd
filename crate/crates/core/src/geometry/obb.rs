use serde::{Deserialize, Serialize};

/// A rectangle with a center, a heading and full extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(x: f64, y: f64, heading: f64, length: f64, width: f64) -> Self {
        debug_assert!(length > 0.0 && width > 0.0);
        Self {
            x,
            y,
            heading,
            length,
            width,
        }
    }

    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.heading.sin_cos();
        [[c, s], [-s, c]]
    }

    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let [u, n] = self.axes();
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        let at = |a: f64, b: f64| [self.x + a * u[0] + b * n[0], self.y + a * u[1] + b * n[1]];
        [at(hl, hw), at(-hl, hw), at(-hl, -hw), at(hl, -hw)]
    }

    /// Radius of the circumscribed circle.
    pub fn bounding_radius(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }

    /// Point expressed in this box's frame (x forward, y left).
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let [u, n] = self.axes();
        let d = [p[0] - self.x, p[1] - self.y];
        [d[0] * u[0] + d[1] * u[1], d[0] * n[0] + d[1] * n[1]]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let l = self.to_local(p);
        l[0].abs() <= 0.5 * self.length && l[1].abs() <= 0.5 * self.width
    }

    fn project_radius(&self, axis: [f64; 2]) -> f64 {
        let [u, n] = self.axes();
        0.5 * self.length * (u[0] * axis[0] + u[1] * axis[1]).abs()
            + 0.5 * self.width * (n[0] * axis[0] + n[1] * axis[1]).abs()
    }

    /// Separating-axis test over the four face normals. Touching counts as overlap.
    pub fn overlaps(&self, other: &OrientedBox) -> bool {
        let d = [other.x - self.x, other.y - self.y];
        if d[0].hypot(d[1]) > self.bounding_radius() + other.bounding_radius() {
            return false;
        }
        let [a0, a1] = self.axes();
        let [b0, b1] = other.axes();
        for axis in [a0, a1, b0, b1] {
            let dist = (d[0] * axis[0] + d[1] * axis[1]).abs();
            if dist > self.project_radius(axis) + other.project_radius(axis) {
                return false;
            }
        }
        true
    }

    /// Intersection region of two boxes as a convex polygon (empty if disjoint).
    pub fn intersection(&self, other: &OrientedBox) -> Vec<[f64; 2]> {
        let mut poly: Vec<[f64; 2]> = self.corners().to_vec();
        let clip = other.corners();
        for i in 0..4 {
            let a = clip[i];
            let b = clip[(i + 1) % 4];
            // inside = left of a->b (ccw polygon)
            let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            let mut out = Vec::with_capacity(poly.len() + 2);
            for j in 0..poly.len() {
                let p = poly[j];
                let q = poly[(j + 1) % poly.len()];
                let sp = side(p);
                let sq = side(q);
                if sp >= 0.0 {
                    out.push(p);
                }
                if (sp >= 0.0) != (sq >= 0.0) {
                    let t = sp / (sp - sq);
                    out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
                }
            }
            poly = out;
            if poly.is_empty() {
                break;
            }
        }
        poly
    }

    /// Centroid of the overlap region, if the boxes overlap.
    pub fn contact_point(&self, other: &OrientedBox) -> Option<[f64; 2]> {
        if !self.overlaps(other) {
            return None;
        }
        let poly = self.intersection(other);
        if poly.is_empty() {
            // touching along an edge or corner
            return Some(if self.contains([other.x, other.y]) {
                [other.x, other.y]
            } else {
                let c = other.corners();
                c.into_iter()
                    .find(|p| self.contains(*p))
                    .unwrap_or([0.5 * (self.x + other.x), 0.5 * (self.y + other.y)])
            });
        }
        let mut area = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for i in 0..poly.len() {
            let p = poly[i];
            let q = poly[(i + 1) % poly.len()];
            let cr = p[0] * q[1] - q[0] * p[1];
            area += cr;
            cx += (p[0] + q[0]) * cr;
            cy += (p[1] + q[1]) * cr;
        }
        if area.abs() < 1e-12 {
            let n = poly.len() as f64;
            let sx: f64 = poly.iter().map(|p| p[0]).sum();
            let sy: f64 = poly.iter().map(|p| p[1]).sum();
            return Some([sx / n, sy / n]);
        }
        Some([cx / (3.0 * area), cy / (3.0 * area)])
    }
}
