//! Shortest paths of bounded curvature between two oriented poses.

use std::f64::consts::TAU;

use crate::geometry::wrap_angle;

const EPS: f64 = 1e-10;

/// Angle in `[0, 2pi)`, with values within rounding of a full turn mapped to zero.
fn mod_two_pi(a: f64) -> f64 {
    let m = crate::geometry::mod_two_pi(a);
    if m > TAU - 1e-9 {
        0.0
    } else {
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    Left,
    Straight,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Word {
    Lsl,
    Rsr,
    Lsr,
    Rsl,
    Rlr,
    Lrl,
}

impl Word {
    pub const ALL: [Word; 6] = [Word::Lsl, Word::Rsr, Word::Lsr, Word::Rsl, Word::Rlr, Word::Lrl];

    pub fn turns(self) -> [Turn; 3] {
        use Turn::*;
        match self {
            Word::Lsl => [Left, Straight, Left],
            Word::Rsr => [Right, Straight, Right],
            Word::Lsr => [Left, Straight, Right],
            Word::Rsl => [Right, Straight, Left],
            Word::Rlr => [Right, Left, Right],
            Word::Lrl => [Left, Right, Left],
        }
    }
}

/// Pose `(x, y, theta)`.
pub type Pose = (f64, f64, f64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DubinsPath {
    pub start: Pose,
    pub radius: f64,
    pub word: Word,
    /// Segment lengths normalized by the radius (angles for turns).
    pub params: [f64; 3],
}

struct Intermediate {
    alpha: f64,
    beta: f64,
    d: f64,
    sa: f64,
    sb: f64,
    ca: f64,
    cb: f64,
    c_ab: f64,
    d_sq: f64,
}

impl Intermediate {
    fn new(q0: Pose, q1: Pose, radius: f64) -> Self {
        let dx = q1.0 - q0.0;
        let dy = q1.1 - q0.1;
        let d = dx.hypot(dy) / radius;
        let theta = if d > 0.0 { mod_two_pi(dy.atan2(dx)) } else { 0.0 };
        let alpha = mod_two_pi(q0.2 - theta);
        let beta = mod_two_pi(q1.2 - theta);
        Self {
            alpha,
            beta,
            d,
            sa: alpha.sin(),
            sb: beta.sin(),
            ca: alpha.cos(),
            cb: beta.cos(),
            c_ab: (alpha - beta).cos(),
            d_sq: d * d,
        }
    }

    fn word(&self, w: Word) -> Option<[f64; 3]> {
        let Self { alpha, beta, d, sa, sb, ca, cb, c_ab, d_sq } = *self;
        match w {
            Word::Lsl => {
                let p_sq = 2.0 + d_sq - 2.0 * c_ab + 2.0 * d * (sa - sb);
                if p_sq < -EPS {
                    return None;
                }
                let p_sq = p_sq.max(0.0);
                let tmp = (cb - ca).atan2(d + sa - sb);
                Some([mod_two_pi(tmp - alpha), p_sq.sqrt(), mod_two_pi(beta - tmp)])
            }
            Word::Rsr => {
                let p_sq = 2.0 + d_sq - 2.0 * c_ab + 2.0 * d * (sb - sa);
                if p_sq < -EPS {
                    return None;
                }
                let p_sq = p_sq.max(0.0);
                let tmp = (ca - cb).atan2(d - sa + sb);
                Some([mod_two_pi(alpha - tmp), p_sq.sqrt(), mod_two_pi(tmp - beta)])
            }
            Word::Lsr => {
                let p_sq = -2.0 + d_sq + 2.0 * c_ab + 2.0 * d * (sa + sb);
                if p_sq < -EPS {
                    return None;
                }
                let p_sq = p_sq.max(0.0);
                let p = p_sq.sqrt();
                let tmp = (-ca - cb).atan2(d + sa + sb) - (-2.0f64).atan2(p);
                Some([mod_two_pi(tmp - alpha), p, mod_two_pi(tmp - beta)])
            }
            Word::Rsl => {
                let p_sq = -2.0 + d_sq + 2.0 * c_ab - 2.0 * d * (sa + sb);
                if p_sq < -EPS {
                    return None;
                }
                let p_sq = p_sq.max(0.0);
                let p = p_sq.sqrt();
                let tmp = (ca + cb).atan2(d - sa - sb) - 2.0f64.atan2(p);
                Some([mod_two_pi(alpha - tmp), p, mod_two_pi(beta - tmp)])
            }
            Word::Rlr => {
                let tmp = (6.0 - d_sq + 2.0 * c_ab + 2.0 * d * (sa - sb)) / 8.0;
                if tmp.abs() > 1.0 + EPS {
                    return None;
                }
                let p = mod_two_pi(TAU - tmp.clamp(-1.0, 1.0).acos());
                let t = mod_two_pi(alpha - (ca - cb).atan2(d - sa + sb) + p / 2.0);
                Some([t, p, mod_two_pi(alpha - beta - t + p)])
            }
            Word::Lrl => {
                let tmp = (6.0 - d_sq + 2.0 * c_ab + 2.0 * d * (sb - sa)) / 8.0;
                if tmp.abs() > 1.0 + EPS {
                    return None;
                }
                let p = mod_two_pi(TAU - tmp.clamp(-1.0, 1.0).acos());
                let t = mod_two_pi(-alpha - (ca - cb).atan2(d + sa - sb) + p / 2.0);
                Some([t, p, mod_two_pi(beta - alpha - t + p)])
            }
        }
    }
}

fn advance(q: Pose, turn: Turn, t: f64, radius: f64) -> Pose {
    let (x, y, th) = q;
    match turn {
        Turn::Left => (
            x + radius * ((th + t).sin() - th.sin()),
            y + radius * (th.cos() - (th + t).cos()),
            th + t,
        ),
        Turn::Right => (
            x + radius * (th.sin() - (th - t).sin()),
            y + radius * ((th - t).cos() - th.cos()),
            th - t,
        ),
        Turn::Straight => (x + radius * t * th.cos(), y + radius * t * th.sin(), th),
    }
}

impl DubinsPath {
    /// Path for one word, if that word admits a solution.
    pub fn for_word(q0: Pose, q1: Pose, radius: f64, word: Word) -> Option<Self> {
        let params = Intermediate::new(q0, q1, radius).word(word)?;
        Some(Self {
            start: q0,
            radius,
            word,
            params,
        })
    }

    /// Shortest path over all six words.
    pub fn shortest(q0: Pose, q1: Pose, radius: f64) -> Option<Self> {
        let im = Intermediate::new(q0, q1, radius);
        Word::ALL
            .iter()
            .filter_map(|&w| {
                im.word(w).map(|params| Self {
                    start: q0,
                    radius,
                    word: w,
                    params,
                })
            })
            .min_by(|a, b| a.length().total_cmp(&b.length()))
    }

    pub fn length(&self) -> f64 {
        self.params.iter().sum::<f64>() * self.radius
    }

    pub fn segment_lengths(&self) -> [f64; 3] {
        self.params.map(|p| p * self.radius)
    }

    /// Pose after travelling `s` meters along the path (clamped to the ends).
    pub fn sample(&self, s: f64) -> Pose {
        let mut t = (s / self.radius).clamp(0.0, self.params.iter().sum());
        let turns = self.word.turns();
        let mut q = self.start;
        for (i, &seg) in self.params.iter().enumerate() {
            let step = t.min(seg);
            q = advance(q, turns[i], step, self.radius);
            t -= step;
            if t <= 0.0 {
                break;
            }
        }
        (q.0, q.1, wrap_angle(q.2))
    }

    pub fn end(&self) -> Pose {
        self.sample(self.length())
    }
}
