/// Arclength and speed at each step of a constant-acceleration profile with
/// the speed clamped at zero (no reversing). Samples `t = 0, dt, ..., horizon`.
pub fn speed_profile(v0: f64, accel: f64, horizon: f64, dt: f64) -> Vec<(f64, f64)> {
    let n = (horizon / dt).round() as usize;
    (0..=n)
        .map(|k| {
            let t = k as f64 * dt;
            profile_at(v0, accel, t)
        })
        .collect()
}

/// Exact `(arclength, speed)` at time `t`.
pub fn profile_at(v0: f64, accel: f64, t: f64) -> (f64, f64) {
    let v0 = v0.max(0.0);
    if accel < 0.0 {
        let t_stop = v0 / -accel;
        if t >= t_stop {
            return (v0 * v0 / (-2.0 * accel), 0.0);
        }
    }
    (v0 * t + 0.5 * accel * t * t, (v0 + accel * t).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standing_still() {
        for (s, v) in speed_profile(0.0, 0.0, 6.0, 0.2) {
            assert_eq!((s, v), (0.0, 0.0));
        }
    }

    #[test]
    fn constant_speed_covers_sixty_meters() {
        let p = speed_profile(10.0, 0.0, 6.0, 0.2);
        assert_eq!(p.len(), 31);
        assert!((p.last().unwrap().0 - 60.0).abs() < 1e-9);
    }

    #[test]
    fn hard_brake_stops_at_two_seconds() {
        // closed form: t = v/a = 2 s, s = v^2 / (2a) = 10 m
        let p = speed_profile(10.0, -5.0, 6.0, 0.2);
        assert!((p[10].0 - 10.0).abs() < 1e-9 && p[10].1 == 0.0);
        assert!(p[9].1 > 0.0);
        for w in p.windows(2) {
            assert!(w[1].0 >= w[0].0);
        }
        assert!(p[10..].iter().all(|&(s, v)| (s - 10.0).abs() < 1e-9 && v == 0.0));
    }
}
