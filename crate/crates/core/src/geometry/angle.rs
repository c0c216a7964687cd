use std::f64::consts::{PI, TAU};

/// Wraps an angle to the principal value in (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Signed shortest rotation taking `from` onto `to`, in (−π, π].
pub fn angle_diff(to: f64, from: f64) -> f64 {
    wrap_angle(to - from)
}

/// Interpolates along the shortest arc between two headings.
pub fn lerp_angle(a: f64, b: f64, t: f64) -> f64 {
    wrap_angle(a + t * angle_diff(b, a))
}

/// Wraps to [0, 2π).
pub(crate) fn mod_two_pi(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_keeps_pi_and_maps_minus_pi() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn lerp_crosses_the_wrap_on_the_short_side() {
        let m = lerp_angle(3.1, -3.1, 0.5);
        assert!((m.abs() - PI).abs() < 1e-9, "got {m}");
    }

    proptest! {
        #[test]
        fn wrapped_difference_is_principal(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            let d = angle_diff(a, b);
            prop_assert!(d > -PI && d <= PI);
            // same rotation modulo 2π
            let k = ((a - b - d) / TAU).round();
            prop_assert!((a - b - d - k * TAU).abs() < 1e-9);
        }
    }
}
