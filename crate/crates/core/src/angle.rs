//! Angle wrapping and circular statistics.

use std::f64::consts::{PI, TAU};

/// Wraps an angle in radians to `(-π, π]`.
pub fn wrap_pi(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}

/// Wraps an angle in degrees to `(-180, 180]`.
pub fn wrap_deg(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(360.0);
    if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Smallest signed difference `a - b`, wrapped to `(-π, π]`.
pub fn diff(a: f64, b: f64) -> f64 {
    wrap_pi(a - b)
}

/// Circular mean of a set of angles in radians (`atan2` of the summed unit vectors).
///
/// Returns `None` for an empty set or when the resultant vector vanishes.
pub fn circular_mean<I>(angles: I) -> Option<f64>
where
    I: IntoIterator<Item = f64>,
{
    let (mut s, mut c, mut n) = (0.0, 0.0, 0usize);
    for a in angles {
        s += a.sin();
        c += a.cos();
        n += 1;
    }
    if n == 0 || (s.hypot(c) / n as f64) < 1e-12 {
        return None;
    }
    Some(s.atan2(c))
}
