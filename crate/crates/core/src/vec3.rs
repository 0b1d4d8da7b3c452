//! Small 3-vector helpers shared by the orientation pipeline.

pub type Vec3 = [f32; 3];

pub fn dot(a: Vec3, b: Vec3) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(v: Vec3) -> f32 {
    dot(v, v).sqrt()
}

pub fn scale(v: Vec3, s: f32) -> Vec3 {
    [v[0] * s, v[1] * s, v[2] * s]
}

/// Unit vector along `v`; returns `None` when |v| <= eps.
pub fn normalize(v: Vec3, eps: f32) -> Option<Vec3> {
    let n = norm(v);
    if n <= eps {
        None
    } else {
        Some(scale(v, 1.0 / n))
    }
}

/// Hemisphere canonicalization for axial directions (v and -v equivalent):
/// flips the sign so that the first nonzero component of (z, y, x) is
/// positive. Idempotent, and canonical(v) == canonical(-v).
pub fn canonicalize(v: Vec3) -> Vec3 {
    let flip = if v[2] != 0.0 {
        v[2] < 0.0
    } else if v[1] != 0.0 {
        v[1] < 0.0
    } else {
        v[0] < 0.0
    };
    if flip {
        [-v[0], -v[1], -v[2]]
    } else {
        v
    }
}

/// Angle in degrees between two axial directions (sign-insensitive), in [0, 90].
pub fn axial_angle_deg(a: Vec3, b: Vec3) -> f64 {
    let na = norm(a) as f64;
    let nb = norm(b) as f64;
    if na == 0.0 || nb == 0.0 {
        return 90.0;
    }
    let c = (dot(a, b) as f64 / (na * nb)).abs().min(1.0);
    c.acos().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_flips_to_upper_hemisphere() {
        assert_eq!(canonicalize([0.0, 0.0, -1.0]), [0.0, 0.0, 1.0]);
        assert_eq!(canonicalize([0.0, -1.0, 0.0]), [0.0, 1.0, 0.0]);
        assert_eq!(canonicalize([-1.0, 0.0, 0.0]), [1.0, 0.0, 0.0]);
        assert_eq!(canonicalize([1.0, 2.0, 3.0]), [1.0, 2.0, 3.0]);
        assert_eq!(canonicalize([1.0, 2.0, -3.0]), [-1.0, -2.0, 3.0]);
    }

    #[test]
    fn canonical_idempotent_and_sign_invariant() {
        let vs = [[0.3, -0.4, 0.5], [-0.1, 0.0, 0.0], [0.0, 0.2, -0.9]];
        for v in vs {
            let c = canonicalize(v);
            assert_eq!(c, canonicalize(c));
            assert_eq!(c, canonicalize([-v[0], -v[1], -v[2]]));
        }
    }

    #[test]
    fn axial_angle_examples() {
        assert!(axial_angle_deg([0.0, 0.0, 1.0], [0.0, 0.0, -1.0]) < 1e-6);
        let a = axial_angle_deg([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert!((a - 90.0).abs() < 1e-6);
    }
}
