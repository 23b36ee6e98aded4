use crate::lie::Vec3;

/// Default scale of the robust joint penalty, in meters.
pub const DEFAULT_SIGMA: f64 = 0.1;

/// Geman–McClure penalty `‖r‖² / (σ² + ‖r‖²)`, bounded in `[0, 1)`.
pub fn geman_mcclure(r: &Vec3, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let n2 = r.norm_squared();
    n2 / (s2 + n2)
}

/// Gradient of [`geman_mcclure`] with respect to `r`: `2σ² r / (σ² + ‖r‖²)²`.
pub fn geman_mcclure_grad(r: &Vec3, sigma: f64) -> Vec3 {
    let s2 = sigma * sigma;
    let d = s2 + r.norm_squared();
    r * (2.0 * s2 / (d * d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_and_asymptote() {
        assert_eq!(geman_mcclure(&Vec3::zeros(), DEFAULT_SIGMA), 0.0);
        assert!(geman_mcclure(&Vec3::new(1e4, 0.0, 0.0), DEFAULT_SIGMA) > 1.0 - 1e-9);
        assert!(geman_mcclure(&Vec3::new(1e4, 0.0, 0.0), DEFAULT_SIGMA) < 1.0);
        // ‖r‖ = σ is the half-way point
        assert!((geman_mcclure(&Vec3::new(0.0, 0.1, 0.0), 0.1) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn gradient_matches_central_differences(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0, sigma in 0.01f64..1.0,
        ) {
            let r = Vec3::new(x, y, z);
            let g = geman_mcclure_grad(&r, sigma);
            let h = 1e-6;
            for k in 0..3 {
                let mut p = r;
                let mut m = r;
                p[k] += h;
                m[k] -= h;
                let fd = (geman_mcclure(&p, sigma) - geman_mcclure(&m, sigma)) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() < 1e-5 * (1.0 + g[k].abs()), "{fd} vs {}", g[k]);
            }
        }

        #[test]
        fn bounded_and_monotone_in_norm(
            dir in prop::collection::vec(-1.0f64..1.0, 3), a in 0.0f64..5.0, b in 0.0f64..5.0,
        ) {
            let d = Vec3::new(dir[0], dir[1], dir[2]);
            prop_assume!(d.norm() > 1e-3);
            let u = d.normalize();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let fl = geman_mcclure(&(u * lo), DEFAULT_SIGMA);
            let fh = geman_mcclure(&(u * hi), DEFAULT_SIGMA);
            prop_assert!((0.0..1.0).contains(&fl) && (0.0..1.0).contains(&fh));
            prop_assert!(fl <= fh);
        }
    }
}
