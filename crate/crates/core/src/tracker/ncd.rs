use crate::geom3d::Box3D;

/// Normalized center distance: one minus the center distance divided by the
/// largest distance between any vertex of `a` and any vertex of `b`.
///
/// Every vertex difference is formed as `delta + (o_a - o_b)` from the center
/// offset and the corner offsets, so swapping the arguments negates each
/// difference exactly and the result is bitwise symmetric.
pub fn ncd(a: &Box3D, b: &Box3D) -> f64 {
    let delta = a.center() - b.center();
    let oa = a.corner_offsets();
    let ob = b.corner_offsets();
    let mut max_sq = 0.0_f64;
    for p in &oa {
        for q in &ob {
            max_sq = max_sq.max((delta + (p - q)).norm_squared());
        }
    }
    1.0 - delta.norm() / max_sq.sqrt()
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;

    use super::*;

    fn cube(x: f64) -> Box3D {
        Box3D::new(Vector3::new(x, 0.0, 0.0), Vector3::new(1.0, 1.0, 1.0), 0.0, 1.0).unwrap()
    }

    #[test]
    fn identical_boxes_score_one() {
        assert_eq!(ncd(&cube(3.0), &cube(3.0)), 1.0);
    }

    #[test]
    fn unit_offset_cubes() {
        let v = ncd(&cube(0.0), &cube(1.0));
        assert!((v - (1.0 - 1.0 / 6f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn far_boxes_stay_finite() {
        let a = Box3D::new(Vector3::zeros(), Vector3::new(4.0, 2.0, 1.5), 0.3, 1.0).unwrap();
        let b = a.with_center(Vector3::new(100.0, 0.0, 0.0));
        let v = ncd(&a, &b);
        assert!(v > 0.0 && v < 0.06, "{v}");
    }

    #[test]
    fn larger_box_scores_higher() {
        let a = cube(0.0);
        let b = cube(2.0);
        let bigger = b.with_size(Vector3::new(2.0, 1.0, 1.0));
        assert!(ncd(&a, &bigger) > ncd(&a, &b));
    }
}
