mod common;

use std::f64::consts::PI;

use nalgebra::{Matrix3x4, Matrix4, Vector3};
use omot::assign::{solve_max_assignment, ScoreMatrix};
use omot::geom3d::{points_in_box, project_points};
use omot::tracker::{ncd, KalmanState, NoiseModel};
use omot::{Box3D, CameraModel, PointCloud};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force_assignment, random_box};

fn arb_box() -> impl Strategy<Value = Box3D> {
    (
        -50.0..50.0f64,
        -50.0..50.0f64,
        -3.0..3.0f64,
        0.3..6.0f64,
        0.3..3.0f64,
        0.3..3.0f64,
        -PI..PI,
        0.0..1.0f64,
    )
        .prop_map(|(x, y, z, l, w, h, yaw, c)| Box3D::new(Vector3::new(x, y, z), Vector3::new(l, w, h), yaw, c).unwrap())
}

/// Boxes whose coordinates are multiples of 1/8, so differences are exact.
fn arb_grid_box() -> impl Strategy<Value = Box3D> {
    (-400i32..400, -400i32..400, -20i32..20, 3i32..40, 3i32..20, 3i32..20, -PI..PI)
        .prop_map(|(x, y, z, l, w, h, yaw)| {
            let g = |v: i32| v as f64 / 8.0;
            Box3D::new(Vector3::new(g(x), g(y), g(z)), Vector3::new(g(l), g(w), g(h)), yaw, 1.0).unwrap()
        })
}

fn arb_matrix() -> impl Strategy<Value = ScoreMatrix> {
    (0usize..=7, 0usize..=7).prop_flat_map(|(r, c)| {
        (
            prop::collection::vec(0.0..10.0f64, r * c),
            prop::collection::vec(prop::bool::weighted(0.25), r * c),
        )
            .prop_map(move |(v, f)| {
                let mut m = ScoreMatrix::new(r, c);
                for i in 0..r {
                    for j in 0..c {
                        m.set(i, j, v[i * c + j]);
                        if f[i * c + j] {
                            m.forbid(i, j);
                        }
                    }
                }
                m
            })
    })
}

fn camera() -> CameraModel {
    let k = Matrix3x4::new(100.0, 0.0, 50.0, 0.0, 0.0, 100.0, 50.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    CameraModel::new(k, Matrix4::identity(), (100, 100)).unwrap()
}

proptest! {
    #[test]
    fn points_in_box_is_rotation_invariant(b in arb_box(), delta in -PI..PI, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reach = b.size().norm();
        let pts: Vec<Vector3<f64>> = (0..200)
            .map(|_| b.center() + Vector3::new(rng.random_range(-reach..reach), rng.random_range(-reach..reach), rng.random_range(-reach..reach)))
            .collect();
        let (s, c) = delta.sin_cos();
        let rotated: Vec<Vector3<f64>> = pts
            .iter()
            .map(|p| {
                let d = p - b.center();
                b.center() + Vector3::new(c * d.x - s * d.y, s * d.x + c * d.y, d.z)
            })
            .collect();
        let before = points_in_box(&PointCloud::new(pts, None).unwrap(), &b);
        let after = points_in_box(&PointCloud::new(rotated, None).unwrap(), &b.with_yaw(b.yaw() + delta));
        prop_assert_eq!(before, after);
    }

    #[test]
    fn projected_pixels_are_in_bounds(pts in prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, -5.0..30.0f64), 0..300)) {
        let cam = camera();
        let pts: Vec<Vector3<f64>> = pts.into_iter().map(|(x, y, z)| Vector3::new(x, y, z)).collect();
        for p in project_points(&pts, &cam) {
            prop_assert!(p.pixel[0] < 100 && p.pixel[1] < 100);
            prop_assert!(p.source < pts.len());
        }
    }

    #[test]
    fn vertex_order_gives_edge_lengths(b in arb_box()) {
        let v = b.vertices();
        let s = b.size();
        let close = |a: f64, e: f64| (a - e).abs() < 1e-9;
        prop_assert!(close((v[0] - v[1]).norm(), s.x) && close((v[2] - v[3]).norm(), s.x));
        prop_assert!(close((v[1] - v[2]).norm(), s.y) && close((v[3] - v[0]).norm(), s.y));
        for i in 0..4 {
            prop_assert!(close((v[i] - v[i + 4]).norm(), s.z));
        }
    }

    #[test]
    fn assignment_is_optimal_and_feasible(m in arb_matrix()) {
        let a = solve_max_assignment(&m).unwrap();
        let mut rows = vec![false; m.rows()];
        let mut cols = vec![false; m.cols()];
        for &(r, c) in &a.pairs {
            prop_assert!(!m.is_forbidden(r, c));
            prop_assert!(!rows[r] && !cols[c]);
            rows[r] = true;
            cols[c] = true;
        }
        prop_assert_eq!(a.pairs.len() + a.unmatched_rows.len(), m.rows());
        prop_assert_eq!(a.pairs.len() + a.unmatched_cols.len(), m.cols());
        prop_assert_eq!(a.total(&m), brute_force_assignment(&m));
    }

    #[test]
    fn scaling_preserves_optimality(m in arb_matrix(), c in 0.01..100.0f64) {
        let mut scaled = m.clone();
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                scaled.set(i, j, m.get(i, j) * c);
            }
        }
        let a = solve_max_assignment(&scaled).unwrap();
        let best = brute_force_assignment(&m);
        prop_assert!((a.total(&m) - best).abs() <= 1e-9 * best.max(1.0));
    }

    #[test]
    fn rectangular_leaves_exactly_the_surplus_unmatched(r in 0usize..=7, c in 0usize..=7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..r).map(|_| (0..c).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let m = if r == 0 { ScoreMatrix::new(0, c) } else { ScoreMatrix::from_rows(&rows).unwrap() };
        let a = solve_max_assignment(&m).unwrap();
        prop_assert_eq!(a.unmatched_rows.len(), r.saturating_sub(c));
        prop_assert_eq!(a.unmatched_cols.len(), c.saturating_sub(r));
    }

    #[test]
    fn ncd_bounds_and_symmetry(a in arb_box(), b in arb_box()) {
        let s = ncd(&a, &b);
        prop_assert!(s <= 1.0);
        prop_assert_eq!(s.to_bits(), ncd(&b, &a).to_bits());
        prop_assert!(s < 1.0 || a.center() == b.center());
        prop_assert_eq!(ncd(&a, &b.with_center(a.center())), 1.0);
    }

    #[test]
    fn ncd_translation_invariance_on_grid(a in arb_grid_box(), b in arb_grid_box(), t in (-800i32..800, -800i32..800, -80i32..80)) {
        let v = Vector3::new(t.0 as f64 / 8.0, t.1 as f64 / 8.0, t.2 as f64 / 8.0);
        let moved = ncd(&a.with_center(a.center() + v), &b.with_center(b.center() + v));
        prop_assert_eq!(moved.to_bits(), ncd(&a, &b).to_bits());
    }

    #[test]
    fn ncd_translation_invariance_general(a in arb_box(), b in arb_box(), v in (-100.0..100.0f64, -100.0..100.0f64, -5.0..5.0f64)) {
        let v = Vector3::new(v.0, v.1, v.2);
        let moved = ncd(&a.with_center(a.center() + v), &b.with_center(b.center() + v));
        prop_assert!((moved - ncd(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn growing_a_box_raises_ncd(a in arb_box(), b in arb_box(), axis in 0usize..3, grow in 0.05..3.0f64) {
        prop_assume!(a.center() != b.center());
        let mut size = a.size();
        size[axis] += grow;
        prop_assert!(ncd(&a.with_size(size), &b) > ncd(&a, &b));
    }

    #[test]
    fn tiny_measurement_noise_pins_position(b in arb_box(), z in arb_box()) {
        let noise = NoiseModel { p0: 10.0, q: 2.0, r: 1e-12 };
        let s = KalmanState::from_box(&b, &noise).predict(&noise).update(&z, &noise).unwrap();
        prop_assert!((s.position() - z.center()).norm() < 1e-6);
        prop_assert!(s.is_symmetric(1e-9));
    }
}

#[test]
fn points_in_box_matches_half_space_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10_000 {
        let b = random_box(&mut rng, 10.0);
        let v = b.vertices();
        let faces = [[0, 1, 2], [4, 7, 6], [0, 4, 5], [1, 5, 6], [2, 6, 7], [3, 7, 4]];
        let reach = b.size().norm();
        let pts: Vec<Vector3<f64>> = (0..8)
            .map(|_| b.center() + Vector3::new(rng.random_range(-reach..reach), rng.random_range(-reach..reach), rng.random_range(-reach..reach)))
            .collect();
        let oracle: Vec<usize> = pts
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                faces.iter().all(|f| {
                    let n = (v[f[1]] - v[f[0]]).cross(&(v[f[2]] - v[f[0]]));
                    let outward = if n.dot(&(v[f[0]] - b.center())) > 0.0 { n } else { -n };
                    outward.dot(&(*p - v[f[0]])) <= 0.0
                })
            })
            .map(|(i, _)| i)
            .collect();
        let cloud = PointCloud::new(pts, None).unwrap();
        assert_eq!(points_in_box(&cloud, &b), oracle);
    }
}

#[test]
fn exact_constant_velocity_innovations_vanish() {
    let noise = NoiseModel { p0: 10.0, q: 0.0, r: 1.0 };
    let at = |k: u32| {
        Box3D::new(Vector3::new(1.0 + 0.7 * k as f64, -2.0 + 0.2 * k as f64, -1.0), Vector3::new(4.0, 1.8, 1.5), 0.4, 1.0)
            .unwrap()
    };
    let mut s = KalmanState::from_box(&at(0), &noise);
    let mut innovations = Vec::new();
    for k in 1..40 {
        let p = s.predict(&noise);
        innovations.push((at(k).center() - p.position()).norm());
        s = p.update(&at(k), &noise).unwrap();
    }
    assert!(innovations[38] < 1e-3, "{:?}", &innovations[30..]);
    assert!(innovations[38] < innovations[5]);
}
