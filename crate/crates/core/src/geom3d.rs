//! Oriented 3D boxes, point cropping and pinhole projection.
//!
//! All geometry lives in a right-handed LiDAR frame with `z` up; yaw is the
//! heading about `z`, measured from the `x` axis.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum camera-frame depth for a point to be projected, meters.
pub const MIN_PROJECTION_DEPTH: f64 = 0.1;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Corner sign pattern: bottom face counter-clockwise seen from above,
/// then the top face in the same order.
const CORNER_SIGNS: [[f64; 3]; 8] = [
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct Box3D {
    center: Vector3<f64>,
    size: Vector3<f64>,
    yaw: f64,
    confidence: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
    confidence: f64,
}

impl TryFrom<RawBox> for Box3D {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        Box3D::new(
            Vector3::from(raw.center),
            Vector3::from(raw.size),
            raw.yaw,
            raw.confidence,
        )
    }
}

impl From<Box3D> for RawBox {
    fn from(b: Box3D) -> Self {
        RawBox {
            center: b.center.into(),
            size: b.size.into(),
            yaw: b.yaw,
            confidence: b.confidence,
        }
    }
}

impl Box3D {
    /// Builds a box, rejecting non-positive sizes and non-finite values.
    /// Yaw is wrapped into `(-pi, pi]`, confidence must lie in `[0, 1]`.
    pub fn new(center: Vector3<f64>, size: Vector3<f64>, yaw: f64, confidence: f64) -> Result<Self> {
        if !center.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("box center not finite: {center:?}")));
        }
        if !size.iter().all(|&v| v.is_finite() && v > 0.0) {
            return Err(Error::invalid(format!(
                "box size must be strictly positive, got {:?}",
                size.as_slice()
            )));
        }
        if !yaw.is_finite() {
            return Err(Error::invalid("box yaw not finite"));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            center,
            size,
            yaw: wrap_angle(yaw),
            confidence,
        })
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    /// `(length, width, height)`.
    pub fn size(&self) -> Vector3<f64> {
        self.size
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn with_center(mut self, center: Vector3<f64>) -> Self {
        self.center = center;
        self
    }

    /// Replaces the size; the caller guarantees positivity.
    pub fn with_size(mut self, size: Vector3<f64>) -> Self {
        debug_assert!(size.iter().all(|&v| v > 0.0));
        self.size = size;
        self
    }

    pub fn with_yaw(mut self, yaw: f64) -> Self {
        self.yaw = wrap_angle(yaw);
        self
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence.clamp(0.0, 1.0);
        self
    }

    /// Corner offsets from the center, in [`vertices`](Self::vertices) order.
    pub fn corner_offsets(&self) -> [Vector3<f64>; 8] {
        let (s, c) = self.yaw.sin_cos();
        let half = self.size * 0.5;
        CORNER_SIGNS.map(|sign| {
            let lx = sign[0] * half.x;
            let ly = sign[1] * half.y;
            Vector3::new(c * lx - s * ly, s * lx + c * ly, sign[2] * half.z)
        })
    }

    /// The eight corners: bottom face counter-clockwise (seen from above)
    /// starting at the front-left corner, then the top face in the same order.
    /// Edges `0-1` and `2-3` have the box length, `1-2` and `3-0` its width and
    /// `i-(i+4)` its height.
    pub fn vertices(&self) -> [Vector3<f64>; 8] {
        self.corner_offsets().map(|o| self.center + o)
    }

    /// Whether `p` lies inside the closed box.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        let lx = c * d.x + s * d.y;
        let ly = -s * d.x + c * d.y;
        lx.abs() <= self.size.x * 0.5 && ly.abs() <= self.size.y * 0.5 && d.z.abs() <= self.size.z * 0.5
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intensity: Option<Vec<f64>>,
}

impl PointCloud {
    /// Drops points with any non-finite coordinate (and their intensities).
    pub fn new(points: Vec<Vector3<f64>>, intensity: Option<Vec<f64>>) -> Result<Self> {
        if let Some(int) = &intensity {
            if int.len() != points.len() {
                return Err(Error::invalid(format!(
                    "{} intensities for {} points",
                    int.len(),
                    points.len()
                )));
            }
        }
        let keep: Vec<bool> = points.iter().map(|p| p.iter().all(|v| v.is_finite())).collect();
        let intensity = intensity.map(|int| {
            int.into_iter()
                .zip(&keep)
                .filter_map(|(v, &k)| k.then_some(v))
                .collect()
        });
        let points = points
            .into_iter()
            .zip(&keep)
            .filter_map(|(p, &k)| k.then_some(p))
            .collect();
        Ok(Self { points, intensity })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Indices of the cloud points inside `bbox` (boundary inclusive).
pub fn points_in_box(cloud: &PointCloud, bbox: &Box3D) -> Vec<usize> {
    cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| bbox.contains(p))
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCamera", into = "RawCamera")]
pub struct CameraModel {
    intrinsics: Matrix3x4<f64>,
    extrinsics: Matrix4<f64>,
    image_size: (u32, u32),
}

#[derive(Serialize, Deserialize)]
struct RawCamera {
    /// Row-major 3x4.
    intrinsics: [[f64; 4]; 3],
    /// Row-major 4x4.
    extrinsics: [[f64; 4]; 4],
    image_size: [u32; 2],
}

impl TryFrom<RawCamera> for CameraModel {
    type Error = Error;

    fn try_from(raw: RawCamera) -> Result<Self> {
        let k = Matrix3x4::from_fn(|r, c| raw.intrinsics[r][c]);
        let e = Matrix4::from_fn(|r, c| raw.extrinsics[r][c]);
        CameraModel::new(k, e, (raw.image_size[0], raw.image_size[1]))
    }
}

impl From<CameraModel> for RawCamera {
    fn from(cam: CameraModel) -> Self {
        RawCamera {
            intrinsics: std::array::from_fn(|r| std::array::from_fn(|c| cam.intrinsics[(r, c)])),
            extrinsics: std::array::from_fn(|r| std::array::from_fn(|c| cam.extrinsics[(r, c)])),
            image_size: [cam.image_size.0, cam.image_size.1],
        }
    }
}

impl CameraModel {
    /// `intrinsics` maps camera-frame homogeneous points to homogeneous pixels
    /// (any rectification already composed in); `extrinsics` maps LiDAR to camera.
    pub fn new(intrinsics: Matrix3x4<f64>, extrinsics: Matrix4<f64>, image_size: (u32, u32)) -> Result<Self> {
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(Error::Config(format!("image size must be positive, got {image_size:?}")));
        }
        if !intrinsics.iter().chain(extrinsics.iter()).all(|v| v.is_finite()) {
            return Err(Error::Config("camera matrices contain non-finite values".into()));
        }
        let rot: Matrix3<f64> = extrinsics.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho_err = (rot.transpose() * rot - Matrix3::identity()).abs().max();
        if ortho_err > 1e-6 || (rot.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "extrinsic rotation is not a proper rotation (orthonormality error {ortho_err:.2e})"
            )));
        }
        let bottom = extrinsics.fixed_view::<1, 4>(3, 0);
        if (bottom - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).abs().max() > 1e-9 {
            return Err(Error::Config("extrinsics bottom row must be [0 0 0 1]".into()));
        }
        Ok(Self {
            intrinsics,
            extrinsics,
            image_size,
        })
    }

    pub fn intrinsics(&self) -> &Matrix3x4<f64> {
        &self.intrinsics
    }

    pub fn extrinsics(&self) -> &Matrix4<f64> {
        &self.extrinsics
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }

    /// Continuous pixel coordinates and depth, or `None` when the point lies
    /// closer than [`MIN_PROJECTION_DEPTH`].
    pub fn project_continuous(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let cam = self.extrinsics * Vector4::new(p.x, p.y, p.z, 1.0);
        let uvw = self.intrinsics * cam;
        let depth = uvw.z;
        if !(depth > MIN_PROJECTION_DEPTH) {
            return None;
        }
        Some((uvw.x / depth, uvw.y / depth, depth))
    }

    /// Floored pixel of `p`, if it lands in front of the camera and inside the image.
    pub fn project_pixel(&self, p: &Vector3<f64>) -> Option<[u32; 2]> {
        let (u, v, _) = self.project_continuous(p)?;
        let (u, v) = (u.floor(), v.floor());
        let (w, h) = self.image_size;
        if u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64 {
            Some([u as u32, v as u32])
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Projection {
    /// Index of the point in the input slice.
    pub source: usize,
    /// `[column, row]`.
    pub pixel: [u32; 2],
}

/// Projects points into the image, keeping input order of the survivors.
pub fn project_points(points: &[Vector3<f64>], cam: &CameraModel) -> Vec<Projection> {
    points
        .iter()
        .enumerate()
        .filter_map(|(source, p)| cam.project_pixel(p).map(|pixel| Projection { source, pixel }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube(yaw: f64) -> Box3D {
        Box3D::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), yaw, 1.0).unwrap()
    }

    fn test_camera() -> CameraModel {
        let k = Matrix3x4::new(100.0, 0.0, 50.0, 0.0, 0.0, 100.0, 50.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        CameraModel::new(k, Matrix4::identity(), (100, 100)).unwrap()
    }

    fn sorted(mut pts: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts
    }

    #[test]
    fn unit_cube_corners_are_sign_combinations() {
        let got = sorted(unit_cube(0.0).vertices().iter().map(|v| [v.x, v.y, v.z]).collect());
        let mut want = Vec::new();
        for sx in [-0.5, 0.5] {
            for sy in [-0.5, 0.5] {
                for sz in [-0.5, 0.5] {
                    want.push([sx, sy, sz]);
                }
            }
        }
        assert_eq!(got, sorted(want));
    }

    #[test]
    fn quarter_turn_cube_has_same_corner_set() {
        let snap = |b: Box3D| -> Vec<[f64; 3]> {
            sorted(b.vertices().iter().map(|v| [v.x, v.y, v.z].map(|c| (c * 1e6).round() / 1e6)).collect())
        };
        let a = snap(unit_cube(0.0));
        let b = snap(unit_cube(PI / 2.0));
        for (p, q) in a.iter().zip(&b) {
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn yaw_is_wrapped() {
        let b = Box3D::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), 3.0 * PI, 0.5).unwrap();
        assert!((b.yaw() - PI).abs() < 1e-12);
        let b = Box3D::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), -PI, 0.5).unwrap();
        assert_eq!(b.yaw(), PI);
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(Box3D::new(Vector3::zeros(), Vector3::new(1.0, 0.0, 1.0), 0.0, 1.0).is_err());
        assert!(Box3D::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), 0.0, 1.5).is_err());
        assert!(Box3D::new(Vector3::new(f64::NAN, 0.0, 0.0), Vector3::new(1.0, 1.0, 1.0), 0.0, 1.0).is_err());
    }

    #[test]
    fn centre_and_corner_points_are_inside() {
        let cloud = PointCloud::new(vec![Vector3::zeros()], None).unwrap();
        assert_eq!(points_in_box(&cloud, &unit_cube(0.0)), vec![0]);
        let cloud = PointCloud::new(vec![Vector3::new(0.5, 0.5, 0.5)], None).unwrap();
        assert_eq!(points_in_box(&cloud, &unit_cube(0.0)), vec![0]);
        let cloud = PointCloud::new(vec![Vector3::new(0.5 + 1e-9, 0.0, 0.0)], None).unwrap();
        assert!(points_in_box(&cloud, &unit_cube(0.0)).is_empty());
    }

    #[test]
    fn cloud_filters_non_finite_points() {
        let cloud = PointCloud::new(
            vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(f64::INFINITY, 0.0, 0.0), Vector3::new(0.0, f64::NAN, 0.0)],
            Some(vec![0.1, 0.2, 0.3]),
        )
        .unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.intensity().unwrap(), &[0.1]);
    }

    #[test]
    fn principal_ray_projects_to_principal_point() {
        let cam = test_camera();
        let out = project_points(&[Vector3::new(0.0, 0.0, 10.0)], &cam);
        assert_eq!(out, vec![Projection { source: 0, pixel: [50, 50] }]);
    }

    #[test]
    fn points_behind_camera_are_dropped() {
        let cam = test_camera();
        assert!(project_points(&[Vector3::new(0.0, 0.0, -1.0)], &cam).is_empty());
        assert!(project_points(&[Vector3::new(0.0, 0.0, 0.1)], &cam).is_empty());
    }

    #[test]
    fn pinhole_equation_by_hand() {
        let cam = test_camera();
        let out = project_points(
            &[Vector3::new(100.0, 0.0, 10.0), Vector3::new(1.0, 2.0, 10.0)],
            &cam,
        );
        // floor(100 * 0.1 + 50), floor(100 * 0.2 + 50); the first point leaves the image.
        assert_eq!(out, vec![Projection { source: 1, pixel: [60, 70] }]);
    }

    #[test]
    fn camera_rejects_bad_rotation() {
        let k = Matrix3x4::identity();
        let mut e = Matrix4::identity();
        e[(0, 0)] = 2.0;
        assert!(CameraModel::new(k, e, (10, 10)).is_err());
        let mut e = Matrix4::identity();
        e[(0, 0)] = -1.0;
        assert!(CameraModel::new(k, e, (10, 10)).is_err());
        assert!(CameraModel::new(k, Matrix4::identity(), (0, 10)).is_err());
    }
}
