//! KITTI tracking layout: label files, calibration, velodyne scans.
//!
//! KITTI labels live in the rectified camera frame (x right, y down, z
//! forward) with the location at the bottom-face center and `rotation_y`
//! about the camera y axis. Internally boxes live in the LiDAR frame with the
//! location at the volumetric center and yaw about z. A KITTI-derived
//! [`CameraModel`] stores `P2` as intrinsics and `R0_rect * Tr_velo_to_cam`
//! as extrinsics, so it alone carries everything needed in both directions.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::geom3d::{wrap_angle, Box3D, CameraModel, PointCloud};
use crate::trajectory::TrajectorySet;

/// Image size of the KITTI color cameras.
pub const KITTI_IMAGE_SIZE: (u32, u32) = (1242, 375);

#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabelRow {
    pub frame: u32,
    /// `-1` for detections without identity.
    pub track_id: i64,
    pub kind: String,
    pub truncated: f64,
    pub occluded: i64,
    pub alpha: f64,
    /// `left, top, right, bottom`.
    pub bbox2d: [f64; 4],
    /// `height, width, length`.
    pub dimensions: [f64; 3],
    /// Bottom-face center in the rectified camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

fn parse_f64(tok: &str, what: &str, path: &Path, line: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("{what}: `{tok}` is not a number"),
    })
}

fn parse_i64(tok: &str, what: &str, path: &Path, line: usize) -> Result<i64> {
    tok.parse::<i64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("{what}: `{tok}` is not an integer"),
    })
}

/// Parses tracking label text. `path` is only used in error messages.
pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<KittiLabelRow>> {
    let mut rows = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 17 && toks.len() != 18 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected 17 or 18 columns, found {}", toks.len()),
            });
        }
        let f = |i: usize, what: &str| parse_f64(toks[i], what, path, line);
        let frame = parse_i64(toks[0], "frame", path, line)?;
        if frame < 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("negative frame {frame}"),
            });
        }
        let row = KittiLabelRow {
            frame: frame as u32,
            track_id: parse_i64(toks[1], "track id", path, line)?,
            kind: toks[2].to_string(),
            truncated: f(3, "truncated")?,
            occluded: parse_i64(toks[4], "occluded", path, line)?,
            alpha: f(5, "alpha")?,
            bbox2d: [f(6, "left")?, f(7, "top")?, f(8, "right")?, f(9, "bottom")?],
            dimensions: [f(10, "height")?, f(11, "width")?, f(12, "length")?],
            location: [f(13, "x")?, f(14, "y")?, f(15, "z")?],
            rotation_y: f(16, "rotation_y")?,
            score: if toks.len() == 18 { Some(f(17, "score")?) } else { None },
        };
        let [l, t, r, b] = row.bbox2d;
        if row.bbox2d != [-1.0; 4] && (r < l || b < t) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("inverted 2D box [{l}, {t}, {r}, {b}]"),
            });
        }
        if row.kind != "DontCare" && row.score.is_some() && row.dimensions.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "scored detection with nonpositive dimensions".into(),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_labels(path: &Path) -> Result<Vec<KittiLabelRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, path)
}

fn calib_values(text: &str, path: &Path, names: &[&str], count: usize) -> Result<Vec<f64>> {
    for (n, raw) in text.lines().enumerate() {
        let mut toks = raw.split_whitespace();
        let Some(head) = toks.next() else { continue };
        let key = head.trim_end_matches(':');
        if !names.contains(&key) {
            continue;
        }
        let vals = toks
            .map(|t| parse_f64(t, key, path, n + 1))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != count {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: format!("{key}: expected {count} values, found {}", vals.len()),
            });
        }
        return Ok(vals);
    }
    Err(Error::MissingCalibKey {
        path: path.to_path_buf(),
        key: names[0].to_string(),
    })
}

/// Nearest proper rotation in the Frobenius sense.
fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    d[(2, 2)] = (u * vt).determinant().signum();
    u * d * vt
}

/// Calibration as printed in a KITTI calib file.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiCalib {
    pub p2: Matrix3x4<f64>,
    pub r0_rect: Matrix3<f64>,
    pub tr_velo_to_cam: Matrix4<f64>,
}

impl KittiCalib {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let p2 = calib_values(text, path, &["P2"], 12)?;
        let r0 = calib_values(text, path, &["R0_rect", "R_rect"], 9)?;
        let tr = calib_values(text, path, &["Tr_velo_to_cam", "Tr_velo_cam"], 12)?;
        let mut tr4 = Matrix4::identity();
        for r in 0..3 {
            for c in 0..4 {
                tr4[(r, c)] = tr[r * 4 + c];
            }
        }
        Ok(Self {
            p2: Matrix3x4::from_row_slice(&p2),
            r0_rect: Matrix3::from_row_slice(&r0),
            tr_velo_to_cam: tr4,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// `P2` as intrinsics, `R0_rect * Tr_velo_to_cam` as extrinsics. The
    /// rotation block is snapped to the nearest rotation, since printed
    /// calibration values are only accurate to about seven digits.
    pub fn camera(&self, image_size: (u32, u32)) -> Result<CameraModel> {
        let mut r0 = Matrix4::identity();
        r0.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r0_rect);
        let mut ext = r0 * self.tr_velo_to_cam;
        let rot: Matrix3<f64> = ext.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (rot.transpose() * rot - Matrix3::identity()).abs().max();
        if err > 1e-3 {
            return Err(Error::Config(format!(
                "R0_rect * Tr_velo_to_cam is far from a rotation (error {err:.2e})"
            )));
        }
        ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&orthonormalize(&rot));
        CameraModel::new(self.p2, ext, image_size)
    }
}

/// Reads a velodyne scan: little-endian `f32` records `(x, y, z, intensity)`.
pub fn read_velodyne(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_velodyne(&bytes, path)
}

pub fn parse_velodyne(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    if bytes.len() % 16 != 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{} bytes is not a whole number of 16-byte records", bytes.len()),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    let mut intensity = Vec::with_capacity(bytes.len() / 16);
    for rec in bytes.chunks_exact(16) {
        let v = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().expect("4-byte slice")) as f64;
        let p = Vector3::new(v(0), v(1), v(2));
        if p.iter().all(|c| c.is_finite()) && v(3).is_finite() {
            points.push(p);
            intensity.push(v(3));
        }
    }
    PointCloud::new(points, Some(intensity))
}

pub fn write_velodyne(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * 16);
    for (i, p) in cloud.points().iter().enumerate() {
        let inten = cloud.intensity().map_or(0.0, |v| v[i]);
        for c in [p.x, p.y, p.z, inten] {
            bytes.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn rotation(cam: &CameraModel) -> Matrix3<f64> {
    cam.extrinsics().fixed_view::<3, 3>(0, 0).into_owned()
}

fn to_camera(cam: &CameraModel, p: &Vector3<f64>) -> Vector3<f64> {
    (cam.extrinsics() * Vector4::new(p.x, p.y, p.z, 1.0)).xyz()
}

fn from_camera(cam: &CameraModel, p: &Vector3<f64>) -> Vector3<f64> {
    let r = rotation(cam);
    let t: Vector3<f64> = cam.extrinsics().fixed_view::<3, 1>(0, 3).into_owned();
    r.transpose() * (p - t)
}

/// Converts a label row into an internal LiDAR-frame box.
pub fn label_to_box(row: &KittiLabelRow, cam: &CameraModel) -> Result<Box3D> {
    let [h, w, l] = row.dimensions;
    let [x, y, z] = row.location;
    let center = from_camera(cam, &Vector3::new(x, y - h / 2.0, z));
    let heading_cam = Vector3::new(row.rotation_y.cos(), 0.0, -row.rotation_y.sin());
    let heading = rotation(cam).transpose() * heading_cam;
    let yaw = heading.y.atan2(heading.x);
    Box3D::new(center, Vector3::new(l, w, h), yaw, row.score.unwrap_or(1.0).clamp(0.0, 1.0))
}

/// Camera-frame bottom center and `rotation_y` of an internal box.
///
/// `rotation_y` is solved so that [`label_to_box`] recovers the yaw exactly:
/// the camera heading `(cos ry, 0, -sin ry)` mapped back to the LiDAR frame
/// must point along the yaw in the ground plane.
pub fn box_to_camera(b: &Box3D, cam: &CameraModel) -> ([f64; 3], f64) {
    let c = to_camera(cam, &b.center());
    let h = b.size().z;
    let m = rotation(cam).transpose();
    let (sy, cy) = b.yaw().sin_cos();
    let (a, k) = (m.column(0), m.column(2));
    let across = |v: &Vector3<f64>| v.y * cy - v.x * sy;
    let mut ry = across(&a.into_owned()).atan2(across(&k.into_owned()));
    let heading = m * Vector3::new(ry.cos(), 0.0, -ry.sin());
    if heading.x * cy + heading.y * sy < 0.0 {
        ry += std::f64::consts::PI;
    }
    ([c.x, c.y + h / 2.0, c.z], wrap_angle(ry))
}

/// Pixel-bounds rectangle of the box's projected vertices, clipped to the
/// image; `None` when no vertex projects in front of the camera or the
/// rectangle misses the image.
pub fn project_bbox2d(b: &Box3D, cam: &CameraModel) -> Option<[f64; 4]> {
    let (w, h) = cam.image_size();
    let pts: Vec<(f64, f64)> = b
        .vertices()
        .iter()
        .filter_map(|v| cam.project_continuous(v))
        .map(|(u, v, _)| (u, v))
        .collect();
    if pts.is_empty() {
        return None;
    }
    let (mut l, mut t, mut r, mut btm) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (u, v) in pts {
        l = l.min(u.floor());
        t = t.min(v.floor());
        r = r.max(u.floor());
        btm = btm.max(v.floor());
    }
    let (maxu, maxv) = ((w - 1) as f64, (h - 1) as f64);
    if r < 0.0 || btm < 0.0 || l > maxu || t > maxv {
        return None;
    }
    Some([l.max(0.0), t.max(0.0), r.min(maxu), btm.min(maxv)])
}

/// One label row per observation, ordered by frame then trajectory id.
pub fn format_tracking(trajs: &TrajectorySet, cam: &CameraModel, class: &str) -> String {
    let mut rows: Vec<(u32, u32, &Box3D)> = trajs
        .trajectories
        .iter()
        .flat_map(|t| t.observations.iter().map(move |o| (o.frame, t.id, &o.bbox)))
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    let mut out = String::new();
    for (frame, id, b) in rows {
        let ([x, y, z], ry) = box_to_camera(b, cam);
        let alpha = wrap_angle(ry - x.atan2(z));
        let bb = project_bbox2d(b, cam).unwrap_or([-1.0; 4]);
        let s = b.size();
        let _ = writeln!(
            out,
            "{frame} {id} {class} 0 0 {alpha:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {x:.6} {y:.6} {z:.6} {ry:.6} {:.6}",
            bb[0],
            bb[1],
            bb[2],
            bb[3],
            s.z,
            s.y,
            s.x,
            b.confidence()
        );
    }
    out
}

pub fn write_kitti_tracking(trajs: &TrajectorySet, cam: &CameraModel, class: &str, path: &Path) -> Result<()> {
    fs::write(path, format_tracking(trajs, cam, class)).map_err(|e| Error::io(path, e))
}

/// Locations of one sequence in a KITTI tracking tree.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiPaths {
    pub calib: PathBuf,
    /// Scored detections in label format.
    pub detections: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    /// Directory of `FFFFFF.bin` scans.
    pub velodyne: Option<PathBuf>,
    /// Directory of `FFFFFF.png` instance label images.
    pub instances: Option<PathBuf>,
    pub image_size: (u32, u32),
    /// Object classes to keep, compared case-sensitively.
    pub classes: Vec<String>,
}

impl KittiPaths {
    /// The standard layout under `root` for sequence `seq` (e.g. `"0001"`):
    /// `calib/`, `label_02/`, `velodyne/` and `instances/` are used when present.
    pub fn standard(root: &Path, seq: &str, detections: Option<PathBuf>) -> Self {
        let opt = |p: PathBuf| p.exists().then_some(p);
        Self {
            calib: root.join("calib").join(format!("{seq}.txt")),
            detections,
            ground_truth: opt(root.join("label_02").join(format!("{seq}.txt"))),
            velodyne: opt(root.join("velodyne").join(seq)),
            instances: opt(root.join("instances").join(seq)),
            image_size: KITTI_IMAGE_SIZE,
            classes: vec!["Car".to_string()],
        }
    }
}
