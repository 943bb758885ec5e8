//! Synthetic sequences with known ground truth.
//!
//! Objects follow a noisy constant-speed, constant-turn-rate model in the
//! LiDAR frame. The simulated detector perturbs ground-truth boxes, drops
//! some, and adds Poisson clutter at low confidence. Instance masks are the
//! rasterized convex hulls of projected ground-truth boxes, painted far to
//! near so nearer objects occlude; point clouds are uniform samples inside
//! ground-truth boxes plus uniform background.

use nalgebra::{Matrix3x4, Matrix4, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion2d3d::InstanceMask;
use crate::geom3d::{wrap_angle, Box3D, CameraModel, PointCloud};
use crate::scenario::{Detection, FrameData, ScenarioBundle};
use crate::trajectory::{Observation, Trajectory, TrajectorySet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sequence: String,
    pub num_objects: u32,
    pub num_frames: u32,
    /// Inclusive range of object lifetimes, in frames.
    pub lifetime: [u32; 2],
    /// Initial speed range, meters per frame.
    pub speed: [f64; 2],
    /// Turn-rate range, radians per frame.
    pub turn_rate: [f64; 2],
    /// Per-frame standard deviation of speed changes.
    pub accel_noise: f64,
    /// Per-frame standard deviation of heading changes.
    pub heading_noise: f64,
    /// Standard deviation of detected center coordinates, meters.
    pub pos_noise: f64,
    pub size_noise: f64,
    pub yaw_noise: f64,
    /// Probability that a ground-truth box goes undetected.
    pub fn_prob: f64,
    /// Also drop every n-th detection of each object (by age), when set.
    pub drop_every: Option<u32>,
    /// Mean number of clutter detections per frame.
    pub fp_rate: f64,
    pub tp_confidence: [f64; 2],
    pub fp_confidence: [f64; 2],
    /// Fraction of true positives whose confidence is drawn from
    /// `low_tp_confidence` instead.
    pub low_tp_prob: f64,
    pub low_tp_confidence: [f64; 2],
    pub masks: bool,
    pub clouds: bool,
    pub points_per_box: u32,
    pub background_points: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sequence: "synth".into(),
            num_objects: 8,
            num_frames: 200,
            lifetime: [40, 160],
            speed: [0.2, 1.2],
            turn_rate: [-0.01, 0.01],
            accel_noise: 0.01,
            heading_noise: 0.005,
            pos_noise: 0.2,
            size_noise: 0.05,
            yaw_noise: 0.05,
            fn_prob: 0.1,
            drop_every: None,
            fp_rate: 0.5,
            tp_confidence: [0.9, 1.0],
            fp_confidence: [0.1, 0.9],
            low_tp_prob: 0.0,
            low_tp_confidence: [0.2, 0.6],
            masks: false,
            clouds: false,
            points_per_box: 80,
            background_points: 400,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Same scene, no detector imperfections: every ground-truth box is
    /// detected exactly, with confidence 1.
    pub fn noiseless(mut self) -> Self {
        self.pos_noise = 0.0;
        self.size_noise = 0.0;
        self.yaw_noise = 0.0;
        self.fn_prob = 0.0;
        self.fp_rate = 0.0;
        self.drop_every = None;
        self.low_tp_prob = 0.0;
        self.tp_confidence = [1.0, 1.0];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [("fn_prob", self.fn_prob), ("low_tp_prob", self.low_tp_prob)];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        for (name, r) in [
            ("tp_confidence", self.tp_confidence),
            ("fp_confidence", self.fp_confidence),
            ("low_tp_confidence", self.low_tp_confidence),
        ] {
            if !(0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0) {
                return Err(Error::Config(format!("{name} = {r:?} is not a range within [0, 1]")));
            }
        }
        if !(self.fp_rate.is_finite() && self.fp_rate >= 0.0) {
            return Err(Error::Config(format!("fp_rate = {} must be nonnegative", self.fp_rate)));
        }
        for (name, s) in [
            ("accel_noise", self.accel_noise),
            ("heading_noise", self.heading_noise),
            ("pos_noise", self.pos_noise),
            ("size_noise", self.size_noise),
            ("yaw_noise", self.yaw_noise),
        ] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Config(format!("{name} = {s} must be nonnegative")));
            }
        }
        if self.lifetime[0] == 0 || self.lifetime[0] > self.lifetime[1] {
            return Err(Error::Config(format!("lifetime range {:?} is invalid", self.lifetime)));
        }
        if self.speed[0] > self.speed[1] || self.turn_rate[0] > self.turn_rate[1] {
            return Err(Error::Config("speed and turn-rate ranges must be ordered".into()));
        }
        if self.drop_every == Some(0) {
            return Err(Error::Config("drop_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// KITTI-like camera: the left color camera with LiDAR-to-camera axes
/// `x_cam = -y, y_cam = -z, z_cam = x`.
pub fn kitti_like_camera() -> CameraModel {
    let k = Matrix3x4::new(
        721.5377, 0.0, 609.5593, 44.85728, 0.0, 721.5377, 172.854, 0.2163791, 0.0, 0.0, 1.0, 0.002745884,
    );
    let e = Matrix4::new(
        0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0, -0.08, 1.0, 0.0, 0.0, -0.27, 0.0, 0.0, 0.0, 1.0,
    );
    CameraModel::new(k, e, (1242, 375)).expect("fixed camera is valid")
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).expect("positive sigma").sample(rng)
    }
}

struct Track {
    start: u32,
    boxes: Vec<Box3D>,
}

const GROUND_Z: f64 = -1.73;

fn car_box(rng: &mut ChaCha8Rng, x: f64, y: f64, yaw: f64) -> Box3D {
    let size = Vector3::new(uniform(rng, [3.6, 4.8]), uniform(rng, [1.5, 1.9]), uniform(rng, [1.4, 1.7]));
    Box3D::new(Vector3::new(x, y, GROUND_Z + size.z / 2.0), size, yaw, 1.0).expect("car box is valid")
}

fn simulate(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Track> {
    let n = cfg.num_frames;
    (0..cfg.num_objects)
        .map(|_| {
            let life = rng.random_range(cfg.lifetime[0]..=cfg.lifetime[1]).min(n);
            let start = rng.random_range(0..=n - life);
            let x = uniform(rng, [10.0, 45.0]);
            let y = uniform(rng, [-0.5, 0.5]) * x;
            let mut heading = uniform(rng, [-std::f64::consts::PI, std::f64::consts::PI]);
            let mut speed = uniform(rng, cfg.speed);
            let turn = uniform(rng, cfg.turn_rate);
            let first = car_box(rng, x, y, heading);
            let mut boxes = vec![first];
            for _ in 1..life {
                speed = (speed + gauss(rng, cfg.accel_noise)).max(0.0);
                heading = wrap_angle(heading + turn + gauss(rng, cfg.heading_noise));
                let prev = boxes.last().expect("nonempty");
                let c = prev.center() + Vector3::new(heading.cos(), heading.sin(), 0.0) * speed;
                boxes.push(prev.with_center(c).with_yaw(heading));
            }
            Track { start, boxes }
        })
        .collect()
}

fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite pixels"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Pixels whose centers fall inside the projected convex hull of `b`, or
/// nothing when a vertex is behind the camera.
fn hull_pixels(b: &Box3D, cam: &CameraModel) -> Vec<u32> {
    let mut pts = Vec::with_capacity(8);
    for v in b.vertices() {
        match cam.project_continuous(&v) {
            Some((u, w, _)) => pts.push((u, w)),
            None => return Vec::new(),
        }
    }
    let hull = convex_hull(pts);
    if hull.len() < 3 {
        return Vec::new();
    }
    let (w, h) = cam.image_size();
    let umin = hull.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0);
    let umax = hull.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil().min(w as f64 - 1.0);
    let vmin = hull.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0);
    let vmax = hull.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().min(h as f64 - 1.0);
    if umin > umax || vmin > vmax {
        return Vec::new();
    }
    let mut out = Vec::new();
    for v in vmin as u32..=vmax as u32 {
        for u in umin as u32..=umax as u32 {
            let p = (u as f64 + 0.5, v as f64 + 0.5);
            let inside = hull.iter().zip(hull.iter().cycle().skip(1)).all(|(a, b)| {
                (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= 0.0
            });
            if inside {
                out.push(v * w + u);
            }
        }
    }
    out
}

/// Instance masks for `boxes` (mask id = position + 1), painted far to near.
pub fn render_masks(boxes: &[Box3D], cam: &CameraModel) -> Vec<InstanceMask> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        let da = boxes[a].center().norm();
        let db = boxes[b].center().norm();
        db.partial_cmp(&da).expect("finite depth").then(a.cmp(&b))
    });
    let mut owner: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    for k in order {
        for px in hull_pixels(&boxes[k], cam) {
            owner.insert(px, k);
        }
    }
    let mut per: Vec<Vec<u32>> = vec![Vec::new(); boxes.len()];
    for (px, k) in owner {
        per[k].push(px);
    }
    per.into_iter()
        .enumerate()
        .filter(|(_, px)| !px.is_empty())
        .map(|(k, px)| InstanceMask::from_linear(k as u32 + 1, &px, 0.95))
        .collect()
}

/// Uniform samples inside each box plus uniform background clutter.
pub fn sample_cloud(boxes: &[Box3D], per_box: u32, background: u32, rng: &mut ChaCha8Rng) -> PointCloud {
    let mut pts = Vec::with_capacity(boxes.len() * per_box as usize + background as usize);
    for b in boxes {
        let half = b.size() / 2.0;
        let (s, c) = b.yaw().sin_cos();
        for _ in 0..per_box {
            let l = Vector3::new(
                uniform(rng, [-half.x, half.x]),
                uniform(rng, [-half.y, half.y]),
                uniform(rng, [-half.z, half.z]),
            );
            pts.push(b.center() + Vector3::new(c * l.x - s * l.y, s * l.x + c * l.y, l.z));
        }
    }
    for _ in 0..background {
        pts.push(Vector3::new(uniform(rng, [0.0, 70.0]), uniform(rng, [-40.0, 40.0]), uniform(rng, [GROUND_Z, 1.0])));
    }
    PointCloud::new(pts, None).expect("finite samples")
}

/// Generates one sequence with ground truth.
pub fn generate(cfg: &SynthConfig) -> Result<ScenarioBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let camera = kitti_like_camera();
    let tracks = simulate(cfg, &mut rng);
    let poisson = (cfg.fp_rate > 0.0).then(|| Poisson::new(cfg.fp_rate).expect("positive rate"));

    let mut frames = Vec::with_capacity(cfg.num_frames as usize);
    for f in 0..cfg.num_frames {
        let gt_now: Vec<&Box3D> = tracks
            .iter()
            .filter_map(|t| f.checked_sub(t.start).and_then(|age| t.boxes.get(age as usize)))
            .collect();
        let mut boxes: Vec<Box3D> = Vec::new();
        for t in &tracks {
            let Some(age) = f.checked_sub(t.start) else { continue };
            let Some(gt) = t.boxes.get(age as usize) else { continue };
            let dropped_by_rule = cfg.drop_every.is_some_and(|k| age % k == k - 1);
            if rng.random::<f64>() < cfg.fn_prob || dropped_by_rule {
                continue;
            }
            let center = gt.center()
                + Vector3::new(gauss(&mut rng, cfg.pos_noise), gauss(&mut rng, cfg.pos_noise), gauss(&mut rng, cfg.pos_noise));
            let size = gt.size().map(|s| (s + gauss(&mut rng, cfg.size_noise)).max(0.2));
            let yaw = gt.yaw() + gauss(&mut rng, cfg.yaw_noise);
            let conf = if rng.random::<f64>() < cfg.low_tp_prob {
                uniform(&mut rng, cfg.low_tp_confidence)
            } else {
                uniform(&mut rng, cfg.tp_confidence)
            };
            boxes.push(Box3D::new(center, size, yaw, conf)?);
        }
        let n_fp = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as u64);
        for _ in 0..n_fp {
            let x = uniform(&mut rng, [8.0, 50.0]);
            let y = uniform(&mut rng, [-0.6, 0.6]) * x;
            let yaw = uniform(&mut rng, [-std::f64::consts::PI, std::f64::consts::PI]);
            let conf = uniform(&mut rng, cfg.fp_confidence);
            boxes.push(car_box(&mut rng, x, y, yaw).with_confidence(conf));
        }
        boxes.shuffle(&mut rng);

        let gt_boxes: Vec<Box3D> = gt_now.iter().map(|b| **b).collect();
        let masks = if cfg.masks { render_masks(&gt_boxes, &camera) } else { Vec::new() };
        let cloud = cfg
            .clouds
            .then(|| sample_cloud(&gt_boxes, cfg.points_per_box, cfg.background_points, &mut rng));
        frames.push(FrameData {
            frame: f,
            detections: boxes
                .into_iter()
                .enumerate()
                .map(|(i, bbox)| Detection {
                    index: i as u32,
                    bbox,
                    admission: None,
                })
                .collect(),
            masks,
            cloud,
        });
    }

    let ground_truth = TrajectorySet::new(
        tracks
            .iter()
            .enumerate()
            .map(|(k, t)| {
                Trajectory::new(
                    k as u32 + 1,
                    t.boxes
                        .iter()
                        .enumerate()
                        .map(|(age, b)| Observation {
                            frame: t.start + age as u32,
                            det: None,
                            bbox: *b,
                            interpolated: false,
                        })
                        .collect(),
                )
            })
            .collect(),
    );

    Ok(ScenarioBundle {
        sequence: cfg.sequence.clone(),
        camera,
        frames,
        ground_truth: Some(ground_truth),
    })
}

/// One sequence per seed, named `<prefix>-<seed:04>`, generated in parallel.
pub fn generate_suite(base: &SynthConfig, prefix: &str, seeds: impl IntoIterator<Item = u64>) -> Result<Vec<ScenarioBundle>> {
    let seeds: Vec<u64> = seeds.into_iter().collect();
    seeds
        .par_iter()
        .map(|&seed| {
            generate(&SynthConfig {
                sequence: format!("{prefix}-{seed:04}"),
                seed,
                ..base.clone()
            })
        })
        .collect()
}

/// Configuration of the standard evaluation suite: 20 sequences of 200
/// frames with 8 objects, 10% misses, 0.5 clutter boxes per frame and 0.2 m
/// position noise.
pub fn standard_suite_config() -> SynthConfig {
    SynthConfig {
        num_objects: 8,
        num_frames: 200,
        fn_prob: 0.1,
        fp_rate: 0.5,
        pos_noise: 0.2,
        ..SynthConfig::default()
    }
}
