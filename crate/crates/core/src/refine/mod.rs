//! Per-trajectory refinement: gap interpolation, confidence-weighted size
//! averaging, and Gaussian-process smoothing of positions.

mod gp;

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gp::{adaptive_sigma, gp_posterior_mean, linear_trend, rbf_kernel, SIGMA_MIN};

use crate::error::{Error, Result};
use crate::geom3d::{wrap_angle, Box3D};
use crate::tracker::ncd;
use crate::trajectory::{check_frame_exclusivity, Observation, Trajectory, TrajectorySet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Longest gap, in missing frames, that is filled.
    pub interp_window: u32,
    /// Inserted boxes more NCD-similar than this to a box of another
    /// trajectory in the same frame are discarded.
    pub ncd_gate: f64,
    pub gp_tau: f64,
    /// Observation noise variance of the GP, in square meters.
    pub gp_noise: f64,
    pub interpolate: bool,
    pub size_average: bool,
    pub gp: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            interp_window: 4,
            ncd_gate: 0.35,
            gp_tau: 5.5,
            gp_noise: 0.01,
            interpolate: true,
            size_average: true,
            gp: true,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gp_tau.is_finite() && self.gp_tau > 0.0) {
            return Err(Error::Config(format!("tau = {} must be positive", self.gp_tau)));
        }
        if !(self.gp_noise.is_finite() && self.gp_noise > 0.0) {
            return Err(Error::Config(format!("GP noise = {} must be positive", self.gp_noise)));
        }
        if !self.ncd_gate.is_finite() {
            return Err(Error::Config("NCD gate must be finite".into()));
        }
        Ok(())
    }
}

/// Boxes of every trajectory, grouped by frame, for the interpolation gate.
pub type FrameIndex = BTreeMap<u32, Vec<(u32, Box3D)>>;

pub fn frame_index(set: &TrajectorySet) -> FrameIndex {
    let mut idx: FrameIndex = BTreeMap::new();
    for t in &set.trajectories {
        for o in &t.observations {
            idx.entry(o.frame).or_default().push((t.id, o.bbox));
        }
    }
    idx
}

fn lerp_box(a: &Box3D, b: &Box3D, s: f64) -> Result<Box3D> {
    let center = a.center() + (b.center() - a.center()) * s;
    let yaw = a.yaw() + wrap_angle(b.yaw() - a.yaw()) * s;
    let conf = a.confidence() + (b.confidence() - a.confidence()) * s;
    Box3D::new(center, a.size(), yaw, conf.clamp(0.0, 1.0))
}

/// Fills internal gaps of at most `interp_window` frames by linear
/// interpolation, skipping inserted boxes that come too close to a box of
/// another trajectory in `index`.
pub fn interpolate_gaps(traj: &Trajectory, index: &FrameIndex, cfg: &RefineConfig) -> Result<Trajectory> {
    let mut out = Vec::with_capacity(traj.len());
    for w in traj.observations.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        out.push(a.clone());
        let gap = b.frame - a.frame - 1;
        if gap == 0 || gap > cfg.interp_window {
            continue;
        }
        for f in a.frame + 1..b.frame {
            let s = (f - a.frame) as f64 / (b.frame - a.frame) as f64;
            let bbox = lerp_box(&a.bbox, &b.bbox, s)?;
            let blocked = index
                .get(&f)
                .is_some_and(|others| others.iter().any(|(id, o)| *id != traj.id && ncd(&bbox, o) > cfg.ncd_gate));
            if !blocked {
                out.push(Observation {
                    frame: f,
                    det: None,
                    bbox,
                    interpolated: true,
                });
            }
        }
    }
    out.extend(traj.observations.last().cloned());
    Ok(Trajectory::new(traj.id, out))
}

/// Confidence-weighted mean size over detected (non-interpolated) boxes,
/// falling back to the unweighted mean when all weights are zero.
pub fn averaged_size(traj: &Trajectory) -> Option<Vector3<f64>> {
    let detected: Vec<&Observation> = traj.observations.iter().filter(|o| !o.interpolated).collect();
    let pool = if detected.is_empty() { traj.observations.iter().collect() } else { detected };
    if pool.is_empty() {
        return None;
    }
    let wsum: f64 = pool.iter().map(|o| o.bbox.confidence()).sum();
    if wsum > 0.0 {
        Some(pool.iter().map(|o| o.bbox.size() * o.bbox.confidence()).sum::<Vector3<f64>>() / wsum)
    } else {
        Some(pool.iter().map(|o| o.bbox.size()).sum::<Vector3<f64>>() / pool.len() as f64)
    }
}

pub fn average_size(traj: &Trajectory) -> Trajectory {
    let Some(size) = averaged_size(traj) else {
        return traj.clone();
    };
    let observations = traj
        .observations
        .iter()
        .map(|o| Observation {
            bbox: o.bbox.with_size(size),
            ..o.clone()
        })
        .collect();
    Trajectory {
        id: traj.id,
        observations,
    }
}

/// Replaces positions by the GP posterior mean over frame indices, one
/// coordinate at a time. Yaw, size and confidence are left alone.
pub fn gp_smooth(traj: &Trajectory, cfg: &RefineConfig) -> Result<Trajectory> {
    if traj.len() < 2 {
        return Ok(traj.clone());
    }
    let t: Vec<f64> = traj.observations.iter().map(|o| o.frame as f64).collect();
    let sigma = adaptive_sigma(traj.len(), cfg.gp_tau);
    let mut coords = Vec::with_capacity(3);
    for axis in 0..3 {
        let y: Vec<f64> = traj.observations.iter().map(|o| o.bbox.center()[axis]).collect();
        coords.push(gp_posterior_mean(&t, &y, sigma, cfg.gp_noise)?);
    }
    let observations = traj
        .observations
        .iter()
        .enumerate()
        .map(|(k, o)| Observation {
            bbox: o.bbox.with_center(Vector3::new(coords[0][k], coords[1][k], coords[2][k])),
            ..o.clone()
        })
        .collect();
    Ok(Trajectory {
        id: traj.id,
        observations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineWarning {
    pub trajectory: u32,
    pub message: String,
}

fn refine_one(traj: &Trajectory, index: &FrameIndex, cfg: &RefineConfig) -> Result<(Trajectory, Option<RefineWarning>)> {
    let mut t = if cfg.interpolate {
        interpolate_gaps(traj, index, cfg)?
    } else {
        traj.clone()
    };
    if cfg.size_average {
        t = average_size(&t);
    }
    let mut warning = None;
    if cfg.gp {
        match gp_smooth(&t, cfg) {
            Ok(s) => t = s,
            Err(e) => {
                warning = Some(RefineWarning {
                    trajectory: traj.id,
                    message: format!("GP smoothing skipped, positions kept: {e}"),
                })
            }
        }
    }
    Ok((t, warning))
}

/// Refines every trajectory independently. Ids, order and detected
/// observations are preserved; GP failures become warnings.
pub fn refine(set: &TrajectorySet, cfg: &RefineConfig) -> Result<(TrajectorySet, Vec<RefineWarning>)> {
    cfg.validate()?;
    check_frame_exclusivity(set)?;
    let index = frame_index(set);
    let results = set
        .trajectories
        .par_iter()
        .map(|t| refine_one(t, &index, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    let mut trajectories = Vec::with_capacity(results.len());
    for (t, w) in results {
        trajectories.push(t);
        warnings.extend(w);
    }
    Ok((TrajectorySet { trajectories }, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::DetKey;

    fn ob(frame: u32, x: f64, conf: f64) -> Observation {
        let b = Box3D::new(Vector3::new(x, 0.0, 0.0), Vector3::new(4.0, 2.0, 1.5), 0.0, conf).unwrap();
        Observation::detected(DetKey::new(frame, 0), b)
    }

    #[test]
    fn midpoint_is_inserted() {
        let t = Trajectory::new(1, vec![ob(10, 0.0, 0.8), ob(12, 2.0, 0.6)]);
        let out = interpolate_gaps(&t, &FrameIndex::new(), &RefineConfig::default()).unwrap();
        assert_eq!(out.len(), 3);
        let mid = &out.observations[1];
        assert!(mid.interpolated && mid.det.is_none());
        assert_eq!(mid.bbox.center(), Vector3::new(1.0, 0.0, 0.0));
        assert!((mid.bbox.confidence() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn long_gap_is_left_open() {
        let t = Trajectory::new(1, vec![ob(0, 0.0, 0.8), ob(6, 6.0, 0.8)]);
        assert_eq!(interpolate_gaps(&t, &FrameIndex::new(), &RefineConfig::default()).unwrap().len(), 2);
    }

    #[test]
    fn yaw_takes_short_arc() {
        let mut a = ob(0, 0.0, 1.0);
        let mut b = ob(2, 0.0, 1.0);
        a.bbox = a.bbox.with_yaw(3.0);
        b.bbox = b.bbox.with_yaw(-3.0);
        let out = interpolate_gaps(&Trajectory::new(1, vec![a, b]), &FrameIndex::new(), &RefineConfig::default()).unwrap();
        assert!(out.observations[1].bbox.yaw().abs() > 3.0);
    }

    #[test]
    fn weighted_size() {
        let mut a = ob(0, 0.0, 0.9);
        let mut b = ob(1, 1.0, 0.1);
        a.bbox = a.bbox.with_size(Vector3::new(4.0, 2.0, 1.5));
        b.bbox = b.bbox.with_size(Vector3::new(5.0, 2.0, 1.5));
        let t = average_size(&Trajectory::new(1, vec![a, b]));
        assert!((t.observations[0].bbox.size().x - 4.1).abs() < 1e-12);
        assert_eq!(t.observations[0].bbox.size(), t.observations[1].bbox.size());
    }

    #[test]
    fn zero_confidences_fall_back_to_plain_mean() {
        let mut a = ob(0, 0.0, 0.0);
        let mut b = ob(1, 1.0, 0.0);
        a.bbox = a.bbox.with_size(Vector3::new(4.0, 2.0, 1.5));
        b.bbox = b.bbox.with_size(Vector3::new(5.0, 2.0, 1.5));
        let s = averaged_size(&Trajectory::new(1, vec![a, b])).unwrap();
        assert!((s.x - 4.5).abs() < 1e-12);
    }

    #[test]
    fn refine_keeps_ids_and_count() {
        let set = TrajectorySet::new(vec![
            Trajectory::new(3, (0..10).map(|f| ob(f, f as f64, 0.9)).collect()),
            Trajectory::new(8, vec![ob(0, 50.0, 0.9)]),
        ]);
        let (out, warnings) = refine(&set, &RefineConfig::default()).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(out.trajectories.iter().map(|t| t.id).collect::<Vec<_>>(), vec![3, 8]);
        assert_eq!(out.observation_count(), 11);
    }
}
