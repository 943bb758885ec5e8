//! Point-level registration between 2D instance masks and 3D boxes.
//!
//! Each box crops the LiDAR points it contains, the crop is projected into
//! the image and snapped to pixels, and the number of distinct pixels that
//! land on each mask becomes the box-mask score. Boxes and masks are paired by
//! a maximum-weight assignment, and a box survives selection when it is
//! confident on its own or when its assigned mask overlaps it by more than the
//! overlap threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assign::{solve_max_assignment, ScoreMatrix};
use crate::error::{Error, Result};
use crate::geom3d::{points_in_box, project_points, Box3D, CameraModel, PointCloud};
use crate::scenario::{Detection, FrameData, ScenarioBundle};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskShape {
    /// Alternating background / foreground run lengths over the row-major
    /// raster, starting with a (possibly empty) background run.
    Rle { counts: Vec<u32> },
    /// Explicit `[column, row]` pixels.
    Pixels { pixels: Vec<[u32; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMask {
    pub id: u32,
    pub shape: MaskShape,
    /// Carried through but not used by the selection rule.
    pub confidence: f64,
}

impl InstanceMask {
    /// Encodes a set of row-major linear pixel indices as a run-length mask.
    pub fn from_linear(id: u32, linear: &[u32], confidence: f64) -> Self {
        let mut sorted = linear.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut counts = Vec::new();
        let mut cursor = 0u64;
        let mut i = 0;
        while i < sorted.len() {
            let start = sorted[i] as u64;
            let mut end = start + 1;
            i += 1;
            while i < sorted.len() && sorted[i] as u64 == end {
                end += 1;
                i += 1;
            }
            counts.push((start - cursor) as u32);
            counts.push((end - start) as u32);
            cursor = end;
        }
        Self {
            id,
            shape: MaskShape::Rle { counts },
            confidence,
        }
    }

    /// Sorted, deduplicated row-major pixel indices; errors if any pixel falls
    /// outside a `width x height` image.
    pub fn linear_pixels(&self, image_size: (u32, u32)) -> Result<Vec<u32>> {
        let (w, h) = image_size;
        let area = w as u64 * h as u64;
        let mut out = match &self.shape {
            MaskShape::Rle { counts } => {
                let total: u64 = counts.iter().map(|&c| c as u64).sum();
                if total > area {
                    return Err(Error::Config(format!(
                        "mask {}: run lengths cover {total} pixels, image has {area}",
                        self.id
                    )));
                }
                let mut out = Vec::new();
                let mut cursor = 0u32;
                for (k, &run) in counts.iter().enumerate() {
                    if k % 2 == 1 {
                        out.extend(cursor..cursor + run);
                    }
                    cursor += run;
                }
                out
            }
            MaskShape::Pixels { pixels } => {
                let mut out = Vec::with_capacity(pixels.len());
                for &[u, v] in pixels {
                    if u >= w || v >= h {
                        return Err(Error::Config(format!(
                            "mask {}: pixel ({u}, {v}) outside {w}x{h} image",
                            self.id
                        )));
                    }
                    out.push(v * w + u);
                }
                out
            }
        };
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Boxes at or above this confidence are kept unconditionally.
    pub det_confidence_threshold: f64,
    /// Assigned masks must overlap a box by strictly more pixels than this.
    pub overlap_threshold: u32,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            det_confidence_threshold: 0.85,
            overlap_threshold: 0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.det_confidence_threshold) {
            return Err(Error::Config(format!(
                "detection confidence threshold {} outside [0, 1]",
                self.det_confidence_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admission {
    Confidence,
    Overlap,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionDecision {
    /// Position of the box in the input list.
    pub index: usize,
    pub admission: Option<Admission>,
    /// Position of the assigned mask in the input list.
    pub mask: Option<usize>,
    /// Distinct-pixel overlap with the assigned mask (0 when unassigned).
    pub overlap: u32,
}

impl FusionDecision {
    pub fn kept(&self) -> bool {
        self.admission.is_some()
    }
}

fn intersection_count(a: &[u32], b: &[u32]) -> u32 {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Box-by-mask matrix of distinct projected pixels lying on each mask.
/// Zero-overlap pairs are forbidden so they can never be assigned.
pub fn mask_point_overlap(
    masks: &[InstanceMask],
    projected: &[Vec<[u32; 2]>],
    image_size: (u32, u32),
) -> Result<ScoreMatrix> {
    let mask_pixels = masks
        .iter()
        .map(|m| m.linear_pixels(image_size))
        .collect::<Result<Vec<_>>>()?;
    let box_pixels: Vec<Vec<u32>> = projected
        .iter()
        .map(|px| {
            let mut lin: Vec<u32> = px.iter().map(|&[u, v]| v * image_size.0 + u).collect();
            lin.sort_unstable();
            lin.dedup();
            lin
        })
        .collect();
    Ok(overlap_matrix(&box_pixels, &mask_pixels))
}

fn overlap_matrix(box_pixels: &[Vec<u32>], mask_pixels: &[Vec<u32>]) -> ScoreMatrix {
    let mut m = ScoreMatrix::new(box_pixels.len(), mask_pixels.len());
    for (i, bp) in box_pixels.iter().enumerate() {
        for (j, mp) in mask_pixels.iter().enumerate() {
            let n = intersection_count(bp, mp);
            m.set(i, j, n as f64);
            if n == 0 {
                m.forbid(i, j);
            }
        }
    }
    m
}

/// Projected, pixel-aligned LiDAR support of each box.
pub fn box_pixels(dets: &[Box3D], cloud: Option<&PointCloud>, cam: &CameraModel) -> Vec<Vec<[u32; 2]>> {
    let Some(cloud) = cloud else {
        return vec![Vec::new(); dets.len()];
    };
    dets.iter()
        .map(|b| {
            let crop: Vec<_> = points_in_box(cloud, b).into_iter().map(|i| cloud.points()[i]).collect();
            project_points(&crop, cam).into_iter().map(|p| p.pixel).collect()
        })
        .collect()
}

/// Runs crop, project, align, score, assign and select for one frame.
/// Returns one decision per input box, in input order.
pub fn fuse(
    dets: &[Box3D],
    masks: &[InstanceMask],
    cloud: Option<&PointCloud>,
    cam: &CameraModel,
    cfg: &FusionConfig,
) -> Result<Vec<FusionDecision>> {
    cfg.validate()?;
    let image_size = cam.image_size();
    let mask_pixels = masks
        .iter()
        .map(|m| m.linear_pixels(image_size))
        .collect::<Result<Vec<_>>>()?;

    let mut decisions: Vec<FusionDecision> = dets
        .iter()
        .enumerate()
        .map(|(index, _)| FusionDecision {
            index,
            admission: None,
            mask: None,
            overlap: 0,
        })
        .collect();

    if !masks.is_empty() && cloud.is_some() {
        let projected = box_pixels(dets, cloud, cam);
        let box_lin: Vec<Vec<u32>> = projected
            .iter()
            .map(|px| {
                let mut lin: Vec<u32> = px.iter().map(|&[u, v]| v * image_size.0 + u).collect();
                lin.sort_unstable();
                lin.dedup();
                lin
            })
            .collect();
        let scores = overlap_matrix(&box_lin, &mask_pixels);
        let assignment = solve_max_assignment(&scores)?;
        for &(i, j) in &assignment.pairs {
            decisions[i].mask = Some(j);
            decisions[i].overlap = scores.get(i, j) as u32;
        }
    }

    for (d, b) in decisions.iter_mut().zip(dets) {
        let by_conf = b.confidence() >= cfg.det_confidence_threshold;
        let by_overlap = d.mask.is_some() && d.overlap > cfg.overlap_threshold;
        d.admission = match (by_conf, by_overlap) {
            (true, true) => Some(Admission::Both),
            (true, false) => Some(Admission::Confidence),
            (false, true) => Some(Admission::Overlap),
            (false, false) => None,
        };
    }
    Ok(decisions)
}

fn fuse_frame(frame: &FrameData, cam: &CameraModel, cfg: &FusionConfig) -> Result<FrameData> {
    let boxes: Vec<Box3D> = frame.detections.iter().map(|d| d.bbox).collect();
    let decisions = fuse(&boxes, &frame.masks, frame.cloud.as_ref(), cam, cfg)?;
    let detections = frame
        .detections
        .iter()
        .zip(&decisions)
        .filter_map(|(det, dec)| {
            dec.admission.map(|a| Detection {
                admission: Some(a),
                ..det.clone()
            })
        })
        .collect();
    Ok(FrameData {
        frame: frame.frame,
        detections,
        masks: Vec::new(),
        cloud: None,
    })
}

/// Fuses every frame of a sequence in parallel. The result keeps only the
/// selected detections (with their original keys) and drops masks and clouds.
pub fn fuse_bundle(bundle: &ScenarioBundle, cfg: &FusionConfig) -> Result<ScenarioBundle> {
    bundle.validate()?;
    let frames = bundle
        .frames
        .par_iter()
        .map(|f| fuse_frame(f, &bundle.camera, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioBundle {
        sequence: bundle.sequence.clone(),
        camera: bundle.camera.clone(),
        frames,
        ground_truth: bundle.ground_truth.clone(),
    })
}
