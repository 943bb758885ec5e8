use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion2d3d::{Admission, InstanceMask};
use crate::geom3d::{Box3D, CameraModel, PointCloud};
use crate::trajectory::{DetKey, TrajectorySet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub index: u32,
    #[serde(rename = "box")]
    pub bbox: Box3D,
    /// Which selection rule kept this detection, once fusion has run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admission: Option<Admission>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameData {
    pub frame: u32,
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masks: Vec<InstanceMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud: Option<PointCloud>,
}

impl FrameData {
    pub fn empty(frame: u32) -> Self {
        Self {
            frame,
            ..Default::default()
        }
    }

    pub fn key(&self, det: &Detection) -> DetKey {
        DetKey::new(self.frame, det.index)
    }
}

/// A whole sequence: calibration, per-frame inputs, optional ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBundle {
    pub sequence: String,
    pub camera: CameraModel,
    /// One entry per frame, `frames[k].frame == k`.
    pub frames: Vec<FrameData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<TrajectorySet>,
}

impl ScenarioBundle {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn detection_count(&self) -> usize {
        self.frames.iter().map(|f| f.detections.len()).sum()
    }

    pub fn detection(&self, key: DetKey) -> Option<&Detection> {
        self.frames
            .get(key.frame as usize)?
            .detections
            .iter()
            .find(|d| d.index == key.index)
    }

    /// Checks frame numbering and per-frame key uniqueness.
    pub fn validate(&self) -> Result<()> {
        for (k, f) in self.frames.iter().enumerate() {
            if f.frame as usize != k {
                return Err(Error::invalid(format!(
                    "sequence {}: frame slot {k} holds frame {}",
                    self.sequence, f.frame
                )));
            }
            let mut idx: Vec<u32> = f.detections.iter().map(|d| d.index).collect();
            idx.sort_unstable();
            if let Some(w) = idx.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!(
                    "sequence {}: duplicate detection key {}",
                    self.sequence,
                    DetKey::new(f.frame, w[0])
                )));
            }
        }
        Ok(())
    }

    /// Clone without point clouds and masks.
    pub fn detections_only(&self) -> Self {
        Self {
            sequence: self.sequence.clone(),
            camera: self.camera.clone(),
            frames: self
                .frames
                .iter()
                .map(|f| FrameData {
                    frame: f.frame,
                    detections: f.detections.clone(),
                    masks: Vec::new(),
                    cloud: None,
                })
                .collect(),
            ground_truth: self.ground_truth.clone(),
        }
    }
}
