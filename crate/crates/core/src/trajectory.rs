//! Trajectories, object links, and the frame-exclusivity check.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom3d::Box3D;

/// Identity of a detection: its frame and its index within that frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DetKey {
    pub frame: u32,
    pub index: u32,
}

impl DetKey {
    pub fn new(frame: u32, index: u32) -> Self {
        Self { frame, index }
    }
}

impl fmt::Display for DetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.frame, self.index)
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame: u32,
    /// Index of the source detection within its frame; `None` for boxes that
    /// were not detected (interpolated boxes, ground truth).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub det: Option<u32>,
    #[serde(rename = "box")]
    pub bbox: Box3D,
    #[serde(default, skip_serializing_if = "is_false")]
    pub interpolated: bool,
}

impl Observation {
    pub fn detected(key: DetKey, bbox: Box3D) -> Self {
        Self {
            frame: key.frame,
            det: Some(key.index),
            bbox,
            interpolated: false,
        }
    }

    pub fn key(&self) -> Option<DetKey> {
        self.det.map(|index| DetKey::new(self.frame, index))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectLink {
    pub trajectory: u32,
    pub from: DetKey,
    pub to: DetKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u32,
    /// Sorted by frame.
    pub observations: Vec<Observation>,
}

impl Trajectory {
    pub fn new(id: u32, mut observations: Vec<Observation>) -> Self {
        observations.sort_by_key(|o| o.frame);
        Self { id, observations }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn first_frame(&self) -> Option<u32> {
        self.observations.first().map(|o| o.frame)
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.observations.last().map(|o| o.frame)
    }

    /// Links between consecutive detected observations.
    pub fn links(&self) -> impl Iterator<Item = ObjectLink> + '_ {
        self.observations.windows(2).filter_map(move |w| {
            Some(ObjectLink {
                trajectory: self.id,
                from: w[0].key()?,
                to: w[1].key()?,
            })
        })
    }

    pub fn at_frame(&self, frame: u32) -> Option<&Observation> {
        self.observations
            .binary_search_by_key(&frame, |o| o.frame)
            .ok()
            .map(|i| &self.observations[i])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub trajectories: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn new(mut trajectories: Vec<Trajectory>) -> Self {
        trajectories.sort_by_key(|t| t.id);
        Self { trajectories }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn observation_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn get(&self, id: u32) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.id == id)
    }

    pub fn links(&self) -> impl Iterator<Item = ObjectLink> + '_ {
        self.trajectories.iter().flat_map(Trajectory::links)
    }

    /// `(trajectory id, observation)` pairs grouped by frame.
    pub fn by_frame(&self) -> BTreeMap<u32, Vec<(u32, &Observation)>> {
        let mut out: BTreeMap<u32, Vec<(u32, &Observation)>> = BTreeMap::new();
        for t in &self.trajectories {
            for o in &t.observations {
                out.entry(o.frame).or_default().push((t.id, o));
            }
        }
        out
    }

    /// Renumbers trajectories `1..=n` in their current order.
    pub fn relabeled(mut self) -> Self {
        for (k, t) in self.trajectories.iter_mut().enumerate() {
            t.id = k as u32 + 1;
        }
        self
    }
}

/// A trajectory holding two boxes at one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExclusivityViolation {
    pub trajectory: u32,
    pub frame: u32,
}

/// Every violation of "no trajectory holds two boxes at the same frame",
/// plus duplicated trajectory ids (reported with `frame = u32::MAX`).
pub fn frame_exclusivity_violations(set: &TrajectorySet) -> Vec<ExclusivityViolation> {
    let mut out = Vec::new();
    let mut seen_ids = std::collections::BTreeSet::new();
    for t in &set.trajectories {
        if !seen_ids.insert(t.id) {
            out.push(ExclusivityViolation {
                trajectory: t.id,
                frame: u32::MAX,
            });
        }
        let mut frames: Vec<u32> = t.observations.iter().map(|o| o.frame).collect();
        frames.sort_unstable();
        for w in frames.windows(2) {
            if w[0] == w[1] {
                out.push(ExclusivityViolation {
                    trajectory: t.id,
                    frame: w[0],
                });
            }
        }
    }
    out
}

pub fn check_frame_exclusivity(set: &TrajectorySet) -> Result<()> {
    match frame_exclusivity_violations(set).first() {
        None => Ok(()),
        Some(v) if v.frame == u32::MAX => Err(Error::invalid(format!("duplicate trajectory id {}", v.trajectory))),
        Some(v) => Err(Error::invalid(format!(
            "trajectory {} holds more than one box at frame {}",
            v.trajectory, v.frame
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn obs(frame: u32, det: Option<u32>) -> Observation {
        Observation {
            frame,
            det,
            bbox: Box3D::new(Vector3::new(frame as f64, 0.0, 0.0), Vector3::new(4.0, 2.0, 1.5), 0.0, 0.9).unwrap(),
            interpolated: det.is_none(),
        }
    }

    #[test]
    fn links_skip_undetected_observations() {
        let t = Trajectory::new(3, vec![obs(2, Some(0)), obs(0, Some(1)), obs(1, None), obs(3, Some(4))]);
        let links: Vec<_> = t.links().collect();
        assert_eq!(links.len(), 1);
        assert_eq!(links[0].from, DetKey::new(2, 0));
        assert_eq!(links[0].to, DetKey::new(3, 4));
    }

    #[test]
    fn detects_duplicate_frames_and_ids() {
        let ok = TrajectorySet::new(vec![Trajectory::new(1, vec![obs(0, Some(0)), obs(1, Some(0))])]);
        assert!(check_frame_exclusivity(&ok).is_ok());

        let bad = TrajectorySet::new(vec![Trajectory::new(1, vec![obs(0, Some(0)), obs(0, Some(1))])]);
        assert_eq!(
            frame_exclusivity_violations(&bad),
            vec![ExclusivityViolation { trajectory: 1, frame: 0 }]
        );

        let dup = TrajectorySet::new(vec![
            Trajectory::new(1, vec![obs(0, Some(0))]),
            Trajectory::new(1, vec![obs(1, Some(0))]),
        ]);
        assert!(check_frame_exclusivity(&dup).is_err());
    }
}
