//! Tracking-by-detection with a Kalman filter and NCD association.
//!
//! Unmatched detections are born as candidates. A candidate becomes a
//! confirmed track once it has collected `theta_hit` hits and was matched in
//! the current frame; at that point its earlier observations are released
//! under the new id, so trajectories start at the first sighting. Candidates
//! and confirmed tracks die after different numbers of consecutive misses.
//! The first match after birth re-initializes the velocity from the observed
//! displacement.

mod kalman;
mod ncd;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use kalman::{KalmanState, NoiseModel, StateMatrix, StateVector};
pub use ncd::ncd;

use crate::assign::{solve_max_assignment, Assignment, ScoreMatrix};
use crate::error::{Error, Result};
use crate::geom3d::Box3D;
use crate::scenario::{Detection, FrameData, ScenarioBundle};
use crate::trajectory::{DetKey, Observation, Trajectory, TrajectorySet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Minimum NCD for a detection-prediction pair to count as a hit.
    pub beta: f64,
    pub theta_hit: u32,
    pub theta_miss_candidate: u32,
    pub theta_miss_confirmed: u32,
    pub p0: f64,
    pub q: f64,
    pub r: f64,
    pub direction: Direction,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            theta_hit: 6,
            theta_miss_candidate: 5,
            theta_miss_confirmed: 28,
            p0: 10.0,
            q: 2.0,
            r: 1.0,
            direction: Direction::Forward,
        }
    }
}

impl TrackerConfig {
    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            p0: self.p0,
            q: self.q,
            r: self.r,
        }
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || self.beta > 1.0 {
            return Err(Error::Config(format!("similarity threshold {} must be finite and at most 1", self.beta)));
        }
        if self.theta_miss_candidate == 0 || self.theta_miss_confirmed == 0 {
            return Err(Error::Config("miss thresholds must be at least 1".into()));
        }
        for (name, v) in [("p0", self.p0), ("q", self.q), ("r", self.r)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be finite and nonnegative")));
            }
        }
        if self.p0 == 0.0 && self.r == 0.0 {
            return Err(Error::Config("p0 and r cannot both be zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Candidate,
    Confirmed,
    Dead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    /// Creation order within the run.
    pub serial: u32,
    /// Assigned at confirmation, in confirmation order starting at 1.
    pub id: Option<u32>,
    pub state: KalmanState,
    pub n_hit: u32,
    pub n_miss: u32,
    pub status: TrackStatus,
    /// Matched observations in run order, including the candidate phase.
    pub history: Vec<(DetKey, Box3D)>,
    birth_frame: u32,
    birth_center: nalgebra::Vector3<f64>,
    reinitialized: bool,
    confidence: f64,
}

impl Track {
    fn birth(serial: u32, key: DetKey, det: &Box3D, noise: &NoiseModel) -> Self {
        Self {
            serial,
            id: None,
            state: KalmanState::from_box(det, noise),
            n_hit: 1,
            n_miss: 0,
            status: TrackStatus::Candidate,
            history: vec![(key, *det)],
            birth_frame: key.frame,
            birth_center: det.center(),
            reinitialized: false,
            confidence: det.confidence(),
        }
    }

    /// The box the filter currently believes in.
    pub fn predicted_box(&self) -> Result<Box3D> {
        self.state.to_box(self.confidence)
    }

    fn to_trajectory(&self) -> Option<Trajectory> {
        let id = self.id?;
        Some(Trajectory::new(
            id,
            self.history.iter().map(|(k, b)| Observation::detected(*k, *b)).collect(),
        ))
    }
}

/// The observations released under a confirmed id: the pre-confirmation
/// history when the track has just been confirmed, stamped with its id.
pub fn recover_tracklet(track: &Track) -> Vec<(u32, DetKey, Box3D)> {
    match track.id {
        Some(id) => track.history.iter().map(|(k, b)| (id, *k, *b)).collect(),
        None => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    /// Rows are detections, columns are tracks.
    pub scores: ScoreMatrix,
    pub assignment: Assignment,
}

/// Scores every detection against every prediction by NCD, forbids pairs
/// below `beta`, and solves the maximum-weight assignment.
pub fn associate(dets: &[Box3D], predictions: &[Box3D], beta: f64) -> Result<Association> {
    let mut scores = ScoreMatrix::new(dets.len(), predictions.len());
    for (i, d) in dets.iter().enumerate() {
        for (j, p) in predictions.iter().enumerate() {
            let s = ncd(d, p);
            if s < beta || s < 0.0 {
                scores.set(i, j, s.max(0.0));
                scores.forbid(i, j);
            } else {
                scores.set(i, j, s);
            }
        }
    }
    let assignment = solve_max_assignment(&scores)?;
    Ok(Association { scores, assignment })
}

/// An observation released by [`Tracker::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub id: u32,
    pub key: DetKey,
    pub bbox: Box3D,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    noise: NoiseModel,
    live: Vec<Track>,
    retired: Vec<Track>,
    next_serial: u32,
    next_id: u32,
    last_frame: Option<u32>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            noise: cfg.noise(),
            cfg,
            live: Vec::new(),
            retired: Vec::new(),
            next_serial: 0,
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Tracks that are still alive, in creation order.
    pub fn tracks(&self) -> &[Track] {
        &self.live
    }

    /// Advances one frame. Returns everything released at this frame: the
    /// current box of each matched confirmed track plus the recovered history
    /// of tracks confirmed at this frame.
    pub fn step(&mut self, frame: u32, dets: &[Detection]) -> Result<Vec<Emission>> {
        if let Some(last) = self.last_frame {
            let advances = match self.cfg.direction {
                Direction::Forward => frame > last,
                Direction::Backward => frame < last,
            };
            if !advances {
                return Err(Error::invalid(format!(
                    "{} run received frame {frame} after frame {last}",
                    self.cfg.direction
                )));
            }
        }
        let mut seen = HashSet::with_capacity(dets.len());
        for d in dets {
            if !seen.insert(d.index) {
                return Err(Error::invalid(format!("duplicate detection key {}", DetKey::new(frame, d.index))));
            }
        }
        self.last_frame = Some(frame);

        for t in &mut self.live {
            t.state = t.state.predict(&self.noise);
        }
        let predictions = self.live.iter().map(Track::predicted_box).collect::<Result<Vec<_>>>()?;
        let boxes: Vec<Box3D> = dets.iter().map(|d| d.bbox).collect();
        let assoc = associate(&boxes, &predictions, self.cfg.beta)?;

        let mut matched = vec![false; self.live.len()];
        for &(di, ti) in &assoc.assignment.pairs {
            let det = &dets[di];
            let key = DetKey::new(frame, det.index);
            let track = &mut self.live[ti];
            track.state = if track.reinitialized {
                track.state.update(&det.bbox, &self.noise)?
            } else {
                let elapsed = frame.abs_diff(track.birth_frame);
                track.reinitialized = true;
                track.state.reinit_velocity(&det.bbox, &track.birth_center, elapsed, &self.noise)?
            };
            track.n_hit += 1;
            track.n_miss = 0;
            track.confidence = det.bbox.confidence();
            track.history.push((key, det.bbox));
            matched[ti] = true;
        }
        for (t, m) in self.live.iter_mut().zip(&matched) {
            if !m {
                t.n_miss += 1;
            }
        }
        let mut fresh = vec![false; self.live.len()];
        for &di in &assoc.assignment.unmatched_rows {
            let det = &dets[di];
            self.live.push(Track::birth(self.next_serial, DetKey::new(frame, det.index), &det.bbox, &self.noise));
            self.next_serial += 1;
            fresh.push(true);
        }
        matched.resize(self.live.len(), false);

        let mut out = Vec::new();
        for (k, t) in self.live.iter_mut().enumerate() {
            let hit_now = matched[k] || fresh[k];
            match t.status {
                TrackStatus::Candidate if t.n_hit >= self.cfg.theta_hit && t.n_miss == 0 => {
                    t.status = TrackStatus::Confirmed;
                    t.id = Some(self.next_id);
                    self.next_id += 1;
                    out.extend(recover_tracklet(t).into_iter().map(|(id, key, bbox)| Emission { id, key, bbox }));
                }
                TrackStatus::Candidate if t.n_miss >= self.cfg.theta_miss_candidate => t.status = TrackStatus::Dead,
                TrackStatus::Confirmed if t.n_miss >= self.cfg.theta_miss_confirmed => t.status = TrackStatus::Dead,
                TrackStatus::Confirmed if hit_now => {
                    let (key, bbox) = *t.history.last().expect("matched track has history");
                    out.push(Emission {
                        id: t.id.expect("confirmed track has id"),
                        key,
                        bbox,
                    });
                }
                _ => {}
            }
        }

        let (dead, live): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.live).into_iter().partition(|t| t.status == TrackStatus::Dead);
        self.live = live;
        self.retired.extend(dead.into_iter().filter(|t| t.id.is_some()));
        Ok(out)
    }

    /// Trajectories of every track that was ever confirmed, in id order with
    /// observations in ascending frame order.
    pub fn finish(self) -> TrajectorySet {
        TrajectorySet::new(
            self.retired
                .iter()
                .chain(&self.live)
                .filter_map(Track::to_trajectory)
                .collect(),
        )
    }
}

/// Runs the tracker over `frames` in the configured direction.
pub fn run_frames(frames: &[FrameData], cfg: &TrackerConfig) -> Result<TrajectorySet> {
    let mut tracker = Tracker::new(*cfg)?;
    let order: Box<dyn Iterator<Item = &FrameData>> = match cfg.direction {
        Direction::Forward => Box::new(frames.iter()),
        Direction::Backward => Box::new(frames.iter().rev()),
    };
    for f in order {
        tracker.step(f.frame, &f.detections)?;
    }
    Ok(tracker.finish())
}

pub fn run_sequence(bundle: &ScenarioBundle, cfg: &TrackerConfig) -> Result<TrajectorySet> {
    bundle.validate()?;
    run_frames(&bundle.frames, cfg)
}
