//! Readers and writers for the KITTI tracking layout and the internal JSON
//! files.

mod json;
mod kitti;
mod masks;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub use json::{
    read_scenario_json, read_trajectories_json, scenario_from_str, scenario_to_string, trajectories_from_str,
    trajectories_to_string, write_scenario_json, write_trajectories_json, TrajectoryFile, SCENARIO_SCHEMA,
    TRAJECTORIES_SCHEMA,
};
pub use kitti::{
    box_to_camera, format_tracking, label_to_box, parse_labels, parse_velodyne, project_bbox2d, read_labels,
    read_velodyne, write_kitti_tracking, write_velodyne, KittiCalib, KittiLabelRow, KittiPaths, KITTI_IMAGE_SIZE,
};
pub use masks::{read_instance_png, write_instance_png};

use crate::error::{Error, Result};
use crate::scenario::{Detection, FrameData, ScenarioBundle};
use crate::trajectory::{Observation, Trajectory, TrajectorySet};

/// Frame numbers of the `FFFFFF.<ext>` files in `dir`, ascending.
fn numbered_files(dir: &Path, ext: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        if let Some(n) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u32>().ok()) {
            out.push(n);
        }
    }
    out.sort_unstable();
    Ok(out)
}

fn frame_file(dir: &Path, frame: u32, ext: &str) -> std::path::PathBuf {
    dir.join(format!("{frame:06}.{ext}"))
}

/// Reads one sequence into a bundle. Only rows whose type is in
/// `paths.classes` are kept; `DontCare` rows are always skipped.
pub fn read_kitti_sequence(sequence: &str, paths: &KittiPaths) -> Result<ScenarioBundle> {
    let camera = KittiCalib::read(&paths.calib)?.camera(paths.image_size)?;
    let keep = |r: &KittiLabelRow| r.kind != "DontCare" && paths.classes.iter().any(|c| *c == r.kind);

    let det_rows: Vec<KittiLabelRow> = match &paths.detections {
        Some(p) => read_labels(p)?.into_iter().filter(keep).collect(),
        None => Vec::new(),
    };
    let gt_rows: Option<Vec<KittiLabelRow>> = match &paths.ground_truth {
        Some(p) => Some(read_labels(p)?.into_iter().filter(keep).collect()),
        None => None,
    };
    let scans = match &paths.velodyne {
        Some(d) => numbered_files(d, "bin")?,
        None => Vec::new(),
    };
    let pngs = match &paths.instances {
        Some(d) => numbered_files(d, "png")?,
        None => Vec::new(),
    };

    let last = det_rows
        .iter()
        .chain(gt_rows.iter().flatten())
        .map(|r| r.frame)
        .chain(scans.iter().copied())
        .chain(pngs.iter().copied())
        .max();
    let num_frames = last.map_or(0, |f| f as usize + 1);

    let mut frames: Vec<FrameData> = (0..num_frames as u32).map(FrameData::empty).collect();
    for row in &det_rows {
        let f = &mut frames[row.frame as usize];
        let index = f.detections.len() as u32;
        f.detections.push(Detection {
            index,
            bbox: label_to_box(row, &camera)?,
            admission: None,
        });
    }
    if let Some(dir) = &paths.velodyne {
        for &n in &scans {
            frames[n as usize].cloud = Some(read_velodyne(&frame_file(dir, n, "bin"))?);
        }
    }
    if let Some(dir) = &paths.instances {
        for &n in &pngs {
            let path = frame_file(dir, n, "png");
            let (size, masks) = read_instance_png(&path)?;
            if size != camera.image_size() {
                return Err(Error::Config(format!(
                    "{}: label image is {}x{}, camera expects {}x{}",
                    path.display(),
                    size.0,
                    size.1,
                    camera.image_size().0,
                    camera.image_size().1
                )));
            }
            frames[n as usize].masks = masks;
        }
    }

    let ground_truth = match gt_rows {
        Some(rows) => {
            let mut by_id: BTreeMap<i64, Vec<Observation>> = BTreeMap::new();
            for row in &rows {
                if row.track_id < 0 {
                    continue;
                }
                by_id.entry(row.track_id).or_default().push(Observation {
                    frame: row.frame,
                    det: None,
                    bbox: label_to_box(row, &camera)?,
                    interpolated: false,
                });
            }
            Some(TrajectorySet::new(
                by_id
                    .into_iter()
                    .map(|(id, obs)| Trajectory::new(id as u32, obs))
                    .collect(),
            ))
        }
        None => None,
    };

    let bundle = ScenarioBundle {
        sequence: sequence.to_string(),
        camera,
        frames,
        ground_truth,
    };
    bundle.validate()?;
    Ok(bundle)
}
