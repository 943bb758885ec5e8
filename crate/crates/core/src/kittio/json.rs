//! Internal JSON files. Every file is an object whose `schema` field names
//! its layout and version; readers reject any other tag.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ScenarioBundle;
use crate::trajectory::TrajectorySet;

pub const SCENARIO_SCHEMA: &str = "omot.scenario/1";
pub const TRAJECTORIES_SCHEMA: &str = "omot.trajectories/1";

#[derive(Deserialize)]
struct Tag {
    schema: String,
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    schema: String,
    #[serde(flatten)]
    bundle: ScenarioBundle,
}

#[derive(Serialize)]
struct ScenarioFileRef<'a> {
    schema: &'a str,
    #[serde(flatten)]
    bundle: &'a ScenarioBundle,
}

/// A trajectory set together with the sequence it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub sequence: String,
    #[serde(flatten)]
    pub set: TrajectorySet,
}

#[derive(Serialize)]
struct TrajectoryFileRef<'a> {
    schema: &'a str,
    sequence: &'a str,
    #[serde(flatten)]
    set: &'a TrajectorySet,
}

#[derive(Deserialize)]
struct TrajectoryFileOwned {
    #[allow(dead_code)]
    schema: String,
    #[serde(flatten)]
    file: TrajectoryFile,
}

fn check_tag(text: &str, expected: &str) -> Result<()> {
    let tag: Tag = serde_json::from_str(text)?;
    if tag.schema != expected {
        return Err(Error::Schema {
            expected: expected.to_string(),
            found: tag.schema,
        });
    }
    Ok(())
}

pub fn scenario_to_string(bundle: &ScenarioBundle) -> Result<String> {
    let mut s = serde_json::to_string(&ScenarioFileRef {
        schema: SCENARIO_SCHEMA,
        bundle,
    })?;
    s.push('\n');
    Ok(s)
}

pub fn scenario_from_str(text: &str) -> Result<ScenarioBundle> {
    check_tag(text, SCENARIO_SCHEMA)?;
    let file: ScenarioFile = serde_json::from_str(text)?;
    file.bundle.validate()?;
    Ok(file.bundle)
}

pub fn trajectories_to_string(sequence: &str, set: &TrajectorySet) -> Result<String> {
    let mut s = serde_json::to_string(&TrajectoryFileRef {
        schema: TRAJECTORIES_SCHEMA,
        sequence,
        set,
    })?;
    s.push('\n');
    Ok(s)
}

pub fn trajectories_from_str(text: &str) -> Result<TrajectoryFile> {
    check_tag(text, TRAJECTORIES_SCHEMA)?;
    let file: TrajectoryFileOwned = serde_json::from_str(text)?;
    Ok(file.file)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_scenario_json(bundle: &ScenarioBundle, path: &Path) -> Result<()> {
    write_text(path, &scenario_to_string(bundle)?)
}

pub fn read_scenario_json(path: &Path) -> Result<ScenarioBundle> {
    scenario_from_str(&read_text(path)?)
}

pub fn write_trajectories_json(sequence: &str, set: &TrajectorySet, path: &Path) -> Result<()> {
    write_text(path, &trajectories_to_string(sequence, set)?)
}

pub fn read_trajectories_json(path: &Path) -> Result<TrajectoryFile> {
    trajectories_from_str(&read_text(path)?)
}
