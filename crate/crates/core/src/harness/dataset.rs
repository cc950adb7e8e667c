use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::grid::{Cell, GridSpec};
use crate::model::TrainingSample;
use crate::sim::{gen_trajectory, HumanTrajectory, SimConfig};

/// `count` trajectories with uniformly random target cells. Trajectory `i`
/// draws from its own stream, so a longer dataset extends a shorter one.
pub fn gen_dataset(
    count: usize,
    grid: &GridSpec,
    sim: &SimConfig,
    seed: u64,
) -> Result<Vec<HumanTrajectory>, HarnessError> {
    if count == 0 {
        return Err(HarnessError::EmptyDataset);
    }
    grid.validate()?;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let cell = Cell::new(rng.random_range(0..grid.n), rng.random_range(0..grid.m));
            Ok(gen_trajectory(
                &mut rng,
                grid,
                cell,
                sim,
                format!("traj-{i:05}"),
            )?)
        })
        .collect()
}

/// One JSON object per line.
pub fn dataset_to_string(trajectories: &[HumanTrajectory]) -> String {
    let mut out = String::new();
    for t in trajectories {
        out.push_str(&serde_json::to_string(t).expect("trajectories serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<Vec<HumanTrajectory>, HarnessError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| HarnessError::Json {
                line: i + 1,
                source,
            })
        })
        .collect()
}

pub fn write_dataset(
    path: impl AsRef<Path>,
    trajectories: &[HumanTrajectory],
) -> Result<(), HarnessError> {
    let path = path.as_ref();
    fs::write(path, dataset_to_string(trajectories)).map_err(|e| HarnessError::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<HumanTrajectory>, HarnessError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let data = parse_dataset(&text)?;
    if data.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    Ok(data)
}

/// Features are derived at load time; the file only holds raw frames.
pub fn training_samples(
    trajectories: &[HumanTrajectory],
) -> Result<Vec<TrainingSample>, HarnessError> {
    trajectories
        .iter()
        .map(|t| {
            Ok(TrainingSample {
                inputs: t.model_inputs()?,
                target: t.target_cell,
            })
        })
        .collect()
}
