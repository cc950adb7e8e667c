//! Offline evaluation of an intent model on recorded trajectories.

use serde::{Deserialize, Serialize};

use crate::arbitration::{Arbiter, ArbitrationConfig, ArbitrationError};
use crate::grid::{Cell, GridSpec, Heatmap};
use crate::model::{IntentModel, ModelError};
use crate::sim::{HumanTrajectory, PredictionError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Arbitration(#[from] ArbitrationError),
    #[error("trajectory {0}: {1}")]
    Features(String, crate::geometry::GeometryError),
    #[error("no trajectories to evaluate")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEval {
    pub id: String,
    pub target_cell: Cell,
    pub steps: usize,
    /// Raw argmax at every step.
    pub argmax: Vec<Cell>,
    /// Whether the fused peak ever exceeded the execution limit.
    pub fired: bool,
    /// Last predictive goal at the end of the trajectory, or the final fused
    /// argmax when nothing fired.
    pub decision_cell: Cell,
    pub decision_error: PredictionError,
    /// Step and error of the first predictive launch.
    pub first_fire: Option<(usize, PredictionError)>,
    /// Raw argmax hits and step count over the last quarter of the reach.
    pub final_quarter_hits: usize,
    pub final_quarter_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub trajectories: usize,
    pub mean_decision_dx: f64,
    pub mean_decision_dy: f64,
    pub mean_decision_error_grids: f64,
    pub mean_decision_error_m: f64,
    pub mean_first_fire_error_grids: Option<f64>,
    pub fire_rate: f64,
    pub final_quarter_accuracy: f64,
    /// Mean Euclidean grid error of the raw argmax over all steps.
    pub mean_step_error_grids: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub trajectories: Vec<TrajectoryEval>,
}

/// Scores one trajectory's heatmap sequence the way the arbiter would act on it.
pub fn evaluate_predictions(
    id: &str,
    predictions: &[Heatmap],
    target: Cell,
    grid: &GridSpec,
    arbitration: &ArbitrationConfig,
) -> Result<TrajectoryEval, ArbitrationError> {
    let mut arbiter = Arbiter::new(*arbitration, *grid)?;
    let steps = predictions.len();
    let mut first_fire = None;
    let mut fused_argmax = Cell::new(0, 0);
    for (k, p) in predictions.iter().enumerate() {
        let d = arbiter.on_heatmap(p.clone(), k as f64);
        fused_argmax = arbiter.memory().weighted().argmax();
        if first_fire.is_none() {
            if let Some(launch) = d.launch {
                if let crate::arbitration::Action::Predictive { cell, .. } = launch.action {
                    first_fire = Some((k, PredictionError::between(cell, target, grid)));
                }
            }
        }
    }
    let fired = arbiter.last_predictive_goal().is_some();
    let decision_cell = arbiter.last_predictive_goal().unwrap_or(fused_argmax);
    let argmax: Vec<Cell> = predictions.iter().map(Heatmap::argmax).collect();
    let quarter_start = (3 * steps).div_ceil(4);
    let final_quarter_hits = argmax[quarter_start..]
        .iter()
        .filter(|c| **c == target)
        .count();
    Ok(TrajectoryEval {
        id: id.to_string(),
        target_cell: target,
        steps,
        argmax,
        fired,
        decision_cell,
        decision_error: PredictionError::between(decision_cell, target, grid),
        first_fire,
        final_quarter_hits,
        final_quarter_steps: steps - quarter_start,
    })
}

pub fn summarize(evals: &[TrajectoryEval], grid: &GridSpec) -> EvalSummary {
    let n = evals.len().max(1) as f64;
    let mean = |f: &dyn Fn(&TrajectoryEval) -> f64| evals.iter().map(f).sum::<f64>() / n;
    let fires: Vec<f64> = evals
        .iter()
        .filter_map(|e| e.first_fire.map(|f| f.1.euclid_grids))
        .collect();
    let hits: usize = evals.iter().map(|e| e.final_quarter_hits).sum();
    let quarter: usize = evals.iter().map(|e| e.final_quarter_steps).sum();
    let (step_err, step_count) = evals.iter().fold((0.0, 0usize), |(s, c), e| {
        let err: f64 = e.argmax.iter().map(|a| a.euclidean(&e.target_cell)).sum();
        (s + err, c + e.argmax.len())
    });
    EvalSummary {
        trajectories: evals.len(),
        mean_decision_dx: mean(&|e| e.decision_error.dx as f64),
        mean_decision_dy: mean(&|e| e.decision_error.dy as f64),
        mean_decision_error_grids: mean(&|e| e.decision_error.euclid_grids),
        mean_decision_error_m: mean(&|e| e.decision_error.euclid_grids) * grid.cell_size,
        mean_first_fire_error_grids: (!fires.is_empty())
            .then(|| fires.iter().sum::<f64>() / fires.len() as f64),
        fire_rate: mean(&|e| if e.fired { 1.0 } else { 0.0 }),
        final_quarter_accuracy: if quarter > 0 {
            hits as f64 / quarter as f64
        } else {
            0.0
        },
        mean_step_error_grids: if step_count > 0 {
            step_err / step_count as f64
        } else {
            0.0
        },
    }
}

/// Runs the model over every trajectory from a reset hidden state.
pub fn evaluate(
    model: &IntentModel,
    trajectories: &[HumanTrajectory],
    arbitration: &ArbitrationConfig,
) -> Result<EvalReport, EvalError> {
    if trajectories.is_empty() {
        return Err(EvalError::Empty);
    }
    let grid = *model.grid();
    let mut evals = Vec::with_capacity(trajectories.len());
    for tr in trajectories {
        let inputs = tr
            .model_inputs()
            .map_err(|e| EvalError::Features(tr.id.clone(), e))?;
        let preds = model.predict_sequence(&inputs)?;
        evals.push(evaluate_predictions(
            &tr.id,
            &preds,
            tr.target_cell,
            &grid,
            arbitration,
        )?);
    }
    Ok(EvalReport {
        summary: summarize(&evals, &grid),
        trajectories: evals,
    })
}
