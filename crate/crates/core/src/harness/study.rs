use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{significance, HarnessError, Summary};
use crate::grid::Cell;
use crate::sim::{gen_trajectory, run_trial, Mode, Predictor, TrialConfig, TrialResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// Explicit placement cells; when empty, `num_cells` distinct cells are
    /// drawn from the seed.
    pub cells: Vec<Cell>,
    pub num_cells: usize,
    /// Seeded participants per cell.
    pub trials: usize,
    pub modes: Vec<Mode>,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            cells: Vec::new(),
            num_cells: 11,
            trials: 15,
            modes: vec![Mode::Reactive, Mode::Preemptive],
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub cell: Cell,
    pub seed: u64,
    pub mode: Mode,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: Cell,
    pub mode: Mode,
    pub response_time: Summary,
    pub start_to_grab: Summary,
    pub mean_error_grids: Option<f64>,
    pub mean_preempts: f64,
}

/// Reactive minus preemptive for one participant at one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub cell: Cell,
    pub seed: u64,
    pub response_time: f64,
    pub start_to_grab: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellComparison {
    pub cell: Cell,
    pub mean_response_improvement: f64,
    pub mean_grab_improvement: f64,
    pub p_response: Option<f64>,
    pub p_grab: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overall {
    pub pairs: usize,
    pub mean_response_improvement: f64,
    pub mean_grab_improvement: f64,
    pub p_response: Option<f64>,
    pub p_grab: Option<f64>,
    /// Pairs where the preemptive grab finished strictly earlier.
    pub preemptive_wins: usize,
    pub mean_error_grids: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub seed: u64,
    pub study: StudyConfig,
    pub trial: TrialConfig,
    pub cells: Vec<Cell>,
    /// Ordered by cell, participant, then mode.
    pub trials: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
    pub rows: Vec<SummaryRow>,
    pub comparisons: Vec<CellComparison>,
    pub paired: Vec<PairedDifference>,
    pub overall: Option<Overall>,
}

impl StudyReport {
    pub fn empty(seed: u64, study: StudyConfig, trial: TrialConfig) -> Self {
        Self {
            seed,
            study,
            trial,
            cells: Vec::new(),
            trials: Vec::new(),
            failures: Vec::new(),
            rows: Vec::new(),
            comparisons: Vec::new(),
            paired: Vec::new(),
            overall: None,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of participant `j` in a study seeded with `seed`.
pub(crate) fn participant_seed(seed: u64, j: usize) -> u64 {
    splitmix(seed ^ splitmix(j as u64 + 1))
}

fn choose_cells(
    config: &StudyConfig,
    trial: &TrialConfig,
    seed: u64,
) -> Result<Vec<Cell>, HarnessError> {
    let grid = &trial.grid;
    if !config.cells.is_empty() {
        for c in &config.cells {
            grid.check_cell(*c)?;
        }
        return Ok(config.cells.clone());
    }
    if config.num_cells > grid.cells() {
        return Err(HarnessError::TooManyCells {
            want: config.num_cells,
            have: grid.cells(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, grid.cells(), config.num_cells)
        .into_iter()
        .map(|i| Cell::new(i / grid.m, i % grid.m))
        .collect())
}

/// Runs every (cell, participant, mode) trial. Both modes of a pair replay
/// the same human trajectory. Trial errors are recorded, not propagated.
pub fn run_study(
    config: &StudyConfig,
    trial: &TrialConfig,
    predictor: &Predictor,
    seed: u64,
) -> Result<StudyReport, HarnessError> {
    trial.validate()?;
    let cells = choose_cells(config, trial, seed)?;
    if cells.is_empty() || config.trials == 0 || config.modes.is_empty() {
        return Err(HarnessError::EmptyStudy);
    }
    let mut modes = config.modes.clone();
    modes.sort();
    modes.dedup();

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.trials).map(move |j| (c, j)))
        .collect();
    let slots: Vec<Mutex<Vec<Result<TrialResult, TrialFailure>>>> =
        jobs.iter().map(|_| Mutex::new(Vec::new())).collect();
    let next = AtomicUsize::new(0);
    let threads = match config.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len());

    let work = || loop {
        let k = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(c, j)) = jobs.get(k) else { break };
        let cell = cells[c];
        let pseed = participant_seed(seed, j);
        let mut rng = ChaCha8Rng::seed_from_u64(pseed);
        rng.set_stream(c as u64);
        let id = format!("cell-{}-{}-p{j:02}", cell.x, cell.y);
        let human = gen_trajectory(&mut rng, &trial.grid, cell, &trial.sim, id);
        let out = modes
            .iter()
            .map(|&mode| {
                let result = match &human {
                    Ok(h) => run_trial(h, mode, predictor, trial, pseed).map_err(|e| e.to_string()),
                    Err(e) => Err(e.to_string()),
                };
                result.map_err(|error| TrialFailure {
                    cell,
                    seed: pseed,
                    mode,
                    error,
                })
            })
            .collect();
        *slots[k].lock().expect("slot lock") = out;
    };
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(work);
        }
    });

    let mut report = StudyReport::empty(seed, config.clone(), trial.clone());
    report.cells = cells.clone();
    for slot in slots {
        for r in slot.into_inner().expect("slot lock") {
            match r {
                Ok(t) => report.trials.push(t),
                Err(f) => report.failures.push(f),
            }
        }
    }
    aggregate(&mut report, &modes);
    Ok(report)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Fills the summary tables from `report.trials`.
pub(crate) fn aggregate(report: &mut StudyReport, modes: &[Mode]) {
    report.rows.clear();
    report.comparisons.clear();
    report.paired.clear();
    for &cell in &report.cells {
        for &mode in modes {
            let ts: Vec<&TrialResult> = report
                .trials
                .iter()
                .filter(|t| t.cell_mode() == (cell, mode))
                .collect();
            let resp: Vec<f64> = ts.iter().map(|t| t.response_time).collect();
            let grab: Vec<f64> = ts.iter().map(|t| t.start_to_grab).collect();
            let (Some(response_time), Some(start_to_grab)) =
                (Summary::of(&resp), Summary::of(&grab))
            else {
                continue;
            };
            let errs: Vec<f64> = ts
                .iter()
                .filter_map(|t| t.error.map(|e| e.euclid_grids))
                .collect();
            report.rows.push(SummaryRow {
                cell,
                mode,
                response_time,
                start_to_grab,
                mean_error_grids: (!errs.is_empty()).then(|| mean(&errs)),
                mean_preempts: ts.iter().map(|t| t.preempts as f64).sum::<f64>() / ts.len() as f64,
            });
        }

        let find = |mode: Mode, seed: u64| {
            report
                .trials
                .iter()
                .find(|t| t.cell_mode() == (cell, mode) && t.seed == seed)
        };
        let mut pairs = Vec::new();
        for r in report
            .trials
            .iter()
            .filter(|t| t.cell_mode() == (cell, Mode::Reactive))
        {
            if let Some(p) = find(Mode::Preemptive, r.seed) {
                pairs.push(PairedDifference {
                    cell,
                    seed: r.seed,
                    response_time: r.response_time - p.response_time,
                    start_to_grab: r.start_to_grab - p.start_to_grab,
                });
            }
        }
        if !pairs.is_empty() {
            let by_mode = |mode: Mode, f: fn(&TrialResult) -> f64| -> Vec<f64> {
                report
                    .trials
                    .iter()
                    .filter(|t| t.cell_mode() == (cell, mode))
                    .map(f)
                    .collect()
            };
            report.comparisons.push(CellComparison {
                cell,
                mean_response_improvement: mean(
                    &pairs.iter().map(|p| p.response_time).collect::<Vec<_>>(),
                ),
                mean_grab_improvement: mean(
                    &pairs.iter().map(|p| p.start_to_grab).collect::<Vec<_>>(),
                ),
                p_response: significance(
                    &by_mode(Mode::Reactive, |t| t.response_time),
                    &by_mode(Mode::Preemptive, |t| t.response_time),
                )
                .ok(),
                p_grab: significance(
                    &by_mode(Mode::Reactive, |t| t.start_to_grab),
                    &by_mode(Mode::Preemptive, |t| t.start_to_grab),
                )
                .ok(),
            });
        }
        report.paired.extend(pairs);
    }

    report.overall = (!report.paired.is_empty()).then(|| {
        let all = |mode: Mode, f: fn(&TrialResult) -> f64| -> Vec<f64> {
            report
                .trials
                .iter()
                .filter(|t| t.mode == mode)
                .map(f)
                .collect()
        };
        let errs: Vec<f64> = report
            .trials
            .iter()
            .filter_map(|t| t.error.map(|e| e.euclid_grids))
            .collect();
        Overall {
            pairs: report.paired.len(),
            mean_response_improvement: mean(
                &report
                    .paired
                    .iter()
                    .map(|p| p.response_time)
                    .collect::<Vec<_>>(),
            ),
            mean_grab_improvement: mean(
                &report
                    .paired
                    .iter()
                    .map(|p| p.start_to_grab)
                    .collect::<Vec<_>>(),
            ),
            p_response: significance(
                &all(Mode::Reactive, |t| t.response_time),
                &all(Mode::Preemptive, |t| t.response_time),
            )
            .ok(),
            p_grab: significance(
                &all(Mode::Reactive, |t| t.start_to_grab),
                &all(Mode::Preemptive, |t| t.start_to_grab),
            )
            .ok(),
            preemptive_wins: report
                .paired
                .iter()
                .filter(|p| p.start_to_grab > 0.0)
                .count(),
            mean_error_grids: (!errs.is_empty()).then(|| mean(&errs)),
        }
    });
}
