use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use handover_core::config::Settings;
use handover_core::eval::evaluate;
use handover_core::grid::GridSpec;
use handover_core::harness::{
    dataset_to_string, gen_dataset, read_dataset, report_csv, run_study, training_samples,
    ReportFormat,
};
use handover_core::model::{load_model, save_model, train, IntentModel};
use handover_core::sim::{HumanTrajectory, Mode, Predictor};
use handover_service::{AppState, SessionManager};

use crate::args::{Command, FormatArg, ModeArg};
use crate::settings::{resolve, to_toml, SettingsError};

#[derive(Debug)]
pub enum Failure {
    /// Bad invocation; exit 1.
    Usage(String),
    /// The command ran and failed; exit 2.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn run(command: Command) -> Result<(), Failure> {
    let common = command.common().clone();
    let mut settings = resolve(&common).map_err(|e| match e {
        SettingsError::Read { .. } => Failure::Runtime(e.into()),
        _ => usage(e.to_string()),
    })?;
    let out = common.out.as_deref();

    match command {
        Command::GenData { count, .. } => {
            print_config("gen-data", &settings)?;
            let data = gen_dataset(
                count,
                &settings.trial.grid,
                &settings.trial.sim,
                settings.seed,
            )
            .context("generating dataset")?;
            emit(out, &dataset_to_string(&data))?;
        }
        Command::Train {
            data, epochs, lr, ..
        } => {
            let out = out.ok_or_else(|| usage("train needs --out <model path>"))?;
            if let Some(e) = epochs {
                settings.train.epochs = e;
            }
            if let Some(lr) = lr {
                settings.train.lr = lr;
            }
            if let Some(seed) = common.seed {
                settings.train.seed = seed;
            }
            print_config("train", &settings)?;
            let data = load_dataset(&data, &settings.trial.grid)?;
            let samples = training_samples(&data).context("featurizing dataset")?;
            let (model, report) = train(
                &samples,
                &settings.trial.grid,
                &settings.trial.labels,
                &settings.train,
            )
            .context("training")?;
            save_model(&model, out).with_context(|| format!("writing {}", out.display()))?;
            let mut stdout = std::io::stdout().lock();
            for e in &report.epochs {
                writeln!(stdout, "epoch {:>4}  loss {:.6}", e.epoch, e.mean_loss)
                    .context("writing stdout")?;
            }
        }
        Command::Eval { model, data, .. } => {
            print_config("eval", &settings)?;
            let model = open_model(&model, &settings.trial.grid)?;
            let data = load_dataset(&data, &settings.trial.grid)?;
            let report =
                evaluate(&model, &data, &settings.trial.arbitration).context("evaluating")?;
            let s = &report.summary;
            eprintln!(
                "{} trajectories: decision error {:.3} grids ({:.4} m), final-quarter accuracy {:.3}, fire rate {:.3}",
                s.trajectories, s.mean_decision_error_grids, s.mean_decision_error_m, s.final_quarter_accuracy, s.fire_rate
            );
            emit(
                out,
                &(serde_json::to_string_pretty(&report).context("serializing report")? + "\n"),
            )?;
        }
        Command::Study {
            mode,
            trials,
            cells,
            model,
            oracle,
            format,
            ..
        } => {
            if let Some(t) = trials {
                settings.study.trials = t;
            }
            if let Some(c) = cells {
                settings.study.num_cells = c;
                settings.study.cells.clear();
            }
            settings.study.modes = match mode {
                ModeArg::Reactive => vec![Mode::Reactive],
                ModeArg::Preemptive => vec![Mode::Preemptive],
                ModeArg::Both => vec![Mode::Reactive, Mode::Preemptive],
            };
            let predictor = match (model, oracle) {
                (Some(path), _) => {
                    Predictor::Model(Arc::new(open_model(&path, &settings.trial.grid)?))
                }
                (None, true) => Predictor::Oracle,
                (None, false) if settings.study.modes.contains(&Mode::Preemptive) => {
                    return Err(usage("preemptive studies need --model <path> or --oracle"));
                }
                (None, false) => Predictor::None,
            };
            let format = match format {
                Some(FormatArg::Json) => ReportFormat::Json,
                Some(FormatArg::Csv) => ReportFormat::Csv,
                None if out.is_some_and(|p| {
                    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
                }) =>
                {
                    ReportFormat::Csv
                }
                None => ReportFormat::Json,
            };
            print_config("study", &settings)?;
            let report = run_study(&settings.study, &settings.trial, &predictor, settings.seed)
                .context("running study")?;
            for f in &report.failures {
                eprintln!(
                    "trial failed: cell {} seed {} {}: {}",
                    f.cell,
                    f.seed,
                    f.mode.as_str(),
                    f.error
                );
            }
            if let Some(o) = &report.overall {
                let p = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3e}"));
                eprintln!(
                    "{} pairs: response improvement {:.3} s (p = {}), start-to-grab improvement {:.3} s (p = {}), preemptive faster on {}",
                    o.pairs,
                    o.mean_response_improvement,
                    p(o.p_response),
                    o.mean_grab_improvement,
                    p(o.p_grab),
                    o.preemptive_wins
                );
            }
            let text = match format {
                ReportFormat::Json => {
                    serde_json::to_string_pretty(&report).context("serializing report")? + "\n"
                }
                ReportFormat::Csv => report_csv(&report),
            };
            emit(out, &text)?;
        }
        Command::Serve {
            port, host, model, ..
        } => {
            print_config("serve", &settings)?;
            let model = match model {
                Some(p) => Some(Arc::new(open_model(&p, &settings.trial.grid)?)),
                None => None,
            };
            let manager = SessionManager::new(settings.trial.clone(), model, settings.seed)
                .context("starting service")?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| usage(format!("bad listen address {host}:{port}: {e}")))?;
            let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
            runtime.block_on(async move {
                let listener = handover_service::bind(addr)
                    .await
                    .with_context(|| format!("binding {addr}"))?;
                eprintln!("listening on ws://{}/ws", listener.local_addr()?);
                handover_service::serve(listener, AppState::new(manager))
                    .await
                    .context("serving")
            })?;
        }
    }
    Ok(())
}

fn print_config(command: &str, settings: &Settings) -> Result<(), Failure> {
    let text = to_toml(settings).map_err(|e| Failure::Runtime(e.into()))?;
    eprintln!("# handover {command}, seed {}\n{text}", settings.seed);
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .context("writing stdout"),
    }
}

fn load_dataset(path: &Path, grid: &GridSpec) -> anyhow::Result<Vec<HumanTrajectory>> {
    let data = read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))?;
    if let Some(t) = data.iter().find(|t| t.grid != *grid) {
        bail!(
            "trajectory {} was recorded on a {}x{} grid, the config uses {}x{}",
            t.id,
            t.grid.n,
            t.grid.m,
            grid.n,
            grid.m
        );
    }
    Ok(data)
}

fn open_model(path: &Path, grid: &GridSpec) -> anyhow::Result<IntentModel> {
    let model = load_model(path).with_context(|| format!("loading model {}", path.display()))?;
    let g = model.grid();
    if g.n != grid.n || g.m != grid.m {
        bail!(
            "model grid {}x{} does not match the configured {}x{}",
            g.n,
            g.m,
            grid.n,
            grid.m
        );
    }
    Ok(model)
}
