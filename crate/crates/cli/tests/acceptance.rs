//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use handover_core::arbitration::{
    within_tolerance, Action, ActionState, Arbiter, ArbitrationConfig, Decision, Launch, PlanId,
};
use handover_core::eval::evaluate;
use handover_core::geometry::{gaze_hit_3d, tilt_head_norm, TablePlane, Vec2, Vec3};
use handover_core::grid::{Cell, GridSpec, Heatmap};
use handover_core::harness::{gen_dataset, run_study, training_samples, StudyConfig, StudyReport};
use handover_core::labels::{confidence_weight, make_label, LabelParams};
use handover_core::memory::{MemoryConfig, PredictionMemory};
use handover_core::model::{
    sequence_loss, train, trajectory_gradient, IntentModel, ModelShape, TrainConfig, TrainingSample,
};
use handover_core::planner::{
    stomp_plan, trajectory_cost, ArmConfig, ArmState, KeepOutZone, StompConfig,
};
use handover_core::sim::{gen_trajectory, Mode, Predictor, SimConfig, TrialConfig};
use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Suite {
    failed: usize,
    total: usize,
}

impl Suite {
    fn check(&mut self, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => {
                Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}"))
            }
            other => other,
        };
        self.total += 1;
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{elapsed:.2?}]"),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL  {name}: {detail} [{elapsed:.2?}]");
            }
        }
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_res, mut worst_ray, mut worst_tilt) = (0.0f64, 0.0f64, 0.0f64);
    let mut cases = 0;
    while cases < 1000 {
        let normal = unit_vector(&mut rng);
        let point = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.5..0.5),
        );
        let plane = TablePlane::new(normal, point).map_err(|e| e.to_string())?;
        let head = point
            + normal * rng.random_range(0.2..2.0)
            + unit_vector(&mut rng) * rng.random_range(0.0..0.5);
        let axis = Unit::new_normalize(unit_vector(&mut rng));
        let rot = Rotation3::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI));
        let r = *rot.matrix();
        let gaze = tilt_head_norm(&r);

        // Independent tilt oracle: angle to the face norm and the head-frame components.
        let face = r.column(0).into_owned();
        let angle = face.dot(&gaze).clamp(-1.0, 1.0).acos().to_degrees();
        worst_tilt = worst_tilt.max((angle - 30.0).abs());
        let local = r.transpose() * gaze;
        ensure!(
            local.y.abs() < 1e-12,
            "tilt left the face/up plane: {local:?}"
        );
        ensure!(local.z < 0.0, "gaze tilted upward: {local:?}");

        let Ok(hit) = gaze_hit_3d(&head, &gaze, &plane) else {
            continue;
        };
        cases += 1;
        worst_res = worst_res.max(plane.residual(&hit).abs());
        let along = hit - head;
        ensure!(along.dot(&gaze) > 0.0, "hit behind the head");
        worst_ray = worst_ray.max(along.cross(&gaze).norm());
    }
    ensure!(worst_res < 1e-9, "plane residual {worst_res:.3e}");
    ensure!(worst_ray < 1e-9, "hit off the gaze ray by {worst_ray:.3e}");
    ensure!(worst_tilt < 1e-9, "tilt off by {worst_tilt:.3e} deg");
    Ok(format!(
        "1000 hits, max residual {worst_res:.2e}, max ray offset {worst_ray:.2e}, max tilt error {worst_tilt:.2e} deg"
    ))
}

fn labels() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = GridSpec::default();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let len = rng.random_range(2..80);
        let t = rng.random_range(0..=len);
        let target = (rng.random_range(0.0..4.0), rng.random_range(0.0..9.0));
        let params = LabelParams {
            s_x: rng.random_range(0.3..3.0),
            s_y: rng.random_range(0.3..3.0),
            ..LabelParams::default()
        };
        let h = make_label(target, &grid, &params, t, len).map_err(|e| e.to_string())?;
        let c = 1.0 - (-5.0 * t as f64 / len as f64).exp();
        worst = worst.max((h.max() - c).abs());
    }
    ensure!(worst < 1e-9, "label peak off c_t by {worst:.3e}");
    ensure!(
        confidence_weight(0, 37) == 0.0,
        "c(0) = {}",
        confidence_weight(0, 37)
    );
    let end = 1.0 - (-5.0f64).exp();
    for len in [1, 7, 37, 120] {
        ensure!(
            confidence_weight(len, len) == end,
            "c(T) = {} for T = {len}",
            confidence_weight(len, len)
        );
    }
    Ok(format!(
        "100 draws, max |peak - c_t| {worst:.2e}; c(0) = 0, c(T) = 1 - e^-5"
    ))
}

fn random_heatmap(rng: &mut ChaCha8Rng, grid: GridSpec) -> Heatmap {
    Heatmap::from_vec(
        grid,
        (0..grid.cells())
            .map(|_| rng.random_range(0.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn fusion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = GridSpec::default();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let config = MemoryConfig {
            history_len: rng.random_range(1..15),
            epsilon: rng.random_range(0.0..0.9),
        };
        let mut mem = PredictionMemory::new(config, grid).map_err(|e| e.to_string())?;
        let pushed: Vec<Heatmap> = (0..rng.random_range(0..25))
            .map(|_| random_heatmap(&mut rng, grid))
            .collect();
        for p in &pushed {
            mem.push(p.clone()).map_err(|e| e.to_string())?;
        }
        let fused = mem.weighted();
        for cell in 0..grid.cells() {
            let mut expect = 0.0;
            for (i, p) in pushed.iter().rev().take(config.history_len).enumerate() {
                expect += (1.0 - config.epsilon).powf(i as f64) * p.values()[cell];
            }
            expect /= config.history_len as f64;
            worst = worst.max((fused.values()[cell] - expect).abs());
        }
    }
    ensure!(
        worst < 1e-12,
        "fused map off the brute-force sum by {worst:.3e}"
    );

    // epsilon = 0: plain mean of the last h maps.
    let h = 10;
    let mut mem = PredictionMemory::new(
        MemoryConfig {
            history_len: h,
            epsilon: 0.0,
        },
        grid,
    )
    .unwrap();
    let maps: Vec<Heatmap> = (0..h).map(|_| random_heatmap(&mut rng, grid)).collect();
    for p in &maps {
        mem.push(p.clone()).unwrap();
    }
    let fused = mem.weighted();
    for cell in 0..grid.cells() {
        let mean = maps.iter().rev().map(|p| p.values()[cell]).sum::<f64>() / h as f64;
        ensure!(
            fused.values()[cell] == mean,
            "mean case: {} vs {mean}",
            fused.values()[cell]
        );
    }

    // Constant input: geometric series (1/h) c (1 - (1-e)^h) / e.
    let (eps, c) = (0.25, 0.5);
    let mut mem = PredictionMemory::new(
        MemoryConfig {
            history_len: h,
            epsilon: eps,
        },
        grid,
    )
    .unwrap();
    for _ in 0..h {
        mem.push(Heatmap::filled(grid, c)).unwrap();
    }
    let expect = c * (1.0 - (1.0 - eps).powi(h as i32)) / eps / h as f64;
    let got = mem.weighted().values()[0];
    ensure!(
        (got - expect).abs() <= 4.0 * f64::EPSILON * expect,
        "geometric case: {got} vs {expect}"
    );
    Ok(format!(
        "100 random memories, max error {worst:.2e}; mean and geometric-sum cases exact"
    ))
}

fn loss_via_forward(model: &IntentModel, inputs: &[Vec<f64>], labels: &[Heatmap]) -> f64 {
    let preds = model.predict_sequence(inputs).unwrap();
    sequence_loss(&preds, labels, inputs.len()).unwrap()
}

fn gradient_check() -> Result<f64, String> {
    let grid = GridSpec::new(2, 3, 0.1, [0.0, 0.0]).unwrap();
    let shape = ModelShape::new(4, 6, &grid);
    let mut worst = 0.0f64;
    for draw in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + draw);
        let mut model = IntentModel::init(shape, grid, draw).map_err(|e| e.to_string())?;
        for p in model.params_mut() {
            *p = rng.random_range(-0.8..0.8);
        }
        let len = 5;
        let inputs: Vec<Vec<f64>> = (0..len)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let target = Cell::new(rng.random_range(0..2), rng.random_range(0..3));
        let labels: Vec<Heatmap> = (0..len)
            .map(|t| {
                make_label(
                    (target.x as f64, target.y as f64),
                    &grid,
                    &LabelParams::default(),
                    t,
                    len,
                )
                .unwrap()
            })
            .collect();
        let label_vals: Vec<Vec<f64>> = labels.iter().map(|h| h.values().to_vec()).collect();
        let mut grad = vec![0.0; model.params().len()];
        trajectory_gradient(&model, &inputs, &label_vals, &mut grad).map_err(|e| e.to_string())?;
        let step = 1e-6;
        let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
        for (i, g) in grad.iter().enumerate() {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + step;
            let up = loss_via_forward(&model, &inputs, &labels);
            model.params_mut()[i] = orig - step;
            let down = loss_via_forward(&model, &inputs, &labels);
            model.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            diff += (g - numeric).powi(2);
            na += g * g;
            nb += numeric * numeric;
        }
        worst = worst.max(diff.sqrt() / (na.sqrt() + nb.sqrt()).max(1e-12));
    }
    Ok(worst)
}

fn overfit() -> Result<(), String> {
    let grid = GridSpec::default();
    let target = Cell::new(3, 8);
    let tr = gen_trajectory(
        &mut ChaCha8Rng::seed_from_u64(8),
        &grid,
        target,
        &SimConfig::default(),
        "one",
    )
    .map_err(|e| e.to_string())?;
    let sample = TrainingSample {
        inputs: tr.model_inputs().map_err(|e| e.to_string())?,
        target,
    };
    let config = TrainConfig {
        epochs: 150,
        lr: 1e-2,
        batch_size: 1,
        hidden_dim: 16,
        ..TrainConfig::default()
    };
    let (model, _) = train(
        std::slice::from_ref(&sample),
        &grid,
        &LabelParams::default(),
        &config,
    )
    .map_err(|e| e.to_string())?;
    let preds = model
        .predict_sequence(&sample.inputs)
        .map_err(|e| e.to_string())?;
    let last = preds.last().unwrap().argmax();
    ensure!(
        last == target,
        "overfit model predicts {last}, target {target}"
    );
    Ok(())
}

/// Trains the default model on 400 trajectories and scores it on 100 more.
fn model_training(trained: &mut Option<Arc<IntentModel>>) -> Outcome {
    let rel = gradient_check()?;
    ensure!(rel < 1e-4, "gradient check relative error {rel:.3e}");
    overfit()?;

    let grid = GridSpec::default();
    let data = gen_dataset(500, &grid, &SimConfig::default(), 2024).map_err(|e| e.to_string())?;
    let samples = training_samples(&data[..400]).map_err(|e| e.to_string())?;
    let (model, _) = train(
        &samples,
        &grid,
        &LabelParams::default(),
        &TrainConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let report =
        evaluate(&model, &data[400..], &ArbitrationConfig::default()).map_err(|e| e.to_string())?;
    *trained = Some(Arc::new(model));

    // Error at the step the fused peak first exceeds gamma; a trajectory that
    // never fires is scored at its final fused argmax.
    let first: Vec<f64> = report
        .trajectories
        .iter()
        .map(|t| {
            t.first_fire
                .map_or(t.decision_error.euclid_grids, |f| f.1.euclid_grids)
        })
        .collect();
    let decision = first.iter().sum::<f64>() / first.len() as f64;
    let s = &report.summary;
    ensure!(
        decision <= 2.5,
        "decision-time error {decision:.3} grids > 2.5"
    );
    ensure!(
        s.final_quarter_accuracy >= 0.6,
        "final-quarter accuracy {:.3} < 0.6",
        s.final_quarter_accuracy
    );
    Ok(format!(
        "gradient rel. error {rel:.2e}; overfit hits target; held-out decision-time error {decision:.3} grids \
         (last-goal {:.3}), final-quarter accuracy {:.3}, fire rate {:.2}",
        s.mean_decision_error_grids, s.final_quarter_accuracy, s.fire_rate
    ))
}

/// Event alphabet for the interleaving search on a 2x2 grid.
#[derive(Clone, Copy, Debug)]
enum Ev {
    Spike(Cell),
    Flat,
    Detect(Cell),
    FinishActive,
    FinishStale,
}

struct Explorer {
    grid: GridSpec,
    config: ArbitrationConfig,
    alphabet: Vec<Ev>,
    depth: usize,
    nodes: usize,
}

#[derive(Clone)]
struct Node {
    arbiter: Arbiter,
    /// Plan the executor is running.
    running: Option<PlanId>,
    /// Heatmaps that entered the memory, oldest first.
    fused_inputs: Vec<Heatmap>,
    t: f64,
    trace: Vec<Ev>,
}

impl Explorer {
    fn heatmap(&self, ev: Ev) -> Heatmap {
        match ev {
            Ev::Spike(c) => {
                let mut h = Heatmap::filled(self.grid, 0.01);
                h.set(c, 0.9);
                h
            }
            _ => Heatmap::filled(self.grid, 0.01),
        }
    }

    fn point(&self, c: Cell) -> [f64; 2] {
        self.grid.cell_center(c).into()
    }

    /// Applies one event and checks the per-step invariants.
    fn apply(&self, node: &mut Node, ev: Ev) -> Result<(), String> {
        node.t += 0.05;
        node.trace.push(ev);
        let decision = match ev {
            Ev::Spike(_) | Ev::Flat => {
                let h = self.heatmap(ev);
                let predicting = !matches!(
                    node.arbiter.state(),
                    ActionState::Definitive { .. } | ActionState::Grasped
                );
                if predicting {
                    node.fused_inputs.push(h.clone());
                }
                let d = node.arbiter.on_heatmap(h, node.t);
                if let Some(Launch {
                    action: Action::Predictive { cell, .. },
                    ..
                }) = d.launch
                {
                    let (peak, argmax) = self.fused_peak(&node.fused_inputs);
                    ensure!(
                        peak > self.config.gamma,
                        "predictive launch at fused peak {peak} <= gamma: {:?}",
                        node.trace
                    );
                    ensure!(
                        cell == argmax,
                        "launched {cell}, fused argmax {argmax}: {:?}",
                        node.trace
                    );
                }
                d
            }
            Ev::Detect(c) => node
                .arbiter
                .on_object_detected(Vec2::from(self.point(c)), node.t)
                .map_err(|e| e.to_string())?,
            Ev::FinishActive => match node.running.take() {
                Some(plan) => node.arbiter.on_motion_finished(plan, node.t),
                None => Decision::default(),
            },
            Ev::FinishStale => {
                let before = *node.arbiter.state();
                let d = node.arbiter.on_motion_finished(10_000, node.t);
                ensure!(
                    d.is_empty() && *node.arbiter.state() == before,
                    "stale finish changed state: {:?}",
                    node.trace
                );
                d
            }
        };
        if let Some(p) = decision.preempt {
            ensure!(
                node.running == Some(p),
                "preempted {p} while running {:?}: {:?}",
                node.running,
                node.trace
            );
            node.running = None;
        }
        if let Some(l) = decision.launch {
            ensure!(
                node.running.is_none(),
                "launch {} while {:?} runs: {:?}",
                l.plan,
                node.running,
                node.trace
            );
            node.running = Some(l.plan);
        }
        ensure!(
            node.arbiter.state().active_plan() == node.running,
            "arbiter tracks {:?}, executor runs {:?}: {:?}",
            node.arbiter.state().active_plan(),
            node.running,
            node.trace
        );
        Ok(())
    }

    fn fused_peak(&self, inputs: &[Heatmap]) -> (f64, Cell) {
        let m = self.config.memory;
        let mut best = (f64::NEG_INFINITY, Cell::new(0, 0));
        for x in 0..self.grid.n {
            for y in 0..self.grid.m {
                let c = Cell::new(x, y);
                let v: f64 = inputs
                    .iter()
                    .rev()
                    .take(m.history_len)
                    .enumerate()
                    .map(|(i, h)| (1.0 - m.epsilon).powi(i as i32) * h.get(c))
                    .sum::<f64>()
                    / m.history_len as f64;
                if v > best.0 + 1e-12 {
                    best = (v, c);
                }
            }
        }
        best
    }

    /// From any state, a detection followed by motion completions grasps.
    fn check_liveness(&self, node: &Node) -> Result<(), String> {
        let targets: Vec<Option<Cell>> = if matches!(
            node.arbiter.state(),
            ActionState::Definitive { .. } | ActionState::Grasped
        ) {
            vec![None]
        } else {
            (0..self.grid.n)
                .flat_map(|x| (0..self.grid.m).map(move |y| Some(Cell::new(x, y))))
                .collect()
        };
        for target in targets {
            let mut n = node.clone();
            if let Some(c) = target {
                self.apply(&mut n, Ev::Detect(c))?;
            }
            for _ in 0..4 {
                if *n.arbiter.state() == ActionState::Grasped {
                    break;
                }
                self.apply(&mut n, Ev::FinishActive)?;
            }
            ensure!(
                *n.arbiter.state() == ActionState::Grasped,
                "no grasp after {:?}: {:?}",
                n.trace,
                n.arbiter.state()
            );
        }
        Ok(())
    }

    fn explore(&mut self, node: &Node) -> Result<(), String> {
        self.nodes += 1;
        self.check_liveness(node)?;
        if node.trace.len() == self.depth {
            return Ok(());
        }
        for i in 0..self.alphabet.len() {
            let ev = self.alphabet[i];
            let mut child = node.clone();
            self.apply(&mut child, ev)?;
            self.explore(&child)?;
        }
        Ok(())
    }
}

fn arbitration() -> Outcome {
    let grid = GridSpec::new(2, 2, 0.08, [0.0, 0.0]).map_err(|e| e.to_string())?;
    let cells: Vec<Cell> = (0..2)
        .flat_map(|x| (0..2).map(move |y| Cell::new(x, y)))
        .collect();
    let mut alphabet: Vec<Ev> = cells.iter().map(|c| Ev::Spike(*c)).collect();
    alphabet.push(Ev::Flat);
    alphabet.extend(cells.iter().map(|c| Ev::Detect(*c)));
    alphabet.push(Ev::FinishActive);
    alphabet.push(Ev::FinishStale);
    let mut total = 0;
    for (tol_x, tol_y) in [(1, 2), (0, 0)] {
        let config = ArbitrationConfig {
            tol_x,
            tol_y,
            ..ArbitrationConfig::default()
        };
        let root = Node {
            arbiter: Arbiter::new(config, grid).map_err(|e| e.to_string())?,
            running: None,
            fused_inputs: Vec::new(),
            t: 0.0,
            trace: Vec::new(),
        };
        let mut ex = Explorer {
            grid,
            config,
            alphabet: alphabet.clone(),
            depth: 6,
            nodes: 0,
        };
        ex.explore(&root)?;
        total += ex.nodes;
    }

    // Tolerance table on the full grid against the plain definition.
    let g = GridSpec::default();
    let config = ArbitrationConfig::default();
    for a in 0..g.cells() {
        for b in 0..g.cells() {
            let (ca, cb) = (Cell::new(a / g.m, a % g.m), Cell::new(b / g.m, b % g.m));
            let dx = (ca.x as i64 - cb.x as i64).abs();
            let dy = (ca.y as i64 - cb.y as i64).abs();
            let expect = dx <= 1 && dy <= 2;
            ensure!(
                within_tolerance(ca, cb, &config) == expect,
                "tolerance({ca}, {cb}) != {expect}"
            );
        }
    }
    let examples = [
        ((2, 7), (3, 9), true),
        ((2, 7), (1, 5), true),
        ((2, 7), (4, 7), false),
        ((2, 7), (2, 4), false),
        ((2, 7), (3, 10), false),
    ];
    for ((ax, ay), (bx, by), expect) in examples {
        ensure!(
            within_tolerance(Cell::new(ax, ay), Cell::new(bx, by), &config) == expect,
            "tolerance example ({ax},{ay})-({bx},{by})"
        );
    }
    Ok(format!(
        "{total} event sequences up to length 6 under tolerances (1,2) and (0,0): one plan at a time, \
         no launch at or below gamma, every state reaches a grasp; tolerance table matches |dx| <= 1, |dy| <= 2"
    ))
}

fn segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = b - a;
    let s = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * s)).norm()
}

fn stomp() -> Outcome {
    let arm = ArmConfig::default();
    let mut worst_line = 0.0f64;
    let mut iterations = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = ArmState::new(rng.random_range(0.0..0.6), rng.random_range(0.0..0.15), 0.2);
        let goal = ArmState::new(rng.random_range(0.0..0.6), rng.random_range(0.65..0.8), 0.2);
        let cfg = StompConfig {
            seed,
            ..StompConfig::default()
        };

        let free = stomp_plan(&start, &goal, &[], &arm, &cfg).map_err(|e| e.to_string())?;
        for w in &free.waypoints {
            worst_line = worst_line.max(segment_distance(w.vec(), start.vec(), goal.vec()));
        }

        let c = start.vec() + (goal.vec() - start.vec()) * rng.random_range(0.35..0.65);
        let zone = KeepOutZone {
            center: [c.x + rng.random_range(-0.02..0.02), c.y],
            radius: rng.random_range(0.04..0.1),
        };
        let plan = stomp_plan(&start, &goal, &[zone], &arm, &cfg).map_err(|e| e.to_string())?;
        iterations += plan.cost_history.len();
        for pair in plan.cost_history.windows(2) {
            ensure!(
                pair[1] <= pair[0],
                "seed {seed}: best cost rose {} -> {}",
                pair[0],
                pair[1]
            );
        }
        let centre = Vec2::from(zone.center);
        for w in &plan.waypoints {
            let d = (w.xy() - centre).norm();
            ensure!(
                d >= zone.radius,
                "seed {seed}: waypoint {d:.4} m from a {:.4} m zone",
                zone.radius
            );
        }
        ensure!(
            trajectory_cost(&plan, &[zone], &cfg).is_finite(),
            "seed {seed}: non-finite cost"
        );
        ensure!(
            plan.waypoints[0].pos == start.pos && plan.goal().pos == goal.pos,
            "seed {seed}: endpoints moved"
        );
    }
    ensure!(
        worst_line < 1e-3,
        "free-space plan {worst_line:.3e} m off the straight line"
    );
    Ok(format!(
        "max free-space deviation {worst_line:.2e} m; best cost non-increasing over {iterations} iterations; \
         50 zone problems cleared"
    ))
}

fn pairs(report: &StudyReport) -> Vec<(f64, f64, f64, f64)> {
    let mut out = Vec::new();
    for r in report.trials.iter().filter(|t| t.mode == Mode::Reactive) {
        if let Some(p) = report.trials.iter().find(|t| {
            t.mode == Mode::Preemptive && t.seed == r.seed && t.target_cell == r.target_cell
        }) {
            out.push((
                r.response_time,
                p.response_time,
                r.start_to_grab,
                p.start_to_grab,
            ));
        }
    }
    out
}

fn study(model: Option<Arc<IntentModel>>) -> Outcome {
    let model = model.ok_or("no trained model (training criterion failed)")?;
    let study = StudyConfig::default();
    let trial = TrialConfig::default();
    let seed = 7;

    let report = run_study(&study, &trial, &Predictor::Model(model.clone()), seed)
        .map_err(|e| e.to_string())?;
    ensure!(
        report.failures.is_empty(),
        "{} trials failed",
        report.failures.len()
    );
    ensure!(report.cells.len() == 11, "{} cells", report.cells.len());
    let o = report.overall.as_ref().ok_or("no paired results")?;
    ensure!(o.pairs == 11 * 15, "{} pairs", o.pairs);
    let p_grab = o.p_grab.ok_or("no p-value")?;
    ensure!(
        o.mean_grab_improvement > 0.0,
        "start-to-grab improvement {:.3} s",
        o.mean_grab_improvement
    );
    ensure!(p_grab < 0.01, "Mann-Whitney p = {p_grab:.3e}");
    let model_line = format!(
        "model: response improvement {:.3} s, start-to-grab improvement {:.3} s, p = {p_grab:.2e}, {} of {} pairs faster",
        o.mean_response_improvement, o.mean_grab_improvement, o.preemptive_wins, o.pairs
    );

    let oracle = run_study(&study, &trial, &Predictor::Oracle, seed).map_err(|e| e.to_string())?;
    let oracle_pairs = pairs(&oracle);
    ensure!(
        oracle_pairs.len() == 165,
        "{} oracle pairs",
        oracle_pairs.len()
    );
    let wins = oracle_pairs.iter().filter(|p| p.3 < p.2).count();
    let rate = wins as f64 / oracle_pairs.len() as f64;
    ensure!(
        rate >= 0.9,
        "oracle preemptive wins {wins}/{}",
        oracle_pairs.len()
    );

    let never = TrialConfig {
        arbitration: ArbitrationConfig {
            gamma: 1.01,
            ..ArbitrationConfig::default()
        },
        ..TrialConfig::default()
    };
    let flat =
        run_study(&study, &never, &Predictor::Model(model), seed).map_err(|e| e.to_string())?;
    let flat_pairs = pairs(&flat);
    ensure!(flat_pairs.len() == 165, "{} gamma pairs", flat_pairs.len());
    for (rr, pr, rg, pg) in &flat_pairs {
        ensure!(
            rr == pr && rg == pg,
            "gamma 1.01 pair differs: response {rr} vs {pr}, grab {rg} vs {pg}"
        );
    }
    Ok(format!(
        "{model_line}; oracle faster on {wins}/165 ({:.1}%); gamma 1.01 identical on 165/165",
        rate * 100.0
    ))
}

fn run_cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_handover"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let mut files = Vec::new();
    for tag in ["a", "b"] {
        let f = |stem: &str, ext: &str| format!("{stem}_{tag}.{ext}");
        run_cli(
            &[
                "gen-data",
                "--count",
                "40",
                "--seed",
                "3",
                "--out",
                &f("data", "jsonl"),
            ],
            d,
        )?;
        run_cli(
            &[
                "train",
                "--data",
                "data_a.jsonl",
                "--epochs",
                "3",
                "--seed",
                "3",
                "--out",
                &f("model", "bin"),
            ],
            d,
        )?;
        run_cli(
            &[
                "eval",
                "--model",
                "model_a.bin",
                "--data",
                "data_a.jsonl",
                "--out",
                &f("eval", "json"),
            ],
            d,
        )?;
        for ext in ["json", "csv"] {
            run_cli(
                &[
                    "study",
                    "--mode",
                    "both",
                    "--trials",
                    "5",
                    "--seed",
                    "7",
                    "--model",
                    "model_a.bin",
                    "--out",
                    &f("study", ext),
                ],
                d,
            )?;
        }
        run_cli(
            &[
                "study",
                "--mode",
                "both",
                "--trials",
                "5",
                "--seed",
                "7",
                "--oracle",
                "--out",
                &f("oracle", "json"),
            ],
            d,
        )?;
        if tag == "a" {
            files = fs::read_dir(d)
                .map_err(|e| e.to_string())?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name())
                .collect();
        }
    }
    for name in &files {
        let a = d.join(name);
        let b = d.join(name.to_string_lossy().replace("_a.", "_b."));
        let (x, y) = (
            fs::read(&a).map_err(|e| e.to_string())?,
            fs::read(&b).map_err(|e| e.to_string())?,
        );
        ensure!(x == y, "{} and {} differ", a.display(), b.display());
    }
    Ok(format!(
        "{} output files byte-identical across repeated runs",
        files.len()
    ))
}

fn main() {
    let mut suite = Suite {
        failed: 0,
        total: 0,
    };
    let mut model = None;
    suite.check("geometry", secs(1), geometry);
    suite.check("labels", secs(1), labels);
    suite.check("fusion", secs(1), fusion);
    suite.check("model training", secs(600), || model_training(&mut model));
    suite.check("arbitration", secs(120), arbitration);
    suite.check("stomp", secs(30), stomp);
    suite.check("study analogue", secs(300), || study(model.clone()));
    suite.check("determinism", secs(120), determinism);
    println!(
        "{}/{} criteria passed",
        suite.total - suite.failed,
        suite.total
    );
    if suite.failed > 0 {
        std::process::exit(1);
    }
}
