use std::sync::Arc;

use handover_core::arbitration::StateKind;
use handover_core::grid::{Cell, GridSpec};
use handover_core::model::{IntentModel, ModelShape};
use handover_core::sim::{
    gen_trajectory, run_trial, HumanTrajectory, Mode, Predictor, SimConfig, TrialConfig,
};
use handover_service::{ClientMessage, ServerMessage, ServiceError, SessionManager};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// All-zero weights: every cell reads 0.5, so the peak is always cell (0, 0).
fn flat_model() -> Arc<IntentModel> {
    let g = GridSpec::default();
    Arc::new(IntentModel::zeros(ModelShape::default_for(&g), g).unwrap())
}

fn human(cell: Cell, seed: u64) -> HumanTrajectory {
    gen_trajectory(
        &mut ChaCha8Rng::seed_from_u64(seed),
        &GridSpec::default(),
        cell,
        &SimConfig::default(),
        "t",
    )
    .unwrap()
}

fn frame_msg(h: &HumanTrajectory, k: usize) -> ClientMessage {
    let f = &h.frames[k];
    ClientMessage::Frame {
        t: f.t,
        palm: f.palm,
        elbow: f.elbow,
        shoulder: f.shoulder,
        head_pos: f.head_pos,
        head_rot: f.head_rot,
    }
}

fn manager(model: Option<Arc<IntentModel>>) -> SessionManager {
    SessionManager::new(TrialConfig::default(), model, 11).unwrap()
}

fn send(m: &mut SessionManager, id: u64, msg: &ClientMessage) -> Vec<ServerMessage> {
    m.handle_message(id, &serde_json::to_string(msg).unwrap())
        .unwrap()
}

/// Streams the reach and places the object; returns every reply.
fn play(m: &mut SessionManager, id: u64, h: &HumanTrajectory) -> Vec<ServerMessage> {
    let mut out = Vec::new();
    for k in 0..h.len() {
        out.extend(send(m, id, &frame_msg(h, k)));
    }
    out.extend(send(
        m,
        id,
        &ClientMessage::Place {
            point: h.target_point,
            t: None,
        },
    ));
    out
}

fn metrics(out: &[ServerMessage]) -> (f64, f64, Option<f64>) {
    out.iter()
        .find_map(|m| match m {
            ServerMessage::Metrics {
                response_time,
                start_to_grab,
                error_grids,
            } => Some((*response_time, *start_to_grab, *error_grids)),
            _ => None,
        })
        .expect("a metrics message")
}

#[test]
fn heatmaps_have_grid_shape() {
    let mut m = manager(Some(flat_model()));
    let id = m.open_session(Mode::Preemptive, None).unwrap();
    let h = human(Cell::new(2, 7), 1);
    let out = send(&mut m, id, &frame_msg(&h, 0));
    let ServerMessage::Heatmap {
        values,
        fused,
        peak,
        ..
    } = &out[0]
    else {
        panic!("expected a heatmap, got {out:?}");
    };
    let g = GridSpec::default();
    assert_eq!(values.len(), g.n);
    assert!(values.iter().all(|r| r.len() == g.m));
    assert_eq!(fused.len(), g.n);
    assert!(fused.iter().all(|r| r.len() == g.m));
    assert_eq!(peak.cell, Cell::new(0, 0));
    assert!((peak.p - 0.05).abs() < 1e-12);
}

#[test]
fn reactive_place_starts_definitive_motion() {
    let mut m = manager(None);
    let id = m.open_session(Mode::Reactive, None).unwrap();
    let h = human(Cell::new(3, 4), 2);
    let out = play(&mut m, id, &h);
    assert!(out
        .iter()
        .all(|m| !matches!(m, ServerMessage::Heatmap { .. })));
    let first_robot = out
        .iter()
        .find_map(|m| match m {
            ServerMessage::Robot {
                action, goal, t, ..
            } => Some((*action, *goal, *t)),
            _ => None,
        })
        .unwrap();
    assert_eq!(first_robot.0, StateKind::Definitive);
    assert_eq!(first_robot.1, Some(h.target_point));
    let latency = SimConfig::default().detection_latency;
    assert!((first_robot.2 - (h.frames.last().unwrap().t + latency)).abs() < 1e-12);
    let (response, grab, err) = metrics(&out);
    assert!(grab > response && response > 0.0);
    assert_eq!(err, None);
    assert_eq!(m.session(id).unwrap().action(), StateKind::Grasped);
}

fn place_after_flat_prediction(target: Cell) -> Vec<ServerMessage> {
    let mut m = manager(Some(flat_model()));
    let id = m.open_session(Mode::Preemptive, None).unwrap();
    let h = human(target, 3);
    play(&mut m, id, &h)
}

fn preempted_flags(out: &[ServerMessage]) -> Vec<bool> {
    out.iter()
        .filter_map(|m| match m {
            ServerMessage::Robot { preempted, .. } => Some(*preempted),
            _ => None,
        })
        .collect()
}

#[test]
fn placement_within_tolerance_is_not_preempted() {
    let out = place_after_flat_prediction(Cell::new(1, 2));
    let flags = preempted_flags(&out);
    assert!(!flags.is_empty());
    assert!(flags.iter().all(|p| !p));
    let (_, _, err) = metrics(&out);
    assert!((err.unwrap() - 5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn placement_outside_tolerance_preempts() {
    let out = place_after_flat_prediction(Cell::new(4, 6));
    assert!(preempted_flags(&out).contains(&true));
    let (_, _, err) = metrics(&out);
    assert!((err.unwrap() - 52f64.sqrt()).abs() < 1e-12);
}

#[test]
fn malformed_messages_get_error_replies() {
    let mut m = manager(Some(flat_model()));
    let id = m.open_session(Mode::Preemptive, None).unwrap();
    let bad = [
        "",
        "null",
        "{",
        "[]",
        r#"{"type":"frame"}"#,
        r#"{"type":"frame","t":0,"palm":[0,0],"elbow":[0,0,0],"shoulder":[0,0,0],"head_pos":[0,0,0],"head_rot":[1,0,0,0,1,0,0,0,1]}"#,
        r#"{"type":"place","point":"here"}"#,
        r#"{"type":"reset","mode":"sideways"}"#,
        r#"{"type":"close","extra":1}"#,
        r#"{"kind":"close"}"#,
        "\u{0}\u{1}garbage",
    ];
    for text in bad {
        let out = m.handle_message(id, text).unwrap();
        assert!(
            matches!(out.as_slice(), [ServerMessage::Error { .. }]),
            "{text:?} gave {out:?}"
        );
    }
    // Non-finite and out-of-order timestamps are rejected too.
    let h = human(Cell::new(2, 2), 4);
    assert!(matches!(
        send(&mut m, id, &frame_msg(&h, 5)).first(),
        Some(ServerMessage::Heatmap { .. })
    ));
    let out = send(&mut m, id, &frame_msg(&h, 4));
    assert!(matches!(out.as_slice(), [ServerMessage::Error { .. }]));
    let out = m
        .handle_message(id, r#"{"type":"place","point":[0.1,0.1],"t":-1.0}"#)
        .unwrap();
    assert!(matches!(out.as_slice(), [ServerMessage::Error { .. }]));
    let out = m
        .handle_message(id, r#"{"type":"place","point":[9.0,9.0]}"#)
        .unwrap();
    assert!(matches!(out.last(), Some(ServerMessage::Error { .. })));
    // The session still works afterwards.
    assert!(matches!(
        send(&mut m, id, &frame_msg(&h, 6)).first(),
        Some(ServerMessage::Heatmap { .. })
    ));
}

#[test]
fn fuzzed_text_never_panics() {
    let mut m = manager(Some(flat_model()));
    let id = m.open_session(Mode::Preemptive, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let pieces = [
        "{",
        "}",
        "\"type\"",
        ":",
        "\"frame\"",
        "\"place\"",
        "\"reset\"",
        ",",
        "[",
        "]",
        "1e308",
        "-0",
        "\"t\"",
        "\"point\"",
        "NaN",
        "null",
        "true",
        "\"mode\"",
        "\"preemptive\"",
    ];
    use rand::Rng;
    for _ in 0..2000 {
        let len = rng.random_range(0..12);
        let text: String = (0..len)
            .map(|_| pieces[rng.random_range(0..pieces.len())])
            .collect();
        if let Ok(out) = m.handle_message(id, &text) {
            for msg in out {
                serde_json::to_string(&msg).unwrap();
            }
        }
        if m.session(id).is_none() {
            break;
        }
    }
}

#[test]
fn reset_switches_mode_and_clears_trial() {
    let mut m = manager(Some(flat_model()));
    let id = m.open_session(Mode::Preemptive, None).unwrap();
    let h = human(Cell::new(2, 5), 5);
    play(&mut m, id, &h);
    let out = send(
        &mut m,
        id,
        &ClientMessage::Reset {
            mode: Some(Mode::Reactive),
        },
    );
    assert!(matches!(
        out.as_slice(),
        [ServerMessage::Robot {
            action: StateKind::Idle,
            goal: None,
            ..
        }]
    ));
    assert_eq!(m.session(id).unwrap().mode(), Mode::Reactive);
    let out = play(&mut m, id, &h);
    assert!(out
        .iter()
        .all(|m| !matches!(m, ServerMessage::Heatmap { .. })));
    metrics(&out);
    // A second placement without a reset is refused.
    let again = send(
        &mut m,
        id,
        &ClientMessage::Place {
            point: h.target_point,
            t: None,
        },
    );
    assert!(matches!(again.as_slice(), [ServerMessage::Error { .. }]));
}

#[test]
fn manager_rejects_bad_sessions() {
    let mut m = manager(None);
    assert!(matches!(
        m.open_session(Mode::Preemptive, None),
        Err(ServiceError::ModelUnavailable)
    ));
    assert!(matches!(
        m.handle_message(42, "{}"),
        Err(ServiceError::UnknownSession(42))
    ));
    let mut m = manager(Some(flat_model()));
    let g = GridSpec {
        n: 4,
        ..GridSpec::default()
    };
    assert!(matches!(
        m.open_session(Mode::Reactive, Some(g)),
        Err(ServiceError::GridMismatch { .. })
    ));
    let id = m.open_session(Mode::Reactive, None).unwrap();
    assert_eq!(m.len(), 1);
    send(&mut m, id, &ClientMessage::Close {});
    assert!(m.is_empty());
    assert!(matches!(
        m.close_session(id),
        Err(ServiceError::UnknownSession(_))
    ));
}

/// A live session fed a recorded reach reproduces the offline trial timing.
#[test]
fn replay_matches_simulated_trial() {
    let config = TrialConfig::default();
    let frame_period = 1.0 / SimConfig::default().frame_rate;
    let model = flat_model();
    for (mode, predictor) in [
        (Mode::Reactive, Predictor::None),
        (Mode::Preemptive, Predictor::Model(model.clone())),
    ] {
        for (i, cell) in [
            Cell::new(0, 0),
            Cell::new(1, 3),
            Cell::new(4, 9),
            Cell::new(2, 7),
        ]
        .into_iter()
        .enumerate()
        {
            let h = human(cell, 20 + i as u64);
            let sim = run_trial(&h, mode, &predictor, &config, 11).unwrap();
            let mut m = manager(Some(model.clone()));
            let id = m.open_session(mode, None).unwrap();
            let (response, grab, err) = metrics(&play(&mut m, id, &h));
            assert!(
                (response - sim.response_time).abs() <= frame_period,
                "{mode:?} {cell}"
            );
            assert!(
                (grab - sim.start_to_grab).abs() <= frame_period,
                "{mode:?} {cell}"
            );
            assert_eq!(err, sim.error.map(|e| e.euclid_grids));
        }
    }
}
