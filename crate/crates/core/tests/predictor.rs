use ndarray::Axis;
use trajgraph::graph::{build_graph, NodeKind, CODE_BOTH};
use trajgraph::network::{forward, HyperParams, ModelParams};
use trajgraph::occupancy::{obstacles_near, occupied_points, thin_obstacles, OccupancyGrid};
use trajgraph::predictor::{
    predict_two_pass, prediction_records, read_records, response_latency, run_two_pass, write_records, PredictConfig,
};
use trajgraph::scene::{ObservedPosition, Track, Window};
use trajgraph::train::Ablations;
use trajgraph::Error;

fn params() -> ModelParams {
    let h = HyperParams {
        n_gru: 12,
        mlp_hidden: 12,
        ..HyperParams::default()
    };
    ModelParams::init(h, 11).unwrap()
}

/// Three walkers crossing the origin, one with a gap.
fn window() -> Window {
    let starts = [((-3.0, 0.2), (0.3, 0.0)), ((0.5, -3.0), (0.0, 0.35)), ((2.5, 2.5), (-0.25, -0.25))];
    let history = starts
        .iter()
        .enumerate()
        .map(|(i, ((x, y), (vx, vy)))| {
            (0..8)
                .map(|t| {
                    if i == 2 && t == 3 {
                        ObservedPosition::Unobserved
                    } else {
                        ObservedPosition::observed(x + vx * t as f64, y + vy * t as f64)
                    }
                })
                .collect()
        })
        .collect();
    let future = starts
        .iter()
        .map(|((x, y), (vx, vy))| {
            (8..20)
                .map(|t| ObservedPosition::observed(x + vx * t as f64, y + vy * t as f64))
                .collect()
        })
        .collect();
    Window {
        scene_id: "cross".into(),
        t0: 7,
        t_obs: 8,
        t_pred: 12,
        pedestrian_ids: vec!["a".into(), "b".into(), "c".into()],
        history,
        future,
        grid_ref: None,
    }
}

fn grid_with(rects: &[((f64, f64), (f64, f64))], size: usize) -> OccupancyGrid {
    let mut g = OccupancyGrid::empty((-8.0, -8.0), 0.2, size, size).unwrap();
    for &(lo, hi) in rects {
        g.fill_rect(lo, hi);
    }
    g
}

#[test]
fn free_or_distant_grids_reproduce_the_first_pass_bit_for_bit() {
    let (w, p, cfg) = (window(), params(), PredictConfig::default());
    let plain = forward(&build_graph(&w, &cfg.graph), &p).unwrap();
    let none = predict_two_pass(&w, None, &p, &cfg).unwrap();
    for grid in [grid_with(&[], 80), grid_with(&[((-8.0, -8.0), (-7.5, -7.5))], 80)] {
        let run = run_two_pass(&w, Some(&grid), &p, &cfg).unwrap();
        assert!(run.obstacles.is_empty());
        assert_eq!(run.output, plain);
        let r = predict_two_pass(&w, Some(&grid), &p, &cfg).unwrap();
        assert_eq!(r.candidates, none.candidates);
        assert!(r.obstacles_used.is_empty());
    }
}

#[test]
fn nearby_obstacles_become_static_nodes_without_changing_m() {
    let (w, p, cfg) = (window(), params(), PredictConfig::default());
    let grid = grid_with(&[((-8.0, -8.0), (8.0, 8.0))], 80);
    let run = run_two_pass(&w, Some(&grid), &p, &cfg).unwrap();
    assert!(!run.obstacles.is_empty());

    // independent re-derivation of the obstacle set from pass-1 candidate 0
    let slots = run.pass1_graph.pedestrian_slots();
    let pts: Vec<_> = slots
        .iter()
        .flat_map(|&s| (0..12).map(move |t| (s, t)))
        .map(|(s, t)| (run.pass1[[0, t, s, 0]], run.pass1[[0, t, s, 1]]))
        .collect();
    let occ = occupied_points(&grid);
    let near: Vec<_> = occ
        .into_iter()
        .filter(|o| pts.iter().any(|q| (o.0 - q.0).hypot(o.1 - q.1) < cfg.od))
        .collect();
    assert_eq!(obstacles_near(&grid, &pts, cfg.od), near);
    assert_eq!(run.obstacles, thin_obstacles(&near, cfg.fd));

    let g = &run.graph;
    assert_eq!(g.n(), 3 + run.obstacles.len());
    assert_eq!(g.pedestrian_count(), 3);
    for (s, kind) in g.kinds.iter().enumerate() {
        if *kind == NodeKind::Obstacle {
            for t in 0..8 {
                assert_eq!((g.v[[t, s, 2]], g.v[[t, s, 3]]), (0.0, 0.0));
                assert_eq!(g.no.index_axis(Axis(0), t).row(s).to_vec(), CODE_BOTH.to_vec());
            }
        }
    }
    let r = predict_two_pass(&w, Some(&grid), &p, &cfg).unwrap();
    assert_eq!(r.m(), 3);
    assert_eq!(r.candidates.shape(), &[3, 12, 3, 2]);
    assert_eq!(r.passes, 2);
    assert_eq!(r.eligibility, vec![true, true, true]);
}

#[test]
fn grids_that_agree_near_the_path_give_identical_output() {
    let (w, p, cfg) = (window(), params(), PredictConfig::default());
    let wall = ((-1.0, 0.6), (1.0, 1.0));
    let a = grid_with(&[wall], 80);
    let b = grid_with(&[wall, ((5.0, -7.0), (7.5, -5.0)), ((-7.8, 6.0), (-6.0, 7.8))], 80);
    let ra = predict_two_pass(&w, Some(&a), &p, &cfg).unwrap();
    let rb = predict_two_pass(&w, Some(&b), &p, &cfg).unwrap();
    assert_eq!(ra.obstacles_used, rb.obstacles_used);
    assert_eq!(ra.candidates, rb.candidates);
}

#[test]
fn no_obs_ablation_skips_the_second_pass() {
    let (w, p) = (window(), params());
    let cfg = Ablations {
        no_obs: true,
        ..Ablations::default()
    }
    .apply(PredictConfig::default());
    let grid = grid_with(&[((-8.0, -8.0), (8.0, 8.0))], 80);
    let r = predict_two_pass(&w, Some(&grid), &p, &cfg).unwrap();
    assert_eq!(r.passes, 1);
    assert!(r.obstacles_used.is_empty());
    let plain = predict_two_pass(&w, None, &p, &PredictConfig::default()).unwrap();
    assert_eq!(r.candidates, plain.candidates);
}

#[test]
fn empty_window_is_an_empty_result() {
    let mut w = window();
    w.pedestrian_ids.clear();
    w.history.clear();
    w.future.clear();
    let r = predict_two_pass(&w, None, &params(), &PredictConfig::default()).unwrap();
    assert_eq!(r.m(), 0);
    assert!(prediction_records(&w, &r).is_empty());
}

#[test]
fn a_grid_for_another_scene_is_rejected() {
    let mut w = window();
    w.grid_ref = Some("lobby".into());
    let grid = grid_with(&[], 10).with_id("atrium");
    match predict_two_pass(&w, Some(&grid), &params(), &PredictConfig::default()) {
        Err(Error::GridMismatch { grid, scene }) => assert_eq!((grid.as_str(), scene.as_str()), ("atrium", "lobby")),
        other => panic!("expected a grid mismatch, got {other:?}"),
    }
}

#[test]
fn records_cover_every_candidate_and_round_trip() {
    let (w, p) = (window(), params());
    let r = predict_two_pass(&w, None, &p, &PredictConfig::default()).unwrap();
    let recs = prediction_records(&w, &r);
    assert_eq!(recs.len(), 3 * 12 * 3);
    assert_eq!(recs.iter().map(|r| r.t).min(), Some(8));
    assert_eq!(recs.iter().map(|r| r.t).max(), Some(19));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    let mut buf = Vec::new();
    write_records(&recs, &mut buf).unwrap();
    std::fs::write(&path, buf).unwrap();
    assert_eq!(read_records(&path).unwrap(), recs);
}

#[test]
fn latency_counts_frames_to_eligibility() {
    let o = ObservedPosition::observed(0.0, 0.0);
    let u = ObservedPosition::Unobserved;
    let three_frames = Track::new("a", 5, vec![o, o, o]);
    assert!((response_latency(&three_frames, 8, 0.4).unwrap() - 1.2).abs() < 1e-12);
    let late = Track::new("b", 0, vec![o, u, o, o]);
    assert!((response_latency(&late, 8, 0.4).unwrap() - 1.6).abs() < 1e-12);
    assert_eq!(response_latency(&Track::new("c", 0, vec![o, u, u]), 8, 0.4), None);
}
