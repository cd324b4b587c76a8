use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use trajgraph::occupancy::{occupied_points, rasterize, OccupancyGrid, PointCloud, DEFAULT_Z_BAND};
use trajgraph::predictor::{read_records, PredictionRecord};

const SMALL: &str = "[model]\nn_gru = 6\nmlp_hidden = 6\n\n[train]\nepochs = 2\nbatch_size = 8\n\n[data]\nstride = 4\n";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajgraph")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(ws.path("small.toml"), SMALL).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn synth(&self) {
        let o = run(&[
            "synth",
            "--out",
            s(&self.path("bench.jsonl")),
            "--scenes",
            "2",
            "--frames",
            "28",
            "--seed",
            "3",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (cfg, data, grid, out) = (self.path("small.toml"), self.path("bench.jsonl"), self.path("bench.ogrid"), self.path(out));
        let mut args = vec!["--config", s(&cfg), "train", "--dataset", s(&data), "--grid", s(&grid), "--out", s(&out)];
        args.extend_from_slice(extra);
        run(&args)
    }
}

#[test]
fn ingest_accepts_valid_rejects_malformed_and_is_idempotent() {
    let ws = Workspace::new();
    let input = ws.path("in.jsonl");
    fs::write(
        &input,
        "{\"scene_id\":\"a\",\"frame\":0,\"pedestrian_id\":\"p\",\"x\":1.0,\"y\":2.0}\n\
         {\"scene_id\":\"a\",\"frame\":1,\"pedestrian_id\":\"p\",\"x\":null,\"y\":null}\n\
         {\"scene_id\":\"a\",\"frame\":2,\"pedestrian_id\":\"q\",\"x\":0.5,\"y\":0.5}\n",
    )
    .unwrap();
    let once = ws.path("once.jsonl");
    let o = run(&["ingest", "--dataset", s(&input), "--out", s(&once)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(ws.path("once.jsonl.config.toml").exists());
    let twice = ws.path("twice.jsonl");
    assert_eq!(code(&run(&["ingest", "--dataset", s(&once), "--out", s(&twice)])), 0);
    assert_eq!(fs::read(&once).unwrap(), fs::read(&twice).unwrap());

    let bad = ws.path("bad.jsonl");
    fs::write(
        &bad,
        "{\"scene_id\":\"a\",\"frame\":0,\"pedestrian_id\":\"p\",\"x\":1.0,\"y\":2.0}\n{\"scene_id\":\"a\",\"frame\":1\n",
    )
    .unwrap();
    let o = run(&["ingest", "--dataset", s(&bad), "--out", s(&ws.path("x.jsonl"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(":2"), "{}", stderr(&o));
}

#[test]
fn make_grid_counts_cells_and_round_trips() {
    let ws = Workspace::new();
    let cloud = ws.path("demo.xyz");
    // three in-band points in two cells, two in a third, one high point
    fs::write(
        &cloud,
        "0.05 0.05 1.0\n0.10 0.10 1.0\n0.15 0.05 1.5\n\
         1.05 1.05 1.0\n1.05 1.06 1.0\n\
         2.05 0.05 1.0\n2.06 0.05 0.5\n2.07 0.05 1.9\n2.05 0.05 3.0\n",
    )
    .unwrap();
    let out = ws.path("demo.ogrid");
    let o = run(&["make-grid", "--cloud", s(&cloud), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let grid = OccupancyGrid::load(&out).unwrap();
    assert_eq!(grid.occupied_count(), 2);
    let oracle = rasterize(&PointCloud::load(&cloud).unwrap(), 0.2, DEFAULT_Z_BAND, 3).unwrap();
    assert_eq!(occupied_points(&grid), occupied_points(&oracle));
    grid.save(ws.path("again.ogrid")).unwrap();
    assert_eq!(fs::read(&out).unwrap(), fs::read(ws.path("again.ogrid")).unwrap());

    let empty = ws.path("empty.xyz");
    fs::write(&empty, "# nothing here\n").unwrap();
    let out = ws.path("empty.ogrid");
    let o = run(&["make-grid", "--cloud", s(&empty), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning"));
    let g = OccupancyGrid::load(&out).unwrap();
    assert_eq!((g.width, g.height), (0, 0));
}

#[test]
fn usage_errors_exit_with_one() {
    let ws = Workspace::new();
    ws.synth();
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["ingest", "--dataset", s(&ws.path("bench.jsonl"))])), 1);
    let o = ws.train("t", &["--mode", "px"]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&run(&["train", "--ablate", "everything"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    let bad_cfg = ws.path("bad.toml");
    fs::write(&bad_cfg, "[train]\nlearnin_rate = 0.1\n").unwrap();
    let o = run(&["--config", s(&bad_cfg), "ingest"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(":2"), "{}", stderr(&o));
}

#[test]
fn training_writes_reproducible_checkpoints_and_divergence_exits_three() {
    let ws = Workspace::new();
    ws.synth();
    let o = ws.train("a", &["--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&ws.train("b", &["--seed", "4"])), 0);
    let load = |d: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(ws.path(d).join("checkpoint.json")).unwrap()).unwrap()
    };
    let ck = load("a");
    assert_eq!(ck["arrays"], load("b")["arrays"]);
    assert_eq!(ck["manifest"]["epoch"], 1);
    assert_eq!(ck["manifest"]["config"]["model"]["n_gru"], 6);
    let history = fs::read_to_string(ws.path("a/history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);
    assert!(ws.path("a/config.toml").exists());

    let wild = ws.path("wild.toml");
    let text = SMALL.replace("epochs = 2", "epochs = 4\nlearning_rate = 1e300").replace("batch_size = 8", "batch_size = 1");
    fs::write(&wild, text).unwrap();
    let o = run(&[
        "--config",
        s(&wild),
        "train",
        "--dataset",
        s(&ws.path("bench.jsonl")),
        "--out",
        s(&ws.path("wild")),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn eval_emits_one_row_per_condition() {
    let ws = Workspace::new();
    ws.synth();
    assert_eq!(code(&ws.train("m", &[])), 0);
    let c = run(&[
        "corrupt",
        "--dataset",
        s(&ws.path("bench.jsonl")),
        "--out",
        s(&ws.path("bench_c")),
        "--drop-fraction",
        "0.1",
    ]);
    assert_eq!(code(&c), 0, "{}", stderr(&c));
    let report = ws.path("report.json");
    let o = run(&[
        "--config",
        s(&ws.path("small.toml")),
        "eval",
        "--dataset",
        s(&ws.path("bench.jsonl")),
        "--grid",
        s(&ws.path("bench.ogrid")),
        "--checkpoint",
        s(&ws.path("m/checkpoint.json")),
        "--corrupted",
        s(&ws.path("bench_c")),
        "--mode",
        "pp",
        "--mode",
        "pf",
        "--mode",
        "ff",
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    let labels: Vec<_> = rows.iter().map(|r| format!("{} {}", r["condition"], r["data"])).collect();
    assert_eq!(
        labels,
        [
            "\"p-p\" \"clean\"",
            "\"p-p\" \"corrupted\"",
            "\"p-f\" \"clean\"",
            "\"p-f\" \"corrupted\"",
            "\"f-f\" \"clean\"",
            "\"f-f\" \"corrupted\""
        ]
    );
    assert_eq!(r["header"]["od"], 0.8);
    assert!(r["header"]["config"]["model"].is_object());
    assert!(String::from_utf8_lossy(&o.stdout).contains("p-f"));
}

fn by_window(recs: &[PredictionRecord]) -> BTreeMap<(String, i64), Vec<PredictionRecord>> {
    let mut m: BTreeMap<_, Vec<_>> = BTreeMap::new();
    for r in recs {
        m.entry((r.scene_id.clone(), r.t0)).or_default().push(r.clone());
    }
    m
}

#[test]
fn predictions_with_a_grid_differ_only_where_obstacles_are_near() {
    let ws = Workspace::new();
    ws.synth();
    assert_eq!(code(&ws.train("m", &[])), 0);
    let predict = |out: &str, grid: Option<&Path>| {
        let mut args = vec![
            "--config".to_string(),
            s(&ws.path("small.toml")).into(),
            "predict".into(),
            "--dataset".into(),
            s(&ws.path("bench.jsonl")).into(),
            "--checkpoint".into(),
            s(&ws.path("m/checkpoint.json")).into(),
            "--out".into(),
            s(&ws.path(out)).into(),
        ];
        if let Some(g) = grid {
            args.push("--grid".into());
            args.push(s(g).into());
        }
        let o = Command::new(env!("CARGO_BIN_EXE_trajgraph")).args(&args).output().unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        read_records(ws.path(out)).unwrap()
    };
    let plain = predict("plain.jsonl", None);
    let with = predict("grid.jsonl", Some(&ws.path("bench.ogrid")));
    assert!(ws.path("grid.jsonl.config.toml").exists());
    let grid = OccupancyGrid::load(ws.path("bench.ogrid")).unwrap();
    let occ = occupied_points(&grid);
    let (a, b) = (by_window(&plain), by_window(&with));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    let mut differing = 0;
    for (key, recs) in &a {
        // candidate 0 without the grid is exactly the first pass
        let near = recs
            .iter()
            .filter(|r| r.candidate == 0)
            .any(|r| occ.iter().any(|o| (o.0 - r.x).hypot(o.1 - r.y) < 0.8));
        if &b[key] != recs {
            assert!(near, "window {key:?} changed without nearby obstacles");
            differing += 1;
        }
    }
    assert!(differing > 0);
}

#[test]
fn plot_draws_histories_and_obstacles() {
    let ws = Workspace::new();
    ws.synth();
    let empty = ws.path("none.jsonl");
    fs::write(&empty, "").unwrap();
    let o = run(&["plot", "--predictions", s(&empty), "--out", s(&ws.path("p0"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_dir(ws.path("p0")).unwrap().count(), 0);

    assert_eq!(code(&ws.train("m", &[])), 0);
    let preds = ws.path("p.jsonl");
    let o = run(&[
        "--config",
        s(&ws.path("small.toml")),
        "predict",
        "--dataset",
        s(&ws.path("bench.jsonl")),
        "--checkpoint",
        s(&ws.path("m/checkpoint.json")),
        "--grid",
        s(&ws.path("bench.ogrid")),
        "--out",
        s(&preds),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&[
        "--config",
        s(&ws.path("small.toml")),
        "plot",
        "--predictions",
        s(&preds),
        "--dataset",
        s(&ws.path("bench.jsonl")),
        "--grid",
        s(&ws.path("bench.ogrid")),
        "--out",
        s(&ws.path("plots")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let windows = by_window(&read_records(&preds).unwrap());
    assert_eq!(fs::read_dir(ws.path("plots")).unwrap().count(), windows.len());
    let mut saw_obstacle = false;
    for ((scene, t0), recs) in &windows {
        let svg = fs::read_to_string(ws.path("plots").join(format!("{scene}_{t0}.svg"))).unwrap();
        let m = recs.iter().map(|r| &r.pedestrian_id).collect::<std::collections::BTreeSet<_>>().len();
        assert_eq!(svg.matches("class=\"history\"").count(), m);
        assert_eq!(svg.matches("class=\"candidate\"").count(), 3 * m);
        assert!(svg.contains("n_gru = 6"));
        saw_obstacle |= svg.contains("class=\"obstacle\"");
    }
    assert!(saw_obstacle);
}
