use std::fs;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use trajgraph::config::RunConfig;
use trajgraph::dataset::{
    corrupt, generate_benchmark, load_corrupted, load_scenes_with_rate, save_corrupted, save_scenes, BenchmarkSpec,
    CorruptionSpec,
};
use trajgraph::eval::{evaluate, parse_mode_pair, Condition, DataVariant, EvalData};
use trajgraph::network::ModelParams;
use trajgraph::occupancy::{rasterize, OccupancyGrid, PointCloud};
use trajgraph::predictor::{predict_two_pass, prediction_records, read_records, write_records, GridSet};
use trajgraph::scene::{materialize_mode, slice_windows, slice_windows_pair, Mode, Scene, Window};
use trajgraph::train::{train, Ablations};
use trajgraph::Error;

mod plot;

#[derive(Parser)]
#[command(name = "trajgraph", version, about = "Trajectory prediction with incomplete histories")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablate {
    Obs,
    Code,
    Clu,
}

#[derive(clap::Args)]
struct Common {
    /// Scene file (line-delimited JSON).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Occupancy grid file; repeat for several grids.
    #[arg(long)]
    grid: Vec<PathBuf>,
    /// Mode pair such as ff, pp or pf; training uses the first letter.
    #[arg(long)]
    mode: Vec<String>,
    #[arg(long, value_enum)]
    ablate: Vec<Ablate>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a scene file and write it in canonical form.
    Ingest {
        #[command(flatten)]
        common: Common,
    },
    /// Rasterize a point cloud into an occupancy grid.
    MakeGrid {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = trajgraph::occupancy::DEFAULT_RESOLUTION)]
        resolution: f64,
        #[arg(long, default_value_t = trajgraph::occupancy::DEFAULT_COUNT_THRESHOLD)]
        threshold: usize,
    },
    /// Generate the synthetic benchmark: scenes plus their grid.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Where to write the grid; defaults to `<out>` with extension `ogrid`.
        #[arg(long)]
        grid_out: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        scenes: usize,
        #[arg(long, default_value_t = 6)]
        pedestrians: usize,
        #[arg(long, default_value_t = 40)]
        frames: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Drop a fraction of observed entries; writes `<out>.obs` and `<out>.lbl`.
    Corrupt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        drop_fraction: Option<f64>,
    },
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Stem of a corrupted pair (`<stem>.obs`, `<stem>.lbl`).
        #[arg(long)]
        corrupted: Option<PathBuf>,
    },
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// One SVG per predicted window: history, labels, candidates, obstacles.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(String, Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_, Error::Diverged { .. }) => 3,
            Failure::Data(..) => 2,
        }
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

trait Context<T> {
    fn ctx(self, what: impl FnOnce() -> String) -> CmdResult<T>;
}

impl<T> Context<T> for trajgraph::Result<T> {
    fn ctx(self, what: impl FnOnce() -> String) -> CmdResult<T> {
        self.map_err(|e| Failure::Data(what(), e))
    }
}

fn io_ctx<T>(r: std::io::Result<T>, path: &Path) -> CmdResult<T> {
    r.map_err(|e| Failure::Data(format!("writing {}", path.display()), Error::Io { path: path.into(), source: e }))
}

fn required(p: Option<PathBuf>, what: &str) -> CmdResult<PathBuf> {
    p.ok_or_else(|| Failure::Usage(format!("missing --{what}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Data(c, e) => eprintln!("error: {c}: {e}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> CmdResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).ctx(|| "loading config".into()),
        None => Ok(RunConfig::default()),
    }
}

fn apply_common(cfg: &mut RunConfig, c: &Common) -> CmdResult<()> {
    if let Some(d) = &c.dataset {
        cfg.paths.dataset = Some(d.clone());
    }
    if let Some(g) = c.grid.first() {
        cfg.paths.grid = Some(g.clone());
    }
    if let Some(o) = &c.out {
        cfg.paths.out = Some(o.clone());
    }
    if let Some(s) = c.seed {
        cfg.train.seed = s;
        cfg.init_seed = s;
        cfg.data.corruption_seed = s;
    }
    if !c.ablate.is_empty() {
        cfg.train.ablations = ablations(&c.ablate);
    }
    if let Some(m) = c.mode.first() {
        cfg.train.mode = mode_pair(m)?.0;
    }
    Ok(())
}

fn ablations(list: &[Ablate]) -> Ablations {
    let mut a = Ablations::default();
    for x in list {
        match x {
            Ablate::Obs => a.no_obs = true,
            Ablate::Code => a.no_code = true,
            Ablate::Clu => a.no_clu = true,
        }
    }
    a
}

fn mode_pair(s: &str) -> CmdResult<(Mode, Mode)> {
    match s {
        "p" | "pad" => Ok((Mode::Pad, Mode::Pad)),
        "f" | "filtration" => Ok((Mode::Filtration, Mode::Filtration)),
        _ => parse_mode_pair(s).map_err(|e| Failure::Usage(e.to_string())),
    }
}

fn load_dataset(cfg: &RunConfig) -> CmdResult<Vec<Scene>> {
    let path = required(cfg.paths.dataset.clone(), "dataset")?;
    load_scenes_with_rate(&path, cfg.data.frame_rate_hz).ctx(|| format!("loading {}", path.display()))
}

fn load_grids(paths: &[PathBuf]) -> CmdResult<GridSet> {
    let mut set = GridSet::default();
    for p in paths {
        set.insert(OccupancyGrid::load(p).ctx(|| format!("loading grid {}", p.display()))?);
    }
    Ok(set)
}

fn windows_of(scenes: &[Scene], cfg: &RunConfig) -> CmdResult<Vec<Window>> {
    let mut out = Vec::new();
    for s in scenes {
        out.extend(slice_windows(s, cfg.model.t_obs, cfg.model.t_pred, cfg.data.stride).ctx(|| format!("slicing scene {}", s.scene_id))?);
    }
    Ok(out)
}

/// Writes the configuration next to an artifact that has no room for it.
fn write_sidecar(artifact: &Path, cfg: &RunConfig) -> CmdResult<()> {
    let mut name = artifact.as_os_str().to_owned();
    name.push(".config.toml");
    let path = PathBuf::from(name);
    io_ctx(fs::write(&path, cfg.to_toml()), &path)
}

fn load_checkpoint(path: &Option<PathBuf>, cfg: &RunConfig) -> CmdResult<(ModelParams, serde_json::Value)> {
    let path = match path.clone().or_else(|| cfg.paths.checkpoint.clone()) {
        Some(p) => p,
        None => return Err(Failure::Usage("missing --checkpoint".into())),
    };
    ModelParams::load(&path).ctx(|| format!("loading checkpoint {}", path.display()))
}

/// Ablations recorded at training time unless overridden on the command line.
fn trained_ablations(manifest: &serde_json::Value, common: &Common) -> Ablations {
    if !common.ablate.is_empty() {
        return ablations(&common.ablate);
    }
    manifest
        .get("ablations")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or_default()
}

fn run(cli: Cli) -> CmdResult<()> {
    let mut cfg = load_config(&cli.config)?;
    match cli.command {
        Command::Ingest { common } => {
            apply_common(&mut cfg, &common)?;
            let scenes = load_dataset(&cfg)?;
            let out = required(cfg.paths.out.clone(), "out")?;
            save_scenes(&scenes, &out).ctx(|| "writing scenes".into())?;
            let tracks: usize = scenes.iter().map(|s| s.tracks.len()).sum();
            eprintln!("{} scenes, {} tracks -> {}", scenes.len(), tracks, out.display());
            write_sidecar(&out, &cfg)
        }
        Command::MakeGrid {
            cloud,
            out,
            resolution,
            threshold,
        } => {
            let pc = PointCloud::load(&cloud).ctx(|| format!("loading {}", cloud.display()))?;
            if pc.points.is_empty() {
                eprintln!("warning: {} has no points; writing an empty grid", cloud.display());
            }
            let grid = rasterize(&pc, resolution, trajgraph::occupancy::DEFAULT_Z_BAND, threshold).ctx(|| "rasterizing".into())?;
            grid.save(&out).ctx(|| "writing grid".into())?;
            eprintln!("{}x{} grid, {} occupied cells -> {}", grid.width, grid.height, grid.occupied_count(), out.display());
            write_sidecar(&out, &cfg)
        }
        Command::Synth {
            out,
            grid_out,
            scenes,
            pedestrians,
            frames,
            seed,
        } => {
            let spec = BenchmarkSpec {
                n_scenes: scenes,
                n_pedestrians: pedestrians,
                n_frames: frames,
                seed: seed.unwrap_or(cfg.init_seed),
                ..BenchmarkSpec::default()
            };
            let (scenes, grid) = generate_benchmark(&spec).ctx(|| "generating scenes".into())?;
            save_scenes(&scenes, &out).ctx(|| "writing scenes".into())?;
            let grid_path = grid_out.unwrap_or_else(|| out.with_file_name(format!("{}.ogrid", trajgraph::dataset::BENCHMARK_GRID_ID)));
            grid.save(&grid_path).ctx(|| "writing grid".into())?;
            eprintln!("{} scenes -> {}, grid -> {}", scenes.len(), out.display(), grid_path.display());
            write_sidecar(&out, &cfg)
        }
        Command::Corrupt { common, drop_fraction } => {
            apply_common(&mut cfg, &common)?;
            if let Some(f) = drop_fraction {
                cfg.data.drop_fraction = f;
            }
            cfg.validate().ctx(|| "config".into())?;
            let scenes = load_dataset(&cfg)?;
            let out = required(cfg.paths.out.clone(), "out")?;
            let spec = CorruptionSpec {
                drop_fraction: cfg.data.drop_fraction,
                seed: cfg.data.corruption_seed,
                ..CorruptionSpec::default()
            };
            let data = corrupt(&scenes, &spec).ctx(|| "corrupting".into())?;
            save_corrupted(&data, &out).ctx(|| "writing corrupted pair".into())?;
            eprintln!("flipped {} observed entries -> {}.obs / .lbl", data.flipped, out.display());
            write_sidecar(&out, &cfg)
        }
        Command::Train { common, epochs } => {
            apply_common(&mut cfg, &common)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate().ctx(|| "config".into())?;
            let scenes = load_dataset(&cfg)?;
            let grids = load_grids(&common.grid)?;
            let windows = windows_of(&scenes, &cfg)?;
            let out = required(cfg.paths.out.clone(), "out")?;
            io_ctx(fs::create_dir_all(&out), &out)?;
            io_ctx(fs::write(out.join("config.toml"), cfg.to_toml()), &out)?;
            let mut params = ModelParams::init(cfg.model, cfg.init_seed).ctx(|| "initializing".into())?;
            let hist_path = out.join("history.jsonl");
            let mut hist = BufWriter::new(io_ctx(fs::File::create(&hist_path), &hist_path)?);
            let ck_path = out.join("checkpoint.json");
            let manifest = |epoch: usize| {
                serde_json::json!({
                    "epoch": epoch,
                    "train_mode": cfg.train.mode,
                    "ablations": cfg.train.ablations,
                    "config": cfg.to_json(),
                })
            };
            let mut write_err = None;
            let result = train(&windows, &grids, &mut params, &cfg.predict, &cfg.train, |rec, p| {
                let r = serde_json::to_writer(&mut hist, rec)
                    .map_err(std::io::Error::from)
                    .and_then(|_| writeln!(hist))
                    .and_then(|_| hist.flush());
                if let Err(e) = r {
                    write_err = Some(Failure::Data("writing history".into(), Error::Io { path: hist_path.clone(), source: e }));
                    return ControlFlow::Break(());
                }
                if let Err(e) = p.save(&ck_path, manifest(rec.epoch)) {
                    write_err = Some(Failure::Data("writing checkpoint".into(), e));
                    return ControlFlow::Break(());
                }
                eprintln!("epoch {:4}  loss {:.5}", rec.epoch, rec.loss);
                ControlFlow::Continue(())
            });
            if let Some(e) = write_err {
                return Err(e);
            }
            let history = result.ctx(|| "training".into())?;
            eprintln!("{} epochs, checkpoint -> {}", history.len(), ck_path.display());
            Ok(())
        }
        Command::Eval {
            common,
            checkpoint,
            corrupted,
        } => {
            apply_common(&mut cfg, &common)?;
            let (params, manifest) = load_checkpoint(&checkpoint, &cfg)?;
            let predict = trained_ablations(&manifest, &common).apply(cfg.predict);
            let grids = load_grids(&common.grid)?;
            let clean = windows_of(&load_dataset(&cfg)?, &cfg)?;
            let corrupted_windows = match &corrupted {
                Some(stem) => {
                    let pair = load_corrupted(stem).ctx(|| format!("loading {}", stem.display()))?;
                    let mut w = Vec::new();
                    for (o, l) in pair.observation.iter().zip(&pair.label) {
                        w.extend(slice_windows_pair(o, l, params.hyper.t_obs, params.hyper.t_pred, cfg.data.stride).ctx(|| "slicing corrupted pair".into())?);
                    }
                    Some(w)
                }
                None => None,
            };
            let pairs = if common.mode.is_empty() { vec!["pp".to_string()] } else { common.mode.clone() };
            let mut conditions = Vec::new();
            for m in &pairs {
                let (train_mode, test_mode) = mode_pair(m)?;
                conditions.push(Condition { train_mode, test_mode, data: DataVariant::Clean });
                if corrupted_windows.is_some() {
                    conditions.push(Condition { train_mode, test_mode, data: DataVariant::Corrupted });
                }
            }
            let name = cfg
                .paths
                .dataset
                .as_ref()
                .and_then(|p| p.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let data = EvalData {
                name: &name,
                clean: &clean,
                corrupted: corrupted_windows.as_deref(),
            };
            let report = evaluate(
                &params,
                &data,
                &grids,
                &conditions,
                &predict,
                vec![cfg.train.seed, cfg.init_seed, cfg.data.corruption_seed],
                cfg.to_json(),
            )
            .ctx(|| "evaluating".into())?;
            print!("{}", report.summary());
            if let Some(out) = &cfg.paths.out {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                io_ctx(fs::write(out, text), out)?;
            }
            Ok(())
        }
        Command::Predict { common, checkpoint } => {
            apply_common(&mut cfg, &common)?;
            let (params, manifest) = load_checkpoint(&checkpoint, &cfg)?;
            let predict = trained_ablations(&manifest, &common).apply(cfg.predict);
            let grids = load_grids(&common.grid)?;
            let scenes = load_dataset(&cfg)?;
            let mode = common.mode.first().map(|m| mode_pair(m)).transpose()?.map_or(cfg.train.mode, |p| p.1);
            let out = required(cfg.paths.out.clone(), "out")?;
            let mut w = BufWriter::new(io_ctx(fs::File::create(&out), &out)?);
            let mut count = 0;
            for scene in &scenes {
                let windows = slice_windows(scene, params.hyper.t_obs, params.hyper.t_pred, cfg.data.stride)
                    .ctx(|| format!("slicing scene {}", scene.scene_id))?;
                for win in windows {
                    let win = materialize_mode(&win, mode);
                    if win.is_empty() {
                        continue;
                    }
                    let res = predict_two_pass(&win, grids.for_window(&win), &params, &predict)
                        .ctx(|| format!("predicting {} t0={}", win.scene_id, win.t0))?;
                    io_ctx(write_records(&prediction_records(&win, &res), &mut w), &out)?;
                    count += 1;
                }
            }
            io_ctx(w.flush(), &out)?;
            eprintln!("{count} windows -> {}", out.display());
            write_sidecar(&out, &cfg)
        }
        Command::Plot { common, predictions } => {
            apply_common(&mut cfg, &common)?;
            let records = read_records(&predictions).ctx(|| format!("reading {}", predictions.display()))?;
            let out = required(cfg.paths.out.clone(), "out")?;
            io_ctx(fs::create_dir_all(&out), &out)?;
            if records.is_empty() {
                eprintln!("no prediction records; nothing to plot");
                return Ok(());
            }
            let scenes = load_dataset(&cfg)?;
            let grids = load_grids(&common.grid)?;
            let written = plot::render_all(&records, &scenes, &grids, cfg.model.t_obs, &cfg, &out)?;
            eprintln!("{written} images -> {}", out.display());
            Ok(())
        }
    }
}
