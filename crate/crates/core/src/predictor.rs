//! Two-pass prediction: predict without the environment, look up static
//! obstacles near the first-pass trajectories, add them as graph nodes and
//! predict again.

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, inject_obstacles, GraphConfig, STGraph};
use crate::metrics::window_loss;
use crate::network::{forward_cached, ForwardCache, ModelParams};
use crate::occupancy::{obstacles_near, thin_obstacles, OccupancyGrid};
use crate::scene::{is_eligible, Track, Window};

pub const DEFAULT_OD: f64 = 0.8;
pub const DEFAULT_FD: f64 = 1.0;

/// Which first-pass trajectories feed the obstacle search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleSource {
    FirstCandidate,
    AllCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Obstacles strictly closer than this to a first-pass point are added.
    pub od: f64,
    /// Minimum spacing between added obstacle nodes.
    pub fd: f64,
    pub obstacle_source: ObstacleSource,
    /// When false only the first pass runs.
    pub obstacles: bool,
    pub graph: GraphConfig,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            od: DEFAULT_OD,
            fd: DEFAULT_FD,
            obstacle_source: ObstacleSource::FirstCandidate,
            obstacles: true,
            graph: GraphConfig::default(),
        }
    }
}

/// Raw output of both passes in graph slot order.
pub struct TwoPass {
    /// First-pass candidates `[K, T_pred, n1, 2]`.
    pub pass1: Array4<f64>,
    pub pass1_graph: STGraph,
    pub obstacles: Vec<(f64, f64)>,
    /// Graph of the final pass; equals `pass1_graph` when no obstacle was
    /// added.
    pub graph: STGraph,
    /// Final candidates `[K, T_pred, n, 2]`.
    pub output: Array4<f64>,
    pub cache: ForwardCache,
}

impl TwoPass {
    /// Final candidates restricted to the window's pedestrians, in window
    /// order: `[K, T_pred, m, 2]`.
    pub fn pedestrian_candidates(&self) -> Array4<f64> {
        self.output.select(Axis(2), &self.graph.pedestrian_slots())
    }

    /// Scatters a `[K, T_pred, m, 2]` gradient back to graph slots.
    pub fn scatter_gradient(&self, d: &Array4<f64>) -> Array4<f64> {
        let mut out = Array4::zeros(self.output.dim());
        for (i, s) in self.graph.pedestrian_slots().into_iter().enumerate() {
            out.index_axis_mut(Axis(2), s).assign(&d.index_axis(Axis(2), i));
        }
        out
    }
}

/// Grids available to a run. A window uses the grid named by its
/// `grid_ref` when present, otherwise the default grid.
#[derive(Debug, Clone, Default)]
pub struct GridSet {
    pub by_id: std::collections::BTreeMap<String, OccupancyGrid>,
    pub default: Option<OccupancyGrid>,
}

impl GridSet {
    pub fn single(grid: OccupancyGrid) -> Self {
        GridSet {
            by_id: Default::default(),
            default: Some(grid),
        }
    }

    pub fn insert(&mut self, grid: OccupancyGrid) {
        match grid.id.clone() {
            Some(id) => {
                self.by_id.insert(id, grid);
            }
            None => self.default = Some(grid),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty() && self.default.is_none()
    }

    pub fn for_window(&self, window: &Window) -> Option<&OccupancyGrid> {
        self.for_ref(window.grid_ref.as_deref())
    }

    pub fn for_ref(&self, grid_ref: Option<&str>) -> Option<&OccupancyGrid> {
        grid_ref
            .and_then(|r| self.by_id.get(r))
            .or(self.default.as_ref())
            .or_else(|| (self.by_id.len() == 1).then(|| self.by_id.values().next().unwrap()))
    }
}

fn check_grid(window: &Window, grid: &OccupancyGrid) -> Result<()> {
    if let (Some(scene), Some(id)) = (&window.grid_ref, &grid.id) {
        if scene != id {
            return Err(Error::GridMismatch {
                grid: id.clone(),
                scene: scene.clone(),
            });
        }
    }
    Ok(())
}

/// Runs pass 1, the obstacle search and (when obstacles were found) pass 2,
/// keeping the forward cache of the final pass. Errors on an empty window.
pub fn run_two_pass(
    window: &Window,
    grid: Option<&OccupancyGrid>,
    params: &ModelParams,
    config: &PredictConfig,
) -> Result<TwoPass> {
    if window.is_empty() {
        return Err(Error::InvalidArgument("window has no pedestrians".into()));
    }
    let g1 = build_graph(window, &config.graph);
    let (c1, cache1) = forward_cached(&g1, params)?;
    let grid = match grid {
        Some(g) if config.obstacles => {
            check_grid(window, g)?;
            g
        }
        _ => {
            return Ok(TwoPass {
                pass1: c1.clone(),
                pass1_graph: g1.clone(),
                obstacles: Vec::new(),
                graph: g1,
                output: c1,
                cache: cache1,
            })
        }
    };
    let ks = match config.obstacle_source {
        ObstacleSource::FirstCandidate => 1,
        ObstacleSource::AllCandidates => c1.shape()[0],
    };
    let (_, t_pred, _, _) = c1.dim();
    let mut points = Vec::new();
    for s in g1.pedestrian_slots() {
        for k in 0..ks {
            for t in 0..t_pred {
                points.push((c1[[k, t, s, 0]], c1[[k, t, s, 1]]));
            }
        }
    }
    let obstacles = thin_obstacles(&obstacles_near(grid, &points, config.od), config.fd);
    if obstacles.is_empty() {
        return Ok(TwoPass {
            pass1: c1.clone(),
            pass1_graph: g1.clone(),
            obstacles,
            graph: g1,
            output: c1,
            cache: cache1,
        });
    }
    let g2 = inject_obstacles(&g1, &obstacles);
    let (c2, cache2) = forward_cached(&g2, params)?;
    Ok(TwoPass {
        pass1: c1,
        pass1_graph: g1,
        obstacles,
        graph: g2,
        output: c2,
        cache: cache2,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    /// `[K, T_pred, m, 2]` in meters, window pedestrian order.
    pub candidates: Array4<f64>,
    /// Best candidate per pedestrian against the window labels; 0 where no
    /// label frame is valid.
    pub chosen: Vec<usize>,
    /// Candidate 0 of the first pass, `[T_pred, m, 2]`.
    pub pass1_trajectories: Array3<f64>,
    pub obstacles_used: Vec<(f64, f64)>,
    pub eligibility: Vec<bool>,
    /// 1 when only the first pass ran.
    pub passes: usize,
}

impl PredictionResult {
    pub fn m(&self) -> usize {
        self.candidates.shape()[2]
    }
}

pub fn predict_two_pass(
    window: &Window,
    grid: Option<&OccupancyGrid>,
    params: &ModelParams,
    config: &PredictConfig,
) -> Result<PredictionResult> {
    let h = params.hyper;
    if window.is_empty() {
        return Ok(PredictionResult {
            candidates: Array4::zeros((h.candidates, h.t_pred, 0, 2)),
            chosen: Vec::new(),
            pass1_trajectories: Array3::zeros((h.t_pred, 0, 2)),
            obstacles_used: Vec::new(),
            eligibility: Vec::new(),
            passes: if config.obstacles && grid.is_some() { 2 } else { 1 },
        });
    }
    let run = run_two_pass(window, grid, params, config)?;
    let candidates = run.pedestrian_candidates();
    let slots1 = run.pass1_graph.pedestrian_slots();
    let pass1_trajectories = run.pass1.index_axis(Axis(0), 0).select(Axis(1), &slots1);

    let (gt, mask) = labels(window);
    let chosen = match window_loss(candidates.view(), gt.view(), mask.view()) {
        Ok((_, _, chosen)) => chosen
            .into_iter()
            .enumerate()
            .map(|(i, c)| if mask.column(i).iter().any(|&v| v) { c } else { 0 })
            .collect(),
        Err(_) => vec![0; window.m()],
    };
    Ok(PredictionResult {
        candidates,
        chosen,
        pass1_trajectories,
        obstacles_used: run.obstacles,
        eligibility: window.history.iter().map(|r| is_eligible(r)).collect(),
        passes: if config.obstacles && grid.is_some() { 2 } else { 1 },
    })
}

/// Label positions `[T_pred, m, 2]` (zero where missing) and their mask.
pub fn labels(window: &Window) -> (Array3<f64>, ndarray::Array2<bool>) {
    let m = window.m();
    let mut gt = Array3::zeros((window.t_pred, m, 2));
    let mut mask = ndarray::Array2::from_elem((window.t_pred, m), false);
    for (i, row) in window.future.iter().enumerate() {
        for (t, p) in row.iter().enumerate() {
            if let Some((x, y)) = p.xy() {
                gt[[t, i, 0]] = x;
                gt[[t, i, 1]] = y;
                mask[[t, i]] = true;
            }
        }
    }
    (gt, mask)
}

/// Delay in seconds between a pedestrian's first observation and the end of
/// the first frame at which it becomes eligible for prediction, counting
/// the frames inclusively. `None` when the track never becomes eligible.
pub fn response_latency(track: &Track, t_obs: usize, frame_period: f64) -> Option<f64> {
    let first_seen = (track.first_frame..=track.last_frame()).find(|&f| track.at(f).is_observed())?;
    for f in first_seen..=track.last_frame() {
        let row: Vec<_> = (0..t_obs).map(|k| track.at(f - t_obs as i64 + 1 + k as i64)).collect();
        if is_eligible(&row) {
            return Some((f - first_seen + 1) as f64 * frame_period);
        }
    }
    None
}

/// One predicted position. `t` is the absolute frame number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub scene_id: String,
    pub t0: i64,
    pub pedestrian_id: String,
    pub candidate: usize,
    pub t: i64,
    pub x: f64,
    pub y: f64,
}

pub fn prediction_records(window: &Window, result: &PredictionResult) -> Vec<PredictionRecord> {
    let (k, t_pred, m, _) = result.candidates.dim();
    let mut out = Vec::with_capacity(k * t_pred * m);
    for i in 0..m {
        for c in 0..k {
            for t in 0..t_pred {
                out.push(PredictionRecord {
                    scene_id: window.scene_id.clone(),
                    t0: window.t0,
                    pedestrian_id: window.pedestrian_ids[i].clone(),
                    candidate: c,
                    t: window.t0 + 1 + t as i64,
                    x: result.candidates[[c, t, i, 0]],
                    y: result.candidates[[c, t, i, 1]],
                });
            }
        }
    }
    out
}

pub fn write_records(records: &[PredictionRecord], mut w: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, n + 1, e.to_string()))?);
    }
    Ok(out)
}
