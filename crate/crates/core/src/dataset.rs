//! Scene files, observation corruption and synthetic crowds.
//!
//! Scene files are line-delimited JSON records
//! `{"scene_id", "frame", "pedestrian_id", "x", "y"}` where null coordinates
//! mark an unobserved entry. Frames are ascending per scene.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occupancy::{rasterize, OccupancyGrid, Point3, PointCloud, DEFAULT_COUNT_THRESHOLD, DEFAULT_RESOLUTION, DEFAULT_Z_BAND};
use crate::scene::{ObservedPosition, Scene, Track, DEFAULT_FRAME_RATE_HZ};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawId {
    Int(i64),
    Text(String),
}

impl RawId {
    fn into_string(self) -> String {
        match self {
            RawId::Int(v) => v.to_string(),
            RawId::Text(s) => s,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    scene_id: RawId,
    frame: i64,
    pedestrian_id: RawId,
    x: Option<f64>,
    y: Option<f64>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    scene_id: &'a str,
    frame: i64,
    pedestrian_id: &'a str,
    x: Option<f64>,
    y: Option<f64>,
}

struct SceneAccumulator {
    scene_id: String,
    last_frame: i64,
    tracks: Vec<(String, Vec<(i64, ObservedPosition)>)>,
    by_id: HashMap<String, usize>,
}

/// Parses scene records from text. `origin` only labels error messages.
pub fn parse_scenes(text: &str, origin: &Path, frame_rate_hz: f64) -> Result<Vec<Scene>> {
    let mut scenes: Vec<SceneAccumulator> = Vec::new();
    let mut scene_index: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(origin, lineno, format!("malformed record: {e}")))?;
        let position = match (raw.x, raw.y) {
            (Some(x), Some(y)) if x.is_finite() && y.is_finite() => ObservedPosition::Observed { x, y },
            (None, None) => ObservedPosition::Unobserved,
            (Some(_), Some(_)) => {
                return Err(Error::parse(origin, lineno, "coordinates must be finite"));
            }
            _ => {
                return Err(Error::parse(origin, lineno, "x and y must be jointly null or jointly present"));
            }
        };
        let scene_id = raw.scene_id.into_string();
        let ped = raw.pedestrian_id.into_string();
        let si = *scene_index.entry(scene_id.clone()).or_insert_with(|| {
            scenes.push(SceneAccumulator {
                scene_id,
                last_frame: i64::MIN,
                tracks: Vec::new(),
                by_id: HashMap::new(),
            });
            scenes.len() - 1
        });
        let acc = &mut scenes[si];
        if raw.frame < acc.last_frame {
            return Err(Error::parse(
                origin,
                lineno,
                format!(
                    "frame {} of pedestrian '{}' follows frame {} in scene '{}' (frames must ascend)",
                    raw.frame, ped, acc.last_frame, acc.scene_id
                ),
            ));
        }
        acc.last_frame = raw.frame;
        let ti = *acc.by_id.entry(ped.clone()).or_insert_with(|| {
            acc.tracks.push((ped.clone(), Vec::new()));
            acc.tracks.len() - 1
        });
        let entries = &mut acc.tracks[ti].1;
        if entries.last().is_some_and(|&(f, _)| f == raw.frame) {
            return Err(Error::parse(
                origin,
                lineno,
                format!("duplicate record for pedestrian '{}' at frame {}", ped, raw.frame),
            ));
        }
        entries.push((raw.frame, position));
    }

    scenes
        .into_iter()
        .map(|acc| {
            let tracks = acc
                .tracks
                .into_iter()
                .map(|(id, entries)| {
                    let first = entries[0].0;
                    let last = entries[entries.len() - 1].0;
                    let mut positions = vec![ObservedPosition::Unobserved; (last - first + 1) as usize];
                    for (f, p) in entries {
                        positions[(f - first) as usize] = p;
                    }
                    Track::new(id, first, positions)
                })
                .collect();
            Scene::new(acc.scene_id, frame_rate_hz, tracks)
        })
        .collect()
}

pub fn load_scenes(path: impl AsRef<Path>) -> Result<Vec<Scene>> {
    load_scenes_with_rate(path, DEFAULT_FRAME_RATE_HZ)
}

pub fn load_scenes_with_rate(path: impl AsRef<Path>, frame_rate_hz: f64) -> Result<Vec<Scene>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenes(&text, path, frame_rate_hz)
}

/// Serializes scenes in canonical record order: scene by scene, frames
/// ascending, tracks in scene order within a frame.
pub fn format_scenes(scenes: &[Scene]) -> String {
    let mut out = String::new();
    for scene in scenes {
        for frame in scene.first_frame..=scene.last_frame() {
            for track in &scene.tracks {
                if frame < track.first_frame || frame > track.last_frame() {
                    continue;
                }
                let (x, y) = match track.at(frame).xy() {
                    Some((x, y)) => (Some(x), Some(y)),
                    None => (None, None),
                };
                let rec = OutRecord {
                    scene_id: &scene.scene_id,
                    frame,
                    pedestrian_id: &track.pedestrian_id,
                    x,
                    y,
                };
                // serialization of plain records cannot fail
                let _ = writeln!(out, "{}", serde_json::to_string(&rec).expect("record serializes"));
            }
        }
    }
    out
}

pub fn save_scenes(scenes: &[Scene], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_scenes(scenes)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CorruptionScope {
    ObservationsOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub drop_fraction: f64,
    pub seed: u64,
    pub scope: CorruptionScope,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            drop_fraction: 0.10,
            seed: 0,
            scope: CorruptionScope::ObservationsOnly,
        }
    }
}

/// Parallel observation and label views of the same scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedScenes {
    pub observation: Vec<Scene>,
    pub label: Vec<Scene>,
    pub flipped: usize,
}

/// Flips exactly `round(drop_fraction * #observed)` observed entries to
/// unobserved in the observation view, sampled without replacement. The label
/// view is an untouched copy of the input.
pub fn corrupt(scenes: &[Scene], spec: &CorruptionSpec) -> Result<CorruptedScenes> {
    if !(0.0..=1.0).contains(&spec.drop_fraction) {
        return Err(Error::InvalidArgument(format!(
            "drop_fraction must lie in [0, 1], got {}",
            spec.drop_fraction
        )));
    }
    let mut observed = Vec::new();
    for (si, scene) in scenes.iter().enumerate() {
        for (ti, track) in scene.tracks.iter().enumerate() {
            for (fi, p) in track.positions.iter().enumerate() {
                if p.is_observed() {
                    observed.push((si, ti, fi));
                }
            }
        }
    }
    let count = (spec.drop_fraction * observed.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut observation = scenes.to_vec();
    for idx in sample(&mut rng, observed.len(), count).into_iter() {
        let (si, ti, fi) = observed[idx];
        observation[si].tracks[ti].positions[fi] = ObservedPosition::Unobserved;
    }
    Ok(CorruptedScenes {
        observation,
        label: scenes.to_vec(),
        flipped: count,
    })
}

/// Writes `<stem>.obs` and `<stem>.lbl` next to each other.
pub fn save_corrupted(data: &CorruptedScenes, stem: impl AsRef<Path>) -> Result<()> {
    let stem = stem.as_ref();
    save_scenes(&data.observation, stem.with_extension("obs"))?;
    save_scenes(&data.label, stem.with_extension("lbl"))
}

pub fn load_corrupted(stem: impl AsRef<Path>) -> Result<CorruptedScenes> {
    let stem = stem.as_ref();
    let observation = load_scenes(stem.with_extension("obs"))?;
    let label = load_scenes(stem.with_extension("lbl"))?;
    Ok(CorruptedScenes {
        observation,
        label,
        flipped: 0,
    })
}

/// Axis-aligned box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Rect {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn inflate(&self, margin: f64) -> Rect {
        Rect::new(
            self.min_x - margin,
            self.min_y - margin,
            self.max_x + margin,
            self.max_y + margin,
        )
    }

    pub fn covers(&self, other: &Rect) -> bool {
        self.min_x <= other.min_x && self.min_y <= other.min_y && self.max_x >= other.max_x && self.max_y >= other.max_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WalkerModel {
    /// Walk towards random waypoints inside the arena.
    Waypoint,
    /// Cross the arena from one edge to the opposite one.
    Crossing,
    Standing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub scene_id: String,
    pub n_pedestrians: usize,
    pub n_frames: usize,
    pub model: WalkerModel,
    pub arena: Rect,
    /// Pedestrians inside any of these boxes are unobserved.
    pub occluders: Vec<Rect>,
    /// Static obstacles that walkers steer around.
    pub obstacles: Vec<Rect>,
    /// Per-pedestrian speed is drawn uniformly from this range, in meters/frame.
    pub speed_range: (f64, f64),
    pub frame_rate_hz: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            scene_id: "synth".into(),
            n_pedestrians: 6,
            n_frames: 40,
            model: WalkerModel::Waypoint,
            arena: Rect::new(-6.0, -6.0, 6.0, 6.0),
            occluders: Vec::new(),
            obstacles: Vec::new(),
            speed_range: (0.3, 0.5),
            frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
            seed: 0,
        }
    }
}

const OBSTACLE_CLEARANCE: f64 = 0.3;
const STEER_STEP_RAD: f64 = std::f64::consts::PI / 12.0;

struct Walker {
    pos: (f64, f64),
    speed: f64,
    target: (f64, f64),
    done: bool,
}

fn blocked(spec: &SynthSpec, x: f64, y: f64) -> bool {
    !spec.arena.contains(x, y) || spec.obstacles.iter().any(|o| o.inflate(OBSTACLE_CLEARANCE).contains(x, y))
}

fn free_point(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let a = &spec.arena;
    for _ in 0..1000 {
        let p = (rng.gen_range(a.min_x..=a.max_x), rng.gen_range(a.min_y..=a.max_y));
        if !blocked(spec, p.0, p.1) {
            return p;
        }
    }
    ((a.min_x + a.max_x) / 2.0, (a.min_y + a.max_y) / 2.0)
}

impl Walker {
    /// Moves at most `speed` towards the target, rotating the heading in
    /// growing increments until the step clears every obstacle.
    fn step(&mut self, spec: &SynthSpec) -> bool {
        let (dx, dy) = (self.target.0 - self.pos.0, self.target.1 - self.pos.1);
        let dist = dx.hypot(dy);
        if dist <= self.speed {
            if !blocked(spec, self.target.0, self.target.1) {
                self.pos = self.target;
                return true;
            }
        }
        let heading = dy.atan2(dx);
        let step = self.speed.min(dist);
        for k in 0..=12 {
            for sign in [1.0, -1.0] {
                if k == 0 && sign < 0.0 {
                    continue;
                }
                let a = heading + sign * k as f64 * STEER_STEP_RAD;
                let next = (self.pos.0 + step * a.cos(), self.pos.1 + step * a.sin());
                if !blocked(spec, next.0, next.1) {
                    self.pos = next;
                    return false;
                }
            }
        }
        false
    }
}

/// Generates one scene. Tracks are unobserved exactly while inside an occluder.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Scene> {
    let a = &spec.arena;
    if !(a.max_x > a.min_x && a.max_y > a.min_y) {
        return Err(Error::InvalidArgument("arena must have positive extent".into()));
    }
    if spec.occluders.iter().any(|o| o.covers(a)) {
        return Err(Error::Unobservable("an occluder covers the whole arena".into()));
    }
    let (lo, hi) = spec.speed_range;
    if !(lo >= 0.0 && hi >= lo) {
        return Err(Error::InvalidArgument(format!("invalid speed range ({lo}, {hi})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tracks = Vec::with_capacity(spec.n_pedestrians);
    for pi in 0..spec.n_pedestrians {
        let speed = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let mut walker = match spec.model {
            WalkerModel::Standing | WalkerModel::Waypoint => {
                let pos = free_point(spec, &mut rng);
                let target = if spec.model == WalkerModel::Waypoint {
                    free_point(spec, &mut rng)
                } else {
                    pos
                };
                Walker {
                    pos,
                    speed,
                    target,
                    done: false,
                }
            }
            WalkerModel::Crossing => {
                let edge = rng.gen_range(0..4);
                let u = rng.gen_range(0.1..0.9);
                let (px, py) = (a.min_x + u * (a.max_x - a.min_x), a.min_y + u * (a.max_y - a.min_y));
                let (pos, target) = match edge {
                    0 => ((a.min_x, py), (a.max_x, py)),
                    1 => ((a.max_x, py), (a.min_x, py)),
                    2 => ((px, a.min_y), (px, a.max_y)),
                    _ => ((px, a.max_y), (px, a.min_y)),
                };
                Walker {
                    pos,
                    speed,
                    target,
                    done: false,
                }
            }
        };
        let mut positions = Vec::with_capacity(spec.n_frames);
        for _ in 0..spec.n_frames {
            if walker.done {
                break;
            }
            let (x, y) = walker.pos;
            let hidden = spec.occluders.iter().any(|o| o.contains(x, y));
            positions.push(if hidden {
                ObservedPosition::Unobserved
            } else {
                ObservedPosition::Observed { x, y }
            });
            if spec.model != WalkerModel::Standing && walker.step(spec) {
                match spec.model {
                    WalkerModel::Waypoint => walker.target = free_point(spec, &mut rng),
                    WalkerModel::Crossing => walker.done = true,
                    WalkerModel::Standing => {}
                }
            }
        }
        tracks.push(Track::new(format!("p{pi}"), 0, positions));
    }
    Scene::new(spec.scene_id.clone(), spec.frame_rate_hz, tracks)
}

/// Samples a point cloud for obstacle boxes: vertical columns at every
/// `spacing` meters over each box footprint, plus ground returns over the arena.
pub fn obstacle_cloud(arena: &Rect, obstacles: &[Rect], spacing: f64) -> PointCloud {
    let mut points = Vec::new();
    let steps = |lo: f64, hi: f64| ((hi - lo) / spacing).floor() as usize + 1;
    for o in obstacles {
        for ix in 0..steps(o.min_x, o.max_x) {
            for iy in 0..steps(o.min_y, o.max_y) {
                let x = o.min_x + ix as f64 * spacing;
                let y = o.min_y + iy as f64 * spacing;
                for z in [0.5, 1.0, 1.5] {
                    points.push(Point3 { x, y, z });
                }
            }
        }
    }
    let ground = spacing * 4.0;
    for ix in 0..steps(arena.min_x, arena.max_x).div_ceil(4) {
        for iy in 0..steps(arena.min_y, arena.max_y).div_ceil(4) {
            points.push(Point3 {
                x: arena.min_x + ix as f64 * ground,
                y: arena.min_y + iy as f64 * ground,
                z: 0.0,
            });
        }
    }
    PointCloud { points }
}

/// Layout of the synthetic benchmark: a 12 m square arena with a central
/// pillar, two walls and two occluded zones.
pub fn benchmark_layout() -> (Rect, Vec<Rect>, Vec<Rect>) {
    let arena = Rect::new(-6.0, -6.0, 6.0, 6.0);
    let obstacles = vec![
        Rect::new(-0.8, -0.8, 0.8, 0.8),
        Rect::new(-4.0, 2.0, -3.0, 4.5),
        Rect::new(2.5, -4.5, 4.5, -3.5),
    ];
    let occluders = vec![Rect::new(-5.0, -5.0, -2.5, -3.0), Rect::new(1.5, 2.0, 4.0, 3.5)];
    (arena, obstacles, occluders)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub n_scenes: usize,
    pub n_pedestrians: usize,
    pub n_frames: usize,
    pub model: WalkerModel,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            n_scenes: 8,
            n_pedestrians: 6,
            n_frames: 40,
            model: WalkerModel::Crossing,
            seed: 0,
        }
    }
}

pub const BENCHMARK_GRID_ID: &str = "bench";

/// Scenes of walkers in the benchmark layout and the occupancy grid
/// rasterized from its obstacle point cloud. Every scene references the
/// grid.
pub fn generate_benchmark(spec: &BenchmarkSpec) -> Result<(Vec<Scene>, OccupancyGrid)> {
    let (arena, obstacles, occluders) = benchmark_layout();
    let mut scenes = Vec::with_capacity(spec.n_scenes);
    for k in 0..spec.n_scenes {
        let synth = SynthSpec {
            scene_id: format!("bench{:03}", k),
            n_pedestrians: spec.n_pedestrians,
            n_frames: spec.n_frames,
            model: spec.model,
            arena,
            occluders: occluders.clone(),
            obstacles: obstacles.clone(),
            seed: spec.seed.wrapping_mul(1_000_003).wrapping_add(k as u64),
            ..SynthSpec::default()
        };
        scenes.push(generate_synthetic(&synth)?.with_grid_ref(BENCHMARK_GRID_ID));
    }
    let cloud = obstacle_cloud(&arena, &obstacles, DEFAULT_RESOLUTION / 2.0);
    let grid = rasterize(&cloud, DEFAULT_RESOLUTION, DEFAULT_Z_BAND, DEFAULT_COUNT_THRESHOLD)?.with_id(BENCHMARK_GRID_ID);
    Ok((scenes, grid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_scene() -> Scene {
        Scene::new(
            "s1",
            2.5,
            vec![
                Track::new(
                    "a",
                    0,
                    vec![
                        ObservedPosition::observed(0.0, 0.5),
                        ObservedPosition::Unobserved,
                        ObservedPosition::observed(0.1, -2.25),
                    ],
                ),
                Track::new("b", 1, vec![ObservedPosition::observed(3.0, 4.0)]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn parse_partitions_by_scene_id() {
        let text = r#"{"scene_id":"a","frame":0,"pedestrian_id":1,"x":0.0,"y":0.0}
{"scene_id":"b","frame":0,"pedestrian_id":1,"x":1.0,"y":0.0}
{"scene_id":"a","frame":1,"pedestrian_id":1,"x":null,"y":null}
"#;
        let scenes = parse_scenes(text, Path::new("t"), 2.5).unwrap();
        assert_eq!(scenes.len(), 2);
        assert_eq!(scenes[0].tracks[0].positions[1], ObservedPosition::Unobserved);
        assert_eq!(scenes[1].tracks[0].pedestrian_id, "1");
    }

    #[test]
    fn half_null_coordinates_are_rejected_with_line() {
        let text = "{\"scene_id\":\"a\",\"frame\":0,\"pedestrian_id\":\"p\",\"x\":1.0,\"y\":1.0}\n\
                    {\"scene_id\":\"a\",\"frame\":1,\"pedestrian_id\":\"p\",\"x\":null,\"y\":3.0}\n";
        let err = parse_scenes(text, Path::new("f.jsonl"), 2.5).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn descending_frames_are_rejected() {
        let text = "{\"scene_id\":\"a\",\"frame\":3,\"pedestrian_id\":\"p\",\"x\":1.0,\"y\":1.0}\n\
                    {\"scene_id\":\"a\",\"frame\":2,\"pedestrian_id\":\"q\",\"x\":1.0,\"y\":1.0}\n";
        let err = parse_scenes(text, Path::new("f"), 2.5).unwrap_err().to_string();
        assert!(err.contains("f:2"), "{err}");
        assert!(err.contains("'q'"), "{err}");
    }

    #[test]
    fn empty_text_gives_no_scenes() {
        assert!(parse_scenes("", Path::new("f"), 2.5).unwrap().is_empty());
    }

    #[test]
    fn gaps_fill_as_unobserved() {
        let text = "{\"scene_id\":\"a\",\"frame\":0,\"pedestrian_id\":\"p\",\"x\":1.0,\"y\":1.0}\n\
                    {\"scene_id\":\"a\",\"frame\":3,\"pedestrian_id\":\"p\",\"x\":2.0,\"y\":1.0}\n";
        let s = &parse_scenes(text, Path::new("f"), 2.5).unwrap()[0];
        assert_eq!(s.tracks[0].positions.len(), 4);
        assert_eq!(s.tracks[0].observed_count(), 2);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let scenes = vec![sample_scene()];
        save_scenes(&scenes, &path).unwrap();
        assert!(fs::read_to_string(&path).unwrap().contains("\"x\":null"));
        assert_eq!(load_scenes(&path).unwrap(), scenes);

        save_scenes(&[], &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
        assert!(load_scenes(&path).unwrap().is_empty());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(load_scenes("/nonexistent/x.jsonl"), Err(Error::Io { .. })));
    }

    fn many_observed() -> Vec<Scene> {
        let tracks = (0..10)
            .map(|p| Track::new(format!("p{p}"), 0, (0..100).map(|f| ObservedPosition::observed(f as f64, p as f64)).collect()))
            .collect();
        vec![Scene::new("s", 2.5, tracks).unwrap()]
    }

    fn count_flipped(original: &[Scene], view: &[Scene]) -> usize {
        original
            .iter()
            .zip(view)
            .flat_map(|(a, b)| a.tracks.iter().zip(&b.tracks))
            .flat_map(|(a, b)| a.positions.iter().zip(&b.positions))
            .filter(|(a, b)| a.is_observed() && !b.is_observed())
            .count()
    }

    #[test]
    fn zero_fraction_is_identity() {
        let scenes = many_observed();
        let c = corrupt(&scenes, &CorruptionSpec { drop_fraction: 0.0, ..Default::default() }).unwrap();
        assert_eq!(c.observation, c.label);
        assert_eq!(c.label, scenes);
    }

    #[test]
    fn ten_percent_of_thousand_flips_exactly_hundred() {
        let scenes = many_observed();
        let c = corrupt(&scenes, &CorruptionSpec::default()).unwrap();
        assert_eq!(count_flipped(&scenes, &c.observation), 100);
        assert_eq!(c.flipped, 100);
        assert_eq!(c.label, scenes);
    }

    #[test]
    fn corruption_is_seed_deterministic() {
        let scenes = many_observed();
        let spec = CorruptionSpec { seed: 42, ..Default::default() };
        assert_eq!(corrupt(&scenes, &spec).unwrap(), corrupt(&scenes, &spec).unwrap());
        let other = CorruptionSpec { seed: 43, ..Default::default() };
        assert_ne!(corrupt(&scenes, &spec).unwrap().observation, corrupt(&scenes, &other).unwrap().observation);
    }

    #[test]
    fn corruption_rejects_bad_fraction() {
        assert!(corrupt(&[], &CorruptionSpec { drop_fraction: 1.5, ..Default::default() }).is_err());
    }

    #[test]
    fn standing_walkers_never_move() {
        let spec = SynthSpec {
            model: WalkerModel::Standing,
            ..Default::default()
        };
        let s = generate_synthetic(&spec).unwrap();
        for t in &s.tracks {
            let first = t.positions[0];
            assert!(t.positions.iter().all(|p| *p == first));
        }
    }

    #[test]
    fn waypoint_displacement_is_bounded() {
        let spec = SynthSpec {
            n_pedestrians: 8,
            n_frames: 200,
            speed_range: (0.5, 0.5),
            obstacles: vec![Rect::new(-1.0, -1.0, 1.0, 1.0)],
            seed: 7,
            ..Default::default()
        };
        let s = generate_synthetic(&spec).unwrap();
        let mut pairs = 0;
        for t in &s.tracks {
            for w in t.positions.windows(2) {
                if let (Some(a), Some(b)) = (w[0].xy(), w[1].xy()) {
                    assert!((a.0 - b.0).hypot(a.1 - b.1) <= 0.5 + 1e-9);
                    pairs += 1;
                }
            }
        }
        assert!(pairs > 1000);
    }

    #[test]
    fn occluder_hides_exactly_the_covered_frames() {
        // Crossing walkers start on an edge and advance 0.5 m per frame.
        let spec = SynthSpec {
            n_pedestrians: 1,
            n_frames: 10,
            model: WalkerModel::Crossing,
            speed_range: (0.5, 0.5),
            seed: 3,
            ..Default::default()
        };
        let clear = generate_synthetic(&spec).unwrap();
        let path: Vec<_> = clear.tracks[0].positions.iter().map(|p| p.xy().unwrap()).collect();
        let xs: Vec<f64> = path[3..=5].iter().map(|p| p.0).collect();
        let ys: Vec<f64> = path[3..=5].iter().map(|p| p.1).collect();
        let pad = 0.1;
        let box_ = Rect::new(
            xs.iter().cloned().fold(f64::MAX, f64::min) - pad,
            ys.iter().cloned().fold(f64::MAX, f64::min) - pad,
            xs.iter().cloned().fold(f64::MIN, f64::max) + pad,
            ys.iter().cloned().fold(f64::MIN, f64::max) + pad,
        );
        let hidden = generate_synthetic(&SynthSpec {
            occluders: vec![box_],
            ..spec.clone()
        })
        .unwrap();
        let expected: Vec<bool> = path.iter().map(|&(x, y)| !box_.contains(x, y)).collect();
        let got: Vec<bool> = hidden.tracks[0].positions.iter().map(|p| p.is_observed()).collect();
        assert_eq!(got, expected);
        assert_eq!(
            got.iter().enumerate().filter(|(_, o)| !**o).map(|(i, _)| i).collect::<Vec<_>>(),
            vec![3, 4, 5]
        );
    }

    #[test]
    fn full_arena_occluder_is_an_error() {
        let spec = SynthSpec {
            occluders: vec![Rect::new(-10.0, -10.0, 10.0, 10.0)],
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Unobservable(_))));
    }

    #[test]
    fn synthesis_is_seed_deterministic() {
        let spec = SynthSpec {
            occluders: vec![Rect::new(0.0, 0.0, 2.0, 2.0)],
            ..Default::default()
        };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    }
}
