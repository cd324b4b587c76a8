//! SVG rendering of predicted windows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use trajgraph::config::RunConfig;
use trajgraph::occupancy::{occupied_points, OccupancyGrid};
use trajgraph::predictor::{GridSet, PredictionRecord};
use trajgraph::scene::Scene;
use trajgraph::Error;

use crate::{io_ctx, CmdResult, Failure};

const PX_PER_M: f64 = 50.0;
const MARGIN_M: f64 = 1.0;
const CANDIDATE_COLORS: [&str; 3] = ["#d62728", "#ff7f0e", "#9467bd"];

struct View {
    min_x: f64,
    max_y: f64,
    width: f64,
    height: f64,
}

impl View {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> View {
        let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for (x, y) in points {
            lo_x = lo_x.min(x);
            lo_y = lo_y.min(y);
            hi_x = hi_x.max(x);
            hi_y = hi_y.max(y);
        }
        if lo_x > hi_x {
            (lo_x, lo_y, hi_x, hi_y) = (0.0, 0.0, 0.0, 0.0);
        }
        View {
            min_x: lo_x - MARGIN_M,
            max_y: hi_y + MARGIN_M,
            width: hi_x - lo_x + 2.0 * MARGIN_M,
            height: hi_y - lo_y + 2.0 * MARGIN_M,
        }
    }

    fn px(&self, (x, y): (f64, f64)) -> (f64, f64) {
        ((x - self.min_x) * PX_PER_M, (self.max_y - y) * PX_PER_M)
    }

    fn contains(&self, (x, y): (f64, f64)) -> bool {
        x >= self.min_x && x <= self.min_x + self.width && y <= self.max_y && y >= self.max_y - self.height
    }
}

fn polyline(svg: &mut String, view: &View, pts: &[(f64, f64)], class: &str, color: &str, dashed: bool) {
    if pts.is_empty() {
        return;
    }
    let coords: Vec<String> = pts
        .iter()
        .map(|&p| {
            let (x, y) = view.px(p);
            format!("{x:.1},{y:.1}")
        })
        .collect();
    let dash = if dashed { " stroke-dasharray=\"4 3\"" } else { "" };
    writeln!(
        svg,
        "<polyline class=\"{class}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>",
        coords.join(" ")
    )
    .unwrap();
}

struct PedestrianTracks {
    id: String,
    history: Vec<(f64, f64)>,
    label: Vec<(f64, f64)>,
    candidates: BTreeMap<usize, Vec<(i64, f64, f64)>>,
}

fn render_window(
    scene: &Scene,
    t0: i64,
    records: &[&PredictionRecord],
    grid: Option<&OccupancyGrid>,
    t_obs: usize,
    cfg: &RunConfig,
) -> String {
    let mut peds: Vec<PedestrianTracks> = Vec::new();
    for r in records {
        let idx = match peds.iter().position(|p| p.id == r.pedestrian_id) {
            Some(i) => i,
            None => {
                peds.push(PedestrianTracks {
                    id: r.pedestrian_id.clone(),
                    history: Vec::new(),
                    label: Vec::new(),
                    candidates: BTreeMap::new(),
                });
                peds.len() - 1
            }
        };
        peds[idx].candidates.entry(r.candidate).or_default().push((r.t, r.x, r.y));
    }
    for p in &mut peds {
        for c in p.candidates.values_mut() {
            c.sort_by_key(|e| e.0);
        }
        let last_t = p.candidates.values().flat_map(|c| c.iter().map(|e| e.0)).max().unwrap_or(t0);
        if let Some(track) = scene.track(&p.id) {
            p.history = (t0 - t_obs as i64 + 1..=t0).filter_map(|f| track.at(f).xy()).collect();
            p.label = (t0 + 1..=last_t).filter_map(|f| track.at(f).xy()).collect();
        }
    }
    let all = peds.iter().flat_map(|p| {
        p.history
            .iter()
            .chain(&p.label)
            .copied()
            .chain(p.candidates.values().flat_map(|c| c.iter().map(|e| (e.1, e.2))))
            .collect::<Vec<_>>()
    });
    let view = View::fit(all);
    let (w, h) = (view.width * PX_PER_M, view.height * PX_PER_M);
    let mut svg = String::new();
    writeln!(svg, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.1} {h:.1}\">").unwrap();
    writeln!(svg, "<metadata><![CDATA[\n{}]]></metadata>", cfg.to_toml()).unwrap();
    writeln!(svg, "<title>{} t0={}</title>", scene.scene_id, t0).unwrap();
    writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
    if let Some(g) = grid {
        let cell = g.resolution * PX_PER_M;
        for c in occupied_points(g) {
            if !view.contains(c) {
                continue;
            }
            let (x, y) = view.px((c.0 - g.resolution / 2.0, c.1 + g.resolution / 2.0));
            writeln!(svg, "<rect class=\"obstacle\" x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"#777\"/>").unwrap();
        }
    }
    for p in &peds {
        polyline(&mut svg, &view, &p.history, "history", "#1f77b4", false);
        polyline(&mut svg, &view, &p.label, "label", "#2ca02c", false);
        for (k, c) in &p.candidates {
            let mut pts: Vec<(f64, f64)> = p.history.last().copied().into_iter().collect();
            pts.extend(c.iter().map(|e| (e.1, e.2)));
            polyline(&mut svg, &view, &pts, "candidate", CANDIDATE_COLORS[k % CANDIDATE_COLORS.len()], true);
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `<scene>_<t0>.svg` for every predicted window; returns the count.
pub fn render_all(
    records: &[PredictionRecord],
    scenes: &[Scene],
    grids: &GridSet,
    t_obs: usize,
    cfg: &RunConfig,
    out: &Path,
) -> CmdResult<usize> {
    let mut groups: BTreeMap<(String, i64), Vec<&PredictionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.scene_id.clone(), r.t0)).or_default().push(r);
    }
    for ((scene_id, t0), recs) in &groups {
        let scene = scenes.iter().find(|s| &s.scene_id == scene_id).ok_or_else(|| {
            Failure::Data(
                "plotting".into(),
                Error::InvalidArgument(format!("scene '{scene_id}' of the prediction records is not in the dataset")),
            )
        })?;
        let svg = render_window(scene, *t0, recs, grids.for_ref(scene.grid_ref.as_deref()), t_obs, cfg);
        let path = out.join(format!("{scene_id}_{t0}.svg"));
        io_ctx(fs::write(&path, svg), &path)?;
    }
    Ok(groups.len())
}
