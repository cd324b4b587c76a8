//! Scene and window representation.
//!
//! A [`Scene`] holds per-pedestrian tracks on a shared frame clock. Each frame
//! of a track is an [`ObservedPosition`], which is either a finite 2-D position
//! or explicitly unobserved (occluded, or outside the sensor's view).
//! [`slice_windows`] cuts a scene into fixed-length prediction samples and
//! [`materialize_mode`] applies the filtration or pad selection rule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FRAME_RATE_HZ: f64 = 2.5;
pub const DEFAULT_T_OBS: usize = 8;
pub const DEFAULT_T_PRED: usize = 12;

/// Minimum number of observed history frames, exclusive.
pub const ELIGIBLE_MIN_OBSERVED_EXCLUSIVE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObservedPosition {
    Observed { x: f64, y: f64 },
    Unobserved,
}

impl ObservedPosition {
    /// Panics if either coordinate is not finite.
    pub fn observed(x: f64, y: f64) -> Self {
        assert!(
            x.is_finite() && y.is_finite(),
            "observed coordinates must be finite"
        );
        ObservedPosition::Observed { x, y }
    }

    pub fn is_observed(&self) -> bool {
        matches!(self, ObservedPosition::Observed { .. })
    }

    pub fn xy(&self) -> Option<(f64, f64)> {
        match *self {
            ObservedPosition::Observed { x, y } => Some((x, y)),
            ObservedPosition::Unobserved => None,
        }
    }
}

/// A pedestrian's positions over a contiguous frame range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub pedestrian_id: String,
    pub first_frame: i64,
    pub positions: Vec<ObservedPosition>,
}

impl Track {
    pub fn new(pedestrian_id: impl Into<String>, first_frame: i64, positions: Vec<ObservedPosition>) -> Self {
        Track {
            pedestrian_id: pedestrian_id.into(),
            first_frame,
            positions,
        }
    }

    pub fn last_frame(&self) -> i64 {
        self.first_frame + self.positions.len() as i64 - 1
    }

    /// Position at an absolute frame; frames outside the lifetime are unobserved.
    pub fn at(&self, frame: i64) -> ObservedPosition {
        let offset = frame - self.first_frame;
        if offset < 0 {
            return ObservedPosition::Unobserved;
        }
        self.positions
            .get(offset as usize)
            .copied()
            .unwrap_or(ObservedPosition::Unobserved)
    }

    pub fn observed_count(&self) -> usize {
        self.positions.iter().filter(|p| p.is_observed()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub frame_rate_hz: f64,
    pub first_frame: i64,
    pub n_frames: usize,
    pub tracks: Vec<Track>,
    pub grid_ref: Option<String>,
}

impl Scene {
    /// Builds a scene whose frame span covers every track. Tracks are ordered
    /// by first frame (stable), which is the order a save/load cycle yields.
    pub fn new(scene_id: impl Into<String>, frame_rate_hz: f64, mut tracks: Vec<Track>) -> Result<Self> {
        if !(frame_rate_hz > 0.0 && frame_rate_hz.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "frame rate must be positive, got {frame_rate_hz}"
            )));
        }
        tracks.retain(|t| !t.positions.is_empty());
        tracks.sort_by_key(|t| t.first_frame);
        let (first_frame, n_frames) = match (
            tracks.iter().map(|t| t.first_frame).min(),
            tracks.iter().map(|t| t.last_frame()).max(),
        ) {
            (Some(lo), Some(hi)) => (lo, (hi - lo + 1) as usize),
            _ => (0, 0),
        };
        Ok(Scene {
            scene_id: scene_id.into(),
            frame_rate_hz,
            first_frame,
            n_frames,
            tracks,
            grid_ref: None,
        })
    }

    pub fn with_grid_ref(mut self, grid_ref: impl Into<String>) -> Self {
        self.grid_ref = Some(grid_ref.into());
        self
    }

    pub fn last_frame(&self) -> i64 {
        self.first_frame + self.n_frames as i64 - 1
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.frame_rate_hz
    }

    pub fn track(&self, pedestrian_id: &str) -> Option<&Track> {
        self.tracks.iter().find(|t| t.pedestrian_id == pedestrian_id)
    }
}

/// Prediction condition applied to a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Only pedestrians with fully observed histories.
    Filtration,
    /// Eligible pedestrians; unobserved frames are zero-substituted downstream.
    Pad,
}

impl Mode {
    pub fn short(&self) -> char {
        match self {
            Mode::Filtration => 'f',
            Mode::Pad => 'p',
        }
    }
}

/// One prediction sample: `m` pedestrians, `t_obs` history frames ending at
/// `t0`, and `t_pred` future (label) frames starting at `t0 + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub scene_id: String,
    pub t0: i64,
    pub t_obs: usize,
    pub t_pred: usize,
    pub pedestrian_ids: Vec<String>,
    /// `m` rows of `t_obs` entries; column `t` is frame `t0 - t_obs + 1 + t`.
    pub history: Vec<Vec<ObservedPosition>>,
    /// `m` rows of `t_pred` entries; column `t` is frame `t0 + 1 + t`.
    pub future: Vec<Vec<ObservedPosition>>,
    pub grid_ref: Option<String>,
}

impl Window {
    pub fn m(&self) -> usize {
        self.pedestrian_ids.len()
    }

    /// True for windows left without pedestrians by mode materialization.
    pub fn is_empty(&self) -> bool {
        self.pedestrian_ids.is_empty()
    }

    pub fn history_frame(&self, t: usize) -> i64 {
        self.t0 - self.t_obs as i64 + 1 + t as i64
    }

    /// `[t_pred][m]` validity of each label frame.
    pub fn label_mask(&self) -> Vec<Vec<bool>> {
        (0..self.t_pred)
            .map(|t| self.future.iter().map(|row| row[t].is_observed()).collect())
            .collect()
    }

    /// Last observed history position of pedestrian `i`.
    pub fn last_observed(&self, i: usize) -> Option<(f64, f64)> {
        self.history[i].iter().rev().find_map(|p| p.xy())
    }

    fn retain_rows(&self, keep: impl Fn(&[ObservedPosition]) -> bool) -> Window {
        let mut out = Window {
            pedestrian_ids: Vec::new(),
            history: Vec::new(),
            future: Vec::new(),
            ..self.clone()
        };
        for (i, row) in self.history.iter().enumerate() {
            if keep(row) {
                out.pedestrian_ids.push(self.pedestrian_ids[i].clone());
                out.history.push(row.clone());
                out.future.push(self.future[i].clone());
            }
        }
        out
    }
}

/// Cuts a scene into windows, one per valid `t0` with the given stride.
pub fn slice_windows(scene: &Scene, t_obs: usize, t_pred: usize, stride: usize) -> Result<Vec<Window>> {
    slice_windows_pair(scene, scene, t_obs, t_pred, stride)
}

/// Like [`slice_windows`], but histories come from `observation` and futures
/// from `label`. Used for corrupted datasets whose labels stay intact.
pub fn slice_windows_pair(
    observation: &Scene,
    label: &Scene,
    t_obs: usize,
    t_pred: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    if t_obs == 0 || t_pred == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "t_obs, t_pred and stride must be >= 1 (got {t_obs}, {t_pred}, {stride})"
        )));
    }
    if observation.scene_id != label.scene_id {
        return Err(Error::InvalidArgument(format!(
            "observation scene '{}' paired with label scene '{}'",
            observation.scene_id, label.scene_id
        )));
    }
    let first = observation.first_frame.min(label.first_frame);
    let last = observation.last_frame().max(label.last_frame());
    let span = (last - first + 1).max(0) as usize;
    if observation.n_frames == 0 || span < t_obs + t_pred {
        return Ok(Vec::new());
    }
    let labels: HashMap<&str, &Track> = label
        .tracks
        .iter()
        .map(|t| (t.pedestrian_id.as_str(), t))
        .collect();

    let mut windows = Vec::new();
    let mut t0 = first + t_obs as i64 - 1;
    while t0 + t_pred as i64 <= last {
        let mut window = Window {
            scene_id: observation.scene_id.clone(),
            t0,
            t_obs,
            t_pred,
            pedestrian_ids: Vec::new(),
            history: Vec::new(),
            future: Vec::new(),
            grid_ref: observation.grid_ref.clone(),
        };
        for track in &observation.tracks {
            let history: Vec<_> = (0..t_obs)
                .map(|t| track.at(t0 - t_obs as i64 + 1 + t as i64))
                .collect();
            if !history.iter().any(ObservedPosition::is_observed) {
                continue;
            }
            let future = match labels.get(track.pedestrian_id.as_str()) {
                Some(lt) => (1..=t_pred).map(|t| lt.at(t0 + t as i64)).collect(),
                None => vec![ObservedPosition::Unobserved; t_pred],
            };
            window.pedestrian_ids.push(track.pedestrian_id.clone());
            window.history.push(history);
            window.future.push(future);
        }
        if !window.is_empty() {
            windows.push(window);
        }
        t0 += stride as i64;
    }
    Ok(windows)
}

/// Observed at the latest history frame and at more than two history frames.
pub fn is_eligible(history_row: &[ObservedPosition]) -> bool {
    match history_row.last() {
        Some(latest) if latest.is_observed() => {
            history_row.iter().filter(|p| p.is_observed()).count() > ELIGIBLE_MIN_OBSERVED_EXCLUSIVE
        }
        _ => false,
    }
}

/// Every history frame observed.
pub fn is_complete(history_row: &[ObservedPosition]) -> bool {
    history_row.iter().all(ObservedPosition::is_observed)
}

/// Keeps the pedestrians a mode predicts. Unobserved entries stay unobserved;
/// zero substitution happens when the graph is built.
pub fn materialize_mode(window: &Window, mode: Mode) -> Window {
    match mode {
        Mode::Filtration => window.retain_rows(is_complete),
        Mode::Pad => window.retain_rows(is_eligible),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(x: f64, y: f64) -> ObservedPosition {
        ObservedPosition::observed(x, y)
    }

    const U: ObservedPosition = ObservedPosition::Unobserved;

    fn straight_track(id: &str, n: usize) -> Track {
        Track::new(id, 0, (0..n).map(|f| obs(f as f64, 0.0)).collect())
    }

    #[test]
    fn twenty_frames_give_one_window() {
        let scene = Scene::new("s", 2.5, vec![straight_track("a", 20)]).unwrap();
        let w = slice_windows(&scene, 8, 12, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].t0, 7);
        assert_eq!(w[0].history_frame(0), 0);
        assert_eq!(w[0].future[0][11], obs(19.0, 0.0));
    }

    #[test]
    fn nineteen_frames_give_none() {
        let scene = Scene::new("s", 2.5, vec![straight_track("a", 19)]).unwrap();
        assert!(slice_windows(&scene, 8, 12, 1).unwrap().is_empty());
    }

    #[test]
    fn fully_unobserved_pedestrian_is_dropped() {
        let mut hidden = straight_track("c", 20);
        for p in hidden.positions.iter_mut().take(8) {
            *p = U;
        }
        let scene = Scene::new(
            "s",
            2.5,
            vec![straight_track("a", 20), straight_track("b", 20), hidden],
        )
        .unwrap();
        let windows = slice_windows(&scene, 8, 12, 1).unwrap();
        // Brute-force observability scan of each track's history span.
        for w in &windows {
            let expected: Vec<_> = scene
                .tracks
                .iter()
                .filter(|t| (0..8).any(|k| t.at(w.history_frame(k)).is_observed()))
                .map(|t| t.pedestrian_id.clone())
                .collect();
            assert_eq!(w.pedestrian_ids, expected);
        }
        assert_eq!(windows[0].m(), 2);
    }

    #[test]
    fn absent_frames_read_as_unobserved() {
        let late = Track::new("late", 5, (0..15).map(|f| obs(f as f64, 1.0)).collect());
        let scene = Scene::new("s", 2.5, vec![straight_track("a", 20), late]).unwrap();
        let w = &slice_windows(&scene, 8, 12, 1).unwrap()[0];
        assert_eq!(w.m(), 2);
        assert!(w.history[1][..5].iter().all(|p| !p.is_observed()));
        assert!(w.history[1][5..].iter().all(|p| p.is_observed()));
    }

    #[test]
    fn stride_controls_window_count() {
        let scene = Scene::new("s", 2.5, vec![straight_track("a", 30)]).unwrap();
        assert_eq!(slice_windows(&scene, 8, 12, 1).unwrap().len(), 11);
        assert_eq!(slice_windows(&scene, 8, 12, 5).unwrap().len(), 3);
        assert!(slice_windows(&scene, 8, 12, 0).is_err());
    }

    #[test]
    fn eligibility_examples() {
        let mut row = vec![U; 8];
        row[7] = obs(0.0, 0.0);
        row[2] = obs(0.0, 0.0);
        assert!(!is_eligible(&row), "exactly two observed");
        row[4] = obs(0.0, 0.0);
        assert!(is_eligible(&row), "three observed including latest");
        let mut latest_missing = vec![obs(1.0, 1.0); 8];
        latest_missing[7] = U;
        assert!(!is_eligible(&latest_missing));
    }

    fn two_ped_window() -> Window {
        let complete = vec![obs(1.0, 1.0); 8];
        let mut incomplete = vec![obs(2.0, 2.0); 8];
        incomplete[1] = U;
        incomplete[3] = U;
        Window {
            scene_id: "s".into(),
            t0: 7,
            t_obs: 8,
            t_pred: 2,
            pedestrian_ids: vec!["a".into(), "b".into()],
            history: vec![complete, incomplete],
            future: vec![vec![obs(0.0, 0.0); 2]; 2],
            grid_ref: None,
        }
    }

    #[test]
    fn filtration_drops_incomplete_and_pad_keeps_eligible() {
        let w = two_ped_window();
        assert_eq!(materialize_mode(&w, Mode::Filtration).m(), 1);
        let pad = materialize_mode(&w, Mode::Pad);
        assert_eq!(pad.m(), 2);
        assert_eq!(pad.history[1][1], U);
    }

    #[test]
    fn modes_coincide_on_complete_data() {
        let mut w = two_ped_window();
        w.history[1] = vec![obs(2.0, 2.0); 8];
        assert_eq!(
            materialize_mode(&w, Mode::Filtration),
            materialize_mode(&w, Mode::Pad)
        );
    }

    #[test]
    fn no_eligible_pedestrians_yields_empty_window() {
        let mut w = two_ped_window();
        for row in &mut w.history {
            row[7] = U;
        }
        assert!(materialize_mode(&w, Mode::Pad).is_empty());
    }

    #[test]
    fn label_mask_follows_future_observability() {
        let mut w = two_ped_window();
        w.future[1][1] = U;
        assert_eq!(w.label_mask(), vec![vec![true, true], vec![true, false]]);
    }

    #[test]
    fn paired_slicing_reads_labels_from_label_view() {
        let lbl = Scene::new("s", 2.5, vec![straight_track("a", 20)]).unwrap();
        let mut obs_view = lbl.clone();
        obs_view.tracks[0].positions[19] = U;
        obs_view.tracks[0].positions[3] = U;
        let w = &slice_windows_pair(&obs_view, &lbl, 8, 12, 1).unwrap()[0];
        assert_eq!(w.history[0][3], U);
        assert_eq!(w.future[0][11], obs(19.0, 0.0));
    }
}
