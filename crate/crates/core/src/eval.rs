//! Best-of-K evaluation over mode and data conditions.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{min_k_per_pedestrian, Metric};
use crate::network::ModelParams;
use crate::predictor::{labels, predict_two_pass, GridSet, PredictConfig};
use crate::scene::{materialize_mode, Mode, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataVariant {
    Clean,
    Corrupted,
}

/// A train/test mode pair such as `p-f` (trained in pad mode, tested in
/// filtration mode) on one data variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub train_mode: Mode,
    pub test_mode: Mode,
    pub data: DataVariant,
}

impl Condition {
    pub fn label(&self) -> String {
        format!("{}-{}", self.train_mode.short(), self.test_mode.short())
    }

    pub fn semantics(&self) -> String {
        let describe = |m: Mode| match m {
            Mode::Filtration => "complete histories only",
            Mode::Pad => "eligible pedestrians, unobserved frames zero-padded",
        };
        let data = match self.data {
            DataVariant::Clean => "clean observations",
            DataVariant::Corrupted => "corrupted observations",
        };
        format!(
            "trained on {}; tested on {}; {}",
            describe(self.train_mode),
            describe(self.test_mode),
            data
        )
    }
}

/// Parses `ff`, `pp` or `pf` (also accepts `f-f` style) into a mode pair.
pub fn parse_mode_pair(s: &str) -> Result<(Mode, Mode)> {
    let letters: Vec<char> = s.chars().filter(|c| *c != '-').collect();
    let mode = |c: char| match c {
        'f' => Ok(Mode::Filtration),
        'p' => Ok(Mode::Pad),
        _ => Err(Error::InvalidArgument(format!("unknown mode pair '{s}'"))),
    };
    match letters.as_slice() {
        [a, b] => Ok((mode(*a)?, mode(*b)?)),
        _ => Err(Error::InvalidArgument(format!("unknown mode pair '{s}'"))),
    }
}

impl FromStr for DataVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(DataVariant::Clean),
            "corrupted" => Ok(DataVariant::Corrupted),
            _ => Err(Error::InvalidArgument(format!("unknown data variant '{s}'"))),
        }
    }
}

/// Sums of per-pedestrian best-of-K errors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Scores {
    pub ade_sum: f64,
    pub ade_count: usize,
    pub fde_sum: f64,
    pub fde_count: usize,
    pub windows: usize,
}

impl Scores {
    pub fn min_ade(&self) -> Option<f64> {
        (self.ade_count > 0).then(|| self.ade_sum / self.ade_count as f64)
    }

    pub fn min_fde(&self) -> Option<f64> {
        (self.fde_count > 0).then(|| self.fde_sum / self.fde_count as f64)
    }

    fn merge(mut self, o: &Scores) -> Scores {
        self.ade_sum += o.ade_sum;
        self.ade_count += o.ade_count;
        self.fde_sum += o.fde_sum;
        self.fde_count += o.fde_count;
        self.windows += o.windows;
        self
    }
}

/// Scores a window set under one test mode. Windows are materialized in
/// `mode` first; empty ones are skipped.
pub fn score_windows(
    params: &ModelParams,
    windows: &[Window],
    grids: &GridSet,
    mode: Mode,
    predict: &PredictConfig,
) -> Result<Scores> {
    let per: Vec<Result<Scores>> = windows
        .par_iter()
        .map(|w| {
            let w = materialize_mode(w, mode);
            if w.is_empty() {
                return Ok(Scores::default());
            }
            let res = predict_two_pass(&w, grids.for_window(&w), params, predict)?;
            let (gt, mask) = labels(&w);
            let ade = min_k_per_pedestrian(res.candidates.view(), gt.view(), mask.view(), Metric::Ade)?;
            let fde = min_k_per_pedestrian(res.candidates.view(), gt.view(), mask.view(), Metric::Fde)?;
            let mut s = Scores {
                windows: 1,
                ..Default::default()
            };
            for v in ade.into_iter().flatten() {
                s.ade_sum += v;
                s.ade_count += 1;
            }
            for v in fde.into_iter().flatten() {
                s.fde_sum += v;
                s.fde_count += 1;
            }
            Ok(s)
        })
        .collect();
    let mut total = Scores::default();
    for s in per {
        total = total.merge(&s?);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub dataset: String,
    pub condition: String,
    pub train_mode: Mode,
    pub test_mode: Mode,
    pub data: DataVariant,
    #[serde(rename = "minADE_K")]
    pub min_ade: Option<f64>,
    #[serde(rename = "minFDE_K")]
    pub min_fde: Option<f64>,
    /// Pedestrians with at least one valid label frame.
    pub samples: usize,
    pub windows: usize,
    /// True when no pedestrian qualified.
    pub empty: bool,
    pub semantics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub candidates: usize,
    pub seeds: Vec<u64>,
    pub od: f64,
    pub fd: f64,
    pub bindings: Vec<String>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub header: ReportHeader,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let k = self.header.candidates;
        writeln!(s, "{:<12} {:<5} {:<10} {:>10} {:>10} {:>8}", "dataset", "cond", "data", format!("minADE{k}"), format!("minFDE{k}"), "samples").unwrap();
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        for r in &self.rows {
            writeln!(
                s,
                "{:<12} {:<5} {:<10} {:>10} {:>10} {:>8}{}",
                r.dataset,
                r.condition,
                format!("{:?}", r.data).to_lowercase(),
                fmt(r.min_ade),
                fmt(r.min_fde),
                r.samples,
                if r.empty { "  (empty)" } else { "" }
            )
            .unwrap();
        }
        for b in &self.header.bindings {
            writeln!(s, "# {b}").unwrap();
        }
        s
    }
}

/// Window sets of one dataset; the corrupted set may be absent.
pub struct EvalData<'a> {
    pub name: &'a str,
    pub clean: &'a [Window],
    pub corrupted: Option<&'a [Window]>,
}

pub fn bindings(predict: &PredictConfig) -> Vec<String> {
    vec![
        format!("od = {} m: obstacles strictly closer than od to a first-pass point are added", predict.od),
        format!("fd = {} m: added obstacles are thinned greedily to a spacing of at least fd", predict.fd),
        format!(
            "ad = {} m: DBSCAN neighbourhood radius (min_pts {}) for node ordering",
            predict.graph.cluster_eps, predict.graph.cluster_min_pts
        ),
        "minADE/minFDE: best candidate per pedestrian, averaged over pedestrians".into(),
        "missing label frames are masked; FDE counts pedestrians with a valid final label".into(),
    ]
}

/// One row per condition. Evaluation never modifies `params`.
pub fn evaluate(
    params: &ModelParams,
    data: &EvalData,
    grids: &GridSet,
    conditions: &[Condition],
    predict: &PredictConfig,
    seeds: Vec<u64>,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(conditions.len());
    for c in conditions {
        let windows = match c.data {
            DataVariant::Clean => data.clean,
            DataVariant::Corrupted => data
                .corrupted
                .ok_or_else(|| Error::InvalidArgument("corrupted condition requested without corrupted data".into()))?,
        };
        let s = score_windows(params, windows, grids, c.test_mode, predict)?;
        rows.push(EvalRow {
            dataset: data.name.to_string(),
            condition: c.label(),
            train_mode: c.train_mode,
            test_mode: c.test_mode,
            data: c.data,
            min_ade: s.min_ade(),
            min_fde: s.min_fde(),
            samples: s.ade_count,
            windows: s.windows,
            empty: s.ade_count == 0,
            semantics: c.semantics(),
        });
    }
    Ok(EvalReport {
        header: ReportHeader {
            candidates: params.hyper.candidates,
            seeds,
            od: predict.od,
            fd: predict.fd,
            bindings: bindings(predict),
            config,
        },
        rows,
    })
}
