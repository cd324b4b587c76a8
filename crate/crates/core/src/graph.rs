//! Spatio-temporal graph construction.
//!
//! Every node (pedestrian or static obstacle) carries `[x, y, dx, dy]` per
//! history frame, every ordered node pair carries the difference of the two
//! node states, and both come with 4-element observation codes. Nodes are
//! laid out in the order produced by DBSCAN so that nearby entities occupy
//! neighbouring slots.

use std::fmt::Write as _;

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::cluster::order_nodes;
use crate::scene::Window;

pub const CODE_BOTH: [f64; 4] = [1.0, 1.0, 1.0, 1.0];
pub const CODE_REAPPEARED: [f64; 4] = [1.0, 1.0, 0.0, 0.0];
pub const CODE_MISSING: [f64; 4] = [0.0, 0.0, 0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Pedestrian,
    Obstacle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// DBSCAN neighbourhood radius in meters.
    #[serde(alias = "ad")]
    pub cluster_eps: f64,
    pub cluster_min_pts: usize,
    /// When false nodes keep their input order.
    pub clustering: bool,
    /// When false every code is `[1, 1, 1, 1]`, hiding observability.
    pub observation_codes: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            cluster_eps: 1.0,
            cluster_min_pts: 1,
            clustering: true,
            observation_codes: true,
        }
    }
}

/// Per-frame positions of one graph entity, `None` where unobserved.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSeries {
    pub kind: NodeKind,
    pub positions: Vec<Option<(f64, f64)>>,
}

impl NodeSeries {
    pub fn obstacle(at: (f64, f64), t_obs: usize) -> Self {
        NodeSeries {
            kind: NodeKind::Obstacle,
            positions: vec![Some(at); t_obs],
        }
    }

    pub fn last_observed(&self) -> Option<(f64, f64)> {
        self.positions.iter().rev().find_map(|p| *p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct STGraph {
    /// `[T, n, 4]` node features `[x, y, dx, dy]`.
    pub v: Array3<f64>,
    /// `[T, n, n, 4]` edge features, `a[t, i, j] = v[t, i] - v[t, j]`.
    pub a: Array4<f64>,
    /// `[T, n, 4]` node observation codes.
    pub no: Array3<f64>,
    /// `[T, n, n, 4]` edge observation codes.
    pub eo: Array4<f64>,
    /// `[T, n]` raw observation flags.
    pub observed: Array2<bool>,
    pub kinds: Vec<NodeKind>,
    /// `order[slot]` is the entity index at `slot`; pedestrians come first in
    /// entity numbering, in window order, followed by obstacles.
    pub order: Vec<usize>,
    /// Last observed position per slot; decoding starts here.
    pub anchors: Vec<(f64, f64)>,
    pub config: GraphConfig,
}

impl STGraph {
    pub fn t_obs(&self) -> usize {
        self.v.shape()[0]
    }

    pub fn n(&self) -> usize {
        self.kinds.len()
    }

    /// Slot of each pedestrian, indexed by its position in the window.
    pub fn pedestrian_slots(&self) -> Vec<usize> {
        let mut slots: Vec<(usize, usize)> = self
            .order
            .iter()
            .enumerate()
            .filter(|&(s, _)| self.kinds[s] == NodeKind::Pedestrian)
            .map(|(s, &e)| (e, s))
            .collect();
        slots.sort();
        slots.into_iter().map(|(_, s)| s).collect()
    }

    pub fn pedestrian_count(&self) -> usize {
        self.kinds.iter().filter(|&&k| k == NodeKind::Pedestrian).count()
    }

    /// Recovers the entity series in entity order.
    pub fn entities(&self) -> Vec<NodeSeries> {
        let t_obs = self.t_obs();
        let mut out = vec![None; self.n()];
        for (slot, &e) in self.order.iter().enumerate() {
            let positions = (0..t_obs)
                .map(|t| self.observed[[t, slot]].then(|| (self.v[[t, slot, 0]], self.v[[t, slot, 1]])))
                .collect();
            out[e] = Some(NodeSeries {
                kind: self.kinds[slot],
                positions,
            });
        }
        out.into_iter().map(|s| s.expect("order is a permutation")).collect()
    }

    /// Text dump: header `stgraph v1 T n`, then the kinds, the order, and the
    /// flattened V, A, No and Eo arrays, one labelled line each.
    pub fn dump(&self) -> String {
        let mut out = format!("stgraph v1 {} {}\n", self.t_obs(), self.n());
        let kinds: Vec<&str> = self
            .kinds
            .iter()
            .map(|k| match k {
                NodeKind::Pedestrian => "P",
                NodeKind::Obstacle => "O",
            })
            .collect();
        let _ = writeln!(out, "kinds {}", kinds.join(" "));
        let order: Vec<String> = self.order.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "order {}", order.join(" "));
        let line = |name: &str, vals: &mut dyn Iterator<Item = &f64>| {
            let vals: Vec<String> = vals.map(|v| v.to_string()).collect();
            format!("{name} {}\n", vals.join(" "))
        };
        out += &line("V", &mut self.v.iter());
        out += &line("A", &mut self.a.iter());
        out += &line("No", &mut self.no.iter());
        out += &line("Eo", &mut self.eo.iter());
        out
    }
}

/// Node features and observation flags in window order. Unobserved frames
/// contribute `[0, 0, 0, 0]`, and the displacement of the following frame is
/// zeroed too. The first frame has no predecessor, so its displacement is 0.
pub fn build_nodes(window: &Window) -> (Array3<f64>, Array2<bool>) {
    let series = pedestrian_series(window);
    nodes_from_series(&series, window.t_obs)
}

pub fn pedestrian_series(window: &Window) -> Vec<NodeSeries> {
    window
        .history
        .iter()
        .map(|row| NodeSeries {
            kind: NodeKind::Pedestrian,
            positions: row.iter().map(|p| p.xy()).collect(),
        })
        .collect()
}

fn nodes_from_series(series: &[NodeSeries], t_obs: usize) -> (Array3<f64>, Array2<bool>) {
    let n = series.len();
    let mut v = Array3::zeros((t_obs, n, 4));
    let mut on = Array2::from_elem((t_obs, n), false);
    for (i, s) in series.iter().enumerate() {
        for t in 0..t_obs {
            let Some((x, y)) = s.positions[t] else { continue };
            on[[t, i]] = true;
            v[[t, i, 0]] = x;
            v[[t, i, 1]] = y;
            if t > 0 {
                if let Some((px, py)) = s.positions[t - 1] {
                    v[[t, i, 2]] = x - px;
                    v[[t, i, 3]] = y - py;
                }
            }
        }
    }
    (v, on)
}

/// `a[t, i, j] = v[t, i] - v[t, j]`.
pub fn build_edges(v: &Array3<f64>) -> Array4<f64> {
    let (t_obs, n, f) = v.dim();
    let mut a = Array4::zeros((t_obs, n, n, f));
    for t in 0..t_obs {
        for i in 0..n {
            for j in 0..n {
                for c in 0..f {
                    a[[t, i, j, c]] = v[[t, i, c]] - v[[t, j, c]];
                }
            }
        }
    }
    a
}

/// Code word for a (current, previous) observation pair.
pub fn code_word(now: bool, before: bool) -> [f64; 4] {
    match (now, before) {
        (true, true) => CODE_BOTH,
        (true, false) => CODE_REAPPEARED,
        (false, _) => CODE_MISSING,
    }
}

/// Node and edge observation codes. At the first frame the previous state is
/// taken to equal the current one. Edge states are the conjunction of the two
/// endpoint states.
pub fn encode_observation_states(on: &Array2<bool>) -> (Array3<f64>, Array4<f64>) {
    let (t_obs, n) = on.dim();
    let mut no = Array3::zeros((t_obs, n, 4));
    let mut eo = Array4::zeros((t_obs, n, n, 4));
    let prev = |t: usize, i: usize| if t == 0 { on[[0, i]] } else { on[[t - 1, i]] };
    for t in 0..t_obs {
        for i in 0..n {
            let w = code_word(on[[t, i]], prev(t, i));
            for c in 0..4 {
                no[[t, i, c]] = w[c];
            }
            for j in 0..n {
                let w = code_word(on[[t, i]] && on[[t, j]], prev(t, i) && prev(t, j));
                for c in 0..4 {
                    eo[[t, i, j, c]] = w[c];
                }
            }
        }
    }
    (no, eo)
}

/// DBSCAN-derived node permutation; see [`crate::cluster::order_nodes`].
pub fn order_nodes_dbscan(positions: &[(f64, f64)], eps: f64, min_pts: usize) -> Vec<usize> {
    order_nodes(positions, eps, min_pts)
}

/// Builds the graph for a set of entities.
pub fn build_from_series(series: &[NodeSeries], t_obs: usize, config: &GraphConfig) -> STGraph {
    let (v_e, on_e) = nodes_from_series(series, t_obs);
    let anchors_e: Vec<(f64, f64)> = series
        .iter()
        .map(|s| s.last_observed().unwrap_or((0.0, 0.0)))
        .collect();
    let n = series.len();
    let order = if config.clustering {
        order_nodes_dbscan(&anchors_e, config.cluster_eps, config.cluster_min_pts)
    } else {
        (0..n).collect()
    };

    let mut v = Array3::zeros((t_obs, n, 4));
    let mut observed = Array2::from_elem((t_obs, n), false);
    for (s, &e) in order.iter().enumerate() {
        for t in 0..t_obs {
            observed[[t, s]] = on_e[[t, e]];
            for c in 0..4 {
                v[[t, s, c]] = v_e[[t, e, c]];
            }
        }
    }
    let a = build_edges(&v);
    let (no, eo) = if config.observation_codes {
        encode_observation_states(&observed)
    } else {
        (Array3::ones((t_obs, n, 4)), Array4::ones((t_obs, n, n, 4)))
    };
    STGraph {
        v,
        a,
        no,
        eo,
        observed,
        kinds: order.iter().map(|&e| series[e].kind).collect(),
        anchors: order.iter().map(|&e| anchors_e[e]).collect(),
        order,
        config: *config,
    }
}

pub fn build_graph(window: &Window, config: &GraphConfig) -> STGraph {
    build_from_series(&pedestrian_series(window), window.t_obs, config)
}

/// Adds static obstacle nodes and rebuilds edges, codes and ordering over
/// the union of entities.
pub fn inject_obstacles(graph: &STGraph, obstacle_points: &[(f64, f64)]) -> STGraph {
    if obstacle_points.is_empty() {
        return graph.clone();
    }
    let t_obs = graph.t_obs();
    let mut series = graph.entities();
    series.extend(obstacle_points.iter().map(|&p| NodeSeries::obstacle(p, t_obs)));
    build_from_series(&series, t_obs, &graph.config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ObservedPosition;

    const U: ObservedPosition = ObservedPosition::Unobserved;

    fn obs(x: f64, y: f64) -> ObservedPosition {
        ObservedPosition::observed(x, y)
    }

    fn window(rows: Vec<Vec<ObservedPosition>>) -> Window {
        let t_obs = rows[0].len();
        Window {
            scene_id: "s".into(),
            t0: t_obs as i64 - 1,
            t_obs,
            t_pred: 1,
            pedestrian_ids: (0..rows.len()).map(|i| format!("p{i}")).collect(),
            future: vec![vec![obs(0.0, 0.0)]; rows.len()],
            history: rows,
            grid_ref: None,
        }
    }

    #[test]
    fn stationary_pedestrian_has_zero_velocity() {
        let (v, _) = build_nodes(&window(vec![vec![obs(2.0, 3.0); 4]]));
        for t in 0..4 {
            assert_eq!(v.slice(ndarray::s![t, 0, ..]).to_vec(), vec![2.0, 3.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn velocity_is_frame_difference() {
        let (v, _) = build_nodes(&window(vec![vec![obs(0.0, 0.0), obs(1.0, 0.0)]]));
        assert_eq!(v.slice(ndarray::s![1, 0, ..]).to_vec(), vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn unobserved_zeroes_position_and_next_velocity() {
        let (v, on) = build_nodes(&window(vec![vec![obs(4.0, 4.0), U, obs(5.0, 5.0)]]));
        assert_eq!(v.slice(ndarray::s![1, 0, ..]).to_vec(), vec![0.0; 4]);
        assert_eq!(v.slice(ndarray::s![2, 0, ..]).to_vec(), vec![5.0, 5.0, 0.0, 0.0]);
        assert_eq!(on.column(0).to_vec(), vec![true, false, true]);
    }

    #[test]
    fn edge_example() {
        let (v, _) = build_nodes(&window(vec![
            vec![obs(9.0, 9.0), obs(9.0, 9.0)],
            vec![obs(0.0, 0.0), obs(1.0, 0.0)],
            vec![obs(0.0, 0.0), obs(0.0, 0.0)],
        ]));
        let a = build_edges(&v);
        assert_eq!(a.slice(ndarray::s![1, 1, 2, ..]).to_vec(), vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(a.slice(ndarray::s![1, 2, 1, ..]).to_vec(), vec![-1.0, 0.0, -1.0, 0.0]);
        assert_eq!(a.slice(ndarray::s![1, 1, 1, ..]).to_vec(), vec![0.0; 4]);
    }

    #[test]
    fn code_table_rows() {
        assert_eq!(code_word(true, true), [1.0, 1.0, 1.0, 1.0]);
        assert_eq!(code_word(true, false), [1.0, 1.0, 0.0, 0.0]);
        assert_eq!(code_word(false, true), [0.0; 4]);
        assert_eq!(code_word(false, false), [0.0; 4]);
    }

    #[test]
    fn edge_code_uses_conjunction() {
        // node 0 observed at both frames, node 1 missing at t=1
        let on = Array2::from_shape_vec((2, 2), vec![true, true, true, false]).unwrap();
        let (no, eo) = encode_observation_states(&on);
        assert_eq!(no.slice(ndarray::s![1, 0, ..]).to_vec(), CODE_BOTH.to_vec());
        assert_eq!(eo.slice(ndarray::s![1, 0, 1, ..]).to_vec(), CODE_MISSING.to_vec());
        assert_eq!(eo.slice(ndarray::s![0, 0, 1, ..]).to_vec(), CODE_BOTH.to_vec());
    }

    #[test]
    fn first_frame_uses_its_own_state_as_predecessor() {
        let on = Array2::from_shape_vec((2, 1), vec![true, true]).unwrap();
        let (no, _) = encode_observation_states(&on);
        assert_eq!(no.slice(ndarray::s![0, 0, ..]).to_vec(), CODE_BOTH.to_vec());
    }

    #[test]
    fn obstacle_injection() {
        let w = window(vec![vec![obs(0.0, 0.0), obs(0.0, 0.0), obs(0.0, 0.0)]]);
        let g = build_graph(&w, &GraphConfig::default());
        assert_eq!(inject_obstacles(&g, &[]), g);

        let g2 = inject_obstacles(&g, &[(1.0, 1.0)]);
        assert_eq!(g2.n(), 2);
        let slot = g2.kinds.iter().position(|&k| k == NodeKind::Obstacle).unwrap();
        for t in 0..3 {
            assert_eq!(g2.v.slice(ndarray::s![t, slot, ..]).to_vec(), vec![1.0, 1.0, 0.0, 0.0]);
            assert_eq!(g2.no.slice(ndarray::s![t, slot, ..]).to_vec(), CODE_BOTH.to_vec());
        }
        assert_eq!(g2.pedestrian_slots().len(), 1);

        let g3 = inject_obstacles(&g, &[(0.0, 0.0)]);
        for t in 0..3 {
            assert_eq!(g3.a.slice(ndarray::s![t, 0, 1, ..]).to_vec(), vec![0.0; 4]);
        }
    }

    #[test]
    fn obstacles_interleave_with_nearby_pedestrians() {
        let w = window(vec![vec![obs(0.0, 0.0); 2], vec![obs(10.0, 0.0); 2]]);
        let g = inject_obstacles(&build_graph(&w, &GraphConfig::default()), &[(0.5, 0.0)]);
        assert_eq!(g.order, vec![0, 2, 1]);
        assert_eq!(g.pedestrian_slots(), vec![0, 2]);
        let entities = g.entities();
        assert_eq!(entities[2].kind, NodeKind::Obstacle);
        assert_eq!(entities[1].positions[1], Some((10.0, 0.0)));

        let flat = GraphConfig {
            clustering: false,
            ..Default::default()
        };
        let g = inject_obstacles(&build_graph(&w, &flat), &[(0.5, 0.0)]);
        assert_eq!(g.order, vec![0, 1, 2]);
    }

    #[test]
    fn disabled_codes_are_all_ones() {
        let w = window(vec![vec![obs(0.0, 0.0), U, obs(1.0, 1.0)]]);
        let cfg = GraphConfig {
            observation_codes: false,
            ..Default::default()
        };
        let g = build_graph(&w, &cfg);
        assert!(g.no.iter().all(|&c| c == 1.0));
        assert!(g.eo.iter().all(|&c| c == 1.0));
        assert!(!g.observed[[1, 0]]);
    }

    #[test]
    fn dump_golden() {
        let w = window(vec![vec![obs(1.0, 2.0), obs(1.5, 2.0)], vec![U, obs(0.0, 0.0)]]);
        let g = build_graph(&w, &GraphConfig::default());
        let expected = "stgraph v1 2 2\n\
kinds P P\n\
order 0 1\n\
V 1 2 0 0 0 0 0 0 1.5 2 0.5 0 0 0 0 0\n\
A 0 0 0 0 1 2 0 0 -1 -2 0 0 0 0 0 0 0 0 0 0 1.5 2 0.5 0 -1.5 -2 -0.5 0 0 0 0 0\n\
No 1 1 1 1 0 0 0 0 1 1 1 1 1 1 0 0\n\
Eo 1 1 1 1 0 0 0 0 0 0 0 0 0 0 0 0 1 1 1 1 1 1 0 0 1 1 0 0 1 1 0 0\n";
        assert_eq!(g.dump(), expected);
    }
}
