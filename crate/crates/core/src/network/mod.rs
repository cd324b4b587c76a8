//! Trajectory network: gated embedding, GRU compensation, spatio-temporal
//! graph convolution, temporal extrapolation and a bidirectional decoder
//! producing `K` candidate futures per node.

pub mod layers;
pub mod params;
pub mod stages;

use ndarray::{Array3, Array4};

use crate::error::{Error, Result};
use crate::graph::STGraph;
pub use params::{Checkpoint, HyperParams, ModelParams};
use stages::*;

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache {
    v: Array3<f64>,
    no: Array3<f64>,
    a: Array4<f64>,
    eo: Array4<f64>,
    embed: EmbedCache,
    vf_shape: (usize, usize, usize),
    comp: CompensateCache,
    vfc: Array3<f64>,
    afc: Array4<f64>,
    stgcn: StgcnCache,
    vstg: Array3<f64>,
    tecn: TecnCache,
    decode: DecodeCache,
}

/// Candidate futures `[K, T_pred, n, 2]` for every slot of `graph`.
pub fn forward(graph: &STGraph, p: &ModelParams) -> Result<Array4<f64>> {
    forward_cached(graph, p).map(|(c, _)| c)
}

pub fn forward_cached(graph: &STGraph, p: &ModelParams) -> Result<(Array4<f64>, ForwardCache)> {
    if graph.t_obs() != p.hyper.t_obs {
        return Err(Error::Shape {
            what: "observation length".into(),
            expected: vec![p.hyper.t_obs],
            actual: vec![graph.t_obs()],
        });
    }
    if graph.n() == 0 {
        return Err(Error::Shape {
            what: "node count".into(),
            expected: vec![1],
            actual: vec![0],
        });
    }
    let v = graph.v.as_standard_layout().into_owned();
    let no = graph.no.as_standard_layout().into_owned();
    let a = graph.a.as_standard_layout().into_owned();
    let eo = graph.eo.as_standard_layout().into_owned();
    let (vf, af, embed_cache) = embed(&v, &no, &a, &eo, p)?;
    let vf_shape = vf.dim();
    let (vfc, afc, comp) = compensate(&vf, &af, p);
    let (vstg, stgcn) = stgcn_forward(&vfc, &afc, p);
    let (vp, tecn) = tecn_forward(&vstg, p);
    let (candidates, _, decode_cache) = decode(&vp, &graph.anchors, p)?;
    Ok((
        candidates,
        ForwardCache {
            v,
            no,
            a,
            eo,
            embed: embed_cache,
            vf_shape,
            comp,
            vfc,
            afc,
            stgcn,
            vstg,
            tecn,
            decode: decode_cache,
        },
    ))
}

/// Parameter gradients given the loss gradient with respect to the
/// candidates.
pub fn backward(p: &ModelParams, cache: &ForwardCache, d_candidates: &Array4<f64>) -> ModelParams {
    let mut g = p.zeros_like();
    let dvp = decode_backward(p, &cache.decode, d_candidates, &mut g);
    let dvstg = tecn_backward(&cache.vstg, p, &cache.tecn, &dvp, &mut g);
    let (dvfc, dafc) = stgcn_backward(&cache.vfc, &cache.afc, p, &cache.stgcn, &dvstg, &mut g);
    let (dvf, daf) = compensate_backward(p, &cache.comp, &dvfc, &dafc, &mut g);
    debug_assert_eq!(dvf.dim(), cache.vf_shape);
    embed_backward(&cache.v, &cache.no, &cache.a, &cache.eo, p, &cache.embed, &dvf, &daf, &mut g);
    g
}
