//! Forward and backward passes of the five network stages. Every forward
//! returns a cache consumed by the matching backward, which accumulates
//! parameter gradients and returns gradients for the stage inputs.

use ndarray::{Array3, Array4};

use crate::error::{Error, Result};
use crate::network::layers::{GruTrace, Linear};
use crate::network::params::ModelParams;

fn check_shape(what: &str, actual: &[usize], expected: &[usize]) -> Result<()> {
    if actual != expected {
        return Err(Error::Shape {
            what: what.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        });
    }
    Ok(())
}

fn flat(a: &[f64]) -> &[f64] {
    a
}

// ---------------------------------------------------------------- embed

pub struct EmbedCache {
    ne: Vec<f64>,
    noe: Vec<f64>,
    ee: Vec<f64>,
    eoe: Vec<f64>,
}

fn gated(lin_x: &Linear, lin_code: &Linear, x: &[f64], code: &[f64], e: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / 4;
    let mut hx = vec![0.0; rows * e];
    let mut hc = vec![0.0; rows * e];
    let mut out = vec![0.0; rows * e];
    for r in 0..rows {
        lin_x.forward(&x[r * 4..r * 4 + 4], &mut hx[r * e..(r + 1) * e]);
        lin_code.forward(&code[r * 4..r * 4 + 4], &mut hc[r * e..(r + 1) * e]);
    }
    for k in 0..rows * e {
        out[k] = hx[k] * hc[k];
    }
    (out, hx, hc)
}

/// Node and edge features, each the Hadamard product of an affine embedding
/// of the state and an affine embedding of its observation code.
pub fn embed(
    v: &Array3<f64>,
    no: &Array3<f64>,
    a: &Array4<f64>,
    eo: &Array4<f64>,
    p: &ModelParams,
) -> Result<(Array3<f64>, Array4<f64>, EmbedCache)> {
    let (t, n, _) = v.dim();
    check_shape("V", v.shape(), &[t, n, 4])?;
    check_shape("No", no.shape(), &[t, n, 4])?;
    check_shape("A", a.shape(), &[t, n, n, 4])?;
    check_shape("Eo", eo.shape(), &[t, n, n, 4])?;
    let e = p.hyper.n_en;
    let v = v.as_standard_layout();
    let no = no.as_standard_layout();
    let a = a.as_standard_layout();
    let eo = eo.as_standard_layout();
    let (vf, ne, noe) = gated(
        &p.node_embed,
        &p.node_code,
        v.as_slice().unwrap(),
        no.as_slice().unwrap(),
        e,
    );
    let (af, ee, eoe) = gated(
        &p.edge_embed,
        &p.edge_code,
        a.as_slice().unwrap(),
        eo.as_slice().unwrap(),
        e,
    );
    Ok((
        Array3::from_shape_vec((t, n, e), vf).unwrap(),
        Array4::from_shape_vec((t, n, n, e), af).unwrap(),
        EmbedCache { ne, noe, ee, eoe },
    ))
}

#[allow(clippy::too_many_arguments)]
fn gated_backward(
    lin_x: &Linear,
    lin_code: &Linear,
    g_x: &mut Linear,
    g_code: &mut Linear,
    x: &[f64],
    code: &[f64],
    hx: &[f64],
    hc: &[f64],
    dout: &[f64],
    e: usize,
) {
    let rows = x.len() / 4;
    let mut dhx = vec![0.0; e];
    let mut dhc = vec![0.0; e];
    for r in 0..rows {
        let o = r * e;
        for k in 0..e {
            dhx[k] = dout[o + k] * hc[o + k];
            dhc[k] = dout[o + k] * hx[o + k];
        }
        lin_x.backward(&x[r * 4..r * 4 + 4], &dhx, g_x, None);
        lin_code.backward(&code[r * 4..r * 4 + 4], &dhc, g_code, None);
    }
}

#[allow(clippy::too_many_arguments)]
pub fn embed_backward(
    v: &Array3<f64>,
    no: &Array3<f64>,
    a: &Array4<f64>,
    eo: &Array4<f64>,
    p: &ModelParams,
    cache: &EmbedCache,
    dvf: &Array3<f64>,
    daf: &Array4<f64>,
    g: &mut ModelParams,
) {
    let e = p.hyper.n_en;
    let v = v.as_standard_layout();
    let no = no.as_standard_layout();
    let a = a.as_standard_layout();
    let eo = eo.as_standard_layout();
    gated_backward(
        &p.node_embed,
        &p.node_code,
        &mut g.node_embed,
        &mut g.node_code,
        v.as_slice().unwrap(),
        no.as_slice().unwrap(),
        &cache.ne,
        &cache.noe,
        dvf.as_slice().unwrap(),
        e,
    );
    gated_backward(
        &p.edge_embed,
        &p.edge_code,
        &mut g.edge_embed,
        &mut g.edge_code,
        a.as_slice().unwrap(),
        eo.as_slice().unwrap(),
        &cache.ee,
        &cache.eoe,
        daf.as_slice().unwrap(),
        e,
    );
}

// ----------------------------------------------------------- compensate

pub struct CompensateCache {
    node_traces: Vec<GruTrace>,
    edge_traces: Vec<GruTrace>,
}

/// Gathers the time series of sequence `s` from a `[T, S, C]` flat buffer.
fn gather_series(data: &[f64], t_len: usize, seqs: usize, c: usize, s: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(t_len * c);
    for t in 0..t_len {
        let o = (t * seqs + s) * c;
        out.extend_from_slice(&data[o..o + c]);
    }
    out
}

/// Runs a unidirectional GRU along time for every node (and node pair) and
/// projects each hidden state back to the embedding width.
pub fn compensate(vf: &Array3<f64>, af: &Array4<f64>, p: &ModelParams) -> (Array3<f64>, Array4<f64>, CompensateCache) {
    let (t_len, n, e) = vf.dim();
    let run = |data: &[f64], seqs: usize, gru: &crate::network::layers::Gru, h0: &[f64], proj: &Linear| {
        let mut out = vec![0.0; t_len * seqs * e];
        let mut traces = Vec::with_capacity(seqs);
        for s in 0..seqs {
            let tr = gru.run(gather_series(data, t_len, seqs, e, s), h0);
            for t in 0..t_len {
                let o = (t * seqs + s) * e;
                proj.forward(tr.output(t), &mut out[o..o + e]);
            }
            traces.push(tr);
        }
        (out, traces)
    };
    let (vfc, node_traces) = run(
        vf.as_slice().unwrap(),
        n,
        &p.node_gru,
        p.node_h0.as_slice().unwrap(),
        &p.node_proj,
    );
    let (afc, edge_traces) = run(
        af.as_slice().unwrap(),
        n * n,
        &p.edge_gru,
        p.edge_h0.as_slice().unwrap(),
        &p.edge_proj,
    );
    (
        Array3::from_shape_vec((t_len, n, e), vfc).unwrap(),
        Array4::from_shape_vec((t_len, n, n, e), afc).unwrap(),
        CompensateCache {
            node_traces,
            edge_traces,
        },
    )
}

pub fn compensate_backward(
    p: &ModelParams,
    cache: &CompensateCache,
    dvfc: &Array3<f64>,
    dafc: &Array4<f64>,
    g: &mut ModelParams,
) -> (Array3<f64>, Array4<f64>) {
    let (t_len, n, e) = dvfc.dim();
    let gsz = p.hyper.n_gru;
    let mut dvf = Array3::zeros((t_len, n, e));
    let mut daf = Array4::zeros((t_len, n, n, e));

    let mut back = |traces: &[GruTrace],
                    dout: &[f64],
                    din: &mut [f64],
                    is_edge: bool| {
        let seqs = traces.len();
        let (gru, proj) = if is_edge {
            (&p.edge_gru, &p.edge_proj)
        } else {
            (&p.node_gru, &p.node_proj)
        };
        for (s, tr) in traces.iter().enumerate() {
            let mut dhs = vec![0.0; t_len * gsz];
            {
                let gproj = if is_edge { &mut g.edge_proj } else { &mut g.node_proj };
                for t in 0..t_len {
                    let o = (t * seqs + s) * e;
                    proj.backward(tr.output(t), &dout[o..o + e], gproj, Some(&mut dhs[t * gsz..(t + 1) * gsz]));
                }
            }
            let mut dxs = vec![0.0; t_len * e];
            let ggru = if is_edge { &mut g.edge_gru } else { &mut g.node_gru };
            let dh0 = gru.backward(tr, &dhs, ggru, &mut dxs);
            let gh0 = if is_edge { &mut g.edge_h0 } else { &mut g.node_h0 };
            for (a, b) in gh0.iter_mut().zip(&dh0) {
                *a += b;
            }
            for t in 0..t_len {
                let o = (t * seqs + s) * e;
                for c in 0..e {
                    din[o + c] += dxs[t * e + c];
                }
            }
        }
    };
    back(
        &cache.node_traces,
        flat(dvfc.as_slice().unwrap()),
        dvf.as_slice_mut().unwrap(),
        false,
    );
    back(
        &cache.edge_traces,
        flat(dafc.as_slice().unwrap()),
        daf.as_slice_mut().unwrap(),
        true,
    );
    (dvf, daf)
}

// ---------------------------------------------------------------- stgcn

pub struct StgcnCache {
    /// `[T, C, n]` inverse square-root degrees.
    inv_sqrt_deg: Vec<f64>,
    agg: Vec<f64>,
    g1: Vec<f64>,
    out: Vec<f64>,
}

/// Self-looped adjacency entry for channel `c`: 1 on the diagonal, the
/// compensated edge feature elsewhere.
#[inline]
fn adj(afc: &[f64], n: usize, e: usize, t: usize, i: usize, j: usize, c: usize) -> f64 {
    if i == j {
        1.0
    } else {
        afc[((t * n + i) * n + j) * e + c]
    }
}

/// Per-channel graph aggregation with symmetric degree normalization on the
/// absolute adjacency, a 1x1 channel mix, a length-preserving temporal
/// convolution and a residual connection:
///
/// ```text
/// agg[t,i,c] = sum_j A[t,i,j,c] / sqrt(d[t,i,c] d[t,j,c]) * vfc[t,j,c]
/// out        = tanh(conv_t(tanh(mix(agg))) + vfc)
/// ```
pub fn stgcn_forward(vfc: &Array3<f64>, afc: &Array4<f64>, p: &ModelParams) -> (Array3<f64>, StgcnCache) {
    let (t_len, n, e) = vfc.dim();
    let vs = vfc.as_slice().unwrap();
    let afs = afc.as_slice().unwrap();
    let mut inv_sqrt_deg = vec![0.0; t_len * e * n];
    let mut agg = vec![0.0; t_len * n * e];
    for t in 0..t_len {
        for c in 0..e {
            let s = &mut inv_sqrt_deg[(t * e + c) * n..(t * e + c + 1) * n];
            for i in 0..n {
                let d: f64 = (0..n).map(|j| adj(afs, n, e, t, i, j, c).abs()).sum();
                s[i] = 1.0 / d.sqrt();
            }
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += adj(afs, n, e, t, i, j, c) * s[i] * s[j] * vs[(t * n + j) * e + c];
                }
                agg[(t * n + i) * e + c] = acc;
            }
        }
    }
    let mut g1 = vec![0.0; t_len * n * e];
    for r in 0..t_len * n {
        p.stgcn_mix.forward(&agg[r * e..(r + 1) * e], &mut g1[r * e..(r + 1) * e]);
    }
    for x in g1.iter_mut() {
        *x = x.tanh();
    }
    let k = p.hyper.n_stg;
    let pad = (k - 1) / 2;
    let w = p.stgcn_conv_w.as_slice().unwrap();
    let mut out = vec![0.0; t_len * n * e];
    for t in 0..t_len {
        for i in 0..n {
            for eo in 0..e {
                let mut acc = p.stgcn_conv_b[eo];
                for kk in 0..k {
                    let src = t as isize + kk as isize - pad as isize;
                    if src < 0 || src >= t_len as isize {
                        continue;
                    }
                    let row = &g1[(src as usize * n + i) * e..(src as usize * n + i + 1) * e];
                    for ei in 0..e {
                        acc += w[(eo * e + ei) * k + kk] * row[ei];
                    }
                }
                let o = (t * n + i) * e + eo;
                out[o] = (acc + vs[o]).tanh();
            }
        }
    }
    (
        Array3::from_shape_vec((t_len, n, e), out.clone()).unwrap(),
        StgcnCache {
            inv_sqrt_deg,
            agg,
            g1,
            out,
        },
    )
}

pub fn stgcn_backward(
    vfc: &Array3<f64>,
    afc: &Array4<f64>,
    p: &ModelParams,
    cache: &StgcnCache,
    dout: &Array3<f64>,
    g: &mut ModelParams,
) -> (Array3<f64>, Array4<f64>) {
    let (t_len, n, e) = vfc.dim();
    let vs = vfc.as_slice().unwrap();
    let afs = afc.as_slice().unwrap();
    let douts = dout.as_slice().unwrap();
    let mut dvfc = vec![0.0; t_len * n * e];
    let mut dafc = vec![0.0; t_len * n * n * e];

    // residual tanh
    let mut dpre = vec![0.0; t_len * n * e];
    for o in 0..dpre.len() {
        dpre[o] = douts[o] * (1.0 - cache.out[o] * cache.out[o]);
        dvfc[o] += dpre[o];
    }
    // temporal convolution
    let k = p.hyper.n_stg;
    let pad = (k - 1) / 2;
    let w = p.stgcn_conv_w.as_slice().unwrap();
    let gw = g.stgcn_conv_w.as_slice_mut().unwrap();
    let mut dg1 = vec![0.0; t_len * n * e];
    for t in 0..t_len {
        for i in 0..n {
            for eo in 0..e {
                let d = dpre[(t * n + i) * e + eo];
                if d == 0.0 {
                    continue;
                }
                g.stgcn_conv_b[eo] += d;
                for kk in 0..k {
                    let src = t as isize + kk as isize - pad as isize;
                    if src < 0 || src >= t_len as isize {
                        continue;
                    }
                    let base = (src as usize * n + i) * e;
                    for ei in 0..e {
                        let wi = (eo * e + ei) * k + kk;
                        gw[wi] += d * cache.g1[base + ei];
                        dg1[base + ei] += d * w[wi];
                    }
                }
            }
        }
    }
    // tanh after mix, then the mix itself
    let mut dagg = vec![0.0; t_len * n * e];
    let mut dm = vec![0.0; e];
    for r in 0..t_len * n {
        for c in 0..e {
            let y = cache.g1[r * e + c];
            dm[c] = dg1[r * e + c] * (1.0 - y * y);
        }
        p.stgcn_mix.backward(
            &cache.agg[r * e..(r + 1) * e],
            &dm,
            &mut g.stgcn_mix,
            Some(&mut dagg[r * e..(r + 1) * e]),
        );
    }
    // normalized aggregation
    let mut ds = vec![0.0; n];
    for t in 0..t_len {
        for c in 0..e {
            let s = &cache.inv_sqrt_deg[(t * e + c) * n..(t * e + c + 1) * n];
            ds.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..n {
                let dy = dagg[(t * n + i) * e + c];
                if dy == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let aij = adj(afs, n, e, t, i, j, c);
                    let vj = vs[(t * n + j) * e + c];
                    dvfc[(t * n + j) * e + c] += aij * s[i] * s[j] * dy;
                    let dahat = dy * vj;
                    if i != j {
                        dafc[((t * n + i) * n + j) * e + c] += dahat * s[i] * s[j];
                    }
                    ds[i] += dahat * aij * s[j];
                    ds[j] += dahat * aij * s[i];
                }
            }
            for i in 0..n {
                // s = d^(-1/2), so ds/dd = -s^3 / 2
                let dd = -0.5 * ds[i] * s[i] * s[i] * s[i];
                if dd == 0.0 {
                    continue;
                }
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let aij = afs[((t * n + i) * n + j) * e + c];
                    let sign = if aij > 0.0 {
                        1.0
                    } else if aij < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    dafc[((t * n + i) * n + j) * e + c] += dd * sign;
                }
            }
        }
    }
    (
        Array3::from_shape_vec((t_len, n, e), dvfc).unwrap(),
        Array4::from_shape_vec((t_len, n, n, e), dafc).unwrap(),
    )
}

// ----------------------------------------------------------------- tecn

pub struct TecnCache {
    z1: Vec<f64>,
    h2: Vec<f64>,
    z2: Vec<f64>,
}

/// Convolution over the (time, node) plane with channel mixing.
/// `x: [L, n, C]`, `w: [C_out, C_in, kt, kn]`, zero padding, same length.
fn plane_conv(x: &[f64], l: usize, n: usize, w: &Array4<f64>, b: &[f64]) -> Vec<f64> {
    let (co, ci, kt, kn) = w.dim();
    let (pt, pn) = ((kt - 1) / 2, (kn - 1) / 2);
    let ws = w.as_slice().unwrap();
    let mut out = vec![0.0; l * n * co];
    for t in 0..l {
        for i in 0..n {
            for o in 0..co {
                let mut acc = b[o];
                for a in 0..kt {
                    let st = t as isize + a as isize - pt as isize;
                    if st < 0 || st >= l as isize {
                        continue;
                    }
                    for bb in 0..kn {
                        let sn = i as isize + bb as isize - pn as isize;
                        if sn < 0 || sn >= n as isize {
                            continue;
                        }
                        let base = (st as usize * n + sn as usize) * ci;
                        for c in 0..ci {
                            acc += ws[((o * ci + c) * kt + a) * kn + bb] * x[base + c];
                        }
                    }
                }
                out[(t * n + i) * co + o] = acc;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn plane_conv_backward(
    x: &[f64],
    l: usize,
    n: usize,
    w: &Array4<f64>,
    dout: &[f64],
    gw: &mut Array4<f64>,
    gb: &mut [f64],
    dx: &mut [f64],
) {
    let (co, ci, kt, kn) = w.dim();
    let (pt, pn) = ((kt - 1) / 2, (kn - 1) / 2);
    let ws = w.as_slice().unwrap();
    let gws = gw.as_slice_mut().unwrap();
    for t in 0..l {
        for i in 0..n {
            for o in 0..co {
                let d = dout[(t * n + i) * co + o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for a in 0..kt {
                    let st = t as isize + a as isize - pt as isize;
                    if st < 0 || st >= l as isize {
                        continue;
                    }
                    for bb in 0..kn {
                        let sn = i as isize + bb as isize - pn as isize;
                        if sn < 0 || sn >= n as isize {
                            continue;
                        }
                        let base = (st as usize * n + sn as usize) * ci;
                        for c in 0..ci {
                            let wi = ((o * ci + c) * kt + a) * kn + bb;
                            gws[wi] += d * x[base + c];
                            dx[base + c] += d * ws[wi];
                        }
                    }
                }
            }
        }
    }
}

/// Three convolution layers that extrapolate the observed time axis to the
/// prediction horizon. Layer 1 maps every input frame to every output frame
/// (`t_obs -> t_pred`, `n_en -> n_de`); layers 2 and 3 are length-preserving
/// convolutions with residual connections. All layers use a kernel of
/// `node_kernel` slots along the node axis, so node order matters when it is
/// larger than 1.
pub fn tecn_forward(x: &Array3<f64>, p: &ModelParams) -> (Array3<f64>, TecnCache) {
    let (t_obs, n, e) = x.dim();
    let h = p.hyper;
    let (pl, d) = (h.t_pred, h.n_de);
    let kn = h.node_kernel;
    let pn = (kn - 1) / 2;
    let xs = x.as_slice().unwrap();
    let w1 = p.tecn_in_w.as_slice().unwrap();
    let mut z1 = vec![0.0; pl * n * d];
    for q in 0..pl {
        for i in 0..n {
            for o in 0..d {
                let mut acc = p.tecn_in_b[[q, o]];
                for t in 0..t_obs {
                    for bb in 0..kn {
                        let sn = i as isize + bb as isize - pn as isize;
                        if sn < 0 || sn >= n as isize {
                            continue;
                        }
                        let base = (t * n + sn as usize) * e;
                        for c in 0..e {
                            acc += w1[(((q * t_obs + t) * d + o) * e + c) * kn + bb] * xs[base + c];
                        }
                    }
                }
                z1[(q * n + i) * d + o] = acc.tanh();
            }
        }
    }
    let h2 = plane_conv(&z1, pl, n, &p.tecn_mid_w, p.tecn_mid_b.as_slice().unwrap());
    let z2: Vec<f64> = h2.iter().zip(&z1).map(|(a, b)| a.tanh() + b).collect();
    let h3 = plane_conv(&z2, pl, n, &p.tecn_out_w, p.tecn_out_b.as_slice().unwrap());
    let vp: Vec<f64> = h3.iter().zip(&z2).map(|(a, b)| a + b).collect();
    (
        Array3::from_shape_vec((pl, n, d), vp).unwrap(),
        TecnCache { z1, h2, z2 },
    )
}

pub fn tecn_backward(x: &Array3<f64>, p: &ModelParams, cache: &TecnCache, dvp: &Array3<f64>, g: &mut ModelParams) -> Array3<f64> {
    let (t_obs, n, e) = x.dim();
    let h = p.hyper;
    let (pl, d) = (h.t_pred, h.n_de);
    let kn = h.node_kernel;
    let pn = (kn - 1) / 2;
    let dvps = dvp.as_slice().unwrap();

    // vp = h3 + z2
    let mut dz2 = dvps.to_vec();
    let dh3 = dvps;
    plane_conv_backward(
        &cache.z2,
        pl,
        n,
        &p.tecn_out_w,
        dh3,
        &mut g.tecn_out_w,
        g.tecn_out_b.as_slice_mut().unwrap(),
        &mut dz2,
    );
    // z2 = tanh(h2) + z1
    let mut dz1 = dz2.clone();
    let dh2: Vec<f64> = dz2
        .iter()
        .zip(&cache.h2)
        .map(|(dz, hv)| {
            let th = hv.tanh();
            dz * (1.0 - th * th)
        })
        .collect();
    plane_conv_backward(
        &cache.z1,
        pl,
        n,
        &p.tecn_mid_w,
        &dh2,
        &mut g.tecn_mid_w,
        g.tecn_mid_b.as_slice_mut().unwrap(),
        &mut dz1,
    );
    // z1 = tanh(layer1)
    let xs = x.as_slice().unwrap();
    let w1 = p.tecn_in_w.as_slice().unwrap();
    let gw1 = g.tecn_in_w.as_slice_mut().unwrap();
    let mut dx = vec![0.0; t_obs * n * e];
    for q in 0..pl {
        for i in 0..n {
            for o in 0..d {
                let z = cache.z1[(q * n + i) * d + o];
                let dy = dz1[(q * n + i) * d + o] * (1.0 - z * z);
                if dy == 0.0 {
                    continue;
                }
                g.tecn_in_b[[q, o]] += dy;
                for t in 0..t_obs {
                    for bb in 0..kn {
                        let sn = i as isize + bb as isize - pn as isize;
                        if sn < 0 || sn >= n as isize {
                            continue;
                        }
                        let base = (t * n + sn as usize) * e;
                        for c in 0..e {
                            let wi = (((q * t_obs + t) * d + o) * e + c) * kn + bb;
                            gw1[wi] += dy * xs[base + c];
                            dx[base + c] += dy * w1[wi];
                        }
                    }
                }
            }
        }
    }
    Array3::from_shape_vec((t_obs, n, e), dx).unwrap()
}

// --------------------------------------------------------------- decode

pub struct DecodeCache {
    fwd: Vec<GruTrace>,
    bwd: Vec<GruTrace>,
    sp: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
}

/// Bidirectional GRU over the prediction axis, a three-layer MLP emitting
/// `K` displacements per node and frame, and integration from the anchors:
/// `x_t = x_{t-1} + dx_t`. Returns `[K, T_pred, n, 2]` and the `Sp` features
/// `[T_pred, n, 2 * n_gru]`.
pub fn decode(vp: &Array3<f64>, anchors: &[(f64, f64)], p: &ModelParams) -> Result<(Array4<f64>, Array3<f64>, DecodeCache)> {
    let (pl, n, d) = vp.dim();
    check_shape("anchors", &[anchors.len()], &[n])?;
    let gs = p.hyper.n_gru;
    let hid = p.hyper.mlp_hidden;
    let k = p.hyper.candidates;
    let vs = vp.as_slice().unwrap();
    let mut fwd = Vec::with_capacity(n);
    let mut bwd = Vec::with_capacity(n);
    let mut sp = vec![0.0; pl * n * 2 * gs];
    for i in 0..n {
        let xs = gather_series(vs, pl, n, d, i);
        let mut rev = Vec::with_capacity(xs.len());
        for t in (0..pl).rev() {
            rev.extend_from_slice(&xs[t * d..(t + 1) * d]);
        }
        let tf = p.dec_fwd.run(xs, p.dec_fwd_h0.as_slice().unwrap());
        let tb = p.dec_bwd.run(rev, p.dec_bwd_h0.as_slice().unwrap());
        for t in 0..pl {
            let o = (t * n + i) * 2 * gs;
            sp[o..o + gs].copy_from_slice(tf.output(t));
            sp[o + gs..o + 2 * gs].copy_from_slice(tb.output(pl - 1 - t));
        }
        fwd.push(tf);
        bwd.push(tb);
    }
    let rows = pl * n;
    let mut h1 = vec![0.0; rows * hid];
    let mut h2 = vec![0.0; rows * hid];
    let mut dx = vec![0.0; rows * 2 * k];
    for r in 0..rows {
        let a = &mut h1[r * hid..(r + 1) * hid];
        p.mlp1.forward(&sp[r * 2 * gs..(r + 1) * 2 * gs], a);
        a.iter_mut().for_each(|x| *x = x.tanh());
        let b = &mut h2[r * hid..(r + 1) * hid];
        p.mlp2.forward(&h1[r * hid..(r + 1) * hid], b);
        b.iter_mut().for_each(|x| *x = x.tanh());
        p.mlp3.forward(&h2[r * hid..(r + 1) * hid], &mut dx[r * 2 * k..(r + 1) * 2 * k]);
    }
    let candidates = integrate(&dx, anchors, pl, n, k);
    Ok((
        candidates,
        Array3::from_shape_vec((pl, n, 2 * gs), sp.clone()).unwrap(),
        DecodeCache { fwd, bwd, sp, h1, h2 },
    ))
}

/// `dx: [T_pred, n, 2K]` displacements to `[K, T_pred, n, 2]` positions.
pub fn integrate(dx: &[f64], anchors: &[(f64, f64)], pl: usize, n: usize, k: usize) -> Array4<f64> {
    let mut out = Array4::zeros((k, pl, n, 2));
    for kk in 0..k {
        for i in 0..n {
            let (mut x, mut y) = anchors[i];
            for t in 0..pl {
                let o = (t * n + i) * 2 * k + 2 * kk;
                x += dx[o];
                y += dx[o + 1];
                out[[kk, t, i, 0]] = x;
                out[[kk, t, i, 1]] = y;
            }
        }
    }
    out
}

pub fn decode_backward(p: &ModelParams, cache: &DecodeCache, dcand: &Array4<f64>, g: &mut ModelParams) -> Array3<f64> {
    let (k, pl, n, _) = dcand.dim();
    let gs = p.hyper.n_gru;
    let hid = p.hyper.mlp_hidden;
    let d = p.hyper.n_de;
    // reverse cumulative sum over time
    let mut ddx = vec![0.0; pl * n * 2 * k];
    for kk in 0..k {
        for i in 0..n {
            let (mut ax, mut ay) = (0.0, 0.0);
            for t in (0..pl).rev() {
                ax += dcand[[kk, t, i, 0]];
                ay += dcand[[kk, t, i, 1]];
                let o = (t * n + i) * 2 * k + 2 * kk;
                ddx[o] = ax;
                ddx[o + 1] = ay;
            }
        }
    }
    let rows = pl * n;
    let mut dsp = vec![0.0; rows * 2 * gs];
    let mut dh2 = vec![0.0; hid];
    let mut dh1 = vec![0.0; hid];
    for r in 0..rows {
        let dout = &ddx[r * 2 * k..(r + 1) * 2 * k];
        if dout.iter().all(|&v| v == 0.0) {
            continue;
        }
        let h1 = &cache.h1[r * hid..(r + 1) * hid];
        let h2 = &cache.h2[r * hid..(r + 1) * hid];
        dh2.iter_mut().for_each(|x| *x = 0.0);
        p.mlp3.backward(h2, dout, &mut g.mlp3, Some(&mut dh2));
        for c in 0..hid {
            dh2[c] *= 1.0 - h2[c] * h2[c];
        }
        dh1.iter_mut().for_each(|x| *x = 0.0);
        p.mlp2.backward(h1, &dh2, &mut g.mlp2, Some(&mut dh1));
        for c in 0..hid {
            dh1[c] *= 1.0 - h1[c] * h1[c];
        }
        p.mlp1.backward(
            &cache.sp[r * 2 * gs..(r + 1) * 2 * gs],
            &dh1,
            &mut g.mlp1,
            Some(&mut dsp[r * 2 * gs..(r + 1) * 2 * gs]),
        );
    }
    let mut dvp = vec![0.0; pl * n * d];
    for i in 0..n {
        let mut dhf = vec![0.0; pl * gs];
        let mut dhb = vec![0.0; pl * gs];
        for t in 0..pl {
            let o = (t * n + i) * 2 * gs;
            dhf[t * gs..(t + 1) * gs].copy_from_slice(&dsp[o..o + gs]);
            let rt = pl - 1 - t;
            dhb[rt * gs..(rt + 1) * gs].copy_from_slice(&dsp[o + gs..o + 2 * gs]);
        }
        let mut dxf = vec![0.0; pl * d];
        let dh0 = p.dec_fwd.backward(&cache.fwd[i], &dhf, &mut g.dec_fwd, &mut dxf);
        for (a, b) in g.dec_fwd_h0.iter_mut().zip(&dh0) {
            *a += b;
        }
        let mut dxb = vec![0.0; pl * d];
        let dh0 = p.dec_bwd.backward(&cache.bwd[i], &dhb, &mut g.dec_bwd, &mut dxb);
        for (a, b) in g.dec_bwd_h0.iter_mut().zip(&dh0) {
            *a += b;
        }
        for t in 0..pl {
            let rt = pl - 1 - t;
            for c in 0..d {
                dvp[(t * n + i) * d + c] += dxf[t * d + c] + dxb[rt * d + c];
            }
        }
    }
    Array3::from_shape_vec((pl, n, d), dvp).unwrap()
}
