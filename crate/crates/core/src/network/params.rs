use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Array4, Array5, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::layers::{Gru, Linear};

/// Structural hyperparameters. Defaults follow the reference configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub t_obs: usize,
    pub t_pred: usize,
    /// Embedding width.
    pub n_en: usize,
    /// Decoder input width.
    pub n_de: usize,
    /// GRU hidden width.
    pub n_gru: usize,
    /// Temporal kernel of the graph convolution block.
    pub n_stg: usize,
    /// Temporal kernel of the extrapolator layers.
    pub n_te: usize,
    /// Kernel along the node axis in the extrapolator layers.
    pub node_kernel: usize,
    pub mlp_hidden: usize,
    /// Number of candidate trajectories.
    pub candidates: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            t_obs: 8,
            t_pred: 12,
            n_en: 9,
            n_de: 7,
            n_gru: 64,
            n_stg: 7,
            n_te: 3,
            node_kernel: 3,
            mlp_hidden: 64,
            candidates: 3,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("t_obs", self.t_obs),
            ("t_pred", self.t_pred),
            ("n_en", self.n_en),
            ("n_de", self.n_de),
            ("n_gru", self.n_gru),
            ("n_stg", self.n_stg),
            ("n_te", self.n_te),
            ("node_kernel", self.node_kernel),
            ("mlp_hidden", self.mlp_hidden),
            ("candidates", self.candidates),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("hyperparameter {name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// All learnable weights. Gradients and optimizer moments use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: HyperParams,
    pub node_embed: Linear,
    pub node_code: Linear,
    pub edge_embed: Linear,
    pub edge_code: Linear,
    pub node_gru: Gru,
    pub node_h0: Array1<f64>,
    pub node_proj: Linear,
    pub edge_gru: Gru,
    pub edge_h0: Array1<f64>,
    pub edge_proj: Linear,
    pub stgcn_mix: Linear,
    /// `[n_en, n_en, n_stg]`
    pub stgcn_conv_w: Array3<f64>,
    pub stgcn_conv_b: Array1<f64>,
    /// `[t_pred, t_obs, n_de, n_en, node_kernel]`
    pub tecn_in_w: Array5<f64>,
    /// `[t_pred, n_de]`
    pub tecn_in_b: Array2<f64>,
    /// `[n_de, n_de, n_te, node_kernel]`
    pub tecn_mid_w: Array4<f64>,
    pub tecn_mid_b: Array1<f64>,
    pub tecn_out_w: Array4<f64>,
    pub tecn_out_b: Array1<f64>,
    pub dec_fwd: Gru,
    pub dec_fwd_h0: Array1<f64>,
    pub dec_bwd: Gru,
    pub dec_bwd_h0: Array1<f64>,
    pub mlp1: Linear,
    pub mlp2: Linear,
    pub mlp3: Linear,
}

macro_rules! param_blocks {
    ($s:ident, $view:ident) => {
        vec![
            ("node_embed.w", $s.node_embed.w.$view().into_dyn()),
            ("node_embed.b", $s.node_embed.b.$view().into_dyn()),
            ("node_code.w", $s.node_code.w.$view().into_dyn()),
            ("node_code.b", $s.node_code.b.$view().into_dyn()),
            ("edge_embed.w", $s.edge_embed.w.$view().into_dyn()),
            ("edge_embed.b", $s.edge_embed.b.$view().into_dyn()),
            ("edge_code.w", $s.edge_code.w.$view().into_dyn()),
            ("edge_code.b", $s.edge_code.b.$view().into_dyn()),
            ("node_gru.w_ih", $s.node_gru.w_ih.$view().into_dyn()),
            ("node_gru.w_hh", $s.node_gru.w_hh.$view().into_dyn()),
            ("node_gru.b_ih", $s.node_gru.b_ih.$view().into_dyn()),
            ("node_gru.b_hh", $s.node_gru.b_hh.$view().into_dyn()),
            ("node_h0", $s.node_h0.$view().into_dyn()),
            ("node_proj.w", $s.node_proj.w.$view().into_dyn()),
            ("node_proj.b", $s.node_proj.b.$view().into_dyn()),
            ("edge_gru.w_ih", $s.edge_gru.w_ih.$view().into_dyn()),
            ("edge_gru.w_hh", $s.edge_gru.w_hh.$view().into_dyn()),
            ("edge_gru.b_ih", $s.edge_gru.b_ih.$view().into_dyn()),
            ("edge_gru.b_hh", $s.edge_gru.b_hh.$view().into_dyn()),
            ("edge_h0", $s.edge_h0.$view().into_dyn()),
            ("edge_proj.w", $s.edge_proj.w.$view().into_dyn()),
            ("edge_proj.b", $s.edge_proj.b.$view().into_dyn()),
            ("stgcn_mix.w", $s.stgcn_mix.w.$view().into_dyn()),
            ("stgcn_mix.b", $s.stgcn_mix.b.$view().into_dyn()),
            ("stgcn_conv.w", $s.stgcn_conv_w.$view().into_dyn()),
            ("stgcn_conv.b", $s.stgcn_conv_b.$view().into_dyn()),
            ("tecn_in.w", $s.tecn_in_w.$view().into_dyn()),
            ("tecn_in.b", $s.tecn_in_b.$view().into_dyn()),
            ("tecn_mid.w", $s.tecn_mid_w.$view().into_dyn()),
            ("tecn_mid.b", $s.tecn_mid_b.$view().into_dyn()),
            ("tecn_out.w", $s.tecn_out_w.$view().into_dyn()),
            ("tecn_out.b", $s.tecn_out_b.$view().into_dyn()),
            ("dec_fwd.w_ih", $s.dec_fwd.w_ih.$view().into_dyn()),
            ("dec_fwd.w_hh", $s.dec_fwd.w_hh.$view().into_dyn()),
            ("dec_fwd.b_ih", $s.dec_fwd.b_ih.$view().into_dyn()),
            ("dec_fwd.b_hh", $s.dec_fwd.b_hh.$view().into_dyn()),
            ("dec_fwd_h0", $s.dec_fwd_h0.$view().into_dyn()),
            ("dec_bwd.w_ih", $s.dec_bwd.w_ih.$view().into_dyn()),
            ("dec_bwd.w_hh", $s.dec_bwd.w_hh.$view().into_dyn()),
            ("dec_bwd.b_ih", $s.dec_bwd.b_ih.$view().into_dyn()),
            ("dec_bwd.b_hh", $s.dec_bwd.b_hh.$view().into_dyn()),
            ("dec_bwd_h0", $s.dec_bwd_h0.$view().into_dyn()),
            ("mlp1.w", $s.mlp1.w.$view().into_dyn()),
            ("mlp1.b", $s.mlp1.b.$view().into_dyn()),
            ("mlp2.w", $s.mlp2.w.$view().into_dyn()),
            ("mlp2.b", $s.mlp2.b.$view().into_dyn()),
            ("mlp3.w", $s.mlp3.w.$view().into_dyn()),
            ("mlp3.b", $s.mlp3.b.$view().into_dyn()),
        ]
    };
}

impl ModelParams {
    pub fn zeros(hyper: HyperParams) -> Self {
        let HyperParams {
            t_obs,
            t_pred,
            n_en,
            n_de,
            n_gru,
            n_stg,
            n_te,
            node_kernel,
            mlp_hidden,
            candidates,
        } = hyper;
        ModelParams {
            hyper,
            node_embed: Linear::zeros(4, n_en),
            node_code: Linear::zeros(4, n_en),
            edge_embed: Linear::zeros(4, n_en),
            edge_code: Linear::zeros(4, n_en),
            node_gru: Gru::zeros(n_en, n_gru),
            node_h0: Array1::zeros(n_gru),
            node_proj: Linear::zeros(n_gru, n_en),
            edge_gru: Gru::zeros(n_en, n_gru),
            edge_h0: Array1::zeros(n_gru),
            edge_proj: Linear::zeros(n_gru, n_en),
            stgcn_mix: Linear::zeros(n_en, n_en),
            stgcn_conv_w: Array3::zeros((n_en, n_en, n_stg)),
            stgcn_conv_b: Array1::zeros(n_en),
            tecn_in_w: Array5::zeros((t_pred, t_obs, n_de, n_en, node_kernel)),
            tecn_in_b: Array2::zeros((t_pred, n_de)),
            tecn_mid_w: Array4::zeros((n_de, n_de, n_te, node_kernel)),
            tecn_mid_b: Array1::zeros(n_de),
            tecn_out_w: Array4::zeros((n_de, n_de, n_te, node_kernel)),
            tecn_out_b: Array1::zeros(n_de),
            dec_fwd: Gru::zeros(n_de, n_gru),
            dec_fwd_h0: Array1::zeros(n_gru),
            dec_bwd: Gru::zeros(n_de, n_gru),
            dec_bwd_h0: Array1::zeros(n_gru),
            mlp1: Linear::zeros(2 * n_gru, mlp_hidden),
            mlp2: Linear::zeros(mlp_hidden, mlp_hidden),
            mlp3: Linear::zeros(mlp_hidden, 2 * candidates),
        }
    }

    /// Fan-in uniform init for affine and convolution weights, per-gate
    /// orthogonal recurrent kernels, zero biases and initial hidden states.
    pub fn init(hyper: HyperParams, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut p = Self::zeros(hyper);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = hyper;
        for lin in [
            &mut p.node_embed,
            &mut p.node_code,
            &mut p.edge_embed,
            &mut p.edge_code,
            &mut p.node_proj,
            &mut p.edge_proj,
            &mut p.stgcn_mix,
            &mut p.mlp1,
            &mut p.mlp2,
            &mut p.mlp3,
        ] {
            let fan_in = lin.w.ncols();
            fill_uniform(lin.w.iter_mut(), fan_in, &mut rng);
        }
        for gru in [&mut p.node_gru, &mut p.edge_gru, &mut p.dec_fwd, &mut p.dec_bwd] {
            let fan_in = gru.w_ih.ncols();
            fill_uniform(gru.w_ih.iter_mut(), fan_in, &mut rng);
            let g = gru.hidden();
            for gate in 0..3 {
                let q = orthogonal(g, &mut rng);
                gru.w_hh
                    .slice_mut(ndarray::s![gate * g..(gate + 1) * g, ..])
                    .assign(&q);
            }
        }
        fill_uniform(p.stgcn_conv_w.iter_mut(), h.n_en * h.n_stg, &mut rng);
        fill_uniform(p.tecn_in_w.iter_mut(), h.t_obs * h.n_en * h.node_kernel, &mut rng);
        fill_uniform(p.tecn_mid_w.iter_mut(), h.n_de * h.n_te * h.node_kernel, &mut rng);
        fill_uniform(p.tecn_out_w.iter_mut(), h.n_de * h.n_te * h.node_kernel, &mut rng);
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.hyper)
    }

    pub fn blocks(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)> {
        param_blocks!(self, view)
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, f64>)> {
        param_blocks!(self, view_mut)
    }

    pub fn count(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, block by block.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for ((_, mut a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.zip_mut_with(&b, |x, &y| *x += scale * y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, mut a) in self.blocks_mut() {
            a.mapv_inplace(|x| x * s);
        }
    }

    pub fn to_checkpoint(&self, manifest: serde_json::Value) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            hyper: self.hyper,
            manifest,
            arrays: self
                .blocks()
                .into_iter()
                .map(|(name, b)| NamedArray {
                    name: name.into(),
                    shape: b.shape().to_vec(),
                    data: b.iter().copied().collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds parameters from a checkpoint, rejecting any missing, extra or
    /// mis-shaped array with its name.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        ck.hyper.validate()?;
        let mut p = Self::zeros(ck.hyper);
        let mut problems = Vec::new();
        {
            let mut blocks = p.blocks_mut();
            for arr in &ck.arrays {
                match blocks.iter_mut().find(|(n, _)| *n == arr.name) {
                    None => problems.push(format!("unexpected array '{}'", arr.name)),
                    Some((_, view)) if view.shape() != arr.shape.as_slice() => problems.push(format!(
                        "'{}': expected shape {:?}, found {:?}",
                        arr.name,
                        view.shape(),
                        arr.shape
                    )),
                    Some((_, _)) if arr.data.len() != arr.shape.iter().product::<usize>() => {
                        problems.push(format!("'{}': data length does not match shape", arr.name))
                    }
                    Some((_, view)) => {
                        for (d, s) in view.iter_mut().zip(&arr.data) {
                            *d = *s;
                        }
                    }
                }
            }
            for (name, _) in &blocks {
                if !ck.arrays.iter().any(|a| a.name == *name) {
                    problems.push(format!("missing array '{name}'"));
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Checkpoint(problems.join("; ")));
        }
        if !p.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>, manifest: serde_json::Value) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_checkpoint(manifest))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        Ok((Self::from_checkpoint(&ck)?, ck.manifest))
    }
}

pub const CHECKPOINT_FORMAT: &str = "trajgraph-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Versioned parameter container with the hyperparameters it was built for
/// and a free-form manifest (pipeline settings, seeds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub hyper: HyperParams,
    pub manifest: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

fn fill_uniform<'a>(it: impl Iterator<Item = &'a mut f64>, fan_in: usize, rng: &mut ChaCha8Rng) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for v in it {
        *v = rng.gen_range(-bound..=bound);
    }
}

/// Random orthogonal matrix from Gram-Schmidt on a uniform random matrix.
fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        loop {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for k in 0..i {
                let dot: f64 = (0..n).map(|j| v[j] * q[[k, j]]).sum();
                for j in 0..n {
                    v[j] -= dot * q[[k, j]];
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for j in 0..n {
                    q[[i, j]] = v[j] / norm;
                }
                break;
            }
        }
    }
    q
}
