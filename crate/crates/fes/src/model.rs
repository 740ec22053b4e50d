//! Decoupled two-branch per-frame head.
//!
//! A shared trunk maps input features to embeddings `f`. On top of it sit two
//! independent branches: a class-agnostic intensity regressor producing
//! intermediate features `X` and intensity scores `a`, and a class-aware apex
//! classifier producing per-class scores `S`. Gradients are closed-form;
//! parameters live in one flat vector so the optimizer and checkpoints can
//! treat them uniformly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::FesError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Input feature width.
    pub d_in: usize,
    /// Trunk embedding width.
    pub d_emb: usize,
    /// Branch intermediate width.
    pub d_mid: usize,
    /// Number of expression classes.
    pub n_classes: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims { d_in: 8, d_emb: 32, d_mid: 16, n_classes: 2 }
    }
}

impl ModelDims {
    pub fn param_count(&self) -> usize {
        let ModelDims { d_in, d_emb, d_mid, n_classes } = *self;
        d_emb * d_in + d_emb            // trunk
            + d_mid * d_emb + d_mid     // intensity hidden
            + d_mid + 1                 // intensity output
            + d_mid * d_emb + d_mid     // apex hidden
            + n_classes * d_mid + n_classes // apex output
    }
}

/// Offsets of each weight block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w_trunk: usize,
    b_trunk: usize,
    w_int: usize,
    b_int: usize,
    w_int_out: usize,
    b_int_out: usize,
    w_apex: usize,
    b_apex: usize,
    w_apex_out: usize,
    b_apex_out: usize,
    total: usize,
}

impl Layout {
    fn new(dims: &ModelDims) -> Layout {
        let ModelDims { d_in, d_emb, d_mid, n_classes } = *dims;
        let w_trunk = 0;
        let b_trunk = w_trunk + d_emb * d_in;
        let w_int = b_trunk + d_emb;
        let b_int = w_int + d_mid * d_emb;
        let w_int_out = b_int + d_mid;
        let b_int_out = w_int_out + d_mid;
        let w_apex = b_int_out + 1;
        let b_apex = w_apex + d_mid * d_emb;
        let w_apex_out = b_apex + d_mid;
        let b_apex_out = w_apex_out + n_classes * d_mid;
        let total = b_apex_out + n_classes;
        Layout {
            w_trunk,
            b_trunk,
            w_int,
            b_int,
            w_int_out,
            b_int_out,
            w_apex,
            b_apex,
            w_apex_out,
            b_apex_out,
            total,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub seed: u64,
    pub epoch: usize,
    pub weights: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Per-frame model outputs over one video.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTracks {
    /// Intensity scores, length T, each in (0,1).
    pub a: Vec<f64>,
    /// Apex scores, T x C, each in (0,1).
    pub s: Vec<Vec<f64>>,
    /// Intensity-branch intermediate features, T x d_mid.
    pub x: Vec<Vec<f64>>,
    /// Trunk embeddings, T x d_emb.
    pub f: Vec<Vec<f64>>,
}

/// Upstream gradients flowing into [`backward`]. Zero vectors mean no
/// contribution from that output.
#[derive(Debug, Clone)]
pub struct UpstreamGrads {
    pub da: Vec<f64>,
    pub ds: Vec<Vec<f64>>,
    pub dx: Vec<Vec<f64>>,
    pub df: Vec<Vec<f64>>,
}

impl UpstreamGrads {
    pub fn zeros(t_len: usize, dims: &ModelDims) -> UpstreamGrads {
        UpstreamGrads {
            da: vec![0.0; t_len],
            ds: vec![vec![0.0; dims.n_classes]; t_len],
            dx: vec![vec![0.0; dims.d_mid]; t_len],
            df: vec![vec![0.0; dims.d_emb]; t_len],
        }
    }
}

pub fn init_params(dims: ModelDims, seed: u64) -> ModelParams {
    let layout = Layout::new(&dims);
    let mut weights = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fill = |w: &mut [f64], fan_in: usize, rng: &mut ChaCha8Rng| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in w.iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
    };
    let ModelDims { d_in, d_emb, d_mid, n_classes } = dims;
    fill(&mut weights[layout.w_trunk..layout.w_trunk + d_emb * d_in], d_in, &mut rng);
    fill(&mut weights[layout.w_int..layout.w_int + d_mid * d_emb], d_emb, &mut rng);
    fill(&mut weights[layout.w_int_out..layout.w_int_out + d_mid], d_mid, &mut rng);
    fill(&mut weights[layout.w_apex..layout.w_apex + d_mid * d_emb], d_emb, &mut rng);
    fill(&mut weights[layout.w_apex_out..layout.w_apex_out + n_classes * d_mid], d_mid, &mut rng);
    ModelParams { dims, seed, epoch: 0, weights }
}

fn affine(w: &[f64], b: &[f64], input: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = input.len();
    let mut out = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(input) {
            acc += wi * xi;
        }
        out.push(acc);
    }
    out
}

struct FrameCache {
    emb: Vec<f64>,      // post-relu trunk embedding
    z_int: Vec<f64>,    // intensity hidden pre-activation
    x_mid: Vec<f64>,    // post-relu intensity intermediate
    a: f64,
    z_apex: Vec<f64>,   // apex hidden pre-activation
    h_apex: Vec<f64>,   // post-relu apex intermediate
    s: Vec<f64>,
    z_trunk: Vec<f64>,  // trunk pre-activation
}

fn forward_frame(params: &ModelParams, layout: &Layout, input: &[f64]) -> FrameCache {
    let ModelDims { d_in, d_emb, d_mid, n_classes } = params.dims;
    let w = &params.weights;
    let z_trunk = affine(
        &w[layout.w_trunk..layout.w_trunk + d_emb * d_in],
        &w[layout.b_trunk..layout.b_trunk + d_emb],
        input,
        d_emb,
    );
    let emb: Vec<f64> = z_trunk.iter().map(|&z| relu(z)).collect();

    let z_int = affine(
        &w[layout.w_int..layout.w_int + d_mid * d_emb],
        &w[layout.b_int..layout.b_int + d_mid],
        &emb,
        d_mid,
    );
    let x_mid: Vec<f64> = z_int.iter().map(|&z| relu(z)).collect();
    let z_a = affine(
        &w[layout.w_int_out..layout.w_int_out + d_mid],
        &w[layout.b_int_out..layout.b_int_out + 1],
        &x_mid,
        1,
    );
    let a = sigmoid(z_a[0]);

    let z_apex = affine(
        &w[layout.w_apex..layout.w_apex + d_mid * d_emb],
        &w[layout.b_apex..layout.b_apex + d_mid],
        &emb,
        d_mid,
    );
    let h_apex: Vec<f64> = z_apex.iter().map(|&z| relu(z)).collect();
    let z_s = affine(
        &w[layout.w_apex_out..layout.w_apex_out + n_classes * d_mid],
        &w[layout.b_apex_out..layout.b_apex_out + n_classes],
        &h_apex,
        n_classes,
    );
    let s: Vec<f64> = z_s.iter().map(|&z| sigmoid(z)).collect();

    FrameCache { emb, z_int, x_mid, a, z_apex, h_apex, s, z_trunk }
}

pub fn forward(params: &ModelParams, features: &[Vec<f64>]) -> Result<ScoreTracks, FesError> {
    let layout = Layout::new(&params.dims);
    let mut tracks = ScoreTracks {
        a: Vec::with_capacity(features.len()),
        s: Vec::with_capacity(features.len()),
        x: Vec::with_capacity(features.len()),
        f: Vec::with_capacity(features.len()),
    };
    for (t, row) in features.iter().enumerate() {
        if row.len() != params.dims.d_in {
            return Err(FesError::InvalidData(format!(
                "frame {}: feature width {} != model d_in {}",
                t,
                row.len(),
                params.dims.d_in
            )));
        }
        let cache = forward_frame(params, &layout, row);
        tracks.a.push(cache.a);
        tracks.s.push(cache.s);
        tracks.x.push(cache.x_mid);
        tracks.f.push(cache.emb);
    }
    Ok(tracks)
}

/// Closed-form parameter gradients for upstream gradients on (a, S, X, f).
/// Returns a flat gradient vector matching the parameter layout.
pub fn backward(
    params: &ModelParams,
    features: &[Vec<f64>],
    upstream: &UpstreamGrads,
) -> Result<Vec<f64>, FesError> {
    let ModelDims { d_in, d_emb, d_mid, n_classes } = params.dims;
    let layout = Layout::new(&params.dims);
    let t_len = features.len();
    if upstream.da.len() != t_len
        || upstream.ds.len() != t_len
        || upstream.dx.len() != t_len
        || upstream.df.len() != t_len
    {
        return Err(FesError::InvalidData("upstream gradient length mismatch".into()));
    }
    let w = &params.weights;
    let mut grad = vec![0.0; layout.total];

    for t in 0..t_len {
        let input = &features[t];
        let cache = forward_frame(params, &layout, input);

        // intensity output: a = sigmoid(w2 . x_mid + b2)
        let dz_a = upstream.da[t] * cache.a * (1.0 - cache.a);
        let mut d_xmid = upstream.dx[t].clone();
        {
            let w2 = &w[layout.w_int_out..layout.w_int_out + d_mid];
            for k in 0..d_mid {
                grad[layout.w_int_out + k] += dz_a * cache.x_mid[k];
                d_xmid[k] += dz_a * w2[k];
            }
            grad[layout.b_int_out] += dz_a;
        }

        // intensity hidden
        let mut d_f = upstream.df[t].clone();
        {
            let w1 = &w[layout.w_int..layout.w_int + d_mid * d_emb];
            for k in 0..d_mid {
                if cache.z_int[k] <= 0.0 {
                    continue;
                }
                let dz = d_xmid[k];
                for j in 0..d_emb {
                    grad[layout.w_int + k * d_emb + j] += dz * cache.emb[j];
                    d_f[j] += dz * w1[k * d_emb + j];
                }
                grad[layout.b_int + k] += dz;
            }
        }

        // apex output: s_c = sigmoid(W4 h + b4)
        let mut d_h = vec![0.0; d_mid];
        {
            let w4 = &w[layout.w_apex_out..layout.w_apex_out + n_classes * d_mid];
            for c in 0..n_classes {
                let dz = upstream.ds[t][c] * cache.s[c] * (1.0 - cache.s[c]);
                if dz == 0.0 {
                    continue;
                }
                for k in 0..d_mid {
                    grad[layout.w_apex_out + c * d_mid + k] += dz * cache.h_apex[k];
                    d_h[k] += dz * w4[c * d_mid + k];
                }
                grad[layout.b_apex_out + c] += dz;
            }
        }

        // apex hidden
        {
            let w3 = &w[layout.w_apex..layout.w_apex + d_mid * d_emb];
            for k in 0..d_mid {
                if cache.z_apex[k] <= 0.0 {
                    continue;
                }
                let dz = d_h[k];
                if dz == 0.0 {
                    continue;
                }
                for j in 0..d_emb {
                    grad[layout.w_apex + k * d_emb + j] += dz * cache.emb[j];
                    d_f[j] += dz * w3[k * d_emb + j];
                }
                grad[layout.b_apex + k] += dz;
            }
        }

        // trunk
        for j in 0..d_emb {
            if cache.z_trunk[j] <= 0.0 {
                continue;
            }
            let dz = d_f[j];
            if dz == 0.0 {
                continue;
            }
            for i in 0..d_in {
                grad[layout.w_trunk + j * d_in + i] += dz * input[i];
            }
            grad[layout.b_trunk + j] += dz;
        }
    }
    Ok(grad)
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    magic: String,
    dims: ModelDims,
    seed: u64,
    epoch: usize,
    n_params: usize,
}

/// Checkpoint layout: one-line JSON header, `\n`, little-endian f32 blob.
pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<(), FesError> {
    let header = CheckpointHeader {
        magic: "FESCKPT".into(),
        dims: params.dims,
        seed: params.seed,
        epoch: params.epoch,
        n_params: params.weights.len(),
    };
    let mut buf = serde_json::to_vec(&header)?;
    buf.push(b'\n');
    for &v in &params.weights {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file =
        fs::File::create(path).map_err(|e| FesError::io(path.display().to_string(), e))?;
    file.write_all(&buf)
        .map_err(|e| FesError::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, FesError> {
    let mut file =
        fs::File::open(path).map_err(|e| FesError::io(path.display().to_string(), e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)
        .map_err(|e| FesError::io(path.display().to_string(), e))?;
    let nl = buf
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FesError::InvalidData(format!("{}: missing header", path.display())))?;
    let header: CheckpointHeader = serde_json::from_slice(&buf[..nl])?;
    if header.magic != "FESCKPT" {
        return Err(FesError::InvalidData(format!("{}: bad checkpoint magic", path.display())));
    }
    let expected = Layout::new(&header.dims).total;
    if header.n_params != expected {
        return Err(FesError::InvalidData(format!(
            "{}: header claims {} params, dims need {}",
            path.display(),
            header.n_params,
            expected
        )));
    }
    let blob = &buf[nl + 1..];
    if blob.len() != header.n_params * 4 {
        return Err(FesError::InvalidData(format!(
            "{}: blob has {} bytes, expected {}",
            path.display(),
            blob.len(),
            header.n_params * 4
        )));
    }
    let weights = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(ModelParams { dims: header.dims, seed: header.seed, epoch: header.epoch, weights })
}
