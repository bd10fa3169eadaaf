use super::kernels::{col2im, gemm, im2col, ConvGeom, Dims};
use super::{Embedding, NormStats, Params, NORM_EPS, ZERO_NORM_EPS};
use crate::error::{Error, Result};
use crate::tensor::VideoClip;

/// Where the per-channel normalization takes its statistics from.
#[derive(Debug, Clone, Copy)]
pub enum NormMode<'a> {
    /// Mean and variance of the current batch, differentiated through.
    Batch,
    /// Fixed statistics.
    Running(&'a NormStats),
}

struct BlockCache {
    geom: ConvGeom,
    /// Unfolded inputs, `[N * P, 27 * C_in]`. Empty when not retained.
    cols: Vec<f64>,
    /// Normalized pre-activations, `[N * P, C_out]`. Empty when not retained.
    xhat: Vec<f64>,
    /// Rectified outputs, `[N * P, C_out]`.
    act: Vec<f64>,
    invstd: Vec<f64>,
}

/// Everything one forward pass produced, enough to backpropagate through it.
pub struct Activations {
    n: usize,
    batch_stats: bool,
    retained: bool,
    blocks: Vec<BlockCache>,
    stats: NormStats,
    features: Vec<f64>,
    z: Vec<f64>,
    norms: Vec<f64>,
}

fn input_dims(params: &Params, clips: &[&VideoClip]) -> Result<Dims> {
    let first = clips.first().ok_or(Error::EmptyBatch)?;
    let shape = first.frames().shape();
    let dims = Dims { t: shape[0], h: shape[1], w: shape[2], c: shape[3] };
    if dims.c != params.spec().in_channels || clips.iter().any(|c| c.frames().shape() != shape) {
        return Err(Error::ShapeIncompatible(shape.to_vec()));
    }
    Ok(dims)
}

/// Runs the encoder on a batch. With `retain` set, keeps what
/// [`Activations::backward`] needs.
pub fn forward(params: &Params, clips: &[&VideoClip], mode: NormMode<'_>, retain: bool) -> Result<Activations> {
    let mut dims = input_dims(params, clips)?;
    let n = clips.len();
    let spec = params.spec().clone();
    let mut x: Vec<f64> = Vec::with_capacity(n * dims.len());
    for clip in clips {
        x.extend_from_slice(clip.frames().data());
    }

    let mut stats = NormStats::new(&spec);
    let mut blocks = Vec::with_capacity(spec.blocks.len());
    for (b, block) in spec.blocks.iter().enumerate() {
        let geom = ConvGeom::new(dims, block.out_channels, block.temporal_stride, block.spatial_stride);
        let (weight, scale, shift) = params.block_tensors(b);
        let (p, k, cout) = (geom.output.positions(), geom.patch(), geom.output.c);
        let rows = n * p;

        let mut cols = vec![0.0; rows * k];
        for (i, chunk) in cols.chunks_exact_mut(p * k).enumerate() {
            im2col(&x[i * dims.len()..(i + 1) * dims.len()], &geom, chunk);
        }
        let mut pre = vec![0.0; rows * cout];
        gemm(rows, k, cout, &cols, false, weight.data(), false, 0.0, &mut pre);

        let (mean, var) = match mode {
            NormMode::Batch => channel_moments(&pre, cout),
            NormMode::Running(s) => (s.mean[b].clone(), s.var[b].clone()),
        };
        let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut act = pre;
        let mut xhat = if retain { vec![0.0; rows * cout] } else { Vec::new() };
        for r in 0..rows {
            let row = &mut act[r * cout..(r + 1) * cout];
            for c in 0..cout {
                let h = (row[c] - mean[c]) * invstd[c];
                if retain {
                    xhat[r * cout + c] = h;
                }
                row[c] = (scale.data()[c] * h + shift.data()[c]).max(0.0);
            }
        }
        stats.mean[b] = mean;
        stats.var[b] = var;

        dims = geom.output;
        if retain {
            x = act.clone();
            blocks.push(BlockCache { geom, cols, xhat, act, invstd });
        } else {
            x = act;
            blocks.push(BlockCache { geom, cols: Vec::new(), xhat: Vec::new(), act: Vec::new(), invstd });
        }
    }

    // global average pool
    let (p, c) = (dims.positions(), dims.c);
    let mut features = vec![0.0; n * c];
    for i in 0..n {
        let f = &mut features[i * c..(i + 1) * c];
        for row in x[i * p * c..(i + 1) * p * c].chunks_exact(c) {
            for (a, v) in f.iter_mut().zip(row) {
                *a += v;
            }
        }
        f.iter_mut().for_each(|a| *a /= p as f64);
    }

    let (pw, pb) = params.projection();
    let e = spec.embed_dim;
    let mut z = pb.data().repeat(n);
    gemm(n, c, e, &features, false, pw.data(), false, 1.0, &mut z);
    let norms = z.chunks_exact(e).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();

    Ok(Activations {
        n,
        batch_stats: matches!(mode, NormMode::Batch),
        retained: retain,
        blocks,
        stats,
        features,
        z,
        norms,
    })
}

/// Biased per-channel mean and variance over the rows of `x`.
fn channel_moments(x: &[f64], c: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = (x.len() / c) as f64;
    let mut mean = vec![0.0; c];
    for row in x.chunks_exact(c) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows);
    let mut var = vec![0.0; c];
    for row in x.chunks_exact(c) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= rows);
    (mean, var)
}

impl Activations {
    pub fn batch_size(&self) -> usize {
        self.n
    }

    /// Statistics the normalization layers used in this pass.
    pub fn norm_stats(&self) -> &NormStats {
        &self.stats
    }

    /// Pooled backbone features, one vector per clip.
    pub fn features(&self) -> Vec<Vec<f64>> {
        let c = self.features.len() / self.n;
        self.features.chunks_exact(c).map(<[f64]>::to_vec).collect()
    }

    /// Unit-norm projections, one per clip.
    pub fn embeddings(&self) -> Result<Vec<Embedding>> {
        let e = self.z.len() / self.n;
        self.z
            .chunks_exact(e)
            .zip(&self.norms)
            .map(|(z, &norm)| {
                if norm < ZERO_NORM_EPS {
                    return Err(Error::ZeroNorm);
                }
                Ok(Embedding(z.iter().map(|v| v / norm).collect()))
            })
            .collect()
    }

    /// Gradient of a scalar with respect to every parameter, given the
    /// scalar's gradient with respect to each output embedding.
    pub fn backward(&self, params: &Params, d_emb: &[Vec<f64>]) -> Result<Params> {
        assert!(self.retained, "forward pass did not retain activations");
        assert_eq!(d_emb.len(), self.n);
        let spec = params.spec();
        let e = spec.embed_dim;
        let mut grads = Params::zeros(spec);

        // through the L2 normalization: dz = (dv - v (v . dv)) / |z|
        let mut dz = vec![0.0; self.n * e];
        for i in 0..self.n {
            let norm = self.norms[i];
            if norm < ZERO_NORM_EPS {
                return Err(Error::ZeroNorm);
            }
            let z = &self.z[i * e..(i + 1) * e];
            let dv = &d_emb[i];
            let proj: f64 = z.iter().zip(dv).map(|(a, b)| a * b).sum::<f64>() / norm;
            for j in 0..e {
                dz[i * e + j] = (dv[j] - z[j] / norm * proj) / norm;
            }
        }

        let c = self.features.len() / self.n;
        let (pw, _) = params.projection();
        let nt = grads.tensors.len();
        gemm(c, self.n, e, &self.features, true, &dz, false, 0.0, grads.tensors[nt - 2].data_mut());
        let db = grads.tensors[nt - 1].data_mut();
        for row in dz.chunks_exact(e) {
            for (a, v) in db.iter_mut().zip(row) {
                *a += v;
            }
        }
        let mut dfeat = vec![0.0; self.n * c];
        gemm(self.n, e, c, &dz, false, pw.data(), true, 0.0, &mut dfeat);

        // through the pooling: every position receives dfeat / P
        let last = self.blocks.last().unwrap();
        let p = last.geom.output.positions();
        let mut dact = vec![0.0; self.n * p * c];
        for i in 0..self.n {
            for row in dact[i * p * c..(i + 1) * p * c].chunks_exact_mut(c) {
                for (a, g) in row.iter_mut().zip(&dfeat[i * c..(i + 1) * c]) {
                    *a = g / p as f64;
                }
            }
        }

        for (b, cache) in self.blocks.iter().enumerate().rev() {
            let (weight, scale, _) = params.block_tensors(b);
            let geom = &cache.geom;
            let (p, k, cout) = (geom.output.positions(), geom.patch(), geom.output.c);
            let rows = self.n * p;

            // rectifier mask, in place
            for (g, a) in dact.iter_mut().zip(&cache.act) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            let mut dscale = vec![0.0; cout];
            let mut dshift = vec![0.0; cout];
            for (g_row, h_row) in dact.chunks_exact(cout).zip(cache.xhat.chunks_exact(cout)) {
                for ch in 0..cout {
                    dshift[ch] += g_row[ch];
                    dscale[ch] += g_row[ch] * h_row[ch];
                }
            }
            // gradient with respect to the pre-normalization values
            let gamma = scale.data();
            let mut dpre = dact;
            if self.batch_stats {
                let m = rows as f64;
                for (g_row, h_row) in dpre.chunks_exact_mut(cout).zip(cache.xhat.chunks_exact(cout)) {
                    for ch in 0..cout {
                        // dxhat = g * gamma; dx = invstd / M (M dxhat - sum dxhat - xhat sum(dxhat xhat))
                        let sum_dx = gamma[ch] * dshift[ch];
                        let sum_dx_h = gamma[ch] * dscale[ch];
                        g_row[ch] = cache.invstd[ch] / m * (m * gamma[ch] * g_row[ch] - sum_dx - h_row[ch] * sum_dx_h);
                    }
                }
            } else {
                for g_row in dpre.chunks_exact_mut(cout) {
                    for ch in 0..cout {
                        g_row[ch] *= gamma[ch] * cache.invstd[ch];
                    }
                }
            }
            grads.tensors[3 * b + 1].data_mut().copy_from_slice(&dscale);
            grads.tensors[3 * b + 2].data_mut().copy_from_slice(&dshift);
            gemm(k, rows, cout, &cache.cols, true, &dpre, false, 0.0, grads.tensors[3 * b].data_mut());

            if b == 0 {
                break;
            }
            let mut dcols = vec![0.0; rows * k];
            gemm(rows, cout, k, &dpre, false, weight.data(), true, 0.0, &mut dcols);
            let in_len = geom.input.len();
            let mut dx = vec![0.0; self.n * in_len];
            for i in 0..self.n {
                col2im(&dcols[i * p * k..(i + 1) * p * k], geom, &mut dx[i * in_len..(i + 1) * in_len]);
            }
            dact = dx;
        }
        Ok(grads)
    }
}
