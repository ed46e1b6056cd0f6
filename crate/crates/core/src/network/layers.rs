use crate::conv::GroupedSparseKernel;

/// A trainable tensor with its AdamW moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let n = value.len();
        Self { value, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Rows of a row-major `rows x cols` matrix, in the given order.
    pub fn gather_rows(&self, cols: usize, rows: &[usize]) -> Self {
        let g = |b: &[f32]| rows.iter().flat_map(|&r| b[r * cols..(r + 1) * cols].iter().copied()).collect();
        Self { value: g(&self.value), m: g(&self.m), v: g(&self.v) }
    }

    /// Columns of a row-major matrix with `cols` columns, in the given order.
    pub fn gather_cols(&self, cols: usize, keep: &[usize]) -> Self {
        let g = |b: &[f32]| b.chunks(cols).flat_map(|row| keep.iter().map(|&c| row[c]).collect::<Vec<_>>()).collect();
        Self { value: g(&self.value), m: g(&self.m), v: g(&self.v) }
    }

    pub fn gather(&self, keep: &[usize]) -> Self {
        self.gather_rows(1, keep)
    }
}

/// Dense affine map `y = W x + b` applied per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f32>) -> Self {
        assert_eq!(weight.len(), in_dim * out_dim);
        Self { weight: Param::new(weight), bias: Param::new(vec![0.0; out_dim]), in_dim, out_dim }
    }

    /// `in_order` fixes the reduction order over input channels.
    pub fn forward(&self, x: &[f32], in_order: &[usize]) -> Vec<f32> {
        let rows = x.len() / self.in_dim.max(1);
        let mut out = Vec::with_capacity(rows * self.out_dim);
        for xr in x.chunks(self.in_dim.max(1)).take(rows) {
            for o in 0..self.out_dim {
                let w = &self.weight.value[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = self.bias.value[o];
                for &i in in_order {
                    acc += w[i] * xr[i];
                }
                out.push(acc);
            }
        }
        out
    }

    /// Returns `(grad_x, grad_w, grad_b)`.
    pub fn backward(&self, x: &[f32], grad_out: &[f32]) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let (din, dout) = (self.in_dim, self.out_dim);
        let mut gx = vec![0.0; x.len()];
        let mut gw = vec![0.0; din * dout];
        let mut gb = vec![0.0; dout];
        for ((xr, gr), gxr) in x.chunks(din.max(1)).zip(grad_out.chunks(dout.max(1))).zip(gx.chunks_mut(din.max(1))) {
            for (o, &g) in gr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let w = &self.weight.value[o * din..(o + 1) * din];
                for i in 0..din {
                    gw[o * din + i] += g * xr[i];
                    gxr[i] += g * w[i];
                }
            }
        }
        (gx, gw, gb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics over the active voxels.
    Train,
    /// Running statistics.
    Eval,
}

/// Per-channel batch normalisation over active voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

pub const NORM_EPS: f32 = 1e-5;
pub const NORM_MOMENTUM: f32 = 0.1;

/// Saved quantities for the normalisation backward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub mode: NormMode,
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f32>,
    pub batch_mean: Vec<f32>,
    pub batch_var: Vec<f32>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::new(vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &[f32], mode: NormMode) -> (Vec<f32>, NormCache) {
        let d = self.channels();
        let rows = x.len() / d.max(1);
        let (mean, var) = match mode {
            NormMode::Train if rows > 0 => {
                let mut sum = vec![0.0f64; d];
                for r in x.chunks(d) {
                    for (s, &v) in sum.iter_mut().zip(r) {
                        *s += v as f64;
                    }
                }
                let mean: Vec<f64> = sum.iter().map(|s| s / rows as f64).collect();
                let mut sq = vec![0.0f64; d];
                for r in x.chunks(d) {
                    for ((s, &v), &m) in sq.iter_mut().zip(r).zip(&mean) {
                        *s += (v as f64 - m).powi(2);
                    }
                }
                (mean.iter().map(|&m| m as f32).collect(), sq.iter().map(|&s| (s / rows as f64) as f32).collect())
            }
            _ => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut xhat = Vec::with_capacity(x.len());
        let mut y = Vec::with_capacity(x.len());
        for r in x.chunks(d.max(1)) {
            for c in 0..d {
                let h = (r[c] - mean[c]) * inv_std[c];
                xhat.push(h);
                y.push(self.gamma.value[c] * h + self.beta.value[c]);
            }
        }
        (y, NormCache { mode, xhat, inv_std, batch_mean: mean, batch_var: var })
    }

    /// Folds batch statistics into the running estimates.
    pub fn update_running(&mut self, cache: &NormCache, rows: usize) {
        if cache.mode != NormMode::Train || rows == 0 {
            return;
        }
        let unbias = if rows > 1 { rows as f32 / (rows - 1) as f32 } else { 1.0 };
        for c in 0..self.channels() {
            self.running_mean[c] = (1.0 - NORM_MOMENTUM) * self.running_mean[c] + NORM_MOMENTUM * cache.batch_mean[c];
            self.running_var[c] = (1.0 - NORM_MOMENTUM) * self.running_var[c] + NORM_MOMENTUM * cache.batch_var[c] * unbias;
        }
    }

    /// Returns `(grad_x, grad_gamma, grad_beta)`.
    pub fn backward(&self, cache: &NormCache, grad_out: &[f32]) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let d = self.channels();
        let rows = grad_out.len() / d.max(1);
        let mut g_gamma = vec![0.0f64; d];
        let mut g_beta = vec![0.0f64; d];
        for (g, h) in grad_out.chunks(d.max(1)).zip(cache.xhat.chunks(d.max(1))) {
            for c in 0..d {
                g_beta[c] += g[c] as f64;
                g_gamma[c] += (g[c] * h[c]) as f64;
            }
        }
        let mut gx = Vec::with_capacity(grad_out.len());
        match cache.mode {
            NormMode::Train => {
                let n = rows as f32;
                for (g, h) in grad_out.chunks(d.max(1)).zip(cache.xhat.chunks(d.max(1))) {
                    for c in 0..d {
                        let k = self.gamma.value[c] * cache.inv_std[c] / n;
                        gx.push(k * (n * g[c] - g_beta[c] as f32 - h[c] * g_gamma[c] as f32));
                    }
                }
            }
            NormMode::Eval => {
                for g in grad_out.chunks(d.max(1)) {
                    for c in 0..d {
                        gx.push(g[c] * self.gamma.value[c] * cache.inv_std[c]);
                    }
                }
            }
        }
        let f = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect();
        (gx, f(g_gamma), f(g_beta))
    }

    pub fn gather(&self, keep: &[usize]) -> Self {
        Self {
            gamma: self.gamma.gather(keep),
            beta: self.beta.gather(keep),
            running_mean: keep.iter().map(|&c| self.running_mean[c]).collect(),
            running_var: keep.iter().map(|&c| self.running_var[c]).collect(),
        }
    }
}

/// A large-kernel layer: masked kernel plus AdamW moments in the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseConv {
    pub kernel: GroupedSparseKernel<f32>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl SparseConv {
    pub fn new(kernel: GroupedSparseKernel<f32>) -> Self {
        let n = kernel.len();
        Self { kernel, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn gather_channels(&self, out_idx: &[usize], in_idx: &[usize]) -> Self {
        let (s, o, i) = (self.kernel.num_slots(), self.kernel.d_out(), self.kernel.d_in());
        Self {
            kernel: self.kernel.gather_channels(out_idx, in_idx),
            m: crate::conv::gather_layout(&self.m, s, o, i, out_idx, in_idx),
            v: crate::conv::gather_layout(&self.v, s, o, i, out_idx, in_idx),
        }
    }

    /// Clears optimizer moments at the given flat positions.
    pub fn reset_moments(&mut self, positions: impl IntoIterator<Item = usize>) {
        for p in positions {
            self.m[p] = 0.0;
            self.v[p] = 0.0;
        }
    }
}
