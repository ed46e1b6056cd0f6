use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{
    partition_groups, subm_conv_backward, subm_conv_backward_input, subm_conv_forward_taped_ordered, ConvTape,
    GroupPartition, GroupedSparseKernel,
};
use crate::sds::er_init_mask;
use crate::voxel::{kernel_offsets, KernelOffsets, NeighborMap, SparseTensor};
use crate::{Error, Result};

use super::layers::{BatchNorm, Linear, NormCache, NormMode, SparseConv};

/// Architecture of the segmentation network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Voxel edge in meters.
    pub voxel_size: f64,
    pub in_feats: usize,
    /// Base hidden width `D`.
    pub hidden_width: usize,
    /// Training-time width factor `w`; layers are built at `round(w * D)`.
    pub width_factor: f64,
    pub kernel_size: usize,
    /// Division list applied to every kernel axis.
    pub group_divisions: Vec<usize>,
    pub num_blocks: usize,
    pub num_classes: usize,
    pub class_weights: Vec<f64>,
    /// Informational only; the desk network runs at a single scale.
    #[serde(default)]
    pub scales: Vec<usize>,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.voxel_size > 0.0) {
            return bad(format!("voxel_size {} must be positive", self.voxel_size));
        }
        if self.hidden_width == 0 || self.in_feats == 0 {
            return bad("hidden_width and in_feats must be at least 1".into());
        }
        if !(self.width_factor >= 1.0) {
            return bad(format!("width_factor {} must be >= 1", self.width_factor));
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if self.class_weights.len() != self.num_classes || self.class_weights.iter().any(|&w| !(w > 0.0)) {
            return bad("class_weights needs one positive weight per class".into());
        }
        self.partition()?;
        Ok(())
    }

    pub fn expanded_width(&self) -> usize {
        ((self.width_factor * self.hidden_width as f64).round() as usize).max(self.hidden_width)
    }

    pub fn partition(&self) -> Result<GroupPartition> {
        let k = self.kernel_size;
        let divs = if self.group_divisions.is_empty() { vec![k] } else { self.group_divisions.clone() };
        kernel_offsets(k, k, k)?;
        partition_groups([k; 3], [divs.clone(), divs.clone(), divs])
    }

    pub fn offsets(&self) -> Result<KernelOffsets> {
        kernel_offsets(self.kernel_size, self.kernel_size, self.kernel_size)
    }
}

/// Residual block `y = x + conv2(relu(norm(conv1(x))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LskBlock {
    pub conv1: SparseConv,
    pub norm: BatchNorm,
    pub conv2: SparseConv,
    /// Identity of each inner channel; fixes the reduction order of `conv2`.
    pub inner_ids: Vec<u32>,
}

impl LskBlock {
    pub fn width(&self) -> usize {
        self.conv1.kernel.d_in()
    }

    pub fn inner_width(&self) -> usize {
        self.conv1.kernel.d_out()
    }
}

/// Positions sorted by channel id.
pub(crate) fn reduction_order(ids: &[u32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&p| ids[p]);
    order
}

fn relu(v: &mut [f32]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    conv1: ConvTape<f32>,
    norm: NormCache,
    conv2: ConvTape<f32>,
}

fn block_forward(
    block: &LskBlock,
    x: Arc<SparseTensor<f32>>,
    nmap: &Arc<NeighborMap>,
    stream_order: &[usize],
    mode: NormMode,
) -> Result<(SparseTensor<f32>, BlockCache)> {
    if x.channels() != block.width() {
        return Err(Error::ShapeMismatch(format!("block expects {} channels, got {}", block.width(), x.channels())));
    }
    let (u, conv1) = subm_conv_forward_taped_ordered(x.clone(), &block.conv1.kernel, nmap.clone(), stream_order)?;
    let (mut r, norm) = block.norm.forward(u.feats(), mode);
    relu(&mut r);
    let r = Arc::new(x.replace_feats(r, block.inner_width())?);
    let inner_order = reduction_order(&block.inner_ids);
    let (v, conv2) = subm_conv_forward_taped_ordered(r, &block.conv2.kernel, nmap.clone(), &inner_order)?;
    let y: Vec<f32> = x.feats().iter().zip(v.feats()).map(|(a, b)| a + b).collect();
    Ok((x.replace_feats(y, block.width())?, BlockCache { conv1, norm, conv2 }))
}

/// Applies one block on its own, reducing over channels in storage order.
pub fn lsk_block_forward(
    x: &SparseTensor<f32>,
    block: &LskBlock,
    nmap: &Arc<NeighborMap>,
    mode: NormMode,
) -> Result<SparseTensor<f32>> {
    let order: Vec<usize> = (0..x.channels()).collect();
    block_forward(block, Arc::new(x.clone()), nmap, &order, mode).map(|(y, _)| y)
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub mode: NormMode,
    pub input: Arc<SparseTensor<f32>>,
    stem_norm: NormCache,
    /// `streams[0]` is the stem output; `streams[b + 1]` the output of block `b`.
    pub streams: Vec<Arc<SparseTensor<f32>>>,
    blocks: Vec<BlockCache>,
    pub logits: Vec<f32>,
}

impl ForwardCache {
    /// Output of the last residual block.
    pub fn last_stream(&self) -> &SparseTensor<f32> {
        self.streams.last().expect("stem output always present")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockGrads {
    pub conv1: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub conv2: Vec<f32>,
}

/// Gradients in parameter order, plus the gradient of the input features.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub stem_w: Vec<f32>,
    pub stem_b: Vec<f32>,
    pub stem_gamma: Vec<f32>,
    pub stem_beta: Vec<f32>,
    pub blocks: Vec<BlockGrads>,
    pub head_w: Vec<f32>,
    pub head_b: Vec<f32>,
    pub input: Vec<f32>,
}

/// Mutable view of one parameter tensor for an optimizer.
pub struct ParamMut<'a> {
    pub value: &'a mut [f32],
    pub m: &'a mut [f32],
    pub v: &'a mut [f32],
    pub grad: &'a [f32],
    pub mask: Option<&'a [bool]>,
    pub decay: bool,
}

/// Stem (1x1x1 conv, norm, ReLU) -> residual large-kernel blocks -> linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct LskNetwork {
    config: NetworkConfig,
    offsets: KernelOffsets,
    pub stem: Linear,
    pub stem_norm: BatchNorm,
    pub blocks: Vec<LskBlock>,
    pub head: Linear,
    /// Identity of each residual-stream channel; fixes reduction order downstream.
    pub stream_ids: Vec<u32>,
}

impl LskNetwork {
    /// Builds a network at `width` hidden channels (expanded width for training,
    /// base width for a native small model) with ER-initialised large kernels.
    pub fn build<R: Rng + ?Sized>(config: &NetworkConfig, width: usize, sparsity: f64, rng: &mut R) -> Result<(Self, Vec<String>)> {
        config.validate()?;
        let partition = config.partition()?;
        let offsets = config.offsets()?;
        let mut warnings = Vec::new();
        let uniform = |n: usize, bound: f64, rng: &mut R| -> Vec<f32> {
            (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect()
        };
        let stem_w = uniform(width * config.in_feats, (6.0 / config.in_feats as f64).sqrt(), rng);
        let stem = Linear::new(config.in_feats, width, stem_w);
        let slots = offsets.len();
        let mut conv = |rng: &mut R| -> Result<SparseConv> {
            let w = uniform(slots * width * width, (6.0 / (slots * width) as f64).sqrt(), rng);
            let (mask, warn) = er_init_mask(width, width, &partition, sparsity, rng);
            warnings.extend(warn);
            Ok(SparseConv::new(GroupedSparseKernel::with_mask(partition.clone(), width, width, w, mask)?))
        };
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for _ in 0..config.num_blocks {
            let conv1 = conv(rng)?;
            let conv2 = conv(rng)?;
            blocks.push(LskBlock { conv1, norm: BatchNorm::new(width), conv2, inner_ids: (0..width as u32).collect() });
        }
        let head_w = uniform(config.num_classes * width, 1.0 / (width as f64).sqrt(), rng);
        let head = Linear::new(width, config.num_classes, head_w);
        let net = Self {
            config: config.clone(),
            offsets,
            stem,
            stem_norm: BatchNorm::new(width),
            blocks,
            head,
            stream_ids: (0..width as u32).collect(),
        };
        Ok((net, warnings))
    }

    /// Reassembles a network from its parts; shapes are validated.
    pub fn from_parts(
        config: NetworkConfig,
        stem: Linear,
        stem_norm: BatchNorm,
        blocks: Vec<LskBlock>,
        head: Linear,
        stream_ids: Vec<u32>,
    ) -> Result<Self> {
        let offsets = config.offsets()?;
        let net = Self { config, offsets, stem, stem_norm, blocks, head, stream_ids };
        net.check_shapes()?;
        Ok(net)
    }

    fn check_shapes(&self) -> Result<()> {
        let w = self.stream_width();
        let mismatch = |m: &str| Err(Error::ShapeMismatch(m.to_string()));
        if self.stem.in_dim != self.config.in_feats || self.stem_norm.channels() != w || self.stream_ids.len() != w {
            return mismatch("stem does not match the residual stream width");
        }
        if self.head.in_dim != w || self.head.out_dim != self.config.num_classes {
            return mismatch("head does not match stream width and class count");
        }
        if self.blocks.len() != self.config.num_blocks {
            return mismatch("block count differs from config");
        }
        for b in &self.blocks {
            let inner = b.inner_width();
            let ok = b.conv1.kernel.d_in() == w
                && b.conv2.kernel.d_out() == w
                && b.conv2.kernel.d_in() == inner
                && b.norm.channels() == inner
                && b.inner_ids.len() == inner
                && b.conv1.kernel.num_slots() == self.offsets.len()
                && b.conv2.kernel.num_slots() == self.offsets.len();
            if !ok {
                return mismatch("block layer shapes are inconsistent");
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn offsets(&self) -> &KernelOffsets {
        &self.offsets
    }

    pub fn stream_width(&self) -> usize {
        self.stem.out_dim
    }

    pub fn inner_widths(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.inner_width()).collect()
    }

    /// All large-kernel layers in order (`conv1`, `conv2` of each block).
    pub fn lsk_layers(&self) -> impl Iterator<Item = &SparseConv> {
        self.blocks.iter().flat_map(|b| [&b.conv1, &b.conv2])
    }

    pub fn lsk_layers_mut(&mut self) -> impl Iterator<Item = &mut SparseConv> {
        self.blocks.iter_mut().flat_map(|b| [&mut b.conv1, &mut b.conv2])
    }

    pub fn forward(&self, x: &SparseTensor<f32>, nmap: &Arc<NeighborMap>, mode: NormMode) -> Result<ForwardCache> {
        if x.channels() != self.config.in_feats {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input features, got {}",
                self.config.in_feats,
                x.channels()
            )));
        }
        let input = Arc::new(x.clone());
        let identity: Vec<usize> = (0..self.config.in_feats).collect();
        let pre = self.stem.forward(x.feats(), &identity);
        let (mut a, stem_norm) = self.stem_norm.forward(&pre, mode);
        relu(&mut a);
        let mut streams = vec![Arc::new(x.replace_feats(a, self.stream_width())?)];
        let stream_order = reduction_order(&self.stream_ids);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, cache) = block_forward(block, streams.last().unwrap().clone(), nmap, &stream_order, mode)?;
            streams.push(Arc::new(y));
            blocks.push(cache);
        }
        let logits = self.head.forward(streams.last().unwrap().feats(), &stream_order);
        Ok(ForwardCache { mode, input, stem_norm, streams, blocks, logits })
    }

    /// Backpropagates a gradient on the logits.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &[f32]) -> Result<Gradients> {
        let (g_stream, head_w, head_b) = self.head.backward(cache.last_stream().feats(), grad_logits);
        let mut grads = self.backward_from_stream(cache, g_stream, true)?;
        grads.head_w = head_w;
        grads.head_b = head_b;
        Ok(grads)
    }

    /// Backpropagates a gradient on the last block output down to the input
    /// features. Weight gradients of the large-kernel layers are skipped unless
    /// `param_grads` is set.
    pub fn backward_from_stream(&self, cache: &ForwardCache, grad_stream: Vec<f32>, param_grads: bool) -> Result<Gradients> {
        let mut g = grad_stream;
        let mut block_grads = vec![BlockGrads::default(); self.blocks.len()];
        for (b, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let (mut g_r, g_w2) = if param_grads {
                subm_conv_backward(&g, &bc.conv2, &block.conv2.kernel)?
            } else {
                (subm_conv_backward_input(&g, &bc.conv2, &block.conv2.kernel)?, Vec::new())
            };
            for (gr, &r) in g_r.iter_mut().zip(bc.conv2.input().feats()) {
                if r <= 0.0 {
                    *gr = 0.0;
                }
            }
            let (g_u, g_gamma, g_beta) = block.norm.backward(&bc.norm, &g_r);
            let (g_x, g_w1) = if param_grads {
                subm_conv_backward(&g_u, &bc.conv1, &block.conv1.kernel)?
            } else {
                (subm_conv_backward_input(&g_u, &bc.conv1, &block.conv1.kernel)?, Vec::new())
            };
            for (a, b) in g.iter_mut().zip(&g_x) {
                *a += b;
            }
            block_grads[b] = BlockGrads { conv1: g_w1, gamma: g_gamma, beta: g_beta, conv2: g_w2 };
        }
        for (gv, &a) in g.iter_mut().zip(cache.streams[0].feats()) {
            if a <= 0.0 {
                *gv = 0.0;
            }
        }
        let (g_pre, stem_gamma, stem_beta) = self.stem_norm.backward(&cache.stem_norm, &g);
        let (input, stem_w, stem_b) = self.stem.backward(cache.input.feats(), &g_pre);
        Ok(Gradients {
            stem_w,
            stem_b,
            stem_gamma,
            stem_beta,
            blocks: block_grads,
            head_w: Vec::new(),
            head_b: Vec::new(),
            input,
        })
    }

    /// Folds the batch statistics of a training-mode forward pass into the
    /// running normalisation statistics.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let rows = cache.input.len();
        self.stem_norm.update_running(&cache.stem_norm, rows);
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks) {
            block.norm.update_running(&bc.norm, rows);
        }
    }

    /// Visits every trainable tensor with its gradient, in a fixed order.
    pub fn visit_params(&mut self, grads: &Gradients, mut f: impl FnMut(ParamMut<'_>)) {
        fn dense<'a>(p: &'a mut super::Param, grad: &'a [f32], decay: bool) -> ParamMut<'a> {
            ParamMut { value: &mut p.value, m: &mut p.m, v: &mut p.v, grad, mask: None, decay }
        }
        fn sparse<'a>(c: &'a mut SparseConv, grad: &'a [f32]) -> ParamMut<'a> {
            let (value, mask) = c.kernel.weights_mut();
            ParamMut { value, m: &mut c.m, v: &mut c.v, grad, mask: Some(mask), decay: true }
        }
        f(dense(&mut self.stem.weight, &grads.stem_w, true));
        f(dense(&mut self.stem.bias, &grads.stem_b, false));
        f(dense(&mut self.stem_norm.gamma, &grads.stem_gamma, false));
        f(dense(&mut self.stem_norm.beta, &grads.stem_beta, false));
        for (block, g) in self.blocks.iter_mut().zip(&grads.blocks) {
            f(sparse(&mut block.conv1, &g.conv1));
            f(dense(&mut block.norm.gamma, &g.gamma, false));
            f(dense(&mut block.norm.beta, &g.beta, false));
            f(sparse(&mut block.conv2, &g.conv2));
        }
        f(dense(&mut self.head.weight, &grads.head_w, true));
        f(dense(&mut self.head.bias, &grads.head_b, false));
    }

    /// Reorders or slices hidden channels.
    ///
    /// `stream[k]` is the current position of the residual-stream channel that
    /// ends up at position `k`; `inner[b]` does the same for block `b`. Every
    /// tensor that touches a boundary (weights, masks, norm parameters and
    /// statistics, optimizer moments, channel ids) is gathered consistently.
    pub fn gather_channels(&self, stream: &[usize], inner: &[Vec<usize>]) -> Result<Self> {
        if inner.len() != self.blocks.len() {
            return Err(Error::ShapeMismatch("one inner channel list per block required".into()));
        }
        let w = self.stream_width();
        let in_range = |idx: &[usize], n: usize| idx.iter().all(|&i| i < n);
        if !in_range(stream, w) || inner.iter().zip(&self.blocks).any(|(idx, b)| !in_range(idx, b.inner_width())) {
            return Err(Error::ShapeMismatch("channel index out of range".into()));
        }
        let fin = self.config.in_feats;
        let stem = Linear {
            weight: self.stem.weight.gather_rows(fin, stream),
            bias: self.stem.bias.gather(stream),
            in_dim: fin,
            out_dim: stream.len(),
        };
        let blocks = self
            .blocks
            .iter()
            .zip(inner)
            .map(|(b, keep)| {
                let all_stream: Vec<usize> = stream.to_vec();
                LskBlock {
                    conv1: b.conv1.gather_channels(keep, &all_stream),
                    norm: b.norm.gather(keep),
                    conv2: b.conv2.gather_channels(&all_stream, keep),
                    inner_ids: keep.iter().map(|&i| b.inner_ids[i]).collect(),
                }
            })
            .collect();
        let head = Linear {
            weight: self.head.weight.gather_cols(w, stream),
            bias: self.head.bias.clone(),
            in_dim: stream.len(),
            out_dim: self.head.out_dim,
        };
        Self::from_parts(
            self.config.clone(),
            stem,
            self.stem_norm.gather(stream),
            blocks,
            head,
            stream.iter().map(|&i| self.stream_ids[i]).collect(),
        )
    }
}
