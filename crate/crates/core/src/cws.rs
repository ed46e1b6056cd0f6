//! Channel-wise weight selection: train wide, periodically sort hidden channels
//! by L1 magnitude, and keep the leading channels for inference.
//!
//! Two kinds of channel boundary take part. Each block's inner boundary (the
//! output of its first large-kernel conv) is scored by that conv alone. The
//! residual stream is shared by the stem and every block, so it is scored by the
//! sum of the second conv's output-channel scores over all blocks. Stem input
//! and head output widths never change.

use serde::{Deserialize, Serialize};

use crate::conv::GroupedSparseKernel;
use crate::network::LskNetwork;
use crate::{Error, Result, Scalar};

/// Width expansion and sorting schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthConfig {
    /// Inference width `D`.
    pub base_width: usize,
    /// Training width factor `w`.
    pub width_factor: f64,
    /// Sort every this many iterations.
    pub sort_every: u64,
}

impl WidthConfig {
    pub fn expanded_width(&self) -> usize {
        ((self.width_factor * self.base_width as f64).round() as usize).max(self.base_width)
    }

    /// Whether the network is actually wider than its inference width.
    pub fn is_expanded(&self) -> bool {
        self.expanded_width() > self.base_width
    }

    /// Checks the invariants, including that sorting happens on adaptation
    /// boundaries (`adapt_every`).
    pub fn validate(&self, adapt_every: u64) -> Result<()> {
        if self.base_width == 0 {
            return Err(Error::InvalidConfig("base width must be at least 1".into()));
        }
        if !(self.width_factor >= 1.0) {
            return Err(Error::InvalidConfig(format!("width factor {} must be >= 1", self.width_factor)));
        }
        if self.sort_every == 0 || (adapt_every > 0 && self.sort_every % adapt_every != 0) {
            return Err(Error::InvalidConfig(format!(
                "sort frequency {} must be a positive multiple of the adaptation frequency {adapt_every}",
                self.sort_every
            )));
        }
        Ok(())
    }
}

/// One reordering of every sorted boundary. `stream[k]` (and `inner[b][k]`) is
/// the previous position of the channel now at position `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPermutation {
    pub stream: Vec<usize>,
    pub inner: Vec<Vec<usize>>,
}

impl ChannelPermutation {
    pub fn identity(stream: usize, inner: &[usize]) -> Self {
        Self { stream: (0..stream).collect(), inner: inner.iter().map(|&n| (0..n).collect()).collect() }
    }

    pub fn is_identity(&self) -> bool {
        let id = |p: &[usize]| p.iter().enumerate().all(|(k, &i)| k == i);
        id(&self.stream) && self.inner.iter().all(|p| id(p))
    }

    pub fn inverse(&self) -> Self {
        let inv = |p: &[usize]| {
            let mut q = vec![0; p.len()];
            for (k, &i) in p.iter().enumerate() {
                q[i] = k;
            }
            q
        };
        Self { stream: inv(&self.stream), inner: self.inner.iter().map(|p| inv(p)).collect() }
    }

    /// Applies the reordering to a network.
    pub fn apply(&self, net: &LskNetwork) -> Result<LskNetwork> {
        let is_perm = |p: &[usize], n: usize| {
            let mut seen = vec![false; n];
            p.len() == n && p.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
        };
        let ok = is_perm(&self.stream, net.stream_width())
            && self.inner.len() == net.blocks.len()
            && self.inner.iter().zip(net.inner_widths()).all(|(p, n)| is_perm(p, n));
        if !ok {
            return Err(Error::ShapeMismatch("not a permutation of the network's channels".into()));
        }
        net.gather_channels(&self.stream, &self.inner)
    }
}

/// `score[o] = sum over slots and inputs of |W[slot][o][in]|`.
pub fn channel_l1_scores<T: Scalar>(kernel: &GroupedSparseKernel<T>) -> Vec<f64> {
    let (d_out, d_in) = (kernel.d_out(), kernel.d_in());
    let mut scores = vec![0.0f64; d_out];
    for slot_block in kernel.weights().chunks(d_out * d_in) {
        for (o, row) in slot_block.chunks(d_in).enumerate() {
            scores[o] += row.iter().map(|w| w.abs().to_f64().unwrap_or(0.0)).sum::<f64>();
        }
    }
    scores
}

/// Positions ordered by descending score, ties by position.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Scores of the residual-stream channels.
pub fn stream_scores(net: &LskNetwork) -> Vec<f64> {
    let mut scores = vec![0.0; net.stream_width()];
    for block in &net.blocks {
        for (s, v) in scores.iter_mut().zip(channel_l1_scores(&block.conv2.kernel)) {
            *s += v;
        }
    }
    scores
}

/// The permutation that sorts every boundary by descending score.
pub fn sorting_permutation(net: &LskNetwork) -> ChannelPermutation {
    ChannelPermutation {
        stream: descending(&stream_scores(net)),
        inner: net.blocks.iter().map(|b| descending(&channel_l1_scores(&b.conv1.kernel))).collect(),
    }
}

/// Sorts all hidden boundaries in place and returns the permutation used.
/// The network function is unchanged bit for bit.
pub fn sort_channels(net: &mut LskNetwork) -> Result<ChannelPermutation> {
    let perm = sorting_permutation(net);
    if !perm.is_identity() {
        *net = perm.apply(net)?;
    }
    Ok(perm)
}

/// Keeps the first `base_width` channels at every boundary.
pub fn select_channels(net: &LskNetwork, base_width: usize) -> Result<LskNetwork> {
    if base_width == 0 || base_width > net.stream_width() || net.inner_widths().iter().any(|&w| base_width > w) {
        return Err(Error::InvalidConfig(format!(
            "cannot select {base_width} channels from width {}",
            net.stream_width()
        )));
    }
    let keep: Vec<usize> = (0..base_width).collect();
    net.gather_channels(&keep, &vec![keep.clone(); net.blocks.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{NetworkConfig, NormMode};
    use crate::voxel::{gather_neighbors, Coord3, CoordIndex, SparseTensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn config() -> NetworkConfig {
        NetworkConfig {
            voxel_size: 0.05,
            in_feats: 3,
            hidden_width: 4,
            width_factor: 1.75,
            kernel_size: 3,
            group_divisions: vec![],
            num_blocks: 2,
            num_classes: 3,
            class_weights: vec![1.0; 3],
            scales: vec![],
        }
    }

    #[test]
    fn scores_follow_abs_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (net, _) = LskNetwork::build(&config(), 7, 0.4, &mut rng).unwrap();
        let k = &net.blocks[0].conv1.kernel;
        let scores = channel_l1_scores(k);
        for o in 0..7 {
            let mut want = 0.0f64;
            for s in 0..k.num_slots() {
                for i in 0..7 {
                    want += k.weight(s, o, i).abs() as f64;
                }
            }
            assert!((scores[o] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn single_weight_scores_its_magnitude() {
        let p = crate::conv::partition_groups([1, 1, 1], [vec![1], vec![1], vec![1]]).unwrap();
        let k = GroupedSparseKernel::dense(p, 2, 2, vec![0.0, -2.5, 0.0, 0.0f32]).unwrap();
        assert_eq!(channel_l1_scores(&k), vec![2.5, 0.0]);
        assert_eq!(descending(&[1.0, 3.0]), vec![1, 0]);
    }

    #[test]
    fn sorting_preserves_function_and_second_sort_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut net, _) = LskNetwork::build(&config(), 7, 0.4, &mut rng).unwrap();
        let mut coords = std::collections::BTreeSet::new();
        while coords.len() < 40 {
            coords.insert(Coord3::new(rng.gen_range(0..5), rng.gen_range(0..5), rng.gen_range(0..5)));
        }
        let coords: Vec<Coord3> = coords.into_iter().collect();
        let feats = (0..120).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = SparseTensor::new(coords, feats, 3).unwrap();
        let idx = CoordIndex::from_coords(x.coords()).unwrap();
        let nmap = Arc::new(gather_neighbors(&idx, x.coords(), net.offsets()));
        let before = net.forward(&x, &nmap, NormMode::Train).unwrap().logits;
        let perm = sort_channels(&mut net).unwrap();
        assert!(!perm.is_identity());
        let after = net.forward(&x, &nmap, NormMode::Train).unwrap().logits;
        assert_eq!(before, after);
        assert!(sort_channels(&mut net).unwrap().is_identity());
        let back = perm.inverse().apply(&perm.apply(&net).unwrap()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn selection_keeps_top_scores_and_native_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = config();
        let (mut net, _) = LskNetwork::build(&cfg, 7, 0.4, &mut rng).unwrap();
        let scores = channel_l1_scores(&net.blocks[1].conv1.kernel);
        let mut top = descending(&scores);
        top.truncate(4);
        let ids_before = net.blocks[1].inner_ids.clone();
        sort_channels(&mut net).unwrap();
        let small = select_channels(&net, 4).unwrap();
        let kept: Vec<u32> = small.blocks[1].inner_ids.clone();
        let want: Vec<u32> = top.iter().map(|&p| ids_before[p]).collect();
        assert_eq!(kept, want);
        let (native, _) = LskNetwork::build(&cfg, 4, 0.4, &mut rng).unwrap();
        assert_eq!(small.stream_width(), native.stream_width());
        assert_eq!(small.inner_widths(), native.inner_widths());
        assert!(select_channels(&net, 8).is_err());
        assert_eq!(select_channels(&net, 7).unwrap(), net);
    }
}
