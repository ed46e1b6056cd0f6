//! Spatial-wise dynamic sparsity.
//!
//! Masks are initialised per spatial group with an Erdős–Rényi style scaled zero
//! budget, then periodically updated by removing the smallest-magnitude active
//! weights of each group and regrowing the same number at random inactive
//! positions of that group. Per-group active counts never change.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{GroupPartition, GroupedSparseKernel};
use crate::{Error, Result, Scalar};

/// Dynamic sparsity hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityConfig {
    /// Target sparsity `s` in `[0, 1)`.
    pub sparsity: f64,
    /// Fraction `p` of each group's active weights replaced per adaptation.
    pub prune_rate: f64,
    /// Adaptation frequency `f_a` in iterations.
    pub adapt_every: u64,
    pub seed: u64,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        Self { sparsity: 0.4, prune_rate: 0.3, adapt_every: 2000, seed: 0 }
    }
}

impl SparsityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::InvalidConfig(format!("sparsity {} not in [0, 1)", self.sparsity)));
        }
        if !(self.prune_rate > 0.0 && self.prune_rate < 1.0) {
            return Err(Error::InvalidConfig(format!("prune rate {} not in (0, 1)", self.prune_rate)));
        }
        if self.adapt_every == 0 {
            return Err(Error::InvalidConfig("adaptation frequency must be at least 1".into()));
        }
        Ok(())
    }
}

/// One mask position touched by an adaptation, with the group it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MaskEntry {
    pub group: usize,
    pub index: usize,
}

/// Positions eliminated (`E`) and grown (`G`) by one adaptation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaskDelta {
    pub eliminated: Vec<MaskEntry>,
    pub grown: Vec<MaskEntry>,
    pub warnings: Vec<String>,
}

/// Zero-budget scale `1 - (D_in + D_out + K1g + K2g + K3g) / (D_in * D_out * K1g * K2g * K3g)`.
pub fn er_scale(d_in: usize, d_out: usize, group_dims: [usize; 3]) -> f64 {
    let [a, b, c] = group_dims;
    let num = (d_in + d_out + a + b + c) as f64;
    let den = (d_in * d_out * a * b * c) as f64;
    1.0 - num / den
}

/// Per-group zero counts for a layer.
///
/// Each group starts from `round(s * scale_g * n_g)`; a largest-remainder pass
/// then moves single weights so the layer total equals `round(sum of ideals)`.
/// Every group keeps at least one active weight.
pub fn er_zero_counts(d_out: usize, d_in: usize, partition: &GroupPartition, sparsity: f64) -> (Vec<usize>, Vec<String>) {
    let mut warnings = Vec::new();
    let groups = partition.num_groups();
    let sizes: Vec<usize> = (0..groups).map(|g| partition.group_slots(g).len() * d_out * d_in).collect();
    let ideal: Vec<f64> = (0..groups)
        .map(|g| (sparsity * er_scale(d_in, d_out, partition.group_dims(g)) * sizes[g] as f64).max(0.0))
        .collect();
    let cap = |g: usize| sizes[g].saturating_sub(1);
    let mut zeros: Vec<usize> = (0..groups)
        .map(|g| {
            let z = ideal[g].round() as usize;
            if z > cap(g) {
                warnings.push(format!("group {g}: zero budget {z} clamped to {}", cap(g)));
            }
            z.min(cap(g))
        })
        .collect();
    let target = (ideal.iter().sum::<f64>().round() as usize).min((0..groups).map(cap).sum());
    let mut current: usize = zeros.iter().sum();
    // ties resolved by group id so the pass is deterministic
    let mut order: Vec<usize> = (0..groups).collect();
    if current < target {
        order.sort_by(|&a, &b| {
            let ra = ideal[a] - zeros[a] as f64;
            let rb = ideal[b] - zeros[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &g in order.iter().cycle().take(groups * 2) {
            if current == target {
                break;
            }
            if zeros[g] < cap(g) {
                zeros[g] += 1;
                current += 1;
            }
        }
    } else if current > target {
        order.sort_by(|&a, &b| {
            let ra = zeros[a] as f64 - ideal[a];
            let rb = zeros[b] as f64 - ideal[b];
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &g in order.iter().cycle().take(groups * 2) {
            if current == target {
                break;
            }
            if zeros[g] > 0 {
                zeros[g] -= 1;
                current -= 1;
            }
        }
    }
    (zeros, warnings)
}

/// ER mask for a `(slots, d_out, d_in)` kernel; zero positions are drawn
/// uniformly within each group.
pub fn er_init_mask<R: Rng + ?Sized>(
    d_out: usize,
    d_in: usize,
    partition: &GroupPartition,
    sparsity: f64,
    rng: &mut R,
) -> (Vec<bool>, Vec<String>) {
    let block = d_out * d_in;
    let mut mask = vec![true; partition.num_slots() * block];
    let (zeros, warnings) = er_zero_counts(d_out, d_in, partition, sparsity);
    for (g, &z) in zeros.iter().enumerate() {
        let slots = partition.group_slots(g);
        let n = slots.len() * block;
        for k in index::sample(rng, n, z).into_iter() {
            let slot = slots[k / block] as usize;
            mask[slot * block + k % block] = false;
        }
    }
    (mask, warnings)
}

/// `W_D ⊙ M`.
pub fn apply_mask<T: Scalar>(dense: &[T], mask: &[bool]) -> Result<Vec<T>> {
    if dense.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!("{} weights, {} mask bits", dense.len(), mask.len())));
    }
    Ok(dense.iter().zip(mask).map(|(&w, &m)| if m { w } else { T::zero() }).collect())
}

/// Removes `floor(p * active)` smallest-magnitude active weights from every group.
///
/// Ties are broken by flat position (slot, then output, then input channel).
pub fn prune_step<T: Scalar>(kernel: &mut GroupedSparseKernel<T>, prune_rate: f64) -> Vec<MaskEntry> {
    let mut eliminated = Vec::new();
    let mut active: Vec<(T, usize)> = Vec::new();
    let mut scratch: Vec<(T, usize)> = Vec::new();
    for g in 0..kernel.partition().num_groups() {
        let (w, mask) = (kernel.weights(), kernel.mask());
        // branch-free compaction: the mask pattern is random, so a branch mispredicts often
        active.resize(kernel.group_size(g), (T::zero(), 0));
        let mut n = 0;
        for_each_in_group(kernel, g, |i| {
            active[n] = (w[i].abs(), i);
            n += mask[i] as usize;
        });
        active.truncate(n);
        let k = (prune_rate * active.len() as f64).floor() as usize;
        if k == 0 {
            continue;
        }
        let key = |a: &(T, usize), b: &(T, usize)| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1));
        // find the k-th smallest key on a scratch copy, then keep index order by filtering the original
        scratch.clear();
        scratch.extend_from_slice(&active);
        let (_, &mut threshold, _) = scratch.select_nth_unstable_by(k - 1, key);
        let chosen = active.iter().filter(|e| key(e, &threshold) != std::cmp::Ordering::Greater).map(|&(_, i)| i);
        eliminated.extend(chosen.map(|index| MaskEntry { group: g, index }));
    }
    for e in &eliminated {
        kernel.deactivate(e.index);
    }
    eliminated
}

/// Visits the flat indices of group `g` in ascending order.
fn for_each_in_group<T: Scalar>(kernel: &GroupedSparseKernel<T>, g: usize, mut f: impl FnMut(usize)) {
    let block = kernel.d_out() * kernel.d_in();
    for &s in kernel.partition().group_slots(g) {
        let base = s as usize * block;
        (base..base + block).for_each(&mut f);
    }
}

/// Regrows, per group, as many positions as were eliminated there, drawn uniformly
/// from the group's inactive positions excluding the ones just eliminated. Grown
/// weights start at zero.
pub fn regrow_step<T: Scalar, R: Rng + ?Sized>(
    kernel: &mut GroupedSparseKernel<T>,
    eliminated: &[MaskEntry],
    rng: &mut R,
) -> (Vec<MaskEntry>, Vec<String>) {
    let groups = kernel.partition().num_groups();
    let mut per_group = vec![0usize; groups];
    for e in eliminated {
        per_group[e.group] += 1;
    }
    let mut just_pruned = vec![false; kernel.len()];
    for e in eliminated {
        just_pruned[e.index] = true;
    }
    let mut grown = Vec::new();
    let mut warnings = Vec::new();
    for (g, &want) in per_group.iter().enumerate() {
        if want == 0 {
            continue;
        }
        let mask = kernel.mask();
        let mut eligible = vec![0; kernel.group_size(g)];
        let mut n = 0;
        for_each_in_group(kernel, g, |i| {
            eligible[n] = i;
            n += (!mask[i] & !just_pruned[i]) as usize;
        });
        eligible.truncate(n);
        let take = want.min(eligible.len());
        if take < want {
            warnings.push(format!("group {g}: only {take} of {want} positions available for regrowth"));
        }
        let mut picks: Vec<usize> = index::sample(rng, eligible.len(), take).into_iter().map(|k| eligible[k]).collect();
        picks.sort_unstable();
        grown.extend(picks.into_iter().map(|index| MaskEntry { group: g, index }));
    }
    for e in &grown {
        kernel.activate(e.index, T::zero());
    }
    (grown, warnings)
}

/// One adaptation: prune then regrow.
pub fn sds_update<T: Scalar, R: Rng + ?Sized>(kernel: &mut GroupedSparseKernel<T>, prune_rate: f64, rng: &mut R) -> MaskDelta {
    let eliminated = prune_step(kernel, prune_rate);
    let (grown, warnings) = regrow_step(kernel, &eliminated, rng);
    MaskDelta { eliminated, grown, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use crate::conv::partition_groups;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn threes(k: usize) -> GroupPartition {
        let d = vec![3; k / 3];
        partition_groups([k; 3], [d.clone(), d.clone(), d]).unwrap()
    }

    #[test]
    fn scale_arithmetic() {
        let s = er_scale(4, 4, [3, 3, 3]);
        assert!((s - (1.0 - 17.0 / 432.0)).abs() < 1e-15);
        assert!((s - 0.96065).abs() < 1e-5);
    }

    #[test]
    fn zero_sparsity_is_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mask, warnings) = er_init_mask(4, 4, &threes(9), 0.0, &mut rng);
        assert!(mask.iter().all(|&m| m));
        assert!(warnings.is_empty());
    }

    #[test]
    fn small_group_budget() {
        // 0.4 * (432 - 17) = 166 exactly
        let (zeros, _) = er_zero_counts(4, 4, &threes(3), 0.4);
        assert_eq!(zeros, vec![166]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mask, _) = er_init_mask(4, 4, &threes(9), 0.4, &mut rng);
        let k = GroupedSparseKernel::with_mask(threes(9), 4, 4, vec![1.0f32; mask.len()], mask).unwrap();
        assert!(k.group_active().iter().all(|&a| a == 432 - 166));
    }

    #[test]
    fn realized_sparsity_d64() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mask, _) = er_init_mask(64, 64, &threes(3), 0.4, &mut rng);
        let zeros = mask.iter().filter(|&&m| !m).count() as f64;
        let expect = 0.4 * er_scale(64, 64, [3, 3, 3]);
        assert!((zeros / mask.len() as f64 - expect).abs() < 0.005);
    }

    #[test]
    fn extreme_sparsity_never_empties_a_group() {
        let p = partition_groups([3, 3, 3], [vec![1, 1, 1], vec![3], vec![3]]).unwrap();
        for (d, s) in [(1, 0.9), (8, 0.999_999), (64, 0.999_999)] {
            let (zeros, _) = er_zero_counts(d, d, &p, s);
            for (g, &z) in zeros.iter().enumerate() {
                assert!(z < p.group_slots(g).len() * d * d);
            }
        }
    }

    #[test]
    fn correction_hits_rounded_total() {
        let d = vec![2, 2, 1, 2, 2];
        let p = partition_groups([9, 9, 9], [d.clone(), d.clone(), d]).unwrap();
        for (din, dout, s) in [(3, 5, 0.37), (8, 8, 0.4), (2, 7, 0.61)] {
            let (zeros, _) = er_zero_counts(dout, din, &p, s);
            let ideal: f64 = (0..p.num_groups())
                .map(|g| (s * er_scale(din, dout, p.group_dims(g)) * (p.group_slots(g).len() * din * dout) as f64).max(0.0))
                .sum();
            let total: usize = zeros.iter().sum();
            assert!((total as f64 - ideal).abs() <= 0.5 + 1e-9, "{total} vs {ideal}");
        }
    }

    #[test]
    fn apply_mask_hadamard() {
        assert_eq!(apply_mask(&[1.0, 2.0, 3.0], &[true, false, true]).unwrap(), vec![1.0, 0.0, 3.0]);
        assert_eq!(apply_mask(&[1.0f32, 2.0], &[true, true]).unwrap(), vec![1.0, 2.0]);
        assert!(apply_mask(&[1.0f32], &[true, true]).is_err());
    }

    fn one_group_kernel(weights: Vec<f64>) -> GroupedSparseKernel<f64> {
        let p = partition_groups([1, 1, 1], [vec![1], vec![1], vec![1]]).unwrap();
        let n = weights.len();
        GroupedSparseKernel::dense(p, 1, n, weights).unwrap()
    }

    #[test]
    fn prune_two_smallest() {
        let mut k = one_group_kernel(vec![0.5, -0.1, 0.3, -0.7]);
        let e = prune_step(&mut k, 0.5);
        assert_eq!(e.iter().map(|e| e.index).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(k.mask(), &[true, false, false, true]);
        assert_eq!(k.weights(), &[0.5, 0.0, 0.0, -0.7]);
    }

    #[test]
    fn prune_floor_to_zero() {
        let mut k = one_group_kernel(vec![0.5, -0.1, 0.3]);
        let before = k.clone();
        assert!(prune_step(&mut k, 0.3).is_empty());
        assert_eq!(k.weights(), before.weights());
    }

    #[test]
    fn prune_ties_by_position() {
        let mut k = one_group_kernel(vec![0.2, 0.1, -0.1, 0.1, 0.3]);
        let e = prune_step(&mut k, 0.4);
        assert_eq!(e.iter().map(|e| e.index).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn regrow_forced_choice() {
        for seed in 0..5 {
            let mut k = one_group_kernel(vec![0.5, 0.0, -0.9, 0.0, 0.8, 0.05, 0.04]);
            let mut mask = vec![true; 7];
            mask[1] = false;
            mask[3] = false;
            k.set_mask(mask).unwrap();
            let e = prune_step(&mut k, 0.4);
            assert_eq!(e.len(), 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (g, _) = regrow_step(&mut k, &e, &mut rng);
            assert_eq!(g.iter().map(|e| e.index).collect::<Vec<_>>(), vec![1, 3]);
            assert_eq!(k.weights()[1], 0.0);
            assert!(k.mask()[1] && k.mask()[3]);
        }
    }

    #[test]
    fn regrow_empty_when_nothing_pruned() {
        let mut k = one_group_kernel(vec![1.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (g, w) = regrow_step(&mut k, &[], &mut rng);
        assert!(g.is_empty() && w.is_empty());
    }

    #[test]
    fn regrow_short_supply_warns() {
        let mut k = one_group_kernel(vec![1.0, 2.0, 3.0, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = prune_step(&mut k, 0.5);
        let (g, w) = regrow_step(&mut k, &e, &mut rng);
        assert!(g.is_empty());
        assert_eq!(w.len(), 1);
    }

    fn random_sparse(seed: u64, d: usize) -> GroupedSparseKernel<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = threes(9);
        let (mask, _) = er_init_mask(d, d, &p, 0.4, &mut rng);
        let w = (0..mask.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        GroupedSparseKernel::with_mask(p, d, d, w, mask).unwrap()
    }

    #[test]
    fn prune_matches_full_sort_oracle() {
        let mut k = random_sparse(3, 4);
        let original = k.clone();
        let e = prune_step(&mut k, 0.3);
        for g in 0..original.partition().num_groups() {
            let mut active: Vec<usize> = original.group_indices(g).filter(|&i| original.mask()[i]).collect();
            active.sort_by(|&a, &b| {
                original.weights()[a].abs().partial_cmp(&original.weights()[b].abs()).unwrap().then(a.cmp(&b))
            });
            let take = (0.3 * active.len() as f64).floor() as usize;
            let mut expect = active[..take].to_vec();
            expect.sort();
            let got: Vec<usize> = e.iter().filter(|m| m.group == g).map(|m| m.index).collect();
            assert_eq!(got, expect);
            let max_pruned = expect.iter().map(|&i| original.weights()[i].abs()).fold(0.0f32, f32::max);
            for &i in &active[take..] {
                assert!(original.weights()[i].abs() >= max_pruned);
            }
        }
    }

    #[test]
    fn update_conserves_and_is_deterministic() {
        let mut a = random_sparse(4, 4);
        let mut b = a.clone();
        let counts = a.group_active().to_vec();
        let total = a.active_count();
        let mut ra = ChaCha8Rng::seed_from_u64(10);
        let mut rb = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let da = sds_update(&mut a, 0.3, &mut ra);
            let db = sds_update(&mut b, 0.3, &mut rb);
            assert_eq!(da, db);
            assert_eq!(a.group_active(), counts.as_slice());
            assert_eq!(a.active_count(), total);
            assert!(a.is_consistent());
            let e: HashSet<_> = da.eliminated.iter().collect();
            assert!(da.grown.iter().all(|g| !e.contains(g)));
            for m in da.eliminated.iter().chain(&da.grown) {
                assert_eq!(a.group_of_index(m.index), m.group);
            }
        }
        assert_eq!(a, b);
    }

    #[test]
    fn swap_count_on_432_group() {
        // one 3x3x3 group with D = 4: 432 weights, 266 active
        let p = threes(3);
        let mut mask = vec![false; 432];
        mask[..266].iter_mut().for_each(|m| *m = true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = (0..432).map(|_| rng.gen_range(0.1..1.0)).collect();
        let mut k = GroupedSparseKernel::with_mask(p, 4, 4, w, mask).unwrap();
        let d = sds_update(&mut k, 0.3, &mut rng);
        assert_eq!(d.eliminated.len(), 79);
        assert_eq!(d.grown.len(), 79);
        assert_eq!(k.active_count(), 266);
    }

    #[test]
    fn config_validation() {
        assert!(SparsityConfig::default().validate().is_ok());
        assert!(SparsityConfig { sparsity: 1.0, ..Default::default() }.validate().is_err());
        assert!(SparsityConfig { prune_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(SparsityConfig { adapt_every: 0, ..Default::default() }.validate().is_err());
    }
}
