use std::sync::atomic::{AtomicU64, Ordering};

use crate::{Error, Result, Scalar};

use super::GroupPartition;

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn fresh_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Masked dense weight store `W` (`slots x d_out x d_in`) with binary mask `M`.
///
/// Invariant: `W[k] == 0` wherever `M[k]` is false. Every mutable access bumps a
/// generation stamp so that stale backward tapes are detected.
#[derive(Debug, Clone)]
pub struct GroupedSparseKernel<T = f32> {
    partition: GroupPartition,
    d_out: usize,
    d_in: usize,
    weights: Vec<T>,
    mask: Vec<bool>,
    group_active: Vec<usize>,
    generation: u64,
}

// The generation stamp is bookkeeping, not content.
impl<T: PartialEq> PartialEq for GroupedSparseKernel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.partition == other.partition
            && self.d_out == other.d_out
            && self.d_in == other.d_in
            && self.weights == other.weights
            && self.mask == other.mask
    }
}

impl<T: Scalar> GroupedSparseKernel<T> {
    /// Fully dense kernel over the given weights.
    pub fn dense(partition: GroupPartition, d_out: usize, d_in: usize, weights: Vec<T>) -> Result<Self> {
        let n = partition.num_slots() * d_out * d_in;
        Self::with_mask(partition, d_out, d_in, weights, vec![true; n])
    }

    pub fn zeros(partition: GroupPartition, d_out: usize, d_in: usize) -> Self {
        let n = partition.num_slots() * d_out * d_in;
        Self::dense(partition, d_out, d_in, vec![T::zero(); n]).expect("consistent shape")
    }

    /// Kernel from dense weights and a mask; weights are multiplied by the mask.
    pub fn with_mask(partition: GroupPartition, d_out: usize, d_in: usize, weights: Vec<T>, mask: Vec<bool>) -> Result<Self> {
        let n = partition.num_slots() * d_out * d_in;
        if weights.len() != n || mask.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "kernel {}x{}x{} needs {} weights, got {} weights and {} mask bits",
                partition.num_slots(),
                d_out,
                d_in,
                n,
                weights.len(),
                mask.len()
            )));
        }
        let mut k = Self {
            group_active: vec![0; partition.num_groups()],
            partition,
            d_out,
            d_in,
            weights,
            mask,
            generation: fresh_generation(),
        };
        k.enforce_mask();
        k.recount();
        Ok(k)
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    pub fn num_slots(&self) -> usize {
        self.partition.num_slots()
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Mutable weights plus the mask. Callers must keep off-mask entries at zero;
    /// [`Self::enforce_mask`] restores the invariant.
    pub fn weights_mut(&mut self) -> (&mut [T], &[bool]) {
        self.generation = fresh_generation();
        (&mut self.weights, &self.mask)
    }

    #[inline]
    pub fn index(&self, slot: usize, out: usize, inp: usize) -> usize {
        (slot * self.d_out + out) * self.d_in + inp
    }

    #[inline]
    pub fn weight(&self, slot: usize, out: usize, inp: usize) -> T {
        self.weights[self.index(slot, out, inp)]
    }

    /// `(slot, out, in)` of a flat index.
    #[inline]
    pub fn position(&self, idx: usize) -> (usize, usize, usize) {
        let block = self.d_out * self.d_in;
        (idx / block, (idx % block) / self.d_in, idx % self.d_in)
    }

    #[inline]
    pub fn group_of_index(&self, idx: usize) -> usize {
        self.partition.group_of_slot(idx / (self.d_out * self.d_in))
    }

    /// Flat indices belonging to a group, in ascending order.
    pub fn group_indices(&self, g: usize) -> impl Iterator<Item = usize> + '_ {
        let block = self.d_out * self.d_in;
        self.partition.group_slots(g).iter().flat_map(move |&s| {
            let base = s as usize * block;
            base..base + block
        })
    }

    pub fn group_size(&self, g: usize) -> usize {
        self.partition.group_slots(g).len() * self.d_out * self.d_in
    }

    /// Active (mask set) count per group.
    pub fn group_active(&self) -> &[usize] {
        &self.group_active
    }

    pub fn active_count(&self) -> usize {
        self.group_active.iter().sum()
    }

    /// Fraction of masked-out weights.
    pub fn sparsity(&self) -> f64 {
        if self.weights.is_empty() {
            return 0.0;
        }
        1.0 - self.active_count() as f64 / self.weights.len() as f64
    }

    /// Replaces the mask and zeroes the weights it removes.
    pub fn set_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.mask.len() {
            return Err(Error::ShapeMismatch(format!("mask of {} for kernel of {}", mask.len(), self.mask.len())));
        }
        self.mask = mask;
        self.enforce_mask();
        self.recount();
        self.generation = fresh_generation();
        Ok(())
    }

    /// Masks out one active position, zeroing its weight.
    pub fn deactivate(&mut self, idx: usize) {
        if self.mask[idx] {
            self.mask[idx] = false;
            self.weights[idx] = T::zero();
            let g = self.group_of_index(idx);
            self.group_active[g] -= 1;
            self.generation = fresh_generation();
        }
    }

    /// Activates one masked position with a given initial weight.
    pub fn activate(&mut self, idx: usize, value: T) {
        if !self.mask[idx] {
            self.mask[idx] = true;
            let g = self.group_of_index(idx);
            self.group_active[g] += 1;
        }
        self.weights[idx] = value;
        self.generation = fresh_generation();
    }

    pub fn enforce_mask(&mut self) {
        for (w, &m) in self.weights.iter_mut().zip(&self.mask) {
            if !m {
                *w = T::zero();
            }
        }
    }

    fn recount(&mut self) {
        self.group_active = self.counted_active();
    }

    /// Active counts per group, recomputed from the mask.
    fn counted_active(&self) -> Vec<usize> {
        let mut counts = vec![0; self.partition.num_groups()];
        let block = self.d_out * self.d_in;
        for (slot, chunk) in self.mask.chunks(block.max(1)).enumerate() {
            counts[self.partition.group_of_slot(slot)] += chunk.iter().filter(|&&m| m).count();
        }
        counts
    }

    /// True when off-mask weights are exactly zero and group counts match the mask.
    pub fn is_consistent(&self) -> bool {
        let zeros_ok = self.weights.iter().zip(&self.mask).all(|(w, &m)| m || *w == T::zero() && w.is_sign_positive());
        zeros_ok && self.counted_active() == self.group_active
    }

    /// Keeps the listed output and input channels, in the listed order.
    pub fn gather_channels(&self, out_idx: &[usize], in_idx: &[usize]) -> Self {
        let slots = self.num_slots();
        let weights = gather_layout(&self.weights, slots, self.d_out, self.d_in, out_idx, in_idx);
        let mask = gather_layout(&self.mask, slots, self.d_out, self.d_in, out_idx, in_idx);
        Self::with_mask(self.partition.clone(), out_idx.len(), in_idx.len(), weights, mask).expect("gathered shape")
    }

    /// Same layout, different element type.
    pub fn cast<U: Scalar>(&self) -> GroupedSparseKernel<U> {
        let weights = self.weights.iter().map(|w| U::from_f64_lossy(w.to_f64().unwrap())).collect();
        GroupedSparseKernel::with_mask(self.partition.clone(), self.d_out, self.d_in, weights, self.mask.clone())
            .expect("same shape")
    }
}

/// Gathers a `[slot][out][in]` buffer: `new[s][a][b] = old[s][out_idx[a]][in_idx[b]]`.
///
/// With full index lists this is a permutation; with shorter lists it slices.
pub fn gather_layout<X: Copy>(buf: &[X], slots: usize, d_out: usize, d_in: usize, out_idx: &[usize], in_idx: &[usize]) -> Vec<X> {
    debug_assert_eq!(buf.len(), slots * d_out * d_in);
    let mut out = Vec::with_capacity(slots * out_idx.len() * in_idx.len());
    for s in 0..slots {
        for &o in out_idx {
            let row = &buf[(s * d_out + o) * d_in..(s * d_out + o + 1) * d_in];
            out.extend(in_idx.iter().map(|&i| row[i]));
        }
    }
    out
}
