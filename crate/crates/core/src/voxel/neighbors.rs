use rayon::prelude::*;

use super::{Coord3, CoordIndex, KernelOffsets};

/// One existing neighbor of an output row: the kernel slot and the input row it reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NeighborPair {
    pub slot: u32,
    pub row: u32,
}

/// For every row, the `(slot, input row)` pairs whose offset lands on an active
/// site. Rows are stored CSR style; pairs within a row are in ascending slot order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborMap {
    row_ptr: Vec<usize>,
    pairs: Vec<NeighborPair>,
    num_slots: usize,
}

const ROW_CHUNK: usize = 512;

impl NeighborMap {
    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[NeighborPair] {
        &self.pairs[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    /// Number of realized pairs per kernel slot.
    pub fn slot_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_slots];
        for p in &self.pairs {
            counts[p.slot as usize] += 1;
        }
        counts
    }

    /// Pairs regrouped by slot, each list ordered by output row.
    pub fn by_slot(&self) -> Vec<Vec<(u32, u32)>> {
        let counts = self.slot_counts();
        let mut lists: Vec<Vec<(u32, u32)>> = counts.iter().map(|&c| Vec::with_capacity(c)).collect();
        for r in 0..self.rows() {
            for p in self.row(r) {
                lists[p.slot as usize].push((r as u32, p.row));
            }
        }
        lists
    }

    /// Concatenates maps of disjoint tensors whose rows are stacked in order.
    pub fn concat(maps: &[&NeighborMap]) -> NeighborMap {
        let num_slots = maps.first().map_or(0, |m| m.num_slots);
        let mut row_ptr = vec![0usize];
        let mut pairs = Vec::with_capacity(maps.iter().map(|m| m.pairs.len()).sum());
        let mut row_base = 0u32;
        for m in maps {
            assert_eq!(m.num_slots, num_slots, "concatenated maps must share a kernel");
            for r in 0..m.rows() {
                pairs.extend(m.row(r).iter().map(|p| NeighborPair { slot: p.slot, row: p.row + row_base }));
                row_ptr.push(pairs.len());
            }
            row_base += m.rows() as u32;
        }
        NeighborMap { row_ptr, pairs, num_slots }
    }
}

/// Builds the submanifold neighbor map of `coords` for a kernel.
///
/// Parallel over fixed row chunks; the result does not depend on the thread count.
pub fn gather_neighbors(index: &CoordIndex, coords: &[Coord3], offsets: &KernelOffsets) -> NeighborMap {
    let offs = offsets.offsets();
    let chunks: Vec<(Vec<usize>, Vec<NeighborPair>)> = coords
        .par_chunks(ROW_CHUNK)
        .map(|chunk| {
            let mut lens = Vec::with_capacity(chunk.len());
            let mut pairs = Vec::new();
            for &c in chunk {
                let before = pairs.len();
                for (slot, &o) in offs.iter().enumerate() {
                    if let Some(r) = index.lookup(c + o) {
                        pairs.push(NeighborPair { slot: slot as u32, row: r as u32 });
                    }
                }
                lens.push(pairs.len() - before);
            }
            (lens, pairs)
        })
        .collect();
    let total: usize = chunks.iter().map(|c| c.1.len()).sum();
    let mut row_ptr = Vec::with_capacity(coords.len() + 1);
    row_ptr.push(0);
    let mut pairs = Vec::with_capacity(total);
    for (lens, chunk_pairs) in chunks {
        for l in lens {
            let last = *row_ptr.last().unwrap();
            row_ptr.push(last + l);
        }
        pairs.extend(chunk_pairs);
    }
    NeighborMap { row_ptr, pairs, num_slots: offs.len() }
}
