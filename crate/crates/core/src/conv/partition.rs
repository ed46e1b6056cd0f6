use crate::{Error, Result};

/// Split of a `K1 x K2 x K3` offset lattice into contiguous spatial groups.
///
/// Each axis is cut into consecutive intervals given by its division list, e.g.
/// a 9-wide axis with `[3, 3, 3]`. Groups are numbered lexicographically over the
/// per-axis interval indices, matching the slot order of the kernel offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    kernel_size: [usize; 3],
    divisions: [Vec<usize>; 3],
    slot_group: Vec<u32>,
    group_dims: Vec<[usize; 3]>,
    group_slots: Vec<Vec<u32>>,
}

impl GroupPartition {
    pub fn kernel_size(&self) -> [usize; 3] {
        self.kernel_size
    }

    pub fn divisions(&self) -> &[Vec<usize>; 3] {
        &self.divisions
    }

    pub fn num_slots(&self) -> usize {
        self.slot_group.len()
    }

    pub fn num_groups(&self) -> usize {
        self.group_dims.len()
    }

    #[inline]
    pub fn group_of_slot(&self, slot: usize) -> usize {
        self.slot_group[slot] as usize
    }

    /// Per-axis extent `(K1g, K2g, K3g)` of a group.
    pub fn group_dims(&self, g: usize) -> [usize; 3] {
        self.group_dims[g]
    }

    /// Slots of a group in ascending order.
    pub fn group_slots(&self, g: usize) -> &[u32] {
        &self.group_slots[g]
    }

    /// The whole lattice as one group.
    pub fn single(kernel_size: [usize; 3]) -> Result<Self> {
        partition_groups(kernel_size, kernel_size.map(|k| vec![k]))
    }

    /// Compact text form, e.g. `3,3,3/3,3,3/3,3,3`.
    pub fn descriptor(&self) -> String {
        self.divisions
            .iter()
            .map(|d| d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn from_descriptor(s: &str) -> Result<Self> {
        let axes: Vec<&str> = s.split('/').collect();
        if axes.len() != 3 {
            return Err(Error::BadPartition(format!("descriptor {s:?} needs three axes")));
        }
        let mut divisions: [Vec<usize>; 3] = Default::default();
        for (a, txt) in axes.iter().enumerate() {
            for v in txt.split(',') {
                divisions[a].push(v.trim().parse().map_err(|_| Error::BadPartition(format!("bad division {v:?}")))?);
            }
        }
        let kernel_size = [0, 1, 2].map(|a| divisions[a].iter().sum());
        partition_groups(kernel_size, divisions)
    }
}

pub fn partition_groups(kernel_size: [usize; 3], divisions: [Vec<usize>; 3]) -> Result<GroupPartition> {
    for a in 0..3 {
        let divs = &divisions[a];
        if divs.is_empty() || divs.contains(&0) {
            return Err(Error::BadPartition(format!("axis {a}: divisions must be positive")));
        }
        let sum: usize = divs.iter().sum();
        if sum != kernel_size[a] {
            return Err(Error::BadPartition(format!(
                "axis {a}: divisions {divs:?} sum to {sum}, kernel size is {}",
                kernel_size[a]
            )));
        }
    }
    // interval index of every lattice position along each axis
    let axis_bins: Vec<Vec<usize>> = divisions
        .iter()
        .map(|divs| divs.iter().enumerate().flat_map(|(b, &len)| std::iter::repeat(b).take(len)).collect())
        .collect();
    let counts = [divisions[0].len(), divisions[1].len(), divisions[2].len()];
    let num_groups = counts.iter().product();
    let [k1, k2, k3] = kernel_size;
    let mut slot_group = Vec::with_capacity(k1 * k2 * k3);
    let mut group_slots = vec![Vec::new(); num_groups];
    for a in 0..k1 {
        for b in 0..k2 {
            for c in 0..k3 {
                let g = (axis_bins[0][a] * counts[1] + axis_bins[1][b]) * counts[2] + axis_bins[2][c];
                group_slots[g].push(slot_group.len() as u32);
                slot_group.push(g as u32);
            }
        }
    }
    let mut group_dims = Vec::with_capacity(num_groups);
    for ga in 0..counts[0] {
        for gb in 0..counts[1] {
            for gc in 0..counts[2] {
                group_dims.push([divisions[0][ga], divisions[1][gb], divisions[2][gc]]);
            }
        }
    }
    Ok(GroupPartition { kernel_size, divisions, slot_group, group_dims, group_slots })
}
