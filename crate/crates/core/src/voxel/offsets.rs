use crate::{Error, Result};

use super::Coord3;

/// Offsets of a `k1 x k2 x k3` kernel centered at the origin, in lexicographic
/// order with z varying fastest. Slot `i` of a kernel weight store refers to
/// `offsets()[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelOffsets {
    size: [usize; 3],
    offsets: Vec<Coord3>,
}

impl KernelOffsets {
    pub fn size(&self) -> [usize; 3] {
        self.size
    }

    pub fn offsets(&self) -> &[Coord3] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn center_slot(&self) -> usize {
        self.offsets.len() / 2
    }

    /// Slot holding the negated offset.
    #[inline]
    pub fn mirror(&self, slot: usize) -> usize {
        self.offsets.len() - 1 - slot
    }

    /// Slot of an offset, if it lies inside the kernel.
    pub fn slot_of(&self, off: Coord3) -> Option<usize> {
        let r = self.radius();
        let [_, k2, k3] = self.size;
        let (ax, ay, az) = (off.x + r[0], off.y + r[1], off.z + r[2]);
        if ax < 0 || ay < 0 || az < 0 || ax > 2 * r[0] || ay > 2 * r[1] || az > 2 * r[2] {
            return None;
        }
        Some((ax as usize * k2 + ay as usize) * k3 + az as usize)
    }

    pub fn radius(&self) -> [i32; 3] {
        self.size.map(|k| ((k - 1) / 2) as i32)
    }
}

pub fn kernel_offsets(k1: usize, k2: usize, k3: usize) -> Result<KernelOffsets> {
    for k in [k1, k2, k3] {
        if k == 0 || k % 2 == 0 {
            return Err(Error::InvalidKernelSize(format!("{k1}x{k2}x{k3}")));
        }
    }
    let (r1, r2, r3) = (((k1 - 1) / 2) as i32, ((k2 - 1) / 2) as i32, ((k3 - 1) / 2) as i32);
    let mut offsets = Vec::with_capacity(k1 * k2 * k3);
    for x in -r1..=r1 {
        for y in -r2..=r2 {
            for z in -r3..=r3 {
                offsets.push(Coord3::new(x, y, z));
            }
        }
    }
    Ok(KernelOffsets { size: [k1, k2, k3], offsets })
}
