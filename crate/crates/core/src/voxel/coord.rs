use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};
use std::ops::{Add, Neg, Sub};

use crate::{Error, Result};

use super::SparseTensor;

/// Integer lattice coordinate of a voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Coord3 {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl Coord3 {
    pub const ORIGIN: Coord3 = Coord3 { x: 0, y: 0, z: 0 };

    #[inline]
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    /// Chebyshev (L-infinity) distance.
    pub fn chebyshev(self, other: Coord3) -> i32 {
        let d = self - other;
        d.x.abs().max(d.y.abs()).max(d.z.abs())
    }
}

impl Add for Coord3 {
    type Output = Coord3;
    #[inline]
    fn add(self, rhs: Coord3) -> Coord3 {
        Coord3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Coord3 {
    type Output = Coord3;
    #[inline]
    fn sub(self, rhs: Coord3) -> Coord3 {
        Coord3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Neg for Coord3 {
    type Output = Coord3;
    #[inline]
    fn neg(self) -> Coord3 {
        Coord3::new(-self.x, -self.y, -self.z)
    }
}

impl From<[i32; 3]> for Coord3 {
    fn from(v: [i32; 3]) -> Self {
        Coord3::new(v[0], v[1], v[2])
    }
}

/// Deterministic integer-mix hasher for lattice coordinates.
///
/// No per-process random state, so iteration order and probe sequences are
/// identical across runs.
#[derive(Debug, Default, Clone, Copy)]
pub struct CoordHasher {
    state: u64,
}

impl Hasher for CoordHasher {
    #[inline]
    fn finish(&self) -> u64 {
        // splitmix64 finalizer
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    #[inline]
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.write_u64(b as u64);
        }
    }

    #[inline]
    fn write_u32(&mut self, v: u32) {
        self.write_u64(v as u64);
    }

    #[inline]
    fn write_i32(&mut self, v: i32) {
        self.write_u64(v as u32 as u64);
    }

    #[inline]
    fn write_u64(&mut self, v: u64) {
        self.state = (self.state.rotate_left(21) ^ v).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    }
}

type CoordMap = HashMap<Coord3, u32, BuildHasherDefault<CoordHasher>>;

/// Coordinate to row lookup for one tensor.
#[derive(Debug, Clone)]
pub struct CoordIndex {
    map: CoordMap,
}

impl CoordIndex {
    pub fn from_coords(coords: &[Coord3]) -> Result<Self> {
        let mut map = CoordMap::with_capacity_and_hasher(coords.len(), Default::default());
        for (row, &c) in coords.iter().enumerate() {
            if map.insert(c, row as u32).is_some() {
                return Err(Error::DuplicateCoordinate(c.x, c.y, c.z));
            }
        }
        Ok(Self { map })
    }

    #[inline]
    pub fn lookup(&self, c: Coord3) -> Option<usize> {
        self.map.get(&c).map(|&r| r as usize)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn build_index<T: Copy>(tensor: &SparseTensor<T>) -> Result<CoordIndex> {
    CoordIndex::from_coords(tensor.coords())
}
