use std::sync::Arc;

use crate::{Error, Result};

use super::{Coord3, CoordIndex};

/// Active voxel coordinates paired with a row-major `N x channels` feature matrix.
///
/// Coordinates are shared behind an `Arc` so that submanifold layers can hand the
/// same coordinate set from input to output without copying.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor<T = f32> {
    coords: Arc<[Coord3]>,
    feats: Vec<T>,
    channels: usize,
}

impl<T: Copy> SparseTensor<T> {
    /// Builds a tensor, rejecting duplicate coordinates and ragged features.
    pub fn new(coords: Vec<Coord3>, feats: Vec<T>, channels: usize) -> Result<Self> {
        CoordIndex::from_coords(&coords)?;
        Self::with_coords(coords.into(), feats, channels)
    }

    /// Builds a tensor over a coordinate set that is already known to be duplicate free.
    pub fn with_coords(coords: Arc<[Coord3]>, feats: Vec<T>, channels: usize) -> Result<Self> {
        if feats.len() != coords.len() * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} rows of {} channels",
                feats.len(),
                coords.len(),
                channels
            )));
        }
        Ok(Self { coords, feats, channels })
    }

    pub fn coords(&self) -> &[Coord3] {
        &self.coords
    }

    pub fn shared_coords(&self) -> Arc<[Coord3]> {
        Arc::clone(&self.coords)
    }

    pub fn feats(&self) -> &[T] {
        &self.feats
    }

    pub fn feats_mut(&mut self) -> &mut [T] {
        &mut self.feats
    }

    pub fn into_feats(self) -> Vec<T> {
        self.feats
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.feats[r * self.channels..(r + 1) * self.channels]
    }

    /// Same coordinates, new features.
    pub fn replace_feats(&self, feats: Vec<T>, channels: usize) -> Result<Self> {
        Self::with_coords(self.shared_coords(), feats, channels)
    }
}

impl<T: crate::Scalar> SparseTensor<T> {
    /// Same coordinates with features converted to another precision.
    pub fn cast<U: crate::Scalar>(&self) -> SparseTensor<U> {
        SparseTensor {
            coords: self.shared_coords(),
            feats: self.feats.iter().map(|v| U::from_f64_lossy(v.to_f64().unwrap())).collect(),
            channels: self.channels,
        }
    }
}
