use std::collections::HashMap;
use std::hash::BuildHasherDefault;

use crate::{Error, Result, Scalar};

use super::{Coord3, CoordHasher, SparseTensor};

/// Row of the voxel that each input point fell into.
#[derive(Debug, Clone, PartialEq)]
pub struct PointVoxelMap {
    pub point_rows: Vec<u32>,
    pub voxel_size: f64,
}

impl PointVoxelMap {
    pub fn num_points(&self) -> usize {
        self.point_rows.len()
    }
}

/// Quantizes points (meters) into voxels of edge `voxel_size`.
///
/// Voxel coordinates are `floor(p / voxel_size)`; each voxel's feature row is the
/// mean over its points. Voxels are numbered in order of first occurrence.
pub fn voxelize(
    points: &[[f32; 3]],
    point_feats: &[f32],
    feat_dim: usize,
    voxel_size: f64,
) -> Result<(SparseTensor<f32>, PointVoxelMap)> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(voxel_size.is_finite() && voxel_size > 0.0) {
        return Err(Error::InvalidConfig(format!("voxel size {voxel_size} must be positive")));
    }
    if point_feats.len() != points.len() * feat_dim {
        return Err(Error::ShapeMismatch(format!(
            "{} feature values for {} points of dim {}",
            point_feats.len(),
            points.len(),
            feat_dim
        )));
    }
    if points.iter().flatten().chain(point_feats).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }

    let mut rows: HashMap<Coord3, u32, BuildHasherDefault<CoordHasher>> = HashMap::default();
    let mut coords = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<u32> = Vec::new();
    let mut point_rows = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let c = Coord3::new(
            (p[0] as f64 / voxel_size).floor() as i32,
            (p[1] as f64 / voxel_size).floor() as i32,
            (p[2] as f64 / voxel_size).floor() as i32,
        );
        let row = *rows.entry(c).or_insert_with(|| {
            coords.push(c);
            sums.extend(std::iter::repeat(0.0).take(feat_dim));
            counts.push(0);
            (coords.len() - 1) as u32
        });
        let r = row as usize;
        counts[r] += 1;
        for (s, &f) in sums[r * feat_dim..(r + 1) * feat_dim].iter_mut().zip(&point_feats[i * feat_dim..(i + 1) * feat_dim]) {
            *s += f as f64;
        }
        point_rows.push(row);
    }
    let feats = sums
        .chunks(feat_dim.max(1))
        .zip(&counts)
        .flat_map(|(row, &n)| row.iter().map(move |&s| (s / n as f64) as f32))
        .take(coords.len() * feat_dim)
        .collect();
    let tensor = SparseTensor::with_coords(coords.into(), feats, feat_dim)?;
    Ok((tensor, PointVoxelMap { point_rows, voxel_size }))
}

/// Gives every point its voxel's feature row.
pub fn devoxelize<T: Scalar>(tensor: &SparseTensor<T>, map: &PointVoxelMap) -> Result<Vec<T>> {
    let d = tensor.channels();
    let mut out = Vec::with_capacity(map.point_rows.len() * d);
    for (point, &r) in map.point_rows.iter().enumerate() {
        let r = r as usize;
        if r >= tensor.len() {
            return Err(Error::InvalidMap { point, row: r, rows: tensor.len() });
        }
        out.extend_from_slice(tensor.row(r));
    }
    Ok(out)
}

/// Majority label per voxel; ties go to the lower class id.
pub fn voxel_labels(map: &PointVoxelMap, labels: &[u16], num_voxels: usize, num_classes: usize) -> Result<Vec<u16>> {
    if labels.len() != map.point_rows.len() {
        return Err(Error::ShapeMismatch(format!("{} labels for {} points", labels.len(), map.point_rows.len())));
    }
    let mut votes = vec![0u32; num_voxels * num_classes];
    for (&r, &l) in map.point_rows.iter().zip(labels) {
        if l as usize >= num_classes {
            return Err(Error::LabelOutOfRange { label: l as usize, num_classes });
        }
        votes[r as usize * num_classes + l as usize] += 1;
    }
    Ok(votes
        .chunks(num_classes)
        .map(|v| {
            let mut best = 0;
            for (c, &n) in v.iter().enumerate() {
                if n > v[best] {
                    best = c;
                }
            }
            best as u16
        })
        .collect())
}
