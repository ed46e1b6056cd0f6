use std::path::Path;

use crate::metrics::{argmax_rows, ConfusionMatrix};
use crate::network::{LskNetwork, NetworkConfig, NormMode, Sample};
use crate::voxel::{voxel_labels, voxelize, PointVoxelMap, Scene};
use crate::{Error, Result};

use super::synth::Manifest;

/// A scene ready for the network, with the mapping back to its points.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub sample: Sample,
    pub map: PointVoxelMap,
    pub point_labels: Vec<u16>,
}

pub fn prepare_scene(scene: &Scene, config: &NetworkConfig) -> Result<PreparedScene> {
    if scene.feat_dim != config.in_feats {
        return Err(Error::ShapeMismatch(format!(
            "scene has {} features per point, network expects {}",
            scene.feat_dim, config.in_feats
        )));
    }
    if let Some(&l) = scene.labels.iter().find(|&&l| l as usize >= config.num_classes) {
        return Err(Error::LabelOutOfRange { label: l as usize, num_classes: config.num_classes });
    }
    let (tensor, map) = voxelize(&scene.points, &scene.feats, scene.feat_dim, config.voxel_size)?;
    let labels = voxel_labels(&map, &scene.labels, tensor.len(), config.num_classes)?;
    let sample = Sample::new(tensor, labels, &config.offsets()?)?;
    Ok(PreparedScene { sample, map, point_labels: scene.labels.clone() })
}

/// Loads and prepares every scene listed in a manifest.
pub fn load_dataset(manifest_path: &Path, config: &NetworkConfig) -> Result<Vec<PreparedScene>> {
    let manifest = Manifest::read(manifest_path)?;
    if manifest.files.is_empty() {
        return Err(Error::NoScenes);
    }
    manifest.scene_paths(manifest_path).iter().map(|p| prepare_scene(&Scene::read_binary(p)?, config)).collect()
}

/// Point-level predictions of `net` for one scene.
pub fn predict_points(net: &LskNetwork, scene: &PreparedScene) -> Result<Vec<u16>> {
    let cache = net.forward(&scene.sample.tensor, &scene.sample.nmap, NormMode::Eval)?;
    let voxel_pred = argmax_rows(&cache.logits, net.config().num_classes);
    Ok(scene.map.point_rows.iter().map(|&r| voxel_pred[r as usize]).collect())
}

/// Accumulates point-level confusion over scenes.
pub fn evaluate(net: &LskNetwork, scenes: &[PreparedScene]) -> Result<ConfusionMatrix> {
    if scenes.is_empty() {
        return Err(Error::NoScenes);
    }
    let mut cm = ConfusionMatrix::new(net.config().num_classes);
    for s in scenes {
        cm.add_all(&s.point_labels, &predict_points(net, s)?)?;
    }
    Ok(cm)
}
