use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::voxel::Scene;
use crate::{Error, Result};

/// Label of the ground plane.
pub const GROUND: u16 = 0;
/// Names of the classes a generated scene can contain, by label.
pub const CLASS_NAMES: [&str; 4] = ["ground", "box", "sphere", "cylinder"];

/// Recipe for synthetic scenes: hollow primitive shapes resting on a ground
/// plane, seen as surface points. Shapes are sometimes cut by a one-voxel slit
/// so that an object's label must carry across disconnected parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    /// Voxels per axis.
    pub extent: usize,
    /// Ground plus up to three shape classes.
    pub num_classes: usize,
    pub shapes_per_scene: usize,
    /// Probability that a surface voxel yields a point.
    pub density: f64,
    /// Standard deviation of feature noise.
    pub noise: f64,
    /// Edge length of one generating voxel, in meters.
    pub voxel_size: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self { extent: 24, num_classes: 3, shapes_per_scene: 4, density: 1.0, noise: 0.05, voxel_size: 0.05, seed: 0 }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.extent < 8 {
            return bad("extent must be at least 8 voxels per axis");
        }
        if !(2..=CLASS_NAMES.len()).contains(&self.num_classes) {
            return bad("num_classes must be between 2 and 4");
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad("density must be in (0, 1]");
        }
        if !(self.noise >= 0.0) || !(self.voxel_size > 0.0) {
            return bad("noise must be non-negative and voxel_size positive");
        }
        Ok(())
    }
}

type Grid = HashMap<[i32; 3], u16>;

fn shape_voxels(kind: u16, rng: &mut ChaCha8Rng, extent: i32) -> Vec<[i32; 3]> {
    let mut out = Vec::new();
    match kind {
        1 => {
            let h = [rng.gen_range(2..=4), rng.gen_range(2..=4), rng.gen_range(2..=4)];
            let c = [rng.gen_range(h[0]..extent - h[0]), rng.gen_range(h[1]..extent - h[1]), 1 + h[2]];
            for x in -h[0]..=h[0] {
                for y in -h[1]..=h[1] {
                    for z in -h[2]..=h[2] {
                        if x.abs() == h[0] || y.abs() == h[1] || z.abs() == h[2] {
                            out.push([c[0] + x, c[1] + y, c[2] + z]);
                        }
                    }
                }
            }
        }
        2 => {
            let r: f64 = rng.gen_range(2.5..4.5);
            let ri = r.ceil() as i32;
            let c = [rng.gen_range(ri..extent - ri), rng.gen_range(ri..extent - ri), 1 + ri];
            for x in -ri..=ri {
                for y in -ri..=ri {
                    for z in -ri..=ri {
                        let d = ((x * x + y * y + z * z) as f64).sqrt();
                        if d <= r && d > r - 1.0 {
                            out.push([c[0] + x, c[1] + y, c[2] + z]);
                        }
                    }
                }
            }
        }
        _ => {
            let r: f64 = rng.gen_range(2.0..3.5);
            let ri = r.ceil() as i32;
            let height = rng.gen_range(4..=8);
            let c = [rng.gen_range(ri..extent - ri), rng.gen_range(ri..extent - ri)];
            for x in -ri..=ri {
                for y in -ri..=ri {
                    let d = ((x * x + y * y) as f64).sqrt();
                    for z in 1..=height {
                        let cap = z == height;
                        if d <= r && (d > r - 1.0 || cap) {
                            out.push([c[0] + x, c[1] + y, z]);
                        }
                    }
                }
            }
        }
    }
    if rng.gen_bool(0.5) {
        // slit across a horizontal axis, through the middle third of the shape
        let axis = rng.gen_range(0..2);
        let (lo, hi) = out.iter().fold((i32::MAX, i32::MIN), |(a, b), v| (a.min(v[axis]), b.max(v[axis])));
        let span = hi - lo;
        if span >= 4 {
            let cut = rng.gen_range(lo + span / 3..=hi - span / 3);
            out.retain(|v| v[axis] != cut);
        }
    }
    out.retain(|v| v.iter().all(|&c| (0..extent).contains(&c)));
    out
}

fn clear_of(grid: &Grid, voxels: &[[i32; 3]]) -> bool {
    voxels.iter().all(|v| {
        (-2..=2).all(|dx| {
            (-2..=2).all(|dy| (-2..=2).all(|dz| grid.get(&[v[0] + dx, v[1] + dy, v[2] + dz]).map_or(true, |&l| l == GROUND)))
        })
    })
}

/// Generates scene `index` of the dataset described by `spec`.
pub fn generate_scene(spec: &SyntheticSceneSpec, index: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let extent = spec.extent as i32;
    let mut grid: Grid = HashMap::new();
    for x in 0..extent {
        for y in 0..extent {
            grid.insert([x, y, 0], GROUND);
        }
    }
    for _ in 0..spec.shapes_per_scene {
        let kind = rng.gen_range(1..spec.num_classes as u16);
        for _attempt in 0..20 {
            let voxels = shape_voxels(kind, &mut rng, extent);
            if !voxels.is_empty() && clear_of(&grid, &voxels) {
                for v in voxels {
                    grid.insert(v, kind);
                }
                break;
            }
        }
    }
    let mut voxels: Vec<([i32; 3], u16)> = grid.into_iter().collect();
    voxels.sort();
    let normal = |rng: &mut ChaCha8Rng| -> f32 {
        // Box-Muller; one draw per call keeps the stream layout simple
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
    };
    let (mut points, mut feats, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    let vs = spec.voxel_size;
    for (v, label) in voxels {
        if spec.density < 1.0 && !rng.gen_bool(spec.density) {
            continue;
        }
        let p = [0, 1, 2].map(|a| ((v[a] as f64 + rng.gen_range(0.2..0.8)) * vs) as f32);
        points.push(p);
        let noise = spec.noise as f32;
        feats.push(v[2] as f32 / extent as f32 + noise * normal(&mut rng));
        feats.push(1.0 + noise * normal(&mut rng));
        labels.push(label);
    }
    Ok(Scene { points, feats, feat_dim: 2, labels })
}

/// Description of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SyntheticSceneSpec,
    pub first_index: u64,
    /// Scene files, relative to the manifest's directory.
    pub files: Vec<String>,
    pub points: Vec<usize>,
    /// Point count per class over all files.
    pub class_histogram: Vec<u64>,
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.toml";

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Absolute scene paths, given the manifest's own path.
    pub fn scene_paths(&self, manifest_path: &Path) -> Vec<PathBuf> {
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        self.files.iter().map(|f| dir.join(f)).collect()
    }
}

/// Writes scenes `first_index .. first_index + count` plus a manifest into `dir`.
pub fn gen_dataset(spec: &SyntheticSceneSpec, first_index: u64, count: usize, dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(count);
    let mut points = Vec::with_capacity(count);
    let mut class_histogram = vec![0u64; spec.num_classes];
    for k in 0..count as u64 {
        let scene = generate_scene(spec, first_index + k)?;
        let name = format!("scene_{:04}.bin", first_index + k);
        scene.write_binary(&dir.join(&name))?;
        for &l in &scene.labels {
            class_histogram[l as usize] += 1;
        }
        points.push(scene.points.len());
        files.push(name);
    }
    let manifest = Manifest { spec: spec.clone(), first_index, files, points, class_histogram };
    let text = toml::to_string(&manifest).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    std::fs::write(dir.join(Manifest::FILE_NAME), text)?;
    Ok(manifest)
}
