use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::{Error, Result};

const SCENE_MAGIC: &[u8; 4] = b"LSK3";

/// A labelled point cloud as stored on disk.
///
/// Binary layout (little endian): magic `LSK3`, `u32` point count, `u32` feature
/// dim, then per point `f32 x, y, z`, `f32` features, `u16` label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub points: Vec<[f32; 3]>,
    pub feats: Vec<f32>,
    pub feat_dim: usize,
    pub labels: Vec<u16>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.feats.len() != self.points.len() * self.feat_dim || self.labels.len() != self.points.len() {
            return Err(Error::InvalidScene("ragged point, feature and label arrays".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check()?;
        let mut buf = Vec::with_capacity(12 + self.len() * (14 + 4 * self.feat_dim));
        buf.extend_from_slice(SCENE_MAGIC);
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.feat_dim as u32).to_le_bytes());
        for i in 0..self.len() {
            for v in self.points[i] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in &self.feats[i * self.feat_dim..(i + 1) * self.feat_dim] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&self.labels[i].to_le_bytes());
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::InvalidScene("truncated header".into()))?;
        if &magic != SCENE_MAGIC {
            return Err(Error::InvalidScene("bad magic".into()));
        }
        let n = read_u32(&mut r)? as usize;
        let feat_dim = read_u32(&mut r)? as usize;
        let row = 12 + 4 * feat_dim + 2;
        if r.len() != n * row {
            return Err(Error::InvalidScene(format!("expected {} payload bytes, found {}", n * row, r.len())));
        }
        let mut scene = Scene { feat_dim, ..Default::default() };
        for _ in 0..n {
            scene.points.push([read_f32(&mut r)?, read_f32(&mut r)?, read_f32(&mut r)?]);
            for _ in 0..feat_dim {
                scene.feats.push(read_f32(&mut r)?);
            }
            let mut l = [0u8; 2];
            r.read_exact(&mut l)?;
            scene.labels.push(u16::from_le_bytes(l));
        }
        Ok(scene)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Plain-text variant: one point per line, `x y z f_1 .. f_D label`;
    /// blank lines and lines starting with `#` are ignored.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        self.check()?;
        writeln!(w, "# x y z feats[{}] label", self.feat_dim)?;
        for i in 0..self.len() {
            let p = self.points[i];
            write!(w, "{} {} {}", p[0], p[1], p[2])?;
            for f in &self.feats[i * self.feat_dim..(i + 1) * self.feat_dim] {
                write!(w, " {f}")?;
            }
            writeln!(w, " {}", self.labels[i])?;
        }
        Ok(())
    }

    pub fn read_text<R: Read>(r: R) -> Result<Self> {
        let mut scene = Scene::default();
        let mut dim: Option<usize> = None;
        for (lineno, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 4 {
                return Err(Error::InvalidScene(format!("line {}: too few fields", lineno + 1)));
            }
            let d = fields.len() - 4;
            if *dim.get_or_insert(d) != d {
                return Err(Error::InvalidScene(format!("line {}: inconsistent feature count", lineno + 1)));
            }
            let num = |s: &str| -> Result<f32> {
                s.parse().map_err(|_| Error::InvalidScene(format!("line {}: bad number {s:?}", lineno + 1)))
            };
            scene.points.push([num(fields[0])?, num(fields[1])?, num(fields[2])?]);
            for f in &fields[3..3 + d] {
                scene.feats.push(num(f)?);
            }
            let label = fields[3 + d]
                .parse()
                .map_err(|_| Error::InvalidScene(format!("line {}: bad label", lineno + 1)))?;
            scene.labels.push(label);
        }
        scene.feat_dim = dim.unwrap_or(0);
        Ok(scene)
    }
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::InvalidScene("truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut &[u8]) -> Result<f32> {
    Ok(f32::from_bits(read_u32(r)?))
}
