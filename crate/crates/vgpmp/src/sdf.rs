//! Voxelized signed distance fields over primitive scenes, with trilinear
//! queries and the hinge loss that turns surface distances into collision
//! penalties.

use std::io::{Read as IoRead, Write as IoWrite};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_VOXEL_CAP: usize = 64 * 1024 * 1024;
const MAGIC: &[u8; 8] = b"VGPMPSDF";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half_extents: [f64; 3] },
}

impl Primitive {
    /// Analytic signed distance, negative inside.
    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        match self {
            Primitive::Sphere { center, radius } => {
                let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() - radius
            }
            Primitive::Box { center, half_extents } => {
                let q = [
                    (p[0] - center[0]).abs() - half_extents[0],
                    (p[1] - center[1]).abs() - half_extents[1],
                    (p[2] - center[2]).abs() - half_extents[2],
                ];
                let outside = [q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)];
                let outside_len =
                    (outside[0] * outside[0] + outside[1] * outside[1] + outside[2] * outside[2])
                        .sqrt();
                outside_len + q[0].max(q[1]).max(q[2]).min(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkspaceBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrimitiveScene {
    pub bounds: WorkspaceBounds,
    pub resolution: f64,
    pub primitives: Vec<Primitive>,
}

impl PrimitiveScene {
    pub fn from_json(text: &str) -> Result<Self> {
        let scene: PrimitiveScene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.bounds.min[i] < self.bounds.max[i]) {
                return Err(Error::InvalidSpec("workspace bounds must be nonempty".into()));
            }
        }
        if !(self.resolution > 0.0) {
            return Err(Error::InvalidSpec("resolution must be positive".into()));
        }
        Ok(())
    }

    /// Scene-level analytic distance: min over primitives, large positive
    /// when the scene is empty.
    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        self.primitives
            .iter()
            .map(|pr| pr.signed_distance(p))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct SdfGrid {
    pub origin: [f64; 3],
    pub resolution: f64,
    pub dims: [usize; 3],
    /// x-fastest layout: `values[x + nx * (y + ny * z)]`.
    pub values: Vec<f32>,
}

/// Sample the scene's analytic distance at every voxel center.
pub fn build_grid(scene: &PrimitiveScene, resolution: f64) -> Result<SdfGrid> {
    build_grid_capped(scene, resolution, DEFAULT_VOXEL_CAP)
}

pub fn build_grid_capped(
    scene: &PrimitiveScene,
    resolution: f64,
    cap: usize,
) -> Result<SdfGrid> {
    scene.validate()?;
    if !(resolution > 0.0) {
        return Err(Error::InvalidSpec("resolution must be positive".into()));
    }
    let mut dims = [0usize; 3];
    for i in 0..3 {
        let span = scene.bounds.max[i] - scene.bounds.min[i];
        dims[i] = (span / resolution).floor() as usize + 1;
        dims[i] = dims[i].max(2);
    }
    let total = dims[0] * dims[1] * dims[2];
    if total > cap {
        return Err(Error::GridTooLarge {
            requested: total,
            cap,
        });
    }
    let diag = {
        let dx = scene.bounds.max[0] - scene.bounds.min[0];
        let dy = scene.bounds.max[1] - scene.bounds.min[1];
        let dz = scene.bounds.max[2] - scene.bounds.min[2];
        (dx * dx + dy * dy + dz * dz).sqrt()
    };
    let origin = scene.bounds.min;
    let mut values = vec![0.0f32; total];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [
                    origin[0] + x as f64 * resolution,
                    origin[1] + y as f64 * resolution,
                    origin[2] + z as f64 * resolution,
                ];
                let d = scene.signed_distance(p).min(diag);
                values[x + dims[0] * (y + dims[1] * z)] = d as f32;
            }
        }
    }
    Ok(SdfGrid {
        origin,
        resolution,
        dims,
        values,
    })
}

impl SdfGrid {
    #[inline]
    fn value_at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[x + self.dims[0] * (y + self.dims[1] * z)] as f64
    }

    fn upper(&self, axis: usize) -> f64 {
        self.origin[axis] + (self.dims[axis] - 1) as f64 * self.resolution
    }

    /// Trilinear signed-distance query. Points beyond the grid are clamped
    /// to the boundary cell, with the exterior Euclidean distance to the
    /// grid box added so the field stays repulsive outside.
    pub fn query<S: Real>(&self, point: [S; 3]) -> S {
        let mut clamped = [S::zero(); 3];
        let mut outside_sq = S::zero();
        for i in 0..3 {
            let lo = self.origin[i];
            let hi = self.upper(i);
            let p = point[i];
            if p.val() < lo {
                let e = S::from_f64(lo) - p;
                outside_sq += e * e;
                clamped[i] = S::from_f64(lo);
            } else if p.val() > hi {
                let e = p - S::from_f64(hi);
                outside_sq += e * e;
                clamped[i] = S::from_f64(hi);
            } else {
                clamped[i] = p;
            }
        }
        let mut cell = [0usize; 3];
        let mut frac = [S::zero(); 3];
        for i in 0..3 {
            let c = (clamped[i] - S::from_f64(self.origin[i])) / S::from_f64(self.resolution);
            let idx = (c.val().floor() as isize)
                .clamp(0, self.dims[i] as isize - 2) as usize;
            cell[i] = idx;
            frac[i] = c - S::from_f64(idx as f64);
        }
        let mut acc = S::zero();
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = tri_weight(frac[0], dx)
                        * tri_weight(frac[1], dy)
                        * tri_weight(frac[2], dz);
                    let v = self.value_at(cell[0] + dx, cell[1] + dy, cell[2] + dz);
                    acc += w * S::from_f64(v);
                }
            }
        }
        if outside_sq.val() > 0.0 {
            acc += outside_sq.sqrt();
        }
        acc
    }

    /// Query plus the analytic spatial gradient, for the reverse pass.
    pub fn query_with_gradient(&self, point: [f64; 3]) -> (f64, [f64; 3]) {
        let mut clamped = point;
        let mut outside = [0.0f64; 3];
        for i in 0..3 {
            let lo = self.origin[i];
            let hi = self.upper(i);
            if point[i] < lo {
                outside[i] = point[i] - lo;
                clamped[i] = lo;
            } else if point[i] > hi {
                outside[i] = point[i] - hi;
                clamped[i] = hi;
            }
        }
        let mut cell = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for i in 0..3 {
            let c = (clamped[i] - self.origin[i]) / self.resolution;
            let idx = (c.floor() as isize).clamp(0, self.dims[i] as isize - 2) as usize;
            cell[i] = idx;
            frac[i] = c - idx as f64;
        }
        let mut value = 0.0;
        let mut grad = [0.0f64; 3];
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let v = self.value_at(cell[0] + dx, cell[1] + dy, cell[2] + dz);
                    let wx = tri_weight(frac[0], dx);
                    let wy = tri_weight(frac[1], dy);
                    let wz = tri_weight(frac[2], dz);
                    value += wx * wy * wz * v;
                    let sx = if dx == 1 { 1.0 } else { -1.0 };
                    let sy = if dy == 1 { 1.0 } else { -1.0 };
                    let sz = if dz == 1 { 1.0 } else { -1.0 };
                    grad[0] += sx * wy * wz * v;
                    grad[1] += wx * sy * wz * v;
                    grad[2] += wx * wy * sz * v;
                }
            }
        }
        for g in grad.iter_mut() {
            *g /= self.resolution;
        }
        // clamped axes get the exterior box-distance gradient instead
        let out_norm =
            (outside[0] * outside[0] + outside[1] * outside[1] + outside[2] * outside[2]).sqrt();
        if out_norm > 0.0 {
            value += out_norm;
            for i in 0..3 {
                if outside[i] != 0.0 {
                    grad[i] = outside[i] / out_norm;
                }
            }
        }
        (value, grad)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[0u8; 4])?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for o in self.origin {
            w.write_all(&o.to_le_bytes())?;
        }
        w.write_all(&self.resolution.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..8] != MAGIC {
            return Err(Error::InvalidSpec("bad SDF magic".into()));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::InvalidSpec(format!("unsupported SDF version {version}")));
        }
        let mut u32buf = [0u8; 4];
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            r.read_exact(&mut u32buf)?;
            *d = u32::from_le_bytes(u32buf) as usize;
        }
        let mut f64buf = [0u8; 8];
        let mut origin = [0.0f64; 3];
        for o in origin.iter_mut() {
            r.read_exact(&mut f64buf)?;
            *o = f64::from_le_bytes(f64buf);
        }
        r.read_exact(&mut f64buf)?;
        let resolution = f64::from_le_bytes(f64buf);
        let total = dims[0] * dims[1] * dims[2];
        let mut values = Vec::with_capacity(total);
        for _ in 0..total {
            r.read_exact(&mut u32buf)?;
            values.push(f32::from_le_bytes(u32buf));
        }
        Ok(SdfGrid {
            origin,
            resolution,
            dims,
            values,
        })
    }
}

#[inline]
fn tri_weight<S: Real>(frac: S, side: usize) -> S {
    if side == 1 {
        frac
    } else {
        S::one() - frac
    }
}

/// Hinge penalty on per-sphere surface distances:
/// `max(-(d_j - radius_j) + eps, 0)`.
pub fn hinge(distances: &[f64], radii: &[f64], eps: f64) -> Vec<f64> {
    debug_assert_eq!(distances.len(), radii.len());
    distances
        .iter()
        .zip(radii.iter())
        .map(|(&d, &r)| (-(d - r) + eps).max(0.0))
        .collect()
}

/// Scalar hinge on a surface distance.
#[inline]
pub fn hinge_scalar<S: Real>(surface_distance: S, eps: f64) -> S {
    (S::from_f64(eps) - surface_distance).max_zero()
}
