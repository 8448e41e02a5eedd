//! Synthetic ground-truth volumes and their exact projections.
//!
//! Phantom shapes are given in normalized coordinates: the voxel grid spans
//! `[-1, 1]` along every axis and voxel centers sit at `(2i + 1)/n − 1`.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arrays::{Grid3, Sinogram, Volume};
use crate::error::{Error, Result};
use crate::geometry::{dot, norm, sub, ConeBeamGeometry, Point3};

const SHEPP_LOGAN_TABLE: &str = include_str!("../data/shepp_logan_kak_slaney.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    #[serde(default)]
    pub label: String,
    pub center: Point3,
    pub semi_axes: Point3,
    /// Rotation about z, degrees.
    #[serde(rename = "euler_z_deg")]
    pub euler_z_deg: f64,
    pub density: f64,
}

impl Ellipsoid {
    pub fn validate(&self) -> Result<()> {
        if self.semi_axes.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::invalid("semi_axes", format!("must all be > 0, got {:?}", self.semi_axes)));
        }
        Ok(())
    }

    pub fn contains(&self, p: Point3) -> bool {
        let q = sub(p, self.center);
        let (s, c) = self.euler_z_deg.to_radians().sin_cos();
        // rotate into the ellipsoid frame (inverse rotation)
        let local = [c * q[0] + s * q[1], -s * q[0] + c * q[1], q[2]];
        local.iter().zip(&self.semi_axes).map(|(x, a)| (x / a) * (x / a)).sum::<f64>() <= 1.0
    }
}

#[derive(Deserialize)]
struct EllipsoidTable {
    ellipsoid: Vec<Ellipsoid>,
}

/// The ten-ellipsoid Kak–Slaney head phantom, parsed from the bundled table.
pub fn shepp_logan_ellipsoids() -> &'static [Ellipsoid] {
    static TABLE: OnceLock<Vec<Ellipsoid>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let table: EllipsoidTable = toml::from_str(SHEPP_LOGAN_TABLE).expect("bundled phantom table parses");
        table.ellipsoid
    })
}

/// Normalized coordinate of voxel `i` on an axis of `n` voxels.
#[inline]
pub fn normalized_coord(i: usize, n: usize) -> f64 {
    (2.0 * i as f64 + 1.0) / n as f64 - 1.0
}

/// Rasterizes a sum of ellipsoids by sampling at voxel centers, clamped to ≥ 0.
pub fn rasterize_ellipsoids(ellipsoids: &[Ellipsoid], nx: usize, ny: usize, nz: usize, voxel_size: f64) -> Result<Volume> {
    for e in ellipsoids {
        e.validate()?;
    }
    let mut vol = Volume::zeros(nx, ny, nz, voxel_size);
    vol.data_mut().par_chunks_mut(nx * ny).enumerate().for_each(|(iz, plane)| {
        let z = normalized_coord(iz, nz);
        for iy in 0..ny {
            let y = normalized_coord(iy, ny);
            for ix in 0..nx {
                let p = [normalized_coord(ix, nx), y, z];
                let value: f64 = ellipsoids.iter().filter(|e| e.contains(p)).map(|e| e.density).sum();
                plane[ix + nx * iy] = value.max(0.0);
            }
        }
    });
    Ok(vol)
}

pub fn shepp_logan_3d(nx: usize, ny: usize, nz: usize, voxel_size: f64) -> Result<Volume> {
    const MIN: usize = 8;
    for (field, n) in [("nx", nx), ("ny", ny), ("nz", nz)] {
        if n < MIN {
            return Err(Error::invalid(field, format!("phantom needs at least {MIN} voxels per axis, got {n}")));
        }
    }
    rasterize_ellipsoids(shepp_logan_ellipsoids(), nx, ny, nz, voxel_size)
}

/// Ball in normalized coordinates; voxels whose centers fall inside get `value`.
pub fn sphere_phantom(
    center: Point3,
    radius: f64,
    value: f64,
    nx: usize,
    ny: usize,
    nz: usize,
    voxel_size: f64,
) -> Result<Volume> {
    if !(radius > 0.0) {
        return Err(Error::invalid("radius", format!("must be > 0, got {radius}")));
    }
    if center.iter().any(|c| !(-1.0..=1.0).contains(c)) {
        return Err(Error::invalid("center", format!("{center:?} lies outside [-1, 1]^3")));
    }
    if !value.is_finite() || value < 0.0 {
        return Err(Error::invalid("value", format!("must be finite and ≥ 0, got {value}")));
    }
    let ball = Ellipsoid {
        label: String::new(),
        center,
        semi_axes: [radius; 3],
        euler_z_deg: 0.0,
        density: value,
    };
    rasterize_ellipsoids(std::slice::from_ref(&ball), nx, ny, nz, voxel_size)
}

/// Ball rasterized with partial-volume weighting: each voxel holds `value` times
/// the fraction of its `samples³` regularly spaced sub-samples that fall inside.
pub fn sphere_phantom_supersampled(
    center: Point3,
    radius: f64,
    value: f64,
    dims: [usize; 3],
    voxel_size: f64,
    samples: usize,
) -> Result<Volume> {
    if samples == 0 {
        return Err(Error::invalid("samples", "must be positive"));
    }
    let [nx, ny, nz] = dims;
    let mut vol = sphere_phantom(center, radius, value, nx, ny, nz, voxel_size)?;
    let offsets: Vec<f64> = (0..samples).map(|k| (k as f64 + 0.5) / samples as f64 - 0.5).collect();
    let per_voxel = (samples * samples * samples) as f64;
    let r2 = radius * radius;
    vol.data_mut().par_chunks_mut(nx * ny).enumerate().for_each(|(iz, plane)| {
        for iy in 0..ny {
            for ix in 0..nx {
                let mut inside = 0usize;
                for oz in &offsets {
                    let z = normalized_coord(iz, nz) + 2.0 * oz / nz as f64 - center[2];
                    for oy in &offsets {
                        let y = normalized_coord(iy, ny) + 2.0 * oy / ny as f64 - center[1];
                        for ox in &offsets {
                            let x = normalized_coord(ix, nx) + 2.0 * ox / nx as f64 - center[0];
                            if x * x + y * y + z * z <= r2 {
                                inside += 1;
                            }
                        }
                    }
                }
                plane[ix + nx * iy] = value * inside as f64 / per_voxel;
            }
        }
    });
    Ok(vol)
}

/// Exact line integrals of a uniform ball given in physical coordinates (mm).
///
/// Each ray contributes `2·value·√(r² − d²)` where `d` is the distance from the
/// ball center to the ray line, or 0 when the ray misses.
pub fn analytic_sphere_sinogram(geom: &ConeBeamGeometry, center_mm: Point3, radius_mm: f64, value: f64) -> Sinogram {
    let mut sino = Sinogram::for_geometry(geom);
    let per_view = geom.nu() * geom.nv();
    sino.data_mut().par_chunks_mut(per_view).enumerate().for_each(|(view, chunk)| {
        let theta = geom.angles()[view];
        let src = geom.source_at(theta);
        for v in 0..geom.nv() {
            for u in 0..geom.nu() {
                let dst = geom.pixel_at(theta, geom.u_offset(u), geom.v_offset(v));
                let d = ray_distance(src, dst, center_mm);
                chunk[u + geom.nu() * v] = chord(radius_mm, d) * value;
            }
        }
    });
    sino
}

/// Perpendicular distance from `p` to the line through `a` and `b`.
pub fn ray_distance(a: Point3, b: Point3, p: Point3) -> f64 {
    let dir = sub(b, a);
    let rel = sub(p, a);
    let t = dot(rel, dir) / dot(dir, dir);
    norm(sub(rel, [dir[0] * t, dir[1] * t, dir[2] * t]))
}

/// Chord length of a ball of radius `r` cut by a line at distance `d` from its center.
pub fn chord(r: f64, d: f64) -> f64 {
    if d >= r {
        0.0
    } else {
        2.0 * (r * r - d * d).sqrt()
    }
}
