//! Circular-orbit cone-beam geometry with a flat detector.
//!
//! Conventions: right-handed coordinates in mm, rotation axis `z`, volume
//! centered at the origin. At view angle `θ` the source sits at
//! `sod·(cos θ, sin θ, 0)` and the detector plane is perpendicular to the
//! source–origin ray, `sdd − sod` beyond the origin. Detector `u` runs along
//! `(−sin θ, cos θ, 0)` and `v` along `+z`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeBeamGeometry {
    sod: f64,
    sdd: f64,
    nu: usize,
    nv: usize,
    du: f64,
    dv: f64,
    angles: Vec<f64>,
    nx: usize,
    ny: usize,
    nz: usize,
    voxel_size: f64,
}

impl ConeBeamGeometry {
    /// Full circular scan with `num_views` equally spaced angles `2π·i/num_views`.
    #[allow(clippy::too_many_arguments)]
    pub fn make_circular(
        sod: f64,
        sdd: f64,
        nu: usize,
        nv: usize,
        du: f64,
        dv: f64,
        num_views: usize,
        nx: usize,
        ny: usize,
        nz: usize,
        voxel_size: f64,
    ) -> Result<Self> {
        if num_views == 0 {
            return Err(Error::invalid("num_views", "must be positive"));
        }
        let angles = (0..num_views).map(|i| TAU * i as f64 / num_views as f64).collect();
        Self::with_angles(sod, sdd, nu, nv, du, dv, angles, nx, ny, nz, voxel_size)
    }

    /// Same as [`make_circular`](Self::make_circular) but with an explicit angle list.
    #[allow(clippy::too_many_arguments)]
    pub fn with_angles(
        sod: f64,
        sdd: f64,
        nu: usize,
        nv: usize,
        du: f64,
        dv: f64,
        angles: Vec<f64>,
        nx: usize,
        ny: usize,
        nz: usize,
        voxel_size: f64,
    ) -> Result<Self> {
        let geom = ConeBeamGeometry { sod, sdd, nu, nv, du, dv, angles, nx, ny, nz, voxel_size };
        geom.validate()?;
        Ok(geom)
    }

    /// Re-checks every invariant; used after deserialization as well as construction.
    pub fn validate(&self) -> Result<()> {
        fn positive(field: &str, value: f64) -> Result<()> {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(field, format!("must be finite and > 0, got {value}")))
            }
        }
        fn count(field: &str, value: usize) -> Result<()> {
            if value == 0 {
                Err(Error::invalid(field, "must be positive"))
            } else {
                Ok(())
            }
        }

        positive("sod", self.sod)?;
        positive("sdd", self.sdd)?;
        if self.sdd <= self.sod {
            return Err(Error::invalid(
                "sdd",
                format!("must exceed sod ({} <= {})", self.sdd, self.sod),
            ));
        }
        positive("du", self.du)?;
        positive("dv", self.dv)?;
        positive("voxel_size", self.voxel_size)?;
        count("nu", self.nu)?;
        count("nv", self.nv)?;
        count("nx", self.nx)?;
        count("ny", self.ny)?;
        count("nz", self.nz)?;
        count("num_views", self.angles.len())?;
        if let Some((i, a)) = self.angles.iter().enumerate().find(|(_, a)| !(0.0..TAU).contains(*a)) {
            return Err(Error::invalid("angles", format!("angle[{i}] = {a} is outside [0, 2π)")));
        }
        let radius = self.volume_radius();
        if radius >= self.sod {
            return Err(Error::invalid(
                "sod",
                format!("source orbit ({}) must lie outside the volume's bounding sphere (radius {radius:.3})", self.sod),
            ));
        }
        Ok(())
    }

    /// Radius of the sphere circumscribing the voxel grid.
    pub fn volume_radius(&self) -> f64 {
        let (nx, ny, nz) = (self.nx as f64, self.ny as f64, self.nz as f64);
        self.voxel_size * (nx * nx + ny * ny + nz * nz).sqrt() / 2.0
    }

    pub fn sod(&self) -> f64 {
        self.sod
    }
    pub fn sdd(&self) -> f64 {
        self.sdd
    }
    pub fn nu(&self) -> usize {
        self.nu
    }
    pub fn nv(&self) -> usize {
        self.nv
    }
    pub fn du(&self) -> f64 {
        self.du
    }
    pub fn dv(&self) -> f64 {
        self.dv
    }
    pub fn num_views(&self) -> usize {
        self.angles.len()
    }
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn nz(&self) -> usize {
        self.nz
    }
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }
    pub fn num_voxels(&self) -> usize {
        self.nx * self.ny * self.nz
    }
    pub fn num_rays(&self) -> usize {
        self.angles.len() * self.nu * self.nv
    }

    fn check_view(&self, view: usize) -> Result<f64> {
        self.angles
            .get(view)
            .copied()
            .ok_or(Error::IndexOutOfRange { what: "view", index: view, len: self.angles.len() })
    }

    pub fn source_position(&self, view: usize) -> Result<Point3> {
        let theta = self.check_view(view)?;
        Ok(self.source_at(theta))
    }

    pub fn detector_pixel_center(&self, view: usize, u_index: usize, v_index: usize) -> Result<Point3> {
        let theta = self.check_view(view)?;
        if u_index >= self.nu {
            return Err(Error::IndexOutOfRange { what: "u", index: u_index, len: self.nu });
        }
        if v_index >= self.nv {
            return Err(Error::IndexOutOfRange { what: "v", index: v_index, len: self.nv });
        }
        Ok(self.pixel_at(theta, self.u_offset(u_index), self.v_offset(v_index)))
    }

    pub(crate) fn source_at(&self, theta: f64) -> Point3 {
        let (s, c) = theta.sin_cos();
        [self.sod * c, self.sod * s, 0.0]
    }

    /// Detector point at physical offsets `(u, v)` from the detector center.
    pub(crate) fn pixel_at(&self, theta: f64, u: f64, v: f64) -> Point3 {
        let (s, c) = theta.sin_cos();
        let back = self.sdd - self.sod;
        [-back * c - u * s, -back * s + u * c, v]
    }

    /// Physical offset of detector column `u_index` from the detector center.
    pub fn u_offset(&self, u_index: usize) -> f64 {
        (u_index as f64 - (self.nu as f64 - 1.0) / 2.0) * self.du
    }

    pub fn v_offset(&self, v_index: usize) -> f64 {
        (v_index as f64 - (self.nv as f64 - 1.0) / 2.0) * self.dv
    }

    /// Center of voxel `(ix, iy, iz)` in mm.
    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> Point3 {
        [
            (ix as f64 - (self.nx as f64 - 1.0) / 2.0) * self.voxel_size,
            (iy as f64 - (self.ny as f64 - 1.0) / 2.0) * self.voxel_size,
            (iz as f64 - (self.nz as f64 - 1.0) / 2.0) * self.voxel_size,
        ]
    }

    /// Copy of this geometry with a different angle list (and therefore view count).
    pub fn with_view_angles(&self, angles: Vec<f64>) -> Result<Self> {
        let geom = ConeBeamGeometry { angles, ..self.clone() };
        geom.validate()?;
        Ok(geom)
    }
}

/// Flat key-value form of the geometry as it appears in a config file's `[geometry]` section.
///
/// Unset keys take the full-scale defaults: 256³ volume of 0.5 mm voxels,
/// 256×256 detector of 1 mm pixels, 360 views, sod 575 mm, sdd 1050 mm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryParams {
    pub sod: f64,
    pub sdd: f64,
    pub nu: usize,
    pub nv: usize,
    pub du: f64,
    pub dv: f64,
    pub num_views: usize,
    /// Explicit view angles in radians; overrides `num_views` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angles: Option<Vec<f64>>,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub voxel_size: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        GeometryParams {
            sod: 575.0,
            sdd: 1050.0,
            nu: 256,
            nv: 256,
            du: 1.0,
            dv: 1.0,
            num_views: 360,
            angles: None,
            nx: 256,
            ny: 256,
            nz: 256,
            voxel_size: 0.5,
        }
    }
}

impl GeometryParams {
    /// Desk-scale variant: 64³ volume, 64×64 detector, 120 views. Same field of view as the default.
    pub fn desk() -> Self {
        GeometryParams {
            nu: 64,
            nv: 64,
            du: 4.0,
            dv: 4.0,
            num_views: 120,
            nx: 64,
            ny: 64,
            nz: 64,
            voxel_size: 2.0,
            ..Default::default()
        }
    }

    pub fn build(&self) -> Result<ConeBeamGeometry> {
        match &self.angles {
            Some(angles) => ConeBeamGeometry::with_angles(
                self.sod,
                self.sdd,
                self.nu,
                self.nv,
                self.du,
                self.dv,
                angles.clone(),
                self.nx,
                self.ny,
                self.nz,
                self.voxel_size,
            ),
            None => ConeBeamGeometry::make_circular(
                self.sod,
                self.sdd,
                self.nu,
                self.nv,
                self.du,
                self.dv,
                self.num_views,
                self.nx,
                self.ny,
                self.nz,
                self.voxel_size,
            ),
        }
    }
}

impl From<&ConeBeamGeometry> for GeometryParams {
    fn from(g: &ConeBeamGeometry) -> Self {
        GeometryParams {
            sod: g.sod,
            sdd: g.sdd,
            nu: g.nu,
            nv: g.nv,
            du: g.du,
            dv: g.dv,
            num_views: g.num_views(),
            angles: Some(g.angles.clone()),
            nx: g.nx,
            ny: g.ny,
            nz: g.nz,
            voxel_size: g.voxel_size,
        }
    }
}

pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}
