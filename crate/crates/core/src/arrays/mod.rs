//! Dense 3D containers for volumes and sinograms.
//!
//! Values live in memory as `f64`. The on-disk precision is chosen per file
//! (see [`io`]); `f32` is the default.

pub mod io;
pub mod metrics;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ConeBeamGeometry;

pub use io::{read_array, write_array, ArrayHeader, Precision};
pub use metrics::{mse, psnr};

/// Common view of a dense 3D grid. `dims()` lists axis lengths fastest-first.
pub trait Grid3 {
    fn dims(&self) -> [usize; 3];
    fn data(&self) -> &[f64];
    fn data_mut(&mut self) -> &mut [f64];

    fn len(&self) -> usize {
        self.data().len()
    }

    fn is_empty(&self) -> bool {
        self.data().is_empty()
    }
}

fn check_data(dims: [usize; 3], data: &[f64]) -> Result<()> {
    let expected = dims.iter().product::<usize>();
    if data.len() != expected {
        return Err(Error::shape(
            format!("{expected} elements for {dims:?}"),
            format!("{} elements", data.len()),
        ));
    }
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(())
}

/// Scalar field on a regular voxel grid; index = `x + nx·(y + ny·z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    nx: usize,
    ny: usize,
    nz: usize,
    voxel_size: f64,
    data: Vec<f64>,
}

impl Volume {
    pub fn zeros(nx: usize, ny: usize, nz: usize, voxel_size: f64) -> Self {
        Volume { nx, ny, nz, voxel_size, data: vec![0.0; nx * ny * nz] }
    }

    pub fn filled(nx: usize, ny: usize, nz: usize, voxel_size: f64, value: f64) -> Self {
        Volume { nx, ny, nz, voxel_size, data: vec![value; nx * ny * nz] }
    }

    pub fn from_data(nx: usize, ny: usize, nz: usize, voxel_size: f64, data: Vec<f64>) -> Result<Self> {
        check_data([nx, ny, nz], &data)?;
        Ok(Volume { nx, ny, nz, voxel_size, data })
    }

    /// Zero volume shaped for `geom`.
    pub fn for_geometry(geom: &ConeBeamGeometry) -> Self {
        Volume::zeros(geom.nx(), geom.ny(), geom.nz(), geom.voxel_size())
    }

    /// Returns a shape-mismatch error unless this volume has `geom`'s voxel grid.
    pub fn check_geometry(&self, geom: &ConeBeamGeometry) -> Result<()> {
        let want = [geom.nx(), geom.ny(), geom.nz()];
        if self.dims() != want {
            return Err(Error::shape(format!("volume {want:?}"), format!("volume {:?}", self.dims())));
        }
        Ok(())
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

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same grid, new values.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Volume {
        debug_assert_eq!(data.len(), self.data.len());
        Volume { nx: self.nx, ny: self.ny, nz: self.nz, voxel_size: self.voxel_size, data }
    }
}

impl Grid3 for Volume {
    fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }
    fn data(&self) -> &[f64] {
        &self.data
    }
    fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Stack of detector readings; index = `u + nu·(v + nv·view)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    num_views: usize,
    nv: usize,
    nu: usize,
    du: f64,
    dv: f64,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(num_views: usize, nv: usize, nu: usize, du: f64, dv: f64) -> Self {
        Sinogram { num_views, nv, nu, du, dv, data: vec![0.0; num_views * nv * nu] }
    }

    pub fn from_data(num_views: usize, nv: usize, nu: usize, du: f64, dv: f64, data: Vec<f64>) -> Result<Self> {
        check_data([nu, nv, num_views], &data)?;
        Ok(Sinogram { num_views, nv, nu, du, dv, data })
    }

    pub fn for_geometry(geom: &ConeBeamGeometry) -> Self {
        Sinogram::zeros(geom.num_views(), geom.nv(), geom.nu(), geom.du(), geom.dv())
    }

    pub fn check_geometry(&self, geom: &ConeBeamGeometry) -> Result<()> {
        let want = [geom.nu(), geom.nv(), geom.num_views()];
        if self.dims() != want {
            return Err(Error::shape(
                format!("sinogram (nu, nv, views) = {want:?}"),
                format!("sinogram {:?}", self.dims()),
            ));
        }
        Ok(())
    }

    pub fn num_views(&self) -> usize {
        self.num_views
    }
    pub fn nv(&self) -> usize {
        self.nv
    }
    pub fn nu(&self) -> usize {
        self.nu
    }
    pub fn du(&self) -> f64 {
        self.du
    }
    pub fn dv(&self) -> f64 {
        self.dv
    }

    #[inline]
    pub fn index(&self, view: usize, v: usize, u: usize) -> usize {
        u + self.nu * (v + self.nv * view)
    }

    pub fn get(&self, view: usize, v: usize, u: usize) -> f64 {
        self.data[self.index(view, v, u)]
    }

    pub fn set(&mut self, view: usize, v: usize, u: usize, value: f64) {
        let i = self.index(view, v, u);
        self.data[i] = value;
    }

    /// The `nv × nu` detector image of one view.
    pub fn view(&self, view: usize) -> &[f64] {
        let n = self.nu * self.nv;
        &self.data[view * n..(view + 1) * n]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> Sinogram {
        debug_assert_eq!(data.len(), self.data.len());
        Sinogram { num_views: self.num_views, nv: self.nv, nu: self.nu, du: self.du, dv: self.dv, data }
    }
}

impl Grid3 for Sinogram {
    fn dims(&self) -> [usize; 3] {
        [self.nu, self.nv, self.num_views]
    }
    fn data(&self) -> &[f64] {
        &self.data
    }
    fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayKind {
    Volume,
    Sinogram,
}

impl std::fmt::Display for ArrayKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ArrayKind::Volume => "volume",
            ArrayKind::Sinogram => "sinogram",
        })
    }
}

/// Either kind of array, as read from or written to disk.
#[derive(Clone, Debug, PartialEq)]
pub enum CtArray {
    Volume(Volume),
    Sinogram(Sinogram),
}

impl CtArray {
    pub fn kind(&self) -> ArrayKind {
        match self {
            CtArray::Volume(_) => ArrayKind::Volume,
            CtArray::Sinogram(_) => ArrayKind::Sinogram,
        }
    }

    pub fn grid(&self) -> &dyn Grid3 {
        match self {
            CtArray::Volume(v) => v,
            CtArray::Sinogram(s) => s,
        }
    }

    pub fn into_volume(self) -> Result<Volume> {
        match self {
            CtArray::Volume(v) => Ok(v),
            CtArray::Sinogram(_) => Err(Error::Format("expected a volume, found a sinogram".into())),
        }
    }

    pub fn into_sinogram(self) -> Result<Sinogram> {
        match self {
            CtArray::Sinogram(s) => Ok(s),
            CtArray::Volume(_) => Err(Error::Format("expected a sinogram, found a volume".into())),
        }
    }
}

impl From<Volume> for CtArray {
    fn from(v: Volume) -> Self {
        CtArray::Volume(v)
    }
}

impl From<Sinogram> for CtArray {
    fn from(s: Sinogram) -> Self {
        CtArray::Sinogram(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_layout_is_x_fastest() {
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let vol = Volume::from_data(2, 3, 4, 1.0, data).unwrap();
        assert_eq!(vol.get(1, 0, 0), 1.0);
        assert_eq!(vol.get(0, 1, 0), 2.0);
        assert_eq!(vol.get(0, 0, 1), 6.0);
        assert_eq!(vol.get(1, 2, 3), 23.0);
    }

    #[test]
    fn sinogram_layout_is_u_fastest() {
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let sino = Sinogram::from_data(2, 3, 4, 1.0, 1.0, data).unwrap();
        assert_eq!(sino.get(1, 2, 3), 23.0);
        assert_eq!(sino.get(0, 1, 0), 4.0);
        assert_eq!(sino.view(1)[0], 12.0);
    }

    #[test]
    fn rejects_wrong_length_and_non_finite() {
        assert!(matches!(Volume::from_data(2, 2, 2, 1.0, vec![0.0; 7]), Err(Error::ShapeMismatch { .. })));
        let mut data = vec![0.0; 8];
        data[5] = f64::NAN;
        assert!(matches!(Volume::from_data(2, 2, 2, 1.0, data), Err(Error::NonFinite { index: 5 })));
    }

    #[test]
    fn with_data_keeps_shape() {
        let vol = Volume::zeros(2, 3, 1, 0.5);
        let other = vol.with_data(vec![1.0; 6]);
        assert_eq!(other.dims(), [2, 3, 1]);
        assert_eq!(other.voxel_size(), 0.5);
    }
}
