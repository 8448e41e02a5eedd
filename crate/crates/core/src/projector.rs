//! Matrix-free cone-beam system operator.
//!
//! The forward model is Joseph's method: each ray (source to detector pixel
//! center) steps through the voxel planes perpendicular to its dominant axis,
//! bilinearly interpolating the two transverse axes at every crossing. The
//! adjoint replays the same weights in scatter form, so the pair is an exact
//! transpose up to floating-point rounding.

use std::ops::Range;
use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arrays::{Grid3, Sinogram, Volume};
use crate::error::{Error, Result};
use crate::geometry::{ConeBeamGeometry, Point3};

/// A real linear map between flat `f64` vectors, with its adjoint.
pub trait LinearOperator: Sync {
    fn domain_len(&self) -> usize;
    fn range_len(&self) -> usize;
    /// `out = A x`; `out` is overwritten.
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = Aᵀ y`; `out` is overwritten.
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]);

    /// `outs[j] = A xs[j]` for every `j`; must agree bitwise with [`apply`](Self::apply).
    fn apply_many(&self, xs: &[&[f64]], outs: &mut [&mut [f64]]) {
        for (x, out) in xs.iter().zip(outs.iter_mut()) {
            self.apply(x, out);
        }
    }

    /// `outs[j] = Aᵀ ys[j]` for every `j`; must agree bitwise with [`apply_adjoint`](Self::apply_adjoint).
    fn apply_adjoint_many(&self, ys: &[&[f64]], outs: &mut [&mut [f64]]) {
        for (y, out) in ys.iter().zip(outs.iter_mut()) {
            self.apply_adjoint(y, out);
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    #[default]
    Joseph,
}

#[derive(Clone)]
pub struct SystemOperator {
    geom: ConeBeamGeometry,
    method: ProjectionMethod,
    /// Ray plans, built on first use when there are at most [`PLAN_CACHE_MAX_RAYS`] rays.
    plans: Arc<OnceLock<Vec<Option<Ray>>>>,
}

/// Above this many rays, plans are recomputed on every application instead of stored.
pub const PLAN_CACHE_MAX_RAYS: usize = 1 << 21;

impl std::fmt::Debug for SystemOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SystemOperator").field("geom", &self.geom).field("method", &self.method).finish()
    }
}

/// Precomputed per-ray stepping parameters.
#[derive(Clone)]
struct Ray {
    /// Axis index (0 = x, 1 = y, 2 = z) of the dominant direction, then the two transverse axes.
    axes: [usize; 3],
    /// Plane indices along the dominant axis that lie between source and detector.
    planes: Range<usize>,
    /// Continuous transverse grid coordinates at plane 0 and their per-plane increments.
    start: [f64; 2],
    step: [f64; 2],
    /// Path length per plane step, mm.
    length: f64,
    /// Sub-range of `planes` where all four taps are inside the grid.
    interior: Range<usize>,
}

/// Receives the interpolation taps of a traced ray.
trait Taps {
    fn tap(&mut self, idx: usize, weight: f64);

    /// The 2×2 block at `idx`, `idx + sc`, `idx + sb`, `idx + sb + sc`.
    #[inline]
    fn quad(&mut self, idx: usize, sb: usize, sc: usize, w: [f64; 4]) {
        self.tap(idx, w[0]);
        self.tap(idx + sc, w[1]);
        self.tap(idx + sb, w[2]);
        self.tap(idx + sb + sc, w[3]);
    }
}

/// Forward projection of `k` volumes stored interleaved (`x[idx·k + j]`):
/// `sums[j] += Σ w·x[idx·k + j]`.
struct Gather<'a> {
    x: &'a [f64],
    sums: &'a mut [f64],
}

impl Taps for Gather<'_> {
    #[inline]
    fn tap(&mut self, idx: usize, weight: f64) {
        let k = self.sums.len();
        let x = &self.x[idx * k..(idx + 1) * k];
        for (sum, xv) in self.sums.iter_mut().zip(x) {
            *sum += weight * xv;
        }
    }

    #[inline]
    fn quad(&mut self, idx: usize, sb: usize, sc: usize, w: [f64; 4]) {
        let k = self.sums.len();
        if k == 1 {
            let x = self.x;
            self.sums[0] += (w[0] * x[idx] + w[1] * x[idx + sc]) + (w[2] * x[idx + sb] + w[3] * x[idx + sb + sc]);
            return;
        }
        let at = |i: usize| &self.x[i * k..(i + 1) * k];
        let (x00, x01, x10, x11) = (at(idx), at(idx + sc), at(idx + sb), at(idx + sb + sc));
        for j in 0..k {
            self.sums[j] += (w[0] * x00[j] + w[1] * x01[j]) + (w[2] * x10[j] + w[3] * x11[j]);
        }
    }
}

/// Backprojection of one ray's `k` values into an interleaved slab starting at voxel `offset`.
struct Scatter<'a> {
    out: &'a mut [f64],
    offset: usize,
    values: &'a [f64],
}

impl Taps for Scatter<'_> {
    #[inline]
    fn tap(&mut self, idx: usize, weight: f64) {
        let k = self.values.len();
        if k == 1 {
            self.out[idx - self.offset] += weight * self.values[0];
            return;
        }
        let i = (idx - self.offset) * k;
        for (o, value) in self.out[i..i + k].iter_mut().zip(self.values) {
            *o += weight * value;
        }
    }
}

/// Strides and transverse extents of the grid as seen from one ray.
struct PlaneGrid {
    sa: usize,
    sb: usize,
    sc: usize,
    nb: isize,
    nc: isize,
}

impl PlaneGrid {
    fn new(dims: [usize; 3], ray: &Ray) -> Self {
        let strides = [1, dims[0], dims[0] * dims[1]];
        let [a, b, c] = ray.axes;
        PlaneGrid { sa: strides[a], sb: strides[b], sc: strides[c], nb: dims[b] as isize, nc: dims[c] as isize }
    }

    fn is_interior(&self, ray: &Ray, i: usize) -> bool {
        let gb = ray.start[0] + i as f64 * ray.step[0];
        let gc = ray.start[1] + i as f64 * ray.step[1];
        gb >= 0.0 && gc >= 0.0 && gb < (self.nb - 1) as f64 && gc < (self.nc - 1) as f64
    }

    /// Sub-range of `planes` where every tap is in bounds (possibly empty).
    ///
    /// Transverse coordinates are affine in the plane index, so the interior
    /// planes are contiguous; the analytic estimate is tightened until both
    /// ends pass the exact test.
    fn interior(&self, ray: &Ray, planes: Range<usize>) -> Range<usize> {
        let (mut lo, mut hi) = (planes.start as f64, planes.end as f64);
        for (k, n) in [(0, self.nb), (1, self.nc)] {
            let (s, d) = (ray.start[k], ray.step[k]);
            let upper = (n - 1) as f64;
            if d == 0.0 {
                if !(s >= 0.0 && s < upper) {
                    return planes.start..planes.start;
                }
                continue;
            }
            let (t0, t1) = ((0.0 - s) / d, (upper - s) / d);
            lo = lo.max(t0.min(t1).ceil());
            hi = hi.min(t0.max(t1).floor() + 1.0);
        }
        if !(lo < hi) {
            return planes.start..planes.start;
        }
        let (mut lo, mut hi) = (lo as usize, hi as usize);
        while lo < hi && !self.is_interior(ray, lo) {
            lo += 1;
        }
        while hi > lo && !self.is_interior(ray, hi - 1) {
            hi -= 1;
        }
        lo..hi
    }

    /// Bounds-checked taps of plane `i`; `z_filter` names which transverse slot is z.
    #[inline]
    fn general(&self, ray: &Ray, i: usize, z_filter: Option<(usize, &Range<usize>)>, visit: &mut impl Taps) {
        let gb = ray.start[0] + i as f64 * ray.step[0];
        let gc = ray.start[1] + i as f64 * ray.step[1];
        if gb <= -1.0 || gc <= -1.0 || gb >= self.nb as f64 || gc >= self.nc as f64 {
            return;
        }
        // both coordinates exceed −1, so truncating g + 1 is floor(g) + 1
        let b0 = (gb + 1.0) as isize - 1;
        let c0 = (gc + 1.0) as isize - 1;
        let wb = gb - b0 as f64;
        let wc = gc - c0 as f64;
        let base = i * self.sa;
        for (db, weight_b) in [(1.0 - wb) * ray.length, wb * ray.length].into_iter().enumerate() {
            let bi = b0 + db as isize;
            if bi < 0 || bi >= self.nb || weight_b == 0.0 {
                continue;
            }
            for (dc, weight_c) in [1.0 - wc, wc].into_iter().enumerate() {
                let ci = c0 + dc as isize;
                if ci < 0 || ci >= self.nc || weight_c == 0.0 {
                    continue;
                }
                if let Some((slot, z_range)) = z_filter {
                    let zi = if slot == 0 { bi } else { ci } as usize;
                    if !z_range.contains(&zi) {
                        continue;
                    }
                }
                visit.tap(base + bi as usize * self.sb + ci as usize * self.sc, weight_b * weight_c);
            }
        }
    }
}

impl SystemOperator {
    pub fn new(geom: ConeBeamGeometry) -> Self {
        Self::with_method(geom, ProjectionMethod::Joseph)
    }

    pub fn with_method(geom: ConeBeamGeometry, method: ProjectionMethod) -> Self {
        SystemOperator { geom, method, plans: Arc::default() }
    }

    pub fn geometry(&self) -> &ConeBeamGeometry {
        &self.geom
    }

    pub fn method(&self) -> ProjectionMethod {
        self.method
    }

    fn dims(&self) -> [usize; 3] {
        [self.geom.nx(), self.geom.ny(), self.geom.nz()]
    }

    fn plan_ray(&self, src: Point3, dst: Point3) -> Option<Ray> {
        let dims = self.dims();
        let vs = self.geom.voxel_size();
        let d = [dst[0] - src[0], dst[1] - src[1], dst[2] - src[2]];

        // strict comparison keeps the earlier axis on ties: x, then y, then z
        let mut a = 0;
        for axis in 1..3 {
            if d[axis].abs() > d[a].abs() {
                a = axis;
            }
        }
        if d[a] == 0.0 {
            return None;
        }
        let (b, c) = match a {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };

        // grid coordinate g along axis k of point p: p/vs + (n_k - 1)/2
        let half = |k: usize| (dims[k] as f64 - 1.0) / 2.0;
        // plane i sits at position (i - half_a)·vs; ray parameter t(i) = ((i - half_a)·vs - src_a)/d_a
        let t0 = (-half(a) * vs - src[a]) / d[a];
        let dt = vs / d[a];

        // keep planes with t in [0, 1]
        let (lo, hi) = {
            let ta = (0.0 - t0) / dt;
            let tb = (1.0 - t0) / dt;
            (ta.min(tb), ta.max(tb))
        };
        let first = lo.ceil().max(0.0);
        let last = hi.floor().min(dims[a] as f64 - 1.0);
        if first > last {
            return None;
        }

        let coord = |k: usize, t: f64| (src[k] + t * d[k]) / vs + half(k);
        let start = [coord(b, t0), coord(c, t0)];
        let step = [d[b] * dt / vs, d[c] * dt / vs];
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let mut ray = Ray {
            axes: [a, b, c],
            planes: first as usize..last as usize + 1,
            start,
            step,
            length: vs * norm / d[a].abs(),
            interior: 0..0,
        };
        ray.interior = PlaneGrid::new(dims, &ray).interior(&ray, ray.planes.clone());
        Some(ray)
    }

    /// Calls `visit(voxel_index, weight)` for every interpolation tap of the ray,
    /// restricted to voxels whose z index lies in `z_range`.
    ///
    /// Planes where all four taps are inside the grid take a branch-free path;
    /// both paths compute identical weights.
    #[inline]
    fn trace(&self, ray: &Ray, z_range: &Range<usize>, visit: &mut impl Taps) {
        let dims = self.dims();
        let [a, b, _] = ray.axes;
        let mut planes = ray.planes.clone();
        if a == 2 {
            planes = planes.start.max(z_range.start)..planes.end.min(z_range.end);
        }
        // transverse z filtering is only needed when the range is a strict sub-slab
        let filter_z = a != 2 && !(z_range.start == 0 && z_range.end >= dims[2]);
        let grid = PlaneGrid::new(dims, ray);
        if filter_z {
            for i in planes {
                grid.general(ray, i, Some((if b == 2 { 0 } else { 1 }, z_range)), visit);
            }
            return;
        }
        let interior = ray.interior.start.max(planes.start)..ray.interior.end.min(planes.end);
        let interior = interior.start..interior.end.max(interior.start);
        for i in planes.start..interior.start {
            grid.general(ray, i, None, visit);
        }
        let len = ray.length;
        for i in interior.clone() {
            let gb = ray.start[0] + i as f64 * ray.step[0];
            let gc = ray.start[1] + i as f64 * ray.step[1];
            // interior coordinates are ≥ 0, so truncation is floor
            let (b0, c0) = (gb as i32, gc as i32);
            let (wb, wc) = (gb - b0 as f64, gc - c0 as f64);
            let idx = i * grid.sa + b0 as usize * grid.sb + c0 as usize * grid.sc;
            let (lb, hb) = ((1.0 - wb) * len, wb * len);
            visit.quad(idx, grid.sb, grid.sc, [lb * (1.0 - wc), lb * wc, hb * (1.0 - wc), hb * wc]);
        }
        for i in interior.end.max(planes.start)..planes.end {
            grid.general(ray, i, None, visit);
        }
    }

    fn plan_view(&self, view: usize) -> impl Iterator<Item = Option<Ray>> + '_ {
        let geom = &self.geom;
        let theta = geom.angles()[view];
        let src = geom.source_at(theta);
        let (nu, nv) = (geom.nu(), geom.nv());
        (0..nv).flat_map(move |v| {
            (0..nu).map(move |u| self.plan_ray(src, geom.pixel_at(theta, geom.u_offset(u), geom.v_offset(v))))
        })
    }

    fn cached_plans(&self) -> Option<&[Option<Ray>]> {
        if self.geom.num_rays() > PLAN_CACHE_MAX_RAYS {
            return None;
        }
        let plans = self.plans.get_or_init(|| {
            (0..self.geom.num_views())
                .into_par_iter()
                .flat_map_iter(|view| self.plan_view(view).collect::<Vec<_>>())
                .collect()
        });
        Some(plans)
    }

    /// Calls `f(ray_index_within_view, ray)` for every ray of `view` that meets the volume.
    fn for_each_ray(&self, view: usize, mut f: impl FnMut(usize, &Ray)) {
        match self.cached_plans() {
            Some(plans) => {
                let per_view = self.geom.nu() * self.geom.nv();
                for (index, ray) in plans[view * per_view..(view + 1) * per_view].iter().enumerate() {
                    if let Some(ray) = ray {
                        f(index, ray);
                    }
                }
            }
            None => {
                for (index, ray) in self.plan_view(view).enumerate() {
                    if let Some(ray) = ray {
                        f(index, &ray);
                    }
                }
            }
        }
    }

    pub fn forward_project(&self, x: &Volume) -> Result<Sinogram> {
        x.check_geometry(&self.geom)?;
        let mut out = Sinogram::for_geometry(&self.geom);
        self.apply(x.data(), out.data_mut());
        Ok(out)
    }

    pub fn back_project(&self, y: &Sinogram) -> Result<Volume> {
        y.check_geometry(&self.geom)?;
        let mut out = Volume::for_geometry(&self.geom);
        self.apply_adjoint(y.data(), out.data_mut());
        Ok(out)
    }

    /// Explicit system matrix for tiny geometries; column `j` is the projection of voxel `j`.
    pub fn dense_matrix(&self) -> Result<DenseMatrix> {
        let cols = self.geom.num_voxels();
        let rows = self.geom.num_rays();
        if cols > DenseMatrix::MAX_COLS || rows > DenseMatrix::MAX_ROWS {
            return Err(Error::invalid(
                "geometry",
                format!(
                    "dense matrix limited to {} voxels and {} rays, got {cols} and {rows}",
                    DenseMatrix::MAX_COLS,
                    DenseMatrix::MAX_ROWS
                ),
            ));
        }
        let mut data = vec![0.0; rows * cols];
        let mut basis = vec![0.0; cols];
        let mut column = vec![0.0; rows];
        for j in 0..cols {
            basis[j] = 1.0;
            self.apply(&basis, &mut column);
            basis[j] = 0.0;
            for (r, &value) in column.iter().enumerate() {
                data[r * cols + j] = value;
            }
        }
        Ok(DenseMatrix { rows, cols, data })
    }
}

impl LinearOperator for SystemOperator {
    fn domain_len(&self) -> usize {
        self.geom.num_voxels()
    }

    fn range_len(&self) -> usize {
        self.geom.num_rays()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.apply_many(&[x], &mut [out]);
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        self.apply_adjoint_many(&[y], &mut [out]);
    }

    /// One traversal of every ray serves all inputs.
    fn apply_many(&self, xs: &[&[f64]], outs: &mut [&mut [f64]]) {
        assert_eq!(xs.len(), outs.len());
        assert!(xs.iter().all(|x| x.len() == self.domain_len()));
        assert!(outs.iter().all(|o| o.len() == self.range_len()));
        let k = xs.len();
        if k == 0 {
            return;
        }
        let x = interleave(xs);
        let all_z = 0..self.geom.nz();
        let per_view = self.geom.nu() * self.geom.nv();
        let mut sums = vec![0.0; self.range_len() * k];
        sums.par_chunks_mut(per_view * k).enumerate().for_each(|(view, chunk)| {
            self.for_each_ray(view, |ray_index, ray| {
                let sums = &mut chunk[ray_index * k..(ray_index + 1) * k];
                self.trace(ray, &all_z, &mut Gather { x: &x, sums });
            });
        });
        deinterleave(&sums, outs);
    }

    /// Each worker owns a slab of z-planes and scatters every ray into it in
    /// sequential ray order, so the result is independent of the thread count.
    fn apply_adjoint_many(&self, ys: &[&[f64]], outs: &mut [&mut [f64]]) {
        assert_eq!(ys.len(), outs.len());
        assert!(ys.iter().all(|y| y.len() == self.range_len()));
        assert!(outs.iter().all(|o| o.len() == self.domain_len()));
        let k = ys.len();
        if k == 0 {
            return;
        }
        let y = interleave(ys);
        let nz = self.geom.nz();
        let plane = self.geom.nx() * self.geom.ny();
        let slabs = rayon::current_num_threads().clamp(1, nz);
        let slab_planes = nz.div_ceil(slabs);
        let per_view = self.geom.nu() * self.geom.nv();

        let mut acc = vec![0.0; self.domain_len() * k];
        acc.par_chunks_mut(slab_planes * plane * k).enumerate().for_each(|(slab, chunk)| {
            let z_range = slab * slab_planes..((slab + 1) * slab_planes).min(nz);
            let offset = z_range.start * plane;
            for view in 0..self.geom.num_views() {
                let base = view * per_view;
                self.for_each_ray(view, |ray_index, ray| {
                    let values = &y[(base + ray_index) * k..(base + ray_index + 1) * k];
                    if values.iter().any(|&v| v != 0.0) {
                        self.trace(ray, &z_range, &mut Scatter { out: &mut *chunk, offset, values });
                    }
                });
            }
        });
        deinterleave(&acc, outs);
    }
}

/// `[a0, b0, …, a1, b1, …]` from `[a, b, …]`.
fn interleave(vs: &[&[f64]]) -> Vec<f64> {
    let k = vs.len();
    if k == 1 {
        return vs[0].to_vec();
    }
    let n = vs[0].len();
    let mut out = vec![0.0; n * k];
    for (j, v) in vs.iter().enumerate() {
        for (i, &value) in v.iter().enumerate() {
            out[i * k + j] = value;
        }
    }
    out
}

fn deinterleave(src: &[f64], outs: &mut [&mut [f64]]) {
    let k = outs.len();
    for (j, out) in outs.iter_mut().enumerate() {
        for (o, group) in out.iter_mut().zip(src.chunks_exact(k)) {
            *o = group[j];
        }
    }
}

/// Row-major dense matrix used as a test oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub const MAX_COLS: usize = 4096;
    pub const MAX_ROWS: usize = 16384;

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }
}

impl LinearOperator for DenseMatrix {
    fn domain_len(&self) -> usize {
        self.cols
    }

    fn range_len(&self) -> usize {
        self.rows
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (r, &yr) in y.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * yr;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    /// Rayleigh-quotient estimate of λ_max(AᵀA).
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration on `x ↦ Aᵀ(Ax)` from a seeded random start.
///
/// The start vector is the absolute value of a Gaussian draw: projectors have
/// nonnegative entries, so the leading singular vector is nonnegative and a
/// nonnegative start overlaps it strongly. Each step reports the Rayleigh
/// quotient `‖AᵀAx‖² / ‖Ax‖²` (that of `AAᵀ` at `Ax`), which never exceeds
/// λ_max and is at least as tight as `⟨x, AᵀAx⟩`.
pub fn operator_norm_sq<O: LinearOperator + ?Sized>(op: &O, max_iters: usize, tol: f64, seed: u64) -> NormEstimate {
    let n = op.domain_len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).map(f64::abs).collect();
    let mut ax = vec![0.0; op.range_len()];
    let mut y = vec![0.0; n];
    normalize(&mut x);

    let max_iters = max_iters.max(1);
    let mut estimate = 0.0;
    for iteration in 1..=max_iters {
        op.apply(&x, &mut ax);
        op.apply_adjoint(&ax, &mut y);
        let ax_sq = dot(&ax, &ax);
        let y_sq = dot(&y, &y);
        if ax_sq == 0.0 || y_sq == 0.0 {
            return NormEstimate { value: 0.0, iterations: iteration, converged: true };
        }
        let value = y_sq / ax_sq;
        let converged = iteration > 1 && (value - estimate).abs() < tol * value;
        estimate = value;
        if converged {
            return NormEstimate { value, iterations: iteration, converged: true };
        }
        let norm = y_sq.sqrt();
        x.iter_mut().zip(&y).for_each(|(xi, yi)| *xi = yi / norm);
    }
    NormEstimate { value: estimate, iterations: max_iters, converged: false }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(x: &mut [f64]) {
    let norm = dot(x, x).sqrt();
    if norm > 0.0 {
        x.iter_mut().for_each(|v| *v /= norm);
    }
}
