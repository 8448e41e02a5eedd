//! Feldkamp–Davis–Kress reconstruction for a full circular scan.
//!
//! 1. cosine pre-weighting `sdd / √(sdd² + u² + v²)`;
//! 2. row-wise ramp filtering with the spatial Ram-Lak kernel, zero-padded and
//!    applied through the FFT;
//! 3. distance-weighted bilinear backprojection, scaled by `π / num_views`.
//!
//! Filtering is done in detector coordinates rescaled to the rotation axis
//! (pitch `τ = du·sod/sdd`); with that convention the backprojection weight is
//! `sod² / U²` where `U = sod − p·ŝ` is the voxel's depth along the central ray.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::arrays::{Grid3, Sinogram, Volume};
use crate::error::{Error, Result};
use crate::geometry::ConeBeamGeometry;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterWindow {
    #[default]
    Ramlak,
    Hann,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdkConfig {
    pub window: FilterWindow,
    /// Filter length; defaults to the next power of two `≥ 2·nu`.
    pub pad_to: Option<usize>,
}

impl FdkConfig {
    pub fn pad_length(&self, nu: usize) -> Result<usize> {
        match self.pad_to {
            None => Ok((2 * nu).next_power_of_two()),
            Some(p) if p >= 2 * nu => Ok(p),
            Some(p) => Err(Error::invalid("pad_to", format!("must be ≥ 2·nu = {}, got {p}", 2 * nu))),
        }
    }
}

/// Frequency response of the unit-spacing Ram-Lak kernel, optionally Hann-windowed.
///
/// Built from `h[0] = 1/4`, `h[n odd] = −1/(π²n²)`, `h[n even] = 0`, laid out
/// circularly and transformed; the kernel is even so the response is real.
pub fn ramp_response(len: usize, window: FilterWindow) -> Vec<f64> {
    let mut kernel = vec![Complex::new(0.0, 0.0); len];
    for (k, slot) in kernel.iter_mut().enumerate() {
        let n = k.min(len - k);
        slot.re = if n == 0 {
            0.25
        } else if n % 2 == 1 {
            -1.0 / (PI * PI * (n * n) as f64)
        } else {
            0.0
        };
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut kernel);
    kernel
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let w = match window {
                FilterWindow::Ramlak => 1.0,
                FilterWindow::Hann => {
                    let f = k.min(len - k) as f64 / len as f64;
                    0.5 * (1.0 + (2.0 * PI * f).cos())
                }
            };
            h.re * w
        })
        .collect()
}

/// Cosine-weighted, ramp-filtered projections (same layout as the input).
pub fn filter_projections(b: &Sinogram, geom: &ConeBeamGeometry, cfg: &FdkConfig) -> Result<Sinogram> {
    let (nu, nv) = (geom.nu(), geom.nv());
    let pad = cfg.pad_length(nu)?;
    let response = ramp_response(pad, cfg.window);
    let tau = geom.du() * geom.sod() / geom.sdd();
    let sdd2 = geom.sdd() * geom.sdd();

    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(pad);
    let inverse = planner.plan_fft_inverse(pad);
    let scale = 1.0 / (tau * pad as f64);

    let mut out = b.clone();
    out.data_mut().par_chunks_mut(nu).enumerate().for_each_init(
        || vec![Complex::new(0.0, 0.0); pad],
        |buf, (row, values)| {
            let v = geom.v_offset(row % nv);
            for (u, slot) in buf.iter_mut().enumerate() {
                *slot = if u < nu {
                    let uo = geom.u_offset(u);
                    Complex::new(values[u] * geom.sdd() / (sdd2 + uo * uo + v * v).sqrt(), 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            forward.process(buf);
            buf.iter_mut().zip(&response).for_each(|(c, h)| *c *= h);
            inverse.process(buf);
            for (value, c) in values.iter_mut().zip(buf.iter()) {
                *value = c.re * scale;
            }
        },
    );
    Ok(out)
}

pub fn fdk(b: &Sinogram, geom: &ConeBeamGeometry, cfg: &FdkConfig) -> Result<Volume> {
    b.check_geometry(geom)?;
    if geom.num_views() < 2 {
        return Err(Error::invalid("num_views", "FDK needs at least 2 views"));
    }
    let filtered = filter_projections(b, geom, cfg)?;

    let (nx, ny) = (geom.nx(), geom.ny());
    let (nu, nv) = (geom.nu() as isize, geom.nv() as isize);
    let (sod, sdd) = (geom.sod(), geom.sdd());
    let (u_half, v_half) = ((nu as f64 - 1.0) / 2.0, (nv as f64 - 1.0) / 2.0);
    let trig: Vec<(f64, f64)> = geom.angles().iter().map(|a| a.sin_cos()).collect();
    let scale = PI / geom.num_views() as f64;

    let sample = |view: usize, gu: f64, gv: f64| -> f64 {
        if gu <= -1.0 || gv <= -1.0 || gu >= nu as f64 || gv >= nv as f64 {
            return 0.0;
        }
        let (u0, v0) = (gu.floor(), gv.floor());
        let (wu, wv) = (gu - u0, gv - v0);
        let (u0, v0) = (u0 as isize, v0 as isize);
        let proj = filtered.view(view);
        let at = |u: isize, v: isize| {
            if u < 0 || v < 0 || u >= nu || v >= nv {
                0.0
            } else {
                proj[(u + nu * v) as usize]
            }
        };
        (1.0 - wv) * ((1.0 - wu) * at(u0, v0) + wu * at(u0 + 1, v0))
            + wv * ((1.0 - wu) * at(u0, v0 + 1) + wu * at(u0 + 1, v0 + 1))
    };

    let mut vol = Volume::for_geometry(geom);
    vol.data_mut().par_chunks_mut(nx * ny).enumerate().for_each(|(iz, plane)| {
        for iy in 0..ny {
            for ix in 0..nx {
                let [x, y, z] = geom.voxel_center(ix, iy, iz);
                let mut acc = 0.0;
                for (view, &(s, c)) in trig.iter().enumerate() {
                    let depth = sod - (x * c + y * s);
                    let lateral = -x * s + y * c;
                    let mag = sdd / depth;
                    let gu = lateral * mag / geom.du() + u_half;
                    let gv = z * mag / geom.dv() + v_half;
                    acc += sod * sod / (depth * depth) * sample(view, gu, gv);
                }
                plane[ix + nx * iy] = acc * scale;
            }
        }
    });
    Ok(vol)
}
