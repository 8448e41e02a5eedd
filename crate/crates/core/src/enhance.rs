//! Sinogram and image enhancement stages.
//!
//! A stage pairs an [`Enhancer`] with the domain it applies to and how the 3D
//! array is cut up: one 2D slice per view (sinograms), one per z-slice
//! (volumes), or the whole array at once. Slices are always taken along the
//! slowest axis. All boundaries are half-sample symmetric reflections.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arrays::{ArrayKind, CtArray};
use crate::error::{Error, Result};

pub const KNOWN_KINDS: [&str; 4] = ["identity", "gaussian", "median", "tv"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Enhancer {
    Identity,
    /// `sigma` in elements.
    Gaussian { sigma: f64 },
    /// Window of `(2·radius + 1)` elements per axis.
    Median { radius: usize },
    /// ROF denoising `min ‖u − f‖²/(2λ) + TV(u)` by Chambolle's projection.
    Tv { lambda: f64, iterations: usize },
}

impl Enhancer {
    pub fn kind(&self) -> &'static str {
        match self {
            Enhancer::Identity => "identity",
            Enhancer::Gaussian { .. } => "gaussian",
            Enhancer::Median { .. } => "median",
            Enhancer::Tv { .. } => "tv",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Enhancer::Identity => Ok(()),
            Enhancer::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::invalid("sigma", format!("must be finite and > 0, got {sigma}")))
            }
            Enhancer::Median { radius: 0 } => Err(Error::invalid("radius", "must be ≥ 1")),
            Enhancer::Tv { lambda, .. } if !(lambda > 0.0 && lambda.is_finite()) => {
                Err(Error::invalid("lambda", format!("must be finite and > 0, got {lambda}")))
            }
            Enhancer::Tv { iterations: 0, .. } => Err(Error::invalid("iterations", "must be ≥ 1")),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Enhancer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Enhancer::Identity => write!(f, "identity"),
            Enhancer::Gaussian { sigma } => write!(f, "gaussian(sigma={sigma})"),
            Enhancer::Median { radius } => write!(f, "median(radius={radius})"),
            Enhancer::Tv { lambda, iterations } => write!(f, "tv(lambda={lambda}, iterations={iterations})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Sinogram,
    Image,
}

impl Domain {
    fn name(self) -> &'static str {
        match self {
            Domain::Sinogram => "sinogram",
            Domain::Image => "image",
        }
    }

    fn kind(self) -> ArrayKind {
        match self {
            Domain::Sinogram => ArrayKind::Sinogram,
            Domain::Image => ArrayKind::Volume,
        }
    }

    pub fn default_slicing(self) -> Slicing {
        match self {
            Domain::Sinogram => Slicing::PerView,
            Domain::Image => Slicing::PerZSlice,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slicing {
    PerView,
    PerZSlice,
    Volumetric,
}

impl Slicing {
    fn name(self) -> &'static str {
        match self {
            Slicing::PerView => "per_view",
            Slicing::PerZSlice => "per_z_slice",
            Slicing::Volumetric => "volumetric",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnhancementStage {
    pub domain: Domain,
    pub enhancer: Enhancer,
    pub slicing: Slicing,
}

impl EnhancementStage {
    pub fn new(domain: Domain, enhancer: Enhancer, slicing: Slicing) -> Result<Self> {
        let stage = EnhancementStage { domain, enhancer, slicing };
        stage.validate()?;
        Ok(stage)
    }

    pub fn identity(domain: Domain) -> Self {
        EnhancementStage { domain, enhancer: Enhancer::Identity, slicing: domain.default_slicing() }
    }

    /// Gaussian `σ = 1` applied per view.
    pub fn default_sem() -> Self {
        EnhancementStage { domain: Domain::Sinogram, enhancer: Enhancer::Gaussian { sigma: 1.0 }, slicing: Slicing::PerView }
    }

    /// TV with `λ = 0.1`, 50 iterations, per z-slice.
    pub fn default_iem() -> Self {
        EnhancementStage {
            domain: Domain::Image,
            enhancer: Enhancer::Tv { lambda: 0.1, iterations: 50 },
            slicing: Slicing::PerZSlice,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.enhancer.validate()?;
        match (self.domain, self.slicing) {
            (_, Slicing::Volumetric) | (Domain::Sinogram, Slicing::PerView) | (Domain::Image, Slicing::PerZSlice) => Ok(()),
            (domain, slicing) => Err(Error::invalid(
                "slicing",
                format!("{} stages cannot slice {}", domain.name(), slicing.name()),
            )),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.enhancer == Enhancer::Identity
    }
}

impl fmt::Display for EnhancementStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} on {} ({})", self.enhancer, self.domain.name(), self.slicing.name())
    }
}

fn take_f64(section: &toml::Table, key: &str) -> Result<Option<f64>> {
    match section.get(key) {
        None => Ok(None),
        Some(toml::Value::Float(v)) => Ok(Some(*v)),
        Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
        Some(other) => Err(Error::invalid(key, format!("expected a number, got {other}"))),
    }
}

fn take_count(section: &toml::Table, key: &str) -> Result<Option<usize>> {
    match section.get(key) {
        None => Ok(None),
        Some(toml::Value::Integer(v)) if *v >= 0 => Ok(Some(*v as usize)),
        Some(other) => Err(Error::invalid(key, format!("expected a non-negative integer, got {other}"))),
    }
}

fn take_str<'a>(section: &'a toml::Table, key: &str) -> Result<Option<&'a str>> {
    match section.get(key) {
        None => Ok(None),
        Some(toml::Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(Error::invalid(key, format!("expected a string, got {other}"))),
    }
}

fn parse_enum<T: serde::de::DeserializeOwned>(key: &str, value: &str, valid: &str) -> Result<T> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(value))
        .map_err(|_| Error::invalid(key, format!("unknown value `{value}` (valid: {valid})")))
}

/// Parses a stage from a config table with keys `kind`, the kind's parameters,
/// and optional `domain` and `slicing`.
///
/// `domain` may be omitted when `default_domain` is given (the `[sem]` and
/// `[iem]` sections imply theirs). Missing parameters take the defaults
/// `sigma = 1`, `radius = 1`, `lambda = 0.1`, `iterations = 50`.
pub fn load_enhancer(section: &toml::Table, default_domain: Option<Domain>) -> Result<EnhancementStage> {
    let kind = take_str(section, "kind")?.unwrap_or("identity");
    let allowed: &[&str] = match kind {
        "identity" => &[],
        "gaussian" => &["sigma"],
        "median" => &["radius"],
        "tv" => &["lambda", "iterations"],
        other => {
            return Err(Error::invalid(
                "kind",
                format!("unknown enhancer `{other}` (known: {})", KNOWN_KINDS.join(", ")),
            ))
        }
    };
    if let Some(key) = section
        .keys()
        .find(|k| !["kind", "domain", "slicing"].contains(&k.as_str()) && !allowed.contains(&k.as_str()))
    {
        return Err(Error::invalid(key, format!("not a parameter of `{kind}`")));
    }

    let enhancer = match kind {
        "gaussian" => Enhancer::Gaussian { sigma: take_f64(section, "sigma")?.unwrap_or(1.0) },
        "median" => Enhancer::Median { radius: take_count(section, "radius")?.unwrap_or(1) },
        "tv" => Enhancer::Tv {
            lambda: take_f64(section, "lambda")?.unwrap_or(0.1),
            iterations: take_count(section, "iterations")?.unwrap_or(50),
        },
        _ => Enhancer::Identity,
    };
    let domain = match take_str(section, "domain")? {
        Some(d) => parse_enum("domain", d, "sinogram, image")?,
        None => default_domain.ok_or_else(|| Error::invalid("domain", "missing (expected sinogram or image)"))?,
    };
    let slicing = match take_str(section, "slicing")? {
        Some(s) => parse_enum("slicing", s, "per_view, per_z_slice, volumetric")?,
        None => domain.default_slicing(),
    };
    EnhancementStage::new(domain, enhancer, slicing)
}

/// Applies `stage` to an array of the matching kind; output has the same shape.
pub fn enhance(stage: &EnhancementStage, array: &CtArray) -> Result<CtArray> {
    stage.validate()?;
    if array.kind() != stage.domain.kind() {
        return Err(Error::shape(
            format!("a {} array for a {} stage", stage.domain.kind(), stage.domain.name()),
            format!("a {} array", array.kind()),
        ));
    }
    if stage.is_identity() {
        return Ok(array.clone());
    }
    let grid = array.grid();
    let data = apply(&stage.enhancer, stage.slicing, grid.data(), grid.dims());
    Ok(match array {
        CtArray::Volume(v) => CtArray::Volume(v.with_data(data)),
        CtArray::Sinogram(s) => CtArray::Sinogram(s.with_data(data)),
    })
}

fn apply(enhancer: &Enhancer, slicing: Slicing, data: &[f64], dims: [usize; 3]) -> Vec<f64> {
    match slicing {
        Slicing::Volumetric => apply_block(enhancer, data, &dims),
        Slicing::PerView | Slicing::PerZSlice => {
            let plane = dims[0] * dims[1];
            let slices: Vec<Vec<f64>> =
                data.par_chunks(plane).map(|s| apply_block(enhancer, s, &dims[..2])).collect();
            slices.concat()
        }
    }
}

fn apply_block(enhancer: &Enhancer, data: &[f64], dims: &[usize]) -> Vec<f64> {
    match *enhancer {
        Enhancer::Identity => data.to_vec(),
        Enhancer::Gaussian { sigma } => gaussian(data, dims, sigma),
        Enhancer::Median { radius } => median(data, dims, radius),
        Enhancer::Tv { lambda, iterations } => tv_chambolle(data, dims, lambda, iterations),
    }
}

/// Half-sample symmetric reflection of `i` into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for a in 1..dims.len() {
        s[a] = s[a - 1] * dims[a - 1];
    }
    s
}

fn coords(mut i: usize, dims: &[usize]) -> [usize; 3] {
    let mut c = [0; 3];
    for (a, &n) in dims.iter().enumerate() {
        c[a] = i % n;
        i /= n;
    }
    c
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let raw: Vec<f64> = (-radius..=radius).map(|o| (-(o * o) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn gaussian(data: &[f64], dims: &[usize], sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let stride = strides(dims);
    let mut current = data.to_vec();
    for axis in 0..dims.len() {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let src = &current;
        let next: Vec<f64> = (0..src.len())
            .into_par_iter()
            .map(|i| {
                let c = coords(i, dims)[axis];
                let base = i - c * stride[axis];
                kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * src[base + reflect(c as isize + k as isize - radius, n) * stride[axis]])
                    .sum()
            })
            .collect();
        current = next;
    }
    current
}

fn median(data: &[f64], dims: &[usize], radius: usize) -> Vec<f64> {
    let stride = strides(dims);
    let r = radius as isize;
    let side = 2 * radius + 1;
    let window = side.pow(dims.len() as u32);
    (0..data.len())
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(window),
            |values, i| {
                let c = coords(i, dims);
                values.clear();
                for k in 0..window {
                    let mut offset = k;
                    let mut index = 0;
                    for a in 0..dims.len() {
                        let o = (offset % side) as isize - r;
                        offset /= side;
                        index += reflect(c[a] as isize + o, dims[a]) * stride[a];
                    }
                    values.push(data[index]);
                }
                let mid = window / 2;
                *values.select_nth_unstable_by(mid, f64::total_cmp).1
            },
        )
        .collect()
}

/// Forward differences with a zero difference at the last index (Neumann boundary).
fn gradient(u: &[f64], dims: &[usize], stride: &[usize], out: &mut [Vec<f64>]) {
    for (a, g) in out.iter_mut().enumerate() {
        for (i, gi) in g.iter_mut().enumerate() {
            let c = coords(i, dims)[a];
            *gi = if c + 1 < dims[a] { u[i + stride[a]] - u[i] } else { 0.0 };
        }
    }
}

/// Negative adjoint of [`gradient`]; sums to zero over the block.
fn divergence(p: &[Vec<f64>], dims: &[usize], stride: &[usize], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (a, pa) in p.iter().enumerate() {
        for (i, o) in out.iter_mut().enumerate() {
            let c = coords(i, dims)[a];
            let here = if c + 1 < dims[a] { pa[i] } else { 0.0 };
            let before = if c > 0 { pa[i - stride[a]] } else { 0.0 };
            *o += here - before;
        }
    }
}

/// Chambolle's dual projection for ROF, `τ = 1/(4·ndim)` (1/8 on slices).
fn tv_chambolle(f: &[f64], dims: &[usize], lambda: f64, iterations: usize) -> Vec<f64> {
    let n = f.len();
    let ndim = dims.len();
    let stride = strides(dims);
    let tau = 1.0 / (4.0 * ndim as f64);
    let mut p = vec![vec![0.0; n]; ndim];
    let mut g = vec![vec![0.0; n]; ndim];
    let mut div = vec![0.0; n];
    let mut w = vec![0.0; n];
    for _ in 0..iterations {
        divergence(&p, dims, &stride, &mut div);
        for i in 0..n {
            w[i] = div[i] - f[i] / lambda;
        }
        gradient(&w, dims, &stride, &mut g);
        for i in 0..n {
            let mag = (0..ndim).map(|a| g[a][i] * g[a][i]).sum::<f64>().sqrt();
            let denom = 1.0 + tau * mag;
            for a in 0..ndim {
                p[a][i] = (p[a][i] + tau * g[a][i]) / denom;
            }
        }
    }
    divergence(&p, dims, &stride, &mut div);
    f.iter().zip(&div).map(|(fi, d)| fi - lambda * d).collect()
}
