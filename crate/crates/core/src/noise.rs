//! Transmission-domain Poisson dose simulation.
//!
//! A line integral `p` becomes an expected count `λ = i0·e^(−p)`; a Poisson
//! draw `n` is converted back with `−ln(max(n, floor)/i0)`. Each element has its
//! own ChaCha stream selected by its flat index, so output does not depend on
//! how the work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arrays::{Grid3, Sinogram};
use crate::error::{Error, Result};

pub const LOW_DOSE_I0: f64 = 1e4;
pub const CLINICAL_DOSE_I0: f64 = 1e6;
pub const DEFAULT_COUNT_FLOOR: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseModel {
    /// Expected unattenuated photon count per detector pixel.
    pub i0: f64,
    #[serde(default = "default_floor")]
    pub count_floor: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_floor() -> f64 {
    DEFAULT_COUNT_FLOOR
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DosePreset {
    Low,
    Clinical,
}

impl DosePreset {
    pub fn i0(self) -> f64 {
        match self {
            DosePreset::Low => LOW_DOSE_I0,
            DosePreset::Clinical => CLINICAL_DOSE_I0,
        }
    }
}

impl std::str::FromStr for DosePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(DosePreset::Low),
            "clinical" => Ok(DosePreset::Clinical),
            other => Err(Error::invalid("dose", format!("unknown preset `{other}` (expected low, clinical)"))),
        }
    }
}

impl DoseModel {
    pub fn new(i0: f64, count_floor: f64, seed: u64) -> Result<Self> {
        let model = DoseModel { i0, count_floor, seed };
        model.validate()?;
        Ok(model)
    }

    pub fn preset(preset: DosePreset, seed: u64) -> Self {
        DoseModel { i0: preset.i0(), count_floor: DEFAULT_COUNT_FLOOR, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i0.is_finite() && self.i0 > 0.0) {
            return Err(Error::invalid("i0", format!("must be finite and > 0, got {}", self.i0)));
        }
        if !(self.count_floor > 0.0 && self.count_floor < self.i0) {
            return Err(Error::invalid(
                "count_floor",
                format!("must satisfy 0 < count_floor < i0, got {}", self.count_floor),
            ));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        DoseModel { seed, ..self }
    }
}

/// Poisson count for element `index`, drawn from that element's private stream.
fn sample_count(model: &DoseModel, index: usize, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(index as u64);
    Poisson::new(lambda).map(|d| d.sample(&mut rng)).unwrap_or(0.0)
}

pub fn simulate_dose(clean: &Sinogram, model: &DoseModel) -> Result<Sinogram> {
    model.validate()?;
    if let Some(index) = clean.data().iter().position(|&p| p < 0.0) {
        return Err(Error::invalid(
            "sinogram",
            format!("line integrals must be ≥ 0 (element {index} is {})", clean.data()[index]),
        ));
    }
    let data: Vec<f64> = clean
        .data()
        .par_iter()
        .enumerate()
        .map(|(index, &p)| {
            let n = sample_count(model, index, model.i0 * (-p).exp());
            -(n.max(model.count_floor) / model.i0).ln()
        })
        .collect();
    Ok(clean.with_data(data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(value: f64, n: usize) -> Sinogram {
        Sinogram::from_data(1, 1, n, 1.0, 1.0, vec![value; n]).unwrap()
    }

    #[test]
    fn mean_count_matches_i0() {
        let model = DoseModel::new(1e6, 0.5, 42).unwrap();
        let n = 100_000;
        let total: f64 = (0..n).map(|i| sample_count(&model, i, 1e6)).sum();
        let mean = total / n as f64;
        let sigma = 1e3 / (n as f64).sqrt();
        assert!((mean - 1e6).abs() <= 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn same_seed_same_output() {
        let clean = constant(0.7, 5000);
        let model = DoseModel::preset(DosePreset::Low, 9);
        let a = simulate_dose(&clean, &model).unwrap();
        let b = simulate_dose(&clean, &model).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = simulate_dose(&clean, &model.with_seed(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn variance_follows_delta_method() {
        let n = 100_000;
        let clean = constant(1.0, n);
        let noisy = simulate_dose(&clean, &DoseModel::new(1e4, 0.5, 1).unwrap()).unwrap();
        let mean = noisy.data().iter().sum::<f64>() / n as f64;
        let var = noisy.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let expected = std::f64::consts::E / 1e4;
        assert!((var - expected).abs() <= 0.1 * expected, "{var} vs {expected}");
    }

    #[test]
    fn floor_keeps_output_finite() {
        // λ ≈ i0·e^-40 is effectively zero counts
        let noisy = simulate_dose(&constant(40.0, 100), &DoseModel::new(100.0, 0.5, 3).unwrap()).unwrap();
        assert!(noisy.data().iter().all(|v| v.is_finite()));
        assert!(noisy.data().iter().all(|&v| (v - (200f64).ln()).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(simulate_dose(&constant(-0.1, 3), &DoseModel::preset(DosePreset::Low, 0)).is_err());
        assert!(DoseModel::new(0.0, 0.5, 0).is_err());
        assert!(DoseModel::new(10.0, 10.0, 0).is_err());
        assert!(DoseModel::new(10.0, 0.0, 0).is_err());
        assert!("medium".parse::<DosePreset>().is_err());
        assert_eq!("clinical".parse::<DosePreset>().unwrap().i0(), 1e6);
    }
}
