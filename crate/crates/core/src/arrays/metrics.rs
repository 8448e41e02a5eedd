use super::Grid3;
use crate::error::{Error, Result};

/// Mean squared difference, accumulated in f64.
pub fn mse<A: Grid3 + ?Sized, B: Grid3 + ?Sized>(a: &A, b: &B) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("{:?}", a.dims()), format!("{:?}", b.dims())));
    }
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / n as f64)
}

/// Peak signal-to-noise ratio in dB; `+∞` for identical arrays.
pub fn psnr<A: Grid3 + ?Sized, B: Grid3 + ?Sized>(a: &A, b: &B, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid("peak", format!("must be > 0, got {peak}")));
    }
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}
