use ndarray::{Array2, ArrayView2};

use super::SpectrogramGeometry;
use crate::error::{Error, Result};

/// `log(1 + |X|)` magnitudes on a known geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMagnitude {
    pub values: Array2<f64>,
    pub geometry: SpectrogramGeometry,
}

pub fn compress(mag: ArrayView2<f64>, geometry: SpectrogramGeometry) -> Result<CompressedMagnitude> {
    if let Some(v) = mag.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "magnitudes must be finite and non-negative, found {v}"
        )));
    }
    Ok(CompressedMagnitude {
        values: mag.mapv(f64::ln_1p),
        geometry,
    })
}

/// Inverse of [`compress`], clipped at zero.
pub fn decompress(cm: &CompressedMagnitude) -> Array2<f64> {
    cm.values.mapv(|v| v.exp_m1().max(0.0))
}
