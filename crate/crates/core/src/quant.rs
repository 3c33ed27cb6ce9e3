//! Per-batch scaled low-bit quantization of post-ReLU feature maps.

use crate::error::WireError;
use crate::tensor::{Real, Tensor};

pub const DEFAULT_BIT_WIDTH: u8 = 4;

/// A feature batch quantized with a single scale. The minimum is fixed at
/// zero, so `value ≈ code × scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBatch {
    pub shape: [usize; 4],
    pub codes: Vec<u8>,
    pub scale: f32,
    pub bit_width: u8,
    pub batch_id: u32,
}

/// Largest code for a bit width: `2^b - 1`.
pub fn max_level(bit_width: u8) -> Result<u8, WireError> {
    if !(1..=8).contains(&bit_width) {
        return Err(WireError::BitWidth(bit_width));
    }
    Ok(((1u16 << bit_width) - 1) as u8)
}

/// Code for one value under `scale`, rounding half away from zero and
/// clamping to `[0, levels]`.
fn code_of(value: f64, scale: f32, levels: u8) -> u8 {
    if scale == 0.0 {
        return 0;
    }
    (value / scale as f64).round().clamp(0.0, levels as f64) as u8
}

/// Quantizes a non-negative `N×C×H×W` batch: `scale = max / (2^b - 1)` and
/// `code = round(x / scale)`. An all-zero batch gets scale 0 and zero codes.
pub fn quantize_batch<T: Real>(features: &Tensor<T>, bit_width: u8, batch_id: u32) -> Result<QuantizedBatch, WireError> {
    let levels = max_level(bit_width)?;
    let shape: [usize; 4] = features.shape().try_into().map_err(|_| WireError::Shape(features.shape().to_vec()))?;
    let mut max = 0.0f64;
    for (index, v) in features.data().iter().enumerate() {
        let value = v.as_f64();
        if value < 0.0 || value.is_nan() {
            return Err(WireError::NegativeInput { index, value });
        }
        max = max.max(value);
    }
    let scale = (max / levels as f64) as f32;
    if !scale.is_finite() {
        return Err(WireError::Scale(scale));
    }
    let codes = features.data().iter().map(|v| code_of(v.as_f64(), scale, levels)).collect();
    Ok(QuantizedBatch { shape, codes, scale, bit_width, batch_id })
}

/// Restores `code × scale` values with the original shape.
pub fn dequantize_batch<T: Real>(q: &QuantizedBatch) -> Tensor<T> {
    let scale = T::from_f64(q.scale as f64);
    let data = q.codes.iter().map(|&c| T::from_f64(c as f64) * scale).collect();
    Tensor::new(q.shape.to_vec(), data).expect("quantized batch holds one code per element")
}

impl QuantizedBatch {
    pub fn batch_size(&self) -> usize {
        self.shape[0]
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Bits occupied by the codes alone: elements × bit width.
    pub fn feature_bits(&self) -> u64 {
        self.element_count() as u64 * self.bit_width as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(values: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[1, 1, 1, values.len()], values).unwrap()
    }

    #[test]
    fn exact_levels() {
        let q = quantize_batch(&batch(&[0.0, 3.0, 15.0]), 4, 0).unwrap();
        assert_eq!(q.scale, 1.0);
        assert_eq!(q.codes, [0, 3, 15]);
        assert_eq!(dequantize_batch::<f64>(&q).data(), [0.0, 3.0, 15.0]);
    }

    #[test]
    fn zero_batch() {
        let q = quantize_batch(&batch(&[0.0; 5]), 4, 0).unwrap();
        assert_eq!(q.scale, 0.0);
        assert!(q.codes.iter().all(|&c| c == 0));
        assert!(dequantize_batch::<f32>(&q).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_step_rounding() {
        let q = quantize_batch(&batch(&[7.5, 2.6, 0.25, 0.75]), 4, 0).unwrap();
        assert_eq!(q.scale, 0.5);
        assert_eq!(q.codes, [15, 5, 1, 2]);
        let back = dequantize_batch::<f64>(&q);
        assert!((back.data()[1] - 2.6).abs() <= 0.25 + 1e-12);
    }

    #[test]
    fn rejects_negative_and_bad_width() {
        assert!(matches!(quantize_batch(&batch(&[1.0, -0.1]), 4, 0), Err(WireError::NegativeInput { index: 1, .. })));
        assert_eq!(quantize_batch(&batch(&[1.0]), 0, 0).unwrap_err(), WireError::BitWidth(0));
        assert_eq!(quantize_batch(&batch(&[1.0]), 9, 0).unwrap_err(), WireError::BitWidth(9));
    }

    #[test]
    fn one_bit() {
        let q = quantize_batch(&batch(&[0.2, 0.6, 1.0]), 1, 0).unwrap();
        assert_eq!(q.codes, [0, 1, 1]);
        assert_eq!(q.feature_bits(), 3);
    }
}
