//! Fixed-point tensors and uniform quantizers.
//!
//! Weights use unsigned b-bit codes on a uniform grid over [-s, +s] with the
//! code 2^(b-1) reserved as the zero reference: the crossbar recovers signed
//! values by subtracting a dummy column programmed with that code, so the
//! effective weight of code c is (c - 2^(b-1)) * step. Activations are plain
//! unsigned 8-bit codes over [0, max].

use crate::error::{Error, Result};

pub const ACT_BITS: u8 = 8;

/// Fixed-point tensor: unsigned codes plus the grid that maps them back to
/// real values.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    pub shape: Vec<usize>,
    pub codes: Vec<u16>,
    pub bits: u8,
    /// Grid step in real units. Always > 0.
    pub scale: f64,
}

impl QTensor {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// The reserved zero-reference code for signed (weight) tensors.
    pub fn dummy_code(&self) -> u16 {
        1 << (self.bits - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let n: usize = self.shape.iter().product();
        if n != self.codes.len() {
            return Err(Error::Shape(format!(
                "codes length {} != shape product {}",
                self.codes.len(),
                n
            )));
        }
        if !(self.scale > 0.0) {
            return Err(Error::Invalid(format!("scale must be > 0, got {}", self.scale)));
        }
        let limit = 1u16 << self.bits;
        if let Some(c) = self.codes.iter().find(|&&c| c >= limit) {
            return Err(Error::Invalid(format!("code {c} out of range for {} bits", self.bits)));
        }
        Ok(())
    }
}

fn check_weight_bits(bits: u8) -> Result<()> {
    if !(2..=8).contains(&bits) {
        return Err(Error::Invalid(format!("weight bits must be in 2..=8, got {bits}")));
    }
    Ok(())
}

/// Step of the signed weight grid for range [-s, +s]: 2s / (2^b - 1).
pub fn weight_step(bits: u8, s: f64) -> f64 {
    2.0 * s / ((1u32 << bits) - 1) as f64
}

/// Quantizes real weights to b-bit codes, auto-scaled to the max magnitude.
///
/// An all-zero tensor falls back to range s = 1 so the scale stays positive.
pub fn quantize_weights(w: &[f32], shape: &[usize], bits: u8) -> Result<QTensor> {
    let s = w.iter().fold(0.0f64, |m, &x| m.max((x as f64).abs()));
    quantize_weights_scaled(w, shape, bits, if s > 0.0 { s } else { 1.0 })
}

/// Quantizes real weights to b-bit codes on the grid for [-s, +s].
pub fn quantize_weights_scaled(w: &[f32], shape: &[usize], bits: u8, s: f64) -> Result<QTensor> {
    check_weight_bits(bits)?;
    if w.is_empty() {
        return Err(Error::Invalid("cannot quantize an empty weight array".into()));
    }
    if !(s > 0.0) {
        return Err(Error::Invalid(format!("weight range must be > 0, got {s}")));
    }
    let step = weight_step(bits, s);
    let dummy = 1i64 << (bits - 1);
    let max_code = (1i64 << bits) - 1;
    let codes = w
        .iter()
        .map(|&x| {
            let c = dummy + (x as f64 / step).round() as i64;
            c.clamp(0, max_code) as u16
        })
        .collect();
    let qt = QTensor { shape: shape.to_vec(), codes, bits, scale: step };
    qt.validate()?;
    Ok(qt)
}

/// Real value of a signed weight code: (c - dummy) * step.
pub fn dequantize_weight(qt: &QTensor, idx: usize) -> f64 {
    (qt.codes[idx] as i64 - qt.dummy_code() as i64) as f64 * qt.scale
}

pub fn dequantize_weights(qt: &QTensor) -> Vec<f64> {
    (0..qt.len()).map(|i| dequantize_weight(qt, i)).collect()
}

/// Quantizes non-negative activations to unsigned 8-bit codes over [0, max].
pub fn quantize_activations(a: &[f64], shape: &[usize]) -> Result<QTensor> {
    let max = a.iter().fold(0.0f64, |m, &x| m.max(x));
    quantize_activations_scaled(a, shape, if max > 0.0 { max } else { 1.0 })
}

/// Quantizes non-negative activations over the fixed range [0, max].
pub fn quantize_activations_scaled(a: &[f64], shape: &[usize], max: f64) -> Result<QTensor> {
    if let Some(&bad) = a.iter().find(|&&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::Invalid(format!(
            "activations must be finite and non-negative (post-ReLU), got {bad}"
        )));
    }
    if !(max > 0.0) {
        return Err(Error::Invalid(format!("activation range must be > 0, got {max}")));
    }
    let levels = ((1u32 << ACT_BITS) - 1) as f64;
    let step = max / levels;
    let codes = a
        .iter()
        .map(|&x| ((x / step).round() as i64).clamp(0, levels as i64) as u16)
        .collect();
    let qt = QTensor { shape: shape.to_vec(), codes, bits: ACT_BITS, scale: step };
    qt.validate()?;
    Ok(qt)
}

/// Real value of an unsigned activation code: c * step.
pub fn dequantize_activation(qt: &QTensor, idx: usize) -> f64 {
    qt.codes[idx] as f64 * qt.scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::KeyedRng;

    /// Brute-force nearest-level search over all signed weight codes.
    /// Ties break away from zero, matching round-half-away semantics.
    fn nearest_weight_code(x: f64, bits: u8, step: f64) -> u16 {
        let dummy = 1i64 << (bits - 1);
        let mut best = 0u16;
        let mut best_d = f64::INFINITY;
        for c in 0..(1u16 << bits) {
            let v = (c as i64 - dummy) as f64 * step;
            let d = (v - x).abs();
            let better = d < best_d
                || (d == best_d && {
                    let vb = (best as i64 - dummy) as f64 * step;
                    v.abs() > vb.abs()
                });
            if better {
                best = c;
                best_d = d;
            }
        }
        best
    }

    #[test]
    fn zero_maps_to_dummy_code() {
        let qt = quantize_weights_scaled(&[0.0], &[1], 2, 1.0).unwrap();
        assert_eq!(qt.codes, vec![2]);
        assert_eq!(dequantize_weight(&qt, 0), 0.0);
    }

    #[test]
    fn range_endpoints_two_bit() {
        let qt = quantize_weights(&[-1.0, 1.0], &[2], 2).unwrap();
        assert_eq!(qt.codes, vec![0, 3]);
        let step = qt.scale;
        for (i, &w) in [-1.0f64, 1.0].iter().enumerate() {
            let err = (dequantize_weight(&qt, i) - w).abs();
            assert!(err <= step + 1e-12, "endpoint error {err} > step {step}");
        }
    }

    #[test]
    fn weight_codes_match_bruteforce_nearest_level() {
        let mut rng = KeyedRng::new(11, &[0]);
        let w: Vec<f32> = (0..1500).map(|_| rng.uniform(-2.0, 2.0) as f32).collect();
        for bits in [2u8, 4, 8] {
            let qt = quantize_weights(&w, &[w.len()], bits).unwrap();
            let s = w.iter().fold(0.0f64, |m, &x| m.max((x as f64).abs()));
            let bound = s / ((1u32 << bits) - 1) as f64;
            for (i, &x) in w.iter().enumerate() {
                assert_eq!(
                    qt.codes[i],
                    nearest_weight_code(x as f64, bits, qt.scale),
                    "bits={bits} x={x}"
                );
                let err = (dequantize_weight(&qt, i) - x as f64).abs();
                assert!(err <= bound + 1e-12, "bits={bits} err {err} > {bound}");
            }
        }
    }

    #[test]
    fn requantization_at_same_scale_is_identity() {
        let mut rng = KeyedRng::new(12, &[0]);
        let w: Vec<f32> = (0..256).map(|_| rng.uniform(-1.5, 1.5) as f32).collect();
        let qt = quantize_weights(&w, &[w.len()], 4).unwrap();
        let s = qt.scale * ((1u32 << 4) - 1) as f64 / 2.0;
        let deq: Vec<f32> = dequantize_weights(&qt).iter().map(|&v| v as f32).collect();
        let qt2 = quantize_weights_scaled(&deq, &[deq.len()], 4, s).unwrap();
        assert_eq!(qt.codes, qt2.codes);

        let a: Vec<f64> = (0..256).map(|_| rng.uniform(0.0, 3.0)).collect();
        let qa = quantize_activations(&a, &[a.len()]).unwrap();
        let max = qa.scale * 255.0;
        let da: Vec<f64> = (0..qa.len()).map(|i| dequantize_activation(&qa, i)).collect();
        let qa2 = quantize_activations_scaled(&da, &[da.len()], max).unwrap();
        assert_eq!(qa.codes, qa2.codes);
    }

    #[test]
    fn activation_endpoints_and_zeros() {
        let qt = quantize_activations(&[0.0, 0.0, 0.0], &[3]).unwrap();
        assert!(qt.codes.iter().all(|&c| c == 0));

        let qt = quantize_activations(&[0.0, 2.5], &[2]).unwrap();
        assert_eq!(qt.codes, vec![0, 255]);
    }

    #[test]
    fn activation_codes_match_bruteforce() {
        let mut rng = KeyedRng::new(13, &[0]);
        let a: Vec<f64> = (0..1200).map(|_| rng.uniform(0.0, 7.0)).collect();
        let qt = quantize_activations(&a, &[a.len()]).unwrap();
        for (i, &x) in a.iter().enumerate() {
            let mut best = 0u16;
            let mut best_d = f64::INFINITY;
            for c in 0..256u16 {
                let d = (c as f64 * qt.scale - x).abs();
                if d < best_d || (d == best_d && c > best) {
                    best = c;
                    best_d = d;
                }
            }
            assert_eq!(qt.codes[i], best, "x={x}");
            assert!((dequantize_activation(&qt, i) - x).abs() <= qt.scale / 2.0 + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(quantize_weights(&[], &[0], 4).is_err());
        assert!(quantize_weights(&[1.0], &[1], 1).is_err());
        assert!(quantize_weights(&[1.0], &[1], 9).is_err());
        assert!(quantize_activations(&[-0.1], &[1]).is_err());
    }
}
