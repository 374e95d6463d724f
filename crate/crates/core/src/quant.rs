//! Fixed-point quantization at scale `alpha = 2^s` and the integer
//! requantization contract shared by the circuit and the witness engine.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::FieldConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("invalid quantization config: {0}")]
    Config(String),
    #[error("element {index} ({value}) quantizes to {quantized}, outside the {kappa}-bit signed budget")]
    Overflow {
        index: usize,
        value: f64,
        quantized: i128,
        kappa: u32,
    },
    #[error("element {index} is not finite")]
    NonFinite { index: usize },
    #[error("product {ab} outside the requantization window [{lo}, {hi}]")]
    Window { ab: i128, lo: i128, hi: i128 },
}

/// Where the divide-by-alpha happens inside a dot product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleMode {
    /// Sum all products at scale alpha^2, then requantize once per output.
    #[default]
    Accumulate,
    /// Requantize every scalar product, then sum at scale alpha.
    PerProduct,
}

impl RescaleMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Accumulate => "accumulate",
            Self::PerProduct => "per_product",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "accumulate" => Some(Self::Accumulate),
            "per_product" => Some(Self::PerProduct),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    /// `alpha = 2^scale_exponent`.
    pub scale_exponent: u32,
    /// Quotient width: requantization inputs must lie in
    /// `[-alpha * 2^(nu-1), alpha * 2^(nu-1) - 1]`.
    pub nu: u32,
    /// Signed activation budget and comparison range-check width.
    pub kappa: u32,
    /// Largest magnitude of a real-valued model input.
    pub input_bound: f64,
    pub rescale: RescaleMode,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            scale_exponent: 16,
            nu: 32,
            kappa: 32,
            input_bound: 1.0,
            rescale: RescaleMode::Accumulate,
        }
    }
}

impl QuantConfig {
    pub fn new(scale_exponent: u32, nu: u32, kappa: u32) -> Self {
        Self {
            scale_exponent,
            nu,
            kappa,
            ..Self::default()
        }
    }

    pub fn alpha(&self) -> i64 {
        1i64 << self.scale_exponent
    }

    /// `alpha * 2^(nu-1)`, the translation applied before the division.
    pub fn shift(&self) -> i128 {
        (self.alpha() as i128) << (self.nu - 1)
    }

    /// Largest magnitude allowed in a κ-budget tensor.
    pub fn budget(&self) -> i64 {
        (1i64 << (self.kappa - 1)) - 1
    }

    /// Signed width of the in-circuit range check on model inputs: the
    /// smallest `b` whose signed range covers `floor(alpha * x)` for all
    /// `|x| <= input_bound`.
    pub fn input_bits(&self) -> u32 {
        let hi = (self.alpha() as f64 * self.input_bound).ceil() as i128;
        let mut b = 2;
        while (1i128 << (b - 1)) < hi + 1 {
            b += 1;
        }
        b
    }

    pub fn validate(&self, field: &FieldConfig) -> Result<(), QuantError> {
        let bad = |m: String| Err(QuantError::Config(m));
        let s = self.scale_exponent;
        if s == 0 || s > 40 {
            return bad(format!("scale exponent {s} outside 1..=40"));
        }
        if self.kappa < 2 || self.kappa > 62 {
            return bad(format!("kappa {} outside 2..=62", self.kappa));
        }
        if self.kappa > self.nu {
            return bad(format!("kappa {} exceeds nu {}", self.kappa, self.nu));
        }
        if self.nu > 62 {
            return bad(format!("nu {} too large", self.nu));
        }
        let half = (field.modulus() as u128 - 1) / 2;
        let window = (self.alpha() as u128) << self.nu;
        if window >= half {
            return bad(format!(
                "alpha * 2^nu = 2^{} must be below (p-1)/2 for p = {}",
                s + self.nu,
                field.modulus()
            ));
        }
        if !(self.input_bound.is_finite() && self.input_bound > 0.0) {
            return bad(format!("input_bound {} must be positive", self.input_bound));
        }
        if self.input_bits() > self.kappa {
            return bad(format!(
                "inputs up to {} need {} signed bits, above kappa {}",
                self.input_bound,
                self.input_bits(),
                self.kappa
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub data: Vec<i64>,
    pub shape: Vec<usize>,
    pub scale_exponent: u32,
}

/// Elementwise `floor(alpha * z)`.
pub fn quantize(z: &[f64], shape: &[usize], cfg: &QuantConfig) -> Result<QuantizedTensor, QuantError> {
    let alpha = cfg.alpha() as f64;
    let budget = cfg.budget() as i128;
    let data = z
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if !value.is_finite() {
                return Err(QuantError::NonFinite { index });
            }
            // alpha is a power of two, so the product is exact unless it overflows the mantissa.
            let q = (alpha * value).floor();
            let quantized = if q.abs() < 1e30 { q as i128 } else { i128::MAX };
            if quantized.abs() > budget {
                return Err(QuantError::Overflow {
                    index,
                    value,
                    quantized,
                    kappa: cfg.kappa,
                });
            }
            Ok(quantized as i64)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QuantizedTensor {
        data,
        shape: shape.to_vec(),
        scale_exponent: cfg.scale_exponent,
    })
}

pub fn dequantize(t: &QuantizedTensor) -> Vec<f64> {
    let alpha = (1u64 << t.scale_exponent) as f64;
    t.data.iter().map(|&e| e as f64 / alpha).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Requantized {
    /// `floor(ab / alpha)`.
    pub q: i64,
    /// `q + 2^(nu-1)`, nonnegative.
    pub q_sharp: u64,
    pub r: u64,
}

/// Split `ab + alpha * 2^(nu-1) = alpha * q_sharp + r` with `0 <= r < alpha`.
pub fn requantize_int(ab: i128, cfg: &QuantConfig) -> Result<Requantized, QuantError> {
    let shift = cfg.shift();
    if ab < -shift || ab > shift - 1 {
        return Err(QuantError::Window {
            ab,
            lo: -shift,
            hi: shift - 1,
        });
    }
    let alpha = cfg.alpha() as i128;
    let translated = ab + shift;
    let q_sharp = translated / alpha;
    let r = translated % alpha;
    Ok(Requantized {
        q: (q_sharp - (1i128 << (cfg.nu - 1))) as i64,
        q_sharp: q_sharp as u64,
        r: r as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s4() -> QuantConfig {
        QuantConfig::new(4, 8, 8)
    }

    #[test]
    fn quantize_examples() {
        let cfg = s4();
        assert_eq!(quantize(&[1.5, -0.1, 0.0], &[3], &cfg).unwrap().data, vec![24, -2, 0]);
        let t = QuantizedTensor {
            data: vec![24, -2],
            shape: vec![2],
            scale_exponent: 4,
        };
        assert_eq!(dequantize(&t), vec![1.5, -0.125]);
    }

    #[test]
    fn quantize_overflow_names_element() {
        let cfg = s4();
        // budget is 127; 8.0 * 16 = 128
        match quantize(&[0.0, 8.0], &[2], &cfg) {
            Err(QuantError::Overflow { index, quantized, .. }) => {
                assert_eq!(index, 1);
                assert_eq!(quantized, 128);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            quantize(&[f64::NAN], &[1], &cfg),
            Err(QuantError::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn requantize_examples() {
        let cfg = s4();
        let r = requantize_int(192, &cfg).unwrap();
        assert_eq!((r.q, r.q_sharp, r.r), (12, 140, 0));
        let r = requantize_int(35, &cfg).unwrap();
        assert_eq!((r.q, r.q_sharp, r.r), (2, 130, 3));
        let r = requantize_int(-35, &cfg).unwrap();
        assert_eq!((r.q, r.q_sharp, r.r), (-3, 125, 13));
    }

    #[test]
    fn requantize_window_edges() {
        let cfg = s4();
        // alpha * 2^(nu-1) = 16 * 128 = 2048
        assert!(requantize_int(-2048, &cfg).is_ok());
        assert!(requantize_int(2047, &cfg).is_ok());
        assert!(requantize_int(2048, &cfg).is_err());
        assert!(requantize_int(-2049, &cfg).is_err());
        assert_eq!(requantize_int(-2048, &cfg).unwrap().q_sharp, 0);
        assert_eq!(requantize_int(2047, &cfg).unwrap().q_sharp, 255);
    }

    #[test]
    fn config_validation() {
        let field = FieldConfig::mersenne61();
        assert!(QuantConfig::default().validate(&field).is_ok());
        assert_eq!(QuantConfig::default().input_bits(), 18);
        // 2^16 * 2^44 = 2^60 is not below (p-1)/2 = 2^60 - 1.
        assert!(QuantConfig::new(16, 44, 32).validate(&field).is_err());
        assert!(QuantConfig::new(16, 43, 32).validate(&field).is_ok());
        assert!(QuantConfig::new(16, 20, 32).validate(&field).is_err());
        assert!(QuantConfig::new(0, 32, 32).validate(&field).is_err());
        let small = FieldConfig::new(1_000_003, "f").unwrap();
        assert!(QuantConfig::new(4, 8, 8).validate(&small).is_ok());
        assert!(QuantConfig::new(4, 16, 8).validate(&small).is_err());
    }

    #[test]
    fn product_fidelity_at_s16() {
        let cfg = QuantConfig::default();
        let alpha = cfg.alpha() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let x: f64 = rng.random_range(-1.0..=1.0);
            let y: f64 = rng.random_range(-1.0..=1.0);
            let a = quantize(&[x], &[1], &cfg).unwrap().data[0] as i128;
            let b = quantize(&[y], &[1], &cfg).unwrap().data[0] as i128;
            let q = requantize_int(a * b, &cfg).unwrap().q as f64;
            assert!((q / alpha - x * y).abs() < 2f64.powi(-13));
        }
    }

    proptest! {
        #[test]
        fn requantize_identity(ab in -(1i128 << 47)..(1i128 << 47)) {
            let cfg = QuantConfig::default();
            let r = requantize_int(ab, &cfg).unwrap();
            let alpha = cfg.alpha() as i128;
            prop_assert_eq!(alpha * r.q as i128 + r.r as i128, ab);
            prop_assert!((r.r as i128) < alpha);
            prop_assert_eq!(r.q as i128, ab.div_euclid(alpha));
            prop_assert!(r.q_sharp < 1u64 << cfg.nu);
        }

        #[test]
        fn quantize_is_monotone_and_idempotent(a in -1000.0f64..1000.0, b in -1000.0f64..1000.0) {
            let cfg = QuantConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let q = quantize(&[lo, hi], &[2], &cfg).unwrap();
            prop_assert!(q.data[0] <= q.data[1]);
            let again = quantize(&dequantize(&q), &[2], &cfg).unwrap();
            prop_assert_eq!(again, q);
        }
    }
}
