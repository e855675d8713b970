//! Statistical ADC offset model.
//!
//! Manufacturing mismatch in a column ADC's sense amplifiers shifts each
//! reference current away from its nominal value. The shift is modeled as a
//! zero-mean Gaussian whose sigma is inverted from a measured sense pass
//! rate: sigma = (step/2) / Phi^-1(p). Flash ADCs have one SA per reference
//! level with independent shifts; a SAR ADC reuses one SA, so all its levels
//! share one deviate (one direction) scaled by the per-level sigma.
//!
//! Fingerprints are generated by counter-based keyed streams on
//! (chip_seed, tile, adc, level), so regeneration is bit-exact and
//! independent of evaluation order.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{inv_norm_cdf, KeyedRng};

pub const TILE_COLUMNS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdcKind {
    Flash,
    Sar,
}

impl fmt::Display for AdcKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdcKind::Flash => write!(f, "flash"),
            AdcKind::Sar => write!(f, "sar"),
        }
    }
}

/// Sense pass rate per reference level (index 0 is level 1). Rates must stay
/// strictly within (0.5, 1]: at 0.5 the comparator is a coin flip and the
/// inverted sigma diverges.
#[derive(Debug, Clone, PartialEq)]
pub struct PassRateCurve {
    pub label: String,
    pub rates: Vec<f64>,
}

impl PassRateCurve {
    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() {
            return Err(Error::Invalid("pass-rate curve is empty".into()));
        }
        for (i, &p) in self.rates.iter().enumerate() {
            if !(p > 0.5 && p <= 1.0) {
                return Err(Error::Invalid(format!(
                    "pass rate at level {} is {p}, must be in (0.5, 1]",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Writes the curve as `level,pass_rate` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for (i, &p) in self.rates.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, p));
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(label: &str, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut rates = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (lvl, rate) = line.split_once(',').ok_or_else(|| {
                Error::Format(format!("pass-rate file line {}: expected level,rate", lineno + 1))
            })?;
            let lvl: usize = lvl.trim().parse().map_err(|_| {
                Error::Format(format!("pass-rate file line {}: bad level", lineno + 1))
            })?;
            if lvl != rates.len() + 1 {
                return Err(Error::Format(format!(
                    "pass-rate file line {}: levels must be consecutive from 1",
                    lineno + 1
                )));
            }
            let rate: f64 = rate.trim().parse().map_err(|_| {
                Error::Format(format!("pass-rate file line {}: bad rate", lineno + 1))
            })?;
            rates.push(rate);
        }
        let curve = PassRateCurve { label: label.to_string(), rates };
        curve.validate()?;
        Ok(curve)
    }
}

pub const WL_LABELS: &[&str] = &["WL4", "WL5", "WL6"];

/// Built-in pass-rate presets per sense-amplifier W/L sizing. Larger W/L
/// means less mismatch, so a pointwise higher curve; pass rate falls as the
/// partial-sum level (column current) rises. The numeric values are
/// calibration data, not measurements.
pub fn builtin_passrate_presets(wl_label: &str, levels: usize) -> Result<PassRateCurve> {
    let (hi, lo) = match wl_label {
        "WL4" => (0.970, 0.800),
        "WL5" => (0.985, 0.880),
        "WL6" => (0.995, 0.940),
        other => {
            return Err(Error::Invalid(format!(
                "unknown W/L preset '{other}' (known: {}); supply a curve file instead",
                WL_LABELS.join(", ")
            )))
        }
    };
    let rates = (0..levels)
        .map(|k| hi - (hi - lo) * k as f64 / (levels - 1) as f64)
        .collect();
    let curve = PassRateCurve { label: wl_label.to_string(), rates };
    curve.validate()?;
    Ok(curve)
}

/// A curve of all-ones: zero offset everywhere. Useful as a control chip.
pub fn perfect_passrate(levels: usize) -> PassRateCurve {
    PassRateCurve { label: "perfect".into(), rates: vec![1.0; levels] }
}

#[derive(Debug, Clone)]
pub struct AdcConfig {
    pub kind: AdcKind,
    /// Resolution in bits; reference count is 2^bits - 1.
    pub bits: u8,
    /// Partial-sum units per code step.
    pub level_spacing: f64,
    pub pass_rate: PassRateCurve,
    pub adcs_per_tile: usize,
    pub columns_per_adc: usize,
}

impl AdcConfig {
    /// 5-bit ADC over the 0..=128 psum range with 16 ADCs of 8 columns each.
    pub fn new(kind: AdcKind, pass_rate: PassRateCurve) -> Result<Self> {
        let bits = 5;
        let levels = (1usize << bits) - 1;
        let cfg = AdcConfig {
            kind,
            bits,
            level_spacing: TILE_COLUMNS as f64 / levels as f64,
            pass_rate,
            adcs_per_tile: 16,
            columns_per_adc: 8,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(kind: AdcKind, wl_label: &str) -> Result<Self> {
        let curve = builtin_passrate_presets(wl_label, (1usize << 5) - 1)?;
        Self::new(kind, curve)
    }

    pub fn ideal(kind: AdcKind) -> Self {
        Self::new(kind, perfect_passrate((1usize << 5) - 1)).unwrap()
    }

    pub fn levels(&self) -> usize {
        (1usize << self.bits) - 1
    }

    pub fn half_step(&self) -> f64 {
        self.level_spacing / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        self.pass_rate.validate()?;
        if self.pass_rate.rates.len() != self.levels() {
            return Err(Error::Invalid(format!(
                "curve has {} levels, {}-bit ADC needs {}",
                self.pass_rate.rates.len(),
                self.bits,
                self.levels()
            )));
        }
        if self.adcs_per_tile * self.columns_per_adc != TILE_COLUMNS {
            return Err(Error::Invalid(format!(
                "adcs_per_tile ({}) x columns_per_adc ({}) must cover {TILE_COLUMNS} columns",
                self.adcs_per_tile, self.columns_per_adc
            )));
        }
        if !(self.level_spacing > 0.0) {
            return Err(Error::Invalid("level spacing must be positive".into()));
        }
        Ok(())
    }

    /// Sigma of the reference shift at level index k (0-based).
    pub fn sigma(&self, k: usize) -> f64 {
        pass_rate_to_sigma(self.pass_rate.rates[k], self.half_step())
            .expect("validated curve rates are > 0.5")
    }

    /// Which ADC serves a given column.
    pub fn adc_of_column(&self, col: usize) -> usize {
        col / self.columns_per_adc
    }
}

/// Inverts a sense pass rate into the Gaussian sigma of the reference shift:
/// sigma = half_step / Phi^-1(p). A perfect pass rate means zero offset.
pub fn pass_rate_to_sigma(p: f64, half_step: f64) -> Result<f64> {
    if p == 1.0 {
        return Ok(0.0);
    }
    if !(p > 0.5 && p < 1.0) {
        return Err(Error::Invalid(format!(
            "pass rate {p} out of (0.5, 1]: sigma undefined"
        )));
    }
    Ok(half_step / inv_norm_cdf(p))
}

const TAG_FLASH: u64 = 0xadc0_f1a5;
const TAG_SAR: u64 = 0xadc0_5a12;

/// Per-chip reference-shift pattern: the stationary, unclonable part of a
/// chip instance. Fully determined by (chip_seed, config, tile_count).
#[derive(Debug, Clone)]
pub struct ChipFingerprint {
    pub chip_seed: u64,
    pub config: AdcConfig,
    pub tile_count: usize,
    /// shifts[(tile * adcs_per_tile + adc) * levels + level]
    shifts: Vec<f64>,
}

/// Draws the full offset pattern for one chip.
///
/// Flash: independent Gaussian per (tile, adc, level). SAR: one deviate per
/// (tile, adc) scaled by the per-level sigma, so every level of one SA
/// shifts in the same direction with magnitude growing like sigma(level).
pub fn gen_fingerprint(chip_seed: u64, config: &AdcConfig, tile_count: usize) -> ChipFingerprint {
    config.validate().expect("invalid ADC config");
    let levels = config.levels();
    let adcs = config.adcs_per_tile;
    let mut shifts = vec![0.0f64; tile_count * adcs * levels];
    for tile in 0..tile_count {
        for adc in 0..adcs {
            match config.kind {
                AdcKind::Flash => {
                    for k in 0..levels {
                        let z = KeyedRng::new(
                            chip_seed,
                            &[TAG_FLASH, tile as u64, adc as u64, k as u64],
                        )
                        .std_normal();
                        shifts[(tile * adcs + adc) * levels + k] = z * config.sigma(k);
                    }
                }
                AdcKind::Sar => {
                    let z = KeyedRng::new(chip_seed, &[TAG_SAR, tile as u64, adc as u64])
                        .std_normal();
                    for k in 0..levels {
                        shifts[(tile * adcs + adc) * levels + k] = z * config.sigma(k);
                    }
                }
            }
        }
    }
    ChipFingerprint { chip_seed, config: config.clone(), tile_count, shifts }
}

impl ChipFingerprint {
    #[inline]
    pub fn shift(&self, tile: usize, adc: usize, level: usize) -> f64 {
        self.shifts[(tile * self.config.adcs_per_tile + adc) * self.config.levels() + level]
    }

    /// Digitizes a partial sum through the (tile, adc) converter. The code is
    /// the count of shifted references strictly below the psum; a SAR binary
    /// search over the same monotone references lands on the same code.
    pub fn quantize(&self, psum: u32, tile: usize, adc: usize) -> u16 {
        let levels = self.config.levels();
        let base = (tile * self.config.adcs_per_tile + adc) * levels;
        let delta = self.config.level_spacing;
        let p = psum as f64;
        let mut code = 0u16;
        for k in 0..levels {
            if (k as f64 + 0.5) * delta + self.shifts[base + k] < p {
                code += 1;
            }
        }
        code
    }
}

/// Standalone form of the reference comparison, usable without a generated
/// fingerprint. `shifts` must hold one entry per level.
pub fn quantize_adc(psum: u32, config: &AdcConfig, shifts: &[f64]) -> Result<u16> {
    if psum as usize > TILE_COLUMNS {
        return Err(Error::Invalid(format!("psum {psum} exceeds {TILE_COLUMNS} rows")));
    }
    if shifts.len() != config.levels() {
        return Err(Error::Shape(format!(
            "{} shifts for a {}-level ADC",
            shifts.len(),
            config.levels()
        )));
    }
    let delta = config.level_spacing;
    let p = psum as f64;
    let mut code = 0u16;
    for (k, &s) in shifts.iter().enumerate() {
        if (k as f64 + 0.5) * delta + s < p {
            code += 1;
        }
    }
    Ok(code)
}

/// Simulates `trials` sensing events at one level: each trial draws a fresh
/// SA instance and checks the comparison of a psum half a step away from its
/// reference. The hit rate estimates the configured pass rate.
pub fn empirical_pass_rate(config: &AdcConfig, level: usize, trials: usize, seed: u64) -> f64 {
    let sigma = config.sigma(level);
    let half = config.half_step();
    let mut pass = 0usize;
    for t in 0..trials {
        let z = KeyedRng::new(seed, &[0x9a55, level as u64, t as u64]).std_normal();
        if sigma * z < half {
            pass += 1;
        }
    }
    pass as f64 / trials as f64
}
