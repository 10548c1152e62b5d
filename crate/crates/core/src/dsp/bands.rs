use serde::{Deserialize, Serialize};

use super::welch::Psd;
use crate::error::{Error, Result};

/// A frequency band `[low, high)`, or `[low, high]` when `upper_inclusive`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDefinition {
    pub name: String,
    pub low: f64,
    pub high: f64,
    #[serde(default)]
    pub upper_inclusive: bool,
}

impl BandDefinition {
    pub fn new(name: &str, low: f64, high: f64, upper_inclusive: bool) -> Self {
        BandDefinition {
            name: name.to_string(),
            low,
            high,
            upper_inclusive,
        }
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.low && (f < self.high || (self.upper_inclusive && f == self.high))
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

pub const N_BANDS: usize = 5;
pub const BAND_NAMES: [&str; N_BANDS] = ["delta", "theta", "alpha", "beta", "gamma"];

/// Delta 1-4, theta 4-8, alpha 8-13, beta 13-30, gamma 30-50 Hz. Shared
/// edges belong to the upper band; gamma includes 50 Hz.
pub fn default_bands() -> [BandDefinition; N_BANDS] {
    [
        BandDefinition::new("delta", 1.0, 4.0, false),
        BandDefinition::new("theta", 4.0, 8.0, false),
        BandDefinition::new("alpha", 8.0, 13.0, false),
        BandDefinition::new("beta", 13.0, 30.0, false),
        BandDefinition::new("gamma", 30.0, 50.0, true),
    ]
}

/// Checks that the bands are well formed and tile one contiguous interval.
pub fn validate_bands(bands: &[BandDefinition]) -> Result<()> {
    for b in bands {
        if !(b.low >= 1.0 && b.low < b.high && b.high <= 50.0) {
            return Err(Error::config(format!(
                "band {} [{}, {}] outside 1..=50 Hz or empty",
                b.name, b.low, b.high
            )));
        }
    }
    for pair in bands.windows(2) {
        if pair[0].high != pair[1].low || pair[0].upper_inclusive {
            return Err(Error::config(format!(
                "bands {} and {} do not tile without overlap",
                pair[0].name, pair[1].name
            )));
        }
    }
    Ok(())
}

/// Rectangle-rule band powers: `sum(density) * df` over the bins whose
/// centre lies in each band.
pub fn band_powers(psd: &Psd, bands: &[BandDefinition; N_BANDS]) -> Result<[f64; N_BANDS]> {
    let top = bands.iter().map(|b| b.high).fold(0.0, f64::max);
    if psd.freqs.last().map_or(true, |&f| f < top) {
        return Err(Error::invalid(format!("PSD grid does not reach {top} Hz")));
    }
    let df = psd.bin_width();
    let mut out = [0.0; N_BANDS];
    for (f, d) in psd.iter() {
        if let Some(i) = bands.iter().position(|b| b.contains(f)) {
            out[i] += d;
        }
    }
    for v in out.iter_mut() {
        *v *= df;
    }
    Ok(out)
}

/// Divides each band power by their sum; an all-zero vector stays zero.
pub fn to_relative(powers: [f64; N_BANDS]) -> [f64; N_BANDS] {
    let total: f64 = powers.iter().sum();
    if total > 0.0 {
        powers.map(|p| p / total)
    } else {
        powers
    }
}
