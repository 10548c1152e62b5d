//! Welch power spectral density estimation.
//!
//! Segments of `nperseg` samples (stepping by `nperseg - noverlap`) are
//! multiplied by a periodic Hann window, transformed, and their one-sided
//! periodograms averaged. Density scaling is `|X_k|^2 / (fs * sum(w^2))`
//! with interior bins doubled, so that `sum(density) * df` equals the mean
//! over segments of `sum((x * w)^2) / sum(w^2)`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-sided PSD on a uniform frequency grid starting at 0 Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub density: Vec<f64>,
}

impl Psd {
    pub fn bin_width(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    /// `sum(density) * df` over all bins.
    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width()
    }

    /// Power over bins with centre frequency in `[low, high]`.
    pub fn power_between(&self, low: f64, high: f64) -> f64 {
        self.freqs
            .iter()
            .zip(&self.density)
            .filter(|(f, _)| **f >= low && **f <= high)
            .map(|(_, d)| d)
            .sum::<f64>()
            * self.bin_width()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.freqs.iter().copied().zip(self.density.iter().copied())
    }
}

pub fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reusable estimator: the FFT plan and window are built once.
pub struct Welch {
    nperseg: usize,
    noverlap: usize,
    sample_rate: f64,
    window: Vec<f64>,
    window_power: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Welch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Welch")
            .field("nperseg", &self.nperseg)
            .field("noverlap", &self.noverlap)
            .field("sample_rate", &self.sample_rate)
            .finish()
    }
}

impl Welch {
    pub fn new(sample_rate: f64, nperseg: usize, noverlap: usize) -> Result<Self> {
        if nperseg == 0 {
            return Err(Error::config("nperseg must be positive"));
        }
        if noverlap >= nperseg {
            return Err(Error::config(format!(
                "noverlap ({noverlap}) must be smaller than nperseg ({nperseg})"
            )));
        }
        if !(sample_rate > 0.0) {
            return Err(Error::config("sample rate must be positive"));
        }
        let window = periodic_hann(nperseg);
        let window_power = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(nperseg);
        Ok(Welch {
            nperseg,
            noverlap,
            sample_rate,
            window,
            window_power,
            fft,
        })
    }

    pub fn nperseg(&self) -> usize {
        self.nperseg
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn estimate(&self, x: &[f64]) -> Result<Psd> {
        let n = self.nperseg;
        if x.len() < n {
            return Err(Error::invalid(format!(
                "window of {} samples shorter than nperseg {n}",
                x.len()
            )));
        }
        let step = n - self.noverlap;
        let segments = (x.len() - n) / step + 1;
        let bins = n / 2 + 1;
        let mut acc = vec![0.0; bins];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for s in 0..segments {
            let seg = &x[s * step..s * step + n];
            for ((b, &v), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex64::new(v * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (a, c) in acc.iter_mut().zip(&buf) {
                *a += c.norm_sqr();
            }
        }
        let scale = 1.0 / (self.sample_rate * self.window_power * segments as f64);
        let nyquist = if n % 2 == 0 { Some(bins - 1) } else { None };
        for (k, a) in acc.iter_mut().enumerate() {
            *a *= scale;
            if k != 0 && Some(k) != nyquist {
                *a *= 2.0;
            }
        }
        let df = self.sample_rate / n as f64;
        Ok(Psd {
            freqs: (0..bins).map(|k| k as f64 * df).collect(),
            density: acc,
        })
    }
}

/// One-shot Welch estimate.
pub fn welch_psd(x: &[f64], sample_rate: f64, nperseg: usize, noverlap: usize) -> Result<Psd> {
    Welch::new(sample_rate, nperseg, noverlap)?.estimate(x)
}
