//! Butterworth band-pass design and zero-phase (forward-backward) filtering.
//!
//! The filter is held as a cascade of second-order sections. Each section is
//! run in transposed direct form II. Forward-backward filtering follows the
//! usual recipe: odd reflection of the edges, then both passes start from the
//! steady-state section state scaled by the first sample of the pass, so a
//! constant input produces no start-up transient.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    /// Denominator with `a[0] == 1`.
    pub a: [f64; 3],
}

impl Biquad {
    /// Transposed direct form II state that this section settles into under a
    /// unit step input.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let y = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z2 = b2 - a2 * y;
        let z1 = y - b0;
        debug_assert!((z1 - (b1 - a1 * y + z2)).abs() < 1e-9);
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2])
            / (1.0 + z_inv * self.a[1] + z2 * self.a[2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    sections: Vec<Biquad>,
}

impl SosFilter {
    pub fn new(sections: Vec<Biquad>) -> Self {
        SosFilter { sections }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Number of poles in the cascade.
    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    /// Digital Butterworth band-pass of prototype order `order` (the cascade
    /// has `2 * order` poles) with -3 dB edges at `low` and `high` Hz.
    ///
    /// Design goes through the analog low-pass prototype, the low-pass to
    /// band-pass transform and the bilinear transform with pre-warped edges.
    /// The gain is set to unity at the digital image of the analog centre
    /// frequency.
    pub fn butter_bandpass(order: usize, low: f64, high: f64, sample_rate: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::config("filter order must be at least 1"));
        }
        if !(low > 0.0 && low < high && 2.0 * high < sample_rate) {
            return Err(Error::config(format!(
                "band-pass edges {low}..{high} Hz invalid for sample rate {sample_rate} Hz"
            )));
        }
        let fs2 = 2.0 * sample_rate;
        let warp = |f: f64| fs2 * (PI * f / sample_rate).tan();
        let (wl, wh) = (warp(low), warp(high));
        let bw = wh - wl;
        let w0_sq = wl * wh;

        let mut digital_poles = Vec::with_capacity(2 * order);
        for k in 0..order {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let proto = Complex64::from_polar(1.0, theta);
            let half = proto * (bw / 2.0);
            let disc = (half * half - w0_sq).sqrt();
            for s in [half + disc, half - disc] {
                digital_poles.push((fs2 + s) / (fs2 - s));
            }
        }

        // Conjugate pairs: keep the upper-half-plane member of each.
        let mut upper: Vec<Complex64> = digital_poles.into_iter().filter(|p| p.im > 0.0).collect();
        if upper.len() != order {
            return Err(Error::numeric("band-pass design produced real poles"));
        }
        upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));

        // Every section gets one zero at z = 1 and one at z = -1.
        let mut sections: Vec<Biquad> = upper
            .iter()
            .map(|p| Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -2.0 * p.re, p.norm_sqr()],
            })
            .collect();

        let centre = 2.0 * (w0_sq.sqrt() / fs2).atan();
        let z_inv = Complex64::from_polar(1.0, -centre);
        let gain: f64 = sections.iter().map(|s| s.response(z_inv).norm()).product();
        for c in sections[0].b.iter_mut() {
            *c /= gain;
        }
        Ok(SosFilter { sections })
    }

    /// Magnitude response at `freq` Hz.
    pub fn magnitude(&self, freq: f64, sample_rate: f64) -> f64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / sample_rate);
        self.sections
            .iter()
            .map(|s| s.response(z_inv).norm())
            .product()
    }

    /// Steady-state step response state for every section, accounting for the
    /// DC gain of the sections upstream.
    fn initial_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let st = s.step_state();
                let out = [st[0] * scale, st[1] * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    /// Causal filtering in place, starting from `state` (one entry per section).
    fn run(&self, x: &mut [f64], mut state: Vec<[f64; 2]>) {
        for (s, z) in self.sections.iter().zip(state.iter_mut()) {
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            let (mut z1, mut z2) = (z[0], z[1]);
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z1;
                z1 = b1 * xin - a1 * y + z2;
                z2 = b2 * xin - a2 * y;
                *v = y;
            }
            *z = [z1, z2];
        }
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.run(&mut y, vec![[0.0; 2]; self.sections.len()]);
        y
    }

    /// Default edge padding: three times the number of poles.
    pub fn default_padlen(&self) -> usize {
        3 * self.order()
    }

    /// Zero-phase forward-backward filtering with odd edge reflection of
    /// `padlen` samples. Requires `x.len() > padlen`.
    pub fn filtfilt(&self, x: &[f64], padlen: usize) -> Result<Vec<f64>> {
        let n = x.len();
        if n <= padlen {
            return Err(Error::invalid(format!(
                "signal of {n} samples too short for edge padding of {padlen}"
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        let mut ext = Vec::with_capacity(n + 2 * padlen);
        ext.extend((1..=padlen).rev().map(|k| 2.0 * x[0] - x[k]));
        ext.extend_from_slice(x);
        ext.extend((1..=padlen).map(|k| 2.0 * x[n - 1] - x[n - 1 - k]));

        let zi = self.initial_state();
        let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();

        let first = ext[0];
        self.run(&mut ext, scaled(first));
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, scaled(first));
        ext.reverse();
        Ok(ext[padlen..padlen + n].to_vec())
    }
}

/// Zero-phase Butterworth band-pass with the default edge padding.
pub fn bandpass(
    samples: &[f64],
    sample_rate: f64,
    low: f64,
    high: f64,
    order: usize,
) -> Result<Vec<f64>> {
    let filt = SosFilter::butter_bandpass(order, low, high, sample_rate)?;
    filt.filtfilt(samples, filt.default_padlen())
}
