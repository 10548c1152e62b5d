//! Recording to feature-window pipeline: band-pass, 2x decimation,
//! one-second segmentation, artifact flagging, Welch PSD and band powers.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bands::{band_powers, default_bands, to_relative, BandDefinition, N_BANDS};
use super::filter::SosFilter;
use super::welch::Welch;
use crate::error::{Error, Result};

pub const RAW_SAMPLE_RATE: u32 = 512;
pub const DECIMATED_SAMPLE_RATE: u32 = 256;

/// One labelled recording session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub subject_id: String,
    pub record_id: String,
    /// 0 = non-NSSI, 1 = NSSI.
    pub label: u8,
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl Recording {
    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::invalid(format!(
                "label {} is not binary",
                self.label
            )));
        }
        if self.sample_rate != RAW_SAMPLE_RATE && self.sample_rate != DECIMATED_SAMPLE_RATE {
            return Err(Error::invalid(format!(
                "sample rate {} Hz unsupported (expected 512 or 256)",
                self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// One second of signal reduced to five band powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub subject_id: String,
    pub record_id: String,
    pub window_index: usize,
    pub label: u8,
    /// Delta, theta, alpha, beta, gamma.
    pub features: [f64; N_BANDS],
    pub rejected: bool,
}

impl FeatureWindow {
    pub fn key(&self) -> (&str, &str, usize) {
        (&self.subject_id, &self.record_id, self.window_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    /// Butterworth prototype order; the band-pass has twice as many poles.
    pub filter_order: usize,
    pub window_s: u32,
    pub nperseg: usize,
    pub noverlap: usize,
    /// Windows with any |sample| above this many ADC counts are flagged.
    pub amp_threshold: f64,
    /// Windows whose standard deviation is below this are flagged as flat.
    pub flat_eps: f64,
    /// Report band powers as fractions of their sum.
    pub relative_power: bool,
    pub bands: [BandDefinition; N_BANDS],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            low_hz: 1.0,
            high_hz: 50.0,
            filter_order: 4,
            window_s: 1,
            nperseg: 256,
            noverlap: 0,
            amp_threshold: 800.0,
            flat_eps: 1e-3,
            relative_power: false,
            bands: default_bands(),
        }
    }
}

/// Keeps the samples at even indices.
pub fn decimate2(samples: &[f64]) -> Vec<f64> {
    samples.iter().step_by(2).copied().collect()
}

/// Non-overlapping windows of `sample_rate * window_s` samples; a trailing
/// partial window is dropped.
pub fn segment(samples: &[f64], sample_rate: u32, window_s: u32) -> Vec<&[f64]> {
    let len = (sample_rate * window_s) as usize;
    if len == 0 {
        return Vec::new();
    }
    samples.chunks_exact(len).collect()
}

/// True when the window is an artifact: a sample beyond `amp_threshold` or a
/// flat line (standard deviation below `flat_eps`).
pub fn reject_artifacts(window: &[f64], amp_threshold: f64, flat_eps: f64) -> bool {
    if window.is_empty() {
        return true;
    }
    if window.iter().any(|v| v.abs() > amp_threshold) {
        return true;
    }
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() < flat_eps
}

/// Preprocessor with the filter and spectral estimator built once.
#[derive(Debug)]
pub struct Preprocessor {
    config: PreprocessConfig,
    filter_512: SosFilter,
    filter_256: SosFilter,
    welch: Welch,
}

impl Preprocessor {
    pub fn new(config: PreprocessConfig) -> Result<Self> {
        super::bands::validate_bands(&config.bands)?;
        if config.window_s == 0 {
            return Err(Error::config("window_s must be at least 1"));
        }
        if !(config.amp_threshold > 0.0 && config.flat_eps > 0.0) {
            return Err(Error::config("artifact thresholds must be positive"));
        }
        let window_len = (DECIMATED_SAMPLE_RATE * config.window_s) as usize;
        if config.nperseg > window_len {
            return Err(Error::config(format!(
                "nperseg {} exceeds the {window_len}-sample window",
                config.nperseg
            )));
        }
        let filter_512 = SosFilter::butter_bandpass(
            config.filter_order,
            config.low_hz,
            config.high_hz,
            RAW_SAMPLE_RATE as f64,
        )?;
        let filter_256 = SosFilter::butter_bandpass(
            config.filter_order,
            config.low_hz,
            config.high_hz,
            DECIMATED_SAMPLE_RATE as f64,
        )?;
        let welch = Welch::new(
            DECIMATED_SAMPLE_RATE as f64,
            config.nperseg,
            config.noverlap,
        )?;
        Ok(Preprocessor {
            config,
            filter_512,
            filter_256,
            welch,
        })
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.config
    }

    /// Filtered signal at 256 Hz. 256 Hz input is filtered at its own rate
    /// and not decimated again.
    pub fn condition(&self, rec: &Recording) -> Result<Vec<f64>> {
        rec.validate()?;
        let filt = if rec.sample_rate == RAW_SAMPLE_RATE {
            &self.filter_512
        } else {
            &self.filter_256
        };
        if rec.samples.len() <= filt.default_padlen() {
            return Ok(Vec::new());
        }
        let y = filt.filtfilt(&rec.samples, filt.default_padlen())?;
        Ok(if rec.sample_rate == RAW_SAMPLE_RATE {
            decimate2(&y)
        } else {
            y
        })
    }

    pub fn window_features(&self, window: &[f64]) -> Result<([f64; N_BANDS], bool)> {
        let c = &self.config;
        let rejected = reject_artifacts(window, c.amp_threshold, c.flat_eps);
        let psd = self.welch.estimate(window)?;
        let mut p = band_powers(&psd, &c.bands)?;
        if c.relative_power {
            p = to_relative(p);
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite band power"));
        }
        Ok((p, rejected))
    }

    pub fn process(&self, rec: &Recording) -> Result<Vec<FeatureWindow>> {
        let signal = self.condition(rec)?;
        segment(&signal, DECIMATED_SAMPLE_RATE, self.config.window_s)
            .into_iter()
            .enumerate()
            .map(|(i, w)| {
                let (features, rejected) = self.window_features(w)?;
                Ok(FeatureWindow {
                    subject_id: rec.subject_id.clone(),
                    record_id: rec.record_id.clone(),
                    window_index: i,
                    label: rec.label,
                    features,
                    rejected,
                })
            })
            .collect()
    }
}

/// Runs the full pipeline on one recording. Every window is returned; artifact
/// windows carry `rejected = true`.
pub fn preprocess_recording(
    rec: &Recording,
    config: &PreprocessConfig,
) -> Result<Vec<FeatureWindow>> {
    Preprocessor::new(config.clone())?.process(rec)
}

/// Runs the pipeline over many recordings in parallel. Output is sorted by
/// (subject, record, window) regardless of scheduling.
pub fn preprocess_all(recs: &[Recording], config: &PreprocessConfig) -> Result<Vec<FeatureWindow>> {
    let pre = Preprocessor::new(config.clone())?;
    let per: Vec<Vec<FeatureWindow>> = recs
        .par_iter()
        .map(|r| pre.process(r))
        .collect::<Result<_>>()?;
    let mut out: Vec<FeatureWindow> = per.into_iter().flatten().collect();
    out.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Recording CSV
// ---------------------------------------------------------------------------

/// Writes `# subject_id=..,record_id=..,label=..,sample_rate=..` followed by
/// one sample per line.
pub fn write_recording_csv<W: Write>(rec: &Recording, mut w: W) -> Result<()> {
    writeln!(
        w,
        "# subject_id={},record_id={},label={},sample_rate={}",
        rec.subject_id, rec.record_id, rec.label, rec.sample_rate
    )?;
    for s in &rec.samples {
        writeln!(w, "{s}")?;
    }
    Ok(())
}

pub fn read_recording_csv<R: BufRead>(r: R) -> Result<Recording> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("empty recording file"))??;
    let meta = header
        .strip_prefix('#')
        .ok_or_else(|| Error::invalid("recording header must start with '#'"))?;
    let (mut subject, mut record, mut label, mut rate) = (None, None, None, None);
    for field in meta.trim().split(',') {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("malformed header field {field:?}")))?;
        let v = v.trim();
        match k.trim() {
            "subject_id" => subject = Some(v.to_string()),
            "record_id" => record = Some(v.to_string()),
            "label" => {
                label = Some(
                    v.parse::<u8>()
                        .map_err(|e| Error::invalid(format!("label: {e}")))?,
                )
            }
            "sample_rate" => {
                rate = Some(
                    v.parse::<u32>()
                        .map_err(|e| Error::invalid(format!("sample_rate: {e}")))?,
                )
            }
            other => return Err(Error::invalid(format!("unknown header key {other:?}"))),
        }
    }
    let missing = |k: &str| Error::invalid(format!("recording header lacks {k}"));
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|e| Error::invalid(format!("sample on line {}: {e}", i + 2)))?;
        samples.push(v);
    }
    let rec = Recording {
        subject_id: subject.ok_or_else(|| missing("subject_id"))?,
        record_id: record.ok_or_else(|| missing("record_id"))?,
        label: label.ok_or_else(|| missing("label"))?,
        sample_rate: rate.ok_or_else(|| missing("sample_rate"))?,
        samples,
    };
    rec.validate()?;
    Ok(rec)
}
