//! Seeded synthetic cohort with a planted per-band class effect.
//!
//! Each record is Gaussian noise shaped in the frequency domain: five
//! brick-wall bands scaled to target RMS values plus a `1/f` background.
//! Target RMS for band `b` is `band_rms[b] * jitter[subject][b] *
//! class_effect[b]` (the class factor only for NSSI records). Samples are
//! rounded to integer ADC counts so they survive the TGAM codec exactly.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::pipeline::{write_recording_csv, RAW_SAMPLE_RATE};
use crate::dsp::{
    default_bands, FeatureWindow, PreprocessConfig, Preprocessor, Recording, N_BANDS,
};
use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use crate::tgam::{encode, AsicPowers, TgamPacket, MAX_BAND_POWER, MAX_ESENSE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub id: String,
    pub n_records: usize,
    pub n_nssi_records: usize,
    pub seed: u64,
}

/// Single-sample spikes placed at the centre of randomly chosen seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactConfig {
    /// Probability that a given second carries a spike.
    pub rate: f64,
    /// Spike height in ADC counts.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub seed: u64,
    pub subjects: Vec<SubjectSpec>,
    pub duration_s: u32,
    pub sample_rate: u32,
    /// Baseline RMS per band (delta, theta, alpha, beta, gamma) in ADC counts.
    pub band_rms: [f64; N_BANDS],
    pub pink_rms: f64,
    /// The background is zero below this frequency.
    pub pink_low_hz: f64,
    /// RMS multipliers applied to NSSI records.
    pub class_effect: [f64; N_BANDS],
    /// Log-normal sigma of the fixed per-subject, per-band RMS multiplier.
    pub subject_jitter_sigma: f64,
    pub artifacts: Option<ArtifactConfig>,
}

fn subject(id: &str, n_records: usize, n_nssi_records: usize, seed: u64) -> SubjectSpec {
    SubjectSpec {
        id: id.to_string(),
        n_records,
        n_nssi_records,
        seed,
    }
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            seed: 0,
            subjects: vec![
                subject("A", 78, 21, 1),
                subject("B", 65, 18, 2),
                subject("C", 88, 23, 3),
            ],
            duration_s: 600,
            sample_rate: RAW_SAMPLE_RATE,
            band_rms: [12.0, 8.0, 10.0, 10.0, 3.0],
            pink_rms: 10.0,
            pink_low_hz: 0.5,
            class_effect: [1.0, 1.0, 0.7, 1.6, 1.4],
            subject_jitter_sigma: 0.2,
            artifacts: None,
        }
    }
}

impl CohortConfig {
    /// The same cohort with every class factor set to one.
    pub fn null_effect(mut self) -> Self {
        self.class_effect = [1.0; N_BANDS];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects.is_empty() {
            return Err(Error::config("cohort needs at least one subject"));
        }
        for s in &self.subjects {
            if s.n_nssi_records > s.n_records {
                return Err(Error::config(format!(
                    "subject {}: {} NSSI records exceed {} records",
                    s.id, s.n_nssi_records, s.n_records
                )));
            }
        }
        let mut ids: Vec<&str> = self.subjects.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("duplicate subject id"));
        }
        if self.sample_rate != RAW_SAMPLE_RATE {
            return Err(Error::config(format!(
                "sample_rate must be {RAW_SAMPLE_RATE}"
            )));
        }
        if self.duration_s == 0 {
            return Err(Error::config("duration_s must be positive"));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !self.class_effect.iter().all(|&f| positive(f)) {
            return Err(Error::config("class effect factors must be positive"));
        }
        if !self.band_rms.iter().all(|&f| positive(f))
            || !(self.pink_rms >= 0.0)
            || !positive(self.pink_low_hz)
        {
            return Err(Error::config("band and background levels must be positive"));
        }
        if !(self.subject_jitter_sigma >= 0.0) {
            return Err(Error::config("subject_jitter_sigma must be non-negative"));
        }
        if let Some(a) = &self.artifacts {
            if !(0.0..=1.0).contains(&a.rate) || !a.amplitude.is_finite() {
                return Err(Error::config(
                    "artifact rate must lie in [0, 1] with finite amplitude",
                ));
            }
        }
        Ok(())
    }

    pub fn n_records(&self) -> usize {
        self.subjects.iter().map(|s| s.n_records).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProvenance {
    pub subject_id: String,
    pub subject_seed: u64,
    /// Per-band RMS multipliers.
    pub jitter: [f64; N_BANDS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordProvenance {
    pub subject_id: String,
    pub record_id: String,
    pub label: u8,
    pub record_seed: u64,
    /// Target RMS per band after jitter and class factors.
    pub band_rms: [f64; N_BANDS],
    pub pink_rms: f64,
    /// One-second windows that received a spike.
    pub artifact_windows: Vec<usize>,
    /// Samples clipped to the signed 16-bit range.
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenProvenance {
    pub cohort_seed: u64,
    pub subjects: Vec<SubjectProvenance>,
    pub records: Vec<RecordProvenance>,
}

/// Everything needed to generate one record independently.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordPlan {
    pub subject_id: String,
    pub record_id: String,
    pub label: u8,
    pub record_seed: u64,
    pub band_rms: [f64; N_BANDS],
}

/// Per-subject jitter and the ordered list of records to generate.
pub fn plan_cohort(config: &CohortConfig) -> Result<(Vec<SubjectProvenance>, Vec<RecordPlan>)> {
    config.validate()?;
    let mut subjects = Vec::new();
    let mut plans = Vec::new();
    for s in &config.subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            &["subject", &s.id, &s.seed.to_string()],
        ));
        let jitter_dist = LogNormal::new(0.0, config.subject_jitter_sigma)
            .map_err(|e| Error::config(e.to_string()))?;
        let jitter: [f64; N_BANDS] = std::array::from_fn(|_| jitter_dist.sample(&mut rng));
        let mut order: Vec<usize> = (0..s.n_records).collect();
        order.shuffle(&mut rng);
        let mut labels = vec![0u8; s.n_records];
        for &i in &order[..s.n_nssi_records] {
            labels[i] = 1;
        }
        for (i, &label) in labels.iter().enumerate() {
            let band_rms = std::array::from_fn(|b| {
                let effect = if label == 1 {
                    config.class_effect[b]
                } else {
                    1.0
                };
                config.band_rms[b] * jitter[b] * effect
            });
            plans.push(RecordPlan {
                subject_id: s.id.clone(),
                record_id: format!("{}-{i:03}", s.id),
                label,
                record_seed: derive_seed(config.seed, &[&s.id, &i.to_string()]),
                band_rms,
            });
        }
        subjects.push(SubjectProvenance {
            subject_id: s.id.clone(),
            subject_seed: s.seed,
            jitter,
        });
    }
    Ok((subjects, plans))
}

/// Per-bin amplitude gain for an `n`-point spectrum such that unit white
/// noise comes out with the requested band and background RMS.
fn spectral_gain(
    n: usize,
    fs: f64,
    band_rms: &[f64; N_BANDS],
    pink_rms: f64,
    pink_low: f64,
) -> Vec<f64> {
    let bands = default_bands();
    let freq = |k: usize| k.min(n - k) as f64 * fs / n as f64;
    let mut band_bins = [0usize; N_BANDS];
    let mut pink_norm = 0.0;
    for k in 0..n {
        let f = freq(k);
        if let Some(b) = bands.iter().position(|b| b.contains(f)) {
            band_bins[b] += 1;
        }
        if f >= pink_low {
            pink_norm += 1.0 / f;
        }
    }
    // output variance: (1/n) * sum_k gain_k^2
    let band_gain2: [f64; N_BANDS] = std::array::from_fn(|b| {
        if band_bins[b] == 0 {
            0.0
        } else {
            band_rms[b].powi(2) * n as f64 / band_bins[b] as f64
        }
    });
    let pink_c2 = if pink_norm > 0.0 {
        pink_rms.powi(2) * n as f64 / pink_norm
    } else {
        0.0
    };
    (0..n)
        .map(|k| {
            let f = freq(k);
            let mut g2 = bands
                .iter()
                .position(|b| b.contains(f))
                .map_or(0.0, |b| band_gain2[b]);
            if f >= pink_low {
                g2 += pink_c2 / f;
            }
            g2.sqrt()
        })
        .collect()
}

/// Generates one recording from its plan.
pub fn generate_record(
    config: &CohortConfig,
    plan: &RecordPlan,
) -> Result<(Recording, RecordProvenance)> {
    let fs = config.sample_rate as f64;
    let n = config.duration_s as usize * config.sample_rate as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.record_seed);
    let mut spec: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut spec);
    let gain = spectral_gain(n, fs, &plan.band_rms, config.pink_rms, config.pink_low_hz);
    for (c, g) in spec.iter_mut().zip(&gain) {
        *c *= *g;
    }
    planner.plan_fft_inverse(n).process(&mut spec);
    let mut samples: Vec<f64> = spec.iter().map(|c| c.re / n as f64).collect();

    let mut artifact_windows = Vec::new();
    if let Some(a) = &config.artifacts {
        let per = config.sample_rate as usize;
        for s in 0..config.duration_s as usize {
            if rng.random_bool(a.rate) {
                samples[s * per + per / 2] += a.amplitude;
                artifact_windows.push(s);
            }
        }
    }

    let mut clipped = 0;
    for v in samples.iter_mut() {
        let r = v.round();
        *v = r.clamp(i16::MIN as f64, i16::MAX as f64);
        if *v != r {
            clipped += 1;
        }
    }
    if clipped > 0 {
        log::warn!("{}: clipped {clipped} samples to 16 bits", plan.record_id);
    }
    let rec = Recording {
        subject_id: plan.subject_id.clone(),
        record_id: plan.record_id.clone(),
        label: plan.label,
        sample_rate: config.sample_rate,
        samples,
    };
    let prov = RecordProvenance {
        subject_id: plan.subject_id.clone(),
        record_id: plan.record_id.clone(),
        label: plan.label,
        record_seed: plan.record_seed,
        band_rms: plan.band_rms,
        pink_rms: config.pink_rms,
        artifact_windows,
        clipped,
    };
    Ok((rec, prov))
}

/// All recordings in memory, in plan order. Use [`cohort_windows`] for full-size
/// cohorts.
pub fn generate_cohort(config: &CohortConfig) -> Result<(Vec<Recording>, GenProvenance)> {
    let (subjects, plans) = plan_cohort(config)?;
    let out: Vec<(Recording, RecordProvenance)> = plans
        .par_iter()
        .map(|p| generate_record(config, p))
        .collect::<Result<_>>()?;
    let (recs, records) = out.into_iter().unzip();
    Ok((
        recs,
        GenProvenance {
            cohort_seed: config.seed,
            subjects,
            records,
        },
    ))
}

/// Generates and preprocesses each record without keeping raw samples.
/// Windows are sorted by key.
pub fn cohort_windows(
    config: &CohortConfig,
    pre: &PreprocessConfig,
) -> Result<(Vec<FeatureWindow>, GenProvenance)> {
    let (subjects, plans) = plan_cohort(config)?;
    let pre = Preprocessor::new(pre.clone())?;
    let out: Vec<(Vec<FeatureWindow>, RecordProvenance)> = plans
        .par_iter()
        .map(|p| {
            let (rec, prov) = generate_record(config, p)?;
            Ok((pre.process(&rec)?, prov))
        })
        .collect::<Result<_>>()?;
    let mut windows = Vec::new();
    let mut records = Vec::new();
    for (w, p) in out {
        windows.extend(w);
        records.push(p);
    }
    windows.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok((
        windows,
        GenProvenance {
            cohort_seed: config.seed,
            subjects,
            records,
        },
    ))
}

/// Raw-wave samples per emitted frame.
pub const SAMPLES_PER_FRAME: usize = 32;
/// Band power units per squared ADC count in summary frames.
pub const SUMMARY_POWER_SCALE: f64 = 100.0;

/// Summary frame for one second: ASIC band powers from the generator's band
/// RMS values, eSense scores from the alpha/beta balance, and poor-signal 200
/// for seconds with an injected artifact.
pub fn summary_packet(prov: &RecordProvenance, second: usize) -> TgamPacket {
    let p = prov.band_rms.map(|r| r * r);
    let scale =
        |v: f64| ((v * SUMMARY_POWER_SCALE).round() as u64).min(MAX_BAND_POWER as u64) as u32;
    let half = |v: f64| scale(v / 2.0);
    let powers = AsicPowers::from_array([
        scale(p[0]),
        scale(p[1]),
        half(p[2]),
        half(p[2]),
        half(p[3]),
        half(p[3]),
        half(p[4]),
        half(p[4]),
    ]);
    let ab = p[2] + p[3];
    let esense = |v: f64| ((100.0 * v / ab).round() as u8).min(MAX_ESENSE);
    TgamPacket {
        poor_signal: Some(if prov.artifact_windows.binary_search(&second).is_ok() {
            200
        } else {
            0
        }),
        band_powers: Some(powers),
        attention: Some(esense(p[3])),
        meditation: Some(esense(p[2])),
        raw_samples: Vec::new(),
    }
}

/// Serializes a 512 Hz recording as TGAM frames: raw-wave frames of up to
/// [`SAMPLES_PER_FRAME`] samples, and one summary frame after each complete
/// second. Samples outside the 16-bit range are clipped with a warning.
pub fn emit_tgam(rec: &Recording, prov: &RecordProvenance) -> Result<Vec<u8>> {
    if rec.sample_rate != RAW_SAMPLE_RATE {
        return Err(Error::invalid(format!(
            "TGAM streams carry {RAW_SAMPLE_RATE} Hz samples, recording is {} Hz",
            rec.sample_rate
        )));
    }
    let mut clipped = 0usize;
    let raw: Vec<i16> = rec
        .samples
        .iter()
        .map(|&v| {
            let r = v.round().clamp(i16::MIN as f64, i16::MAX as f64);
            if r != v {
                clipped += 1;
            }
            r as i16
        })
        .collect();
    if clipped > 0 {
        log::warn!(
            "{}: {clipped} samples clipped or rounded to 16 bits",
            rec.record_id
        );
    }
    let per_second = RAW_SAMPLE_RATE as usize;
    let mut out = Vec::with_capacity(raw.len() * 2 + raw.len() / 8 * 4);
    for (s, second) in raw.chunks(per_second).enumerate() {
        for chunk in second.chunks(SAMPLES_PER_FRAME) {
            out.extend(encode(&TgamPacket::raw(chunk.to_vec()))?);
        }
        if second.len() == per_second {
            out.extend(encode(&summary_packet(prov, s))?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub record_id: String,
    pub label: u8,
    pub csv: Option<String>,
    pub tgam: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub n_records: usize,
    pub sample_rate: u32,
    pub duration_s: u32,
    pub records: Vec<ManifestEntry>,
}

/// File formats written by [`write_cohort`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortFormats {
    pub csv: bool,
    pub tgam: bool,
}

/// Writes every record under `dir/records/` plus `manifest.json` and
/// `provenance.json`. Records are generated in parallel and never all held
/// in memory.
pub fn write_cohort(
    dir: &Path,
    config: &CohortConfig,
    formats: CohortFormats,
) -> Result<(CohortManifest, GenProvenance)> {
    let (subjects, plans) = plan_cohort(config)?;
    let rec_dir = dir.join("records");
    fs::create_dir_all(&rec_dir)?;
    let out: Vec<(ManifestEntry, RecordProvenance)> = plans
        .par_iter()
        .map(|p| {
            let (rec, prov) = generate_record(config, p)?;
            let mut entry = ManifestEntry {
                subject_id: rec.subject_id.clone(),
                record_id: rec.record_id.clone(),
                label: rec.label,
                csv: None,
                tgam: None,
            };
            if formats.csv {
                let name = format!("records/{}.csv", rec.record_id);
                let f = fs::File::create(dir.join(&name))?;
                write_recording_csv(&rec, std::io::BufWriter::new(f))?;
                entry.csv = Some(name);
            }
            if formats.tgam {
                let name = format!("records/{}.tgam", rec.record_id);
                fs::write(dir.join(&name), emit_tgam(&rec, &prov)?)?;
                entry.tgam = Some(name);
            }
            Ok((entry, prov))
        })
        .collect::<Result<_>>()?;
    let (entries, records): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    let manifest = CohortManifest {
        n_records: entries.len(),
        sample_rate: config.sample_rate,
        duration_s: config.duration_s,
        records: entries,
    };
    let prov = GenProvenance {
        cohort_seed: config.seed,
        subjects,
        records,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    fs::write(
        dir.join("provenance.json"),
        serde_json::to_string_pretty(&prov)? + "\n",
    )?;
    Ok((manifest, prov))
}
