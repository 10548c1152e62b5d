use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use fetopo::checkpoint::ModelCheckpoint;
use fetopo::dataset::{Dataset, Split};
use fetopo::dsp::pipeline::{read_recording_csv, RAW_SAMPLE_RATE};
use fetopo::dsp::{FeatureWindow, Preprocessor, Recording};
use fetopo::explain::{
    aggregate, explain_windows, select_instances, write_report_files as write_explanation,
};
use fetopo::metrics::{EvalReport, MetricSummary};
use fetopo::synth::{cohort_windows, write_cohort, CohortManifest};
use fetopo::tgam::{decode_stream, FrameErrorKind};
use fetopo::train::{
    evaluate, evaluate_records, format_table, loss_curve_csv, run_loso, train_intra_subject,
    write_report_files,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(fetopo::Error::from)? + "\n";
    write(path, text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required input: {what}")))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn load_windows(path: &Path) -> Result<(Dataset, String), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let ds = Dataset::read_jsonl(BufReader::new(&bytes[..]))?;
    Ok((ds, sha256_hex(&bytes)))
}

#[derive(Debug, Serialize)]
struct DecodeSummary {
    bytes: usize,
    packets: usize,
    raw_samples: usize,
    summary_frames: usize,
    errors: usize,
    errors_by_kind: BTreeMap<String, usize>,
    first_error_offsets: Vec<usize>,
}

pub fn decode(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let input = required(&cfg.inputs.input, "--input")?;
    let bytes = fs::read(input).map_err(|e| CliError::io(input, e))?;
    let d = decode_stream(&bytes);
    let mut csv = String::from("sample\n");
    let mut n_raw = 0;
    for s in d.raw_samples() {
        csv.push_str(&s.to_string());
        csv.push('\n');
        n_raw += 1;
    }
    write(&out.join("samples.csv"), csv)?;
    let mut by_kind: BTreeMap<String, usize> = FrameErrorKind::ALL
        .iter()
        .map(|k| (format!("{k:?}"), 0))
        .collect();
    for e in &d.errors {
        *by_kind
            .get_mut(&format!("{:?}", e.kind))
            .expect("all kinds listed") += 1;
    }
    let summary = DecodeSummary {
        bytes: bytes.len(),
        packets: d.packets.len(),
        raw_samples: n_raw,
        summary_frames: d.packets.iter().filter(|p| p.band_powers.is_some()).count(),
        errors: d.errors.len(),
        errors_by_kind: by_kind,
        first_error_offsets: d.errors.iter().take(20).map(|e| e.offset).collect(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{} packets, {} raw samples, {} frame errors",
        summary.packets, summary.raw_samples, summary.errors
    );
    if summary.errors > 0 && !cfg.lenient {
        return Err(CliError::Data(format!(
            "{} frame errors in {}",
            summary.errors,
            input.display()
        )));
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (manifest, prov) = write_cohort(out, &cfg.cohort, cfg.formats)?;
    let positives = prov.records.iter().filter(|r| r.label == 1).count();
    println!(
        "{} records ({} NSSI) from {} subjects written to {}",
        manifest.n_records,
        positives,
        prov.subjects.len(),
        out.display()
    );
    Ok(())
}

fn load_record(dir: &Path, e: &fetopo::synth::ManifestEntry) -> Result<Recording, CliError> {
    if let Some(csv) = &e.csv {
        let path = dir.join(csv);
        let f = fs::File::open(&path).map_err(|err| CliError::io(&path, err))?;
        return Ok(read_recording_csv(BufReader::new(f))?);
    }
    let Some(tgam) = &e.tgam else {
        return Err(CliError::Data(format!(
            "record {} lists no data file",
            e.record_id
        )));
    };
    let path = dir.join(tgam);
    let bytes = fs::read(&path).map_err(|err| CliError::io(&path, err))?;
    let d = decode_stream(&bytes);
    if !d.errors.is_empty() {
        return Err(CliError::Data(format!(
            "{}: {} frame errors",
            path.display(),
            d.errors.len()
        )));
    }
    Ok(Recording {
        subject_id: e.subject_id.clone(),
        record_id: e.record_id.clone(),
        label: e.label,
        sample_rate: RAW_SAMPLE_RATE,
        samples: d.raw_samples().map(f64::from).collect(),
    })
}

#[derive(Debug, Default, Serialize)]
struct SubjectCounts {
    records: usize,
    windows: usize,
    positive_windows: usize,
    rejected_windows: usize,
}

pub fn preprocess(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let windows: Vec<FeatureWindow> = match &cfg.inputs.cohort {
        Some(dir) => {
            let manifest: CohortManifest = read_json(&dir.join("manifest.json"))?;
            let pre = Preprocessor::new(cfg.preprocess.clone())?;
            let per: Vec<Vec<FeatureWindow>> = manifest
                .records
                .par_iter()
                .map(|e| {
                    let rec = load_record(dir, e)?;
                    Ok(pre.process(&rec)?)
                })
                .collect::<Result<_, CliError>>()?;
            let mut w: Vec<FeatureWindow> = per.into_iter().flatten().collect();
            w.sort_by(|a, b| a.key().cmp(&b.key()));
            w
        }
        None => cohort_windows(&cfg.cohort, &cfg.preprocess)?.0,
    };
    let ds = Dataset::new(windows)?;
    let path = out.join("windows.jsonl");
    let f = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let mut w = BufWriter::new(f);
    ds.write_jsonl(&mut w)?;
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let mut counts: BTreeMap<String, SubjectCounts> = BTreeMap::new();
    let mut records = std::collections::BTreeSet::new();
    for w in ds.windows() {
        let c = counts.entry(w.subject_id.clone()).or_default();
        if records.insert((w.subject_id.as_str(), w.record_id.as_str())) {
            c.records += 1;
        }
        c.windows += 1;
        c.positive_windows += usize::from(w.label);
        c.rejected_windows += usize::from(w.rejected);
    }
    write_json(&out.join("summary.json"), &counts)?;
    println!("{} windows from {} records", ds.len(), records.len());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainManifest {
    windows_sha256: String,
    subjects: Vec<String>,
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (ds, digest) = load_windows(required(&cfg.inputs.windows, "--windows")?)?;
    let topology = cfg.resolve_topology()?;
    let trained = train_intra_subject(&ds, &topology, &cfg.train)?;
    let mut subjects = Vec::new();
    for (split, ck) in &trained {
        let s = &split.subject;
        ck.save(&out.join(format!("checkpoint_{s}.json")))?;
        write_json(&out.join(format!("split_{s}.json")), split)?;
        write(
            &out.join(format!("loss_curve_{s}.csv")),
            loss_curve_csv(&ck.loss_curve),
        )?;
        println!(
            "subject {s}: {} train / {} test windows, final loss {:.4}",
            split.train_indices.len(),
            split.test_indices.len(),
            ck.loss_curve.last().copied().unwrap_or(f64::NAN)
        );
        subjects.push(s.clone());
    }
    write_json(
        &out.join("train_manifest.json"),
        &TrainManifest {
            windows_sha256: digest,
            subjects,
        },
    )
}

struct Trained {
    subject: String,
    checkpoint: ModelCheckpoint,
    split: Split,
}

fn load_trained(
    cfg: &RunConfig,
    ds_digest: &str,
    topology: &fetopo::topology::Topology,
) -> Result<Vec<Trained>, CliError> {
    let dir = required(&cfg.inputs.models, "--models")?;
    let manifest: TrainManifest = read_json(&dir.join("train_manifest.json"))?;
    if manifest.windows_sha256 != ds_digest {
        return Err(CliError::Data(
            "windows file differs from the one the models were trained on".into(),
        ));
    }
    manifest
        .subjects
        .iter()
        .map(|s| {
            let checkpoint = ModelCheckpoint::load(
                &dir.join(format!("checkpoint_{s}.json")),
                Some(topology),
                cfg.force,
            )?;
            let split: Split = read_json(&dir.join(format!("split_{s}.json")))?;
            Ok(Trained {
                subject: s.clone(),
                checkpoint,
                split,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    name: String,
    #[serde(flatten)]
    metrics: MetricSummary,
    n_samples: usize,
}

#[derive(Debug, Serialize)]
struct TableSummary {
    rows: Vec<SummaryRow>,
    mean: MetricSummary,
}

fn table_summary(rows: Vec<(String, &EvalReport)>) -> TableSummary {
    let rows: Vec<SummaryRow> = rows
        .into_iter()
        .map(|(name, r)| SummaryRow {
            name,
            metrics: r.summary(),
            n_samples: r.n_samples,
        })
        .collect();
    let mean = MetricSummary::mean(rows.iter().map(|r| &r.metrics));
    TableSummary { rows, mean }
}

fn print_table(first_column: &str, t: &TableSummary) {
    let rows: Vec<(String, MetricSummary)> =
        t.rows.iter().map(|r| (r.name.clone(), r.metrics)).collect();
    print!("{}", format_table(first_column, &rows, &t.mean));
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (ds, digest) = load_windows(required(&cfg.inputs.windows, "--windows")?)?;
    let topology = cfg.resolve_topology()?;
    let trained = load_trained(cfg, &digest, &topology)?;
    let mut reports = Vec::new();
    for t in &trained {
        let test = ds.select(&t.split.test_indices);
        let report = if cfg.record_level {
            evaluate_records(&t.checkpoint, &topology, &test)?
        } else {
            evaluate(&t.checkpoint, &topology, &test)?
        };
        write_report_files(&out.join(&t.subject), &report, &t.checkpoint.loss_curve)?;
        reports.push((t.subject.clone(), report));
    }
    let summary = table_summary(reports.iter().map(|(s, r)| (s.clone(), r)).collect());
    write_json(&out.join("summary.json"), &summary)?;
    print_table("Participant", &summary);
    Ok(())
}

pub fn loso(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (ds, _) = load_windows(required(&cfg.inputs.windows, "--windows")?)?;
    let topology = cfg.resolve_topology()?;
    let run = run_loso(&ds, &topology, &cfg.train)?;
    let mut rows = Vec::new();
    for f in &run.folds {
        let dir = out.join(format!("fold_{}", f.fold.test_subject));
        write_report_files(&dir, &f.report, &f.checkpoint.loss_curve)?;
        f.checkpoint.save(&dir.join("checkpoint.json"))?;
        let name = format!(
            "{} ({})",
            f.fold.test_subject,
            f.fold.train_subjects.join(" & ")
        );
        rows.push((name, &f.report));
    }
    write_json(
        &out.join("folds.json"),
        &run.folds.iter().map(|f| &f.fold).collect::<Vec<_>>(),
    )?;
    let summary = table_summary(rows);
    write_json(&out.join("summary.json"), &summary)?;
    print_table("Test (Training)", &summary);
    Ok(())
}

pub fn explain(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (ds, digest) = load_windows(required(&cfg.inputs.windows, "--windows")?)?;
    let topology = cfg.resolve_topology()?;
    let trained = load_trained(cfg, &digest, &topology)?;
    for t in &trained {
        let test = ds.select(&t.split.test_indices);
        let instances = select_instances(
            &test,
            &t.checkpoint,
            &topology,
            cfg.explain.per_class_cap,
            cfg.explain.seed,
        )?;
        if instances.is_empty() {
            log::warn!(
                "subject {}: no correctly classified windows to explain",
                t.subject
            );
            continue;
        }
        let masks = explain_windows(&t.checkpoint, &topology, &instances, &cfg.explain)?;
        let report = aggregate(&masks, &topology, &cfg.explain)?;
        write_explanation(&out.join(&t.subject), &report)?;
        println!("subject {}: {} instances explained", t.subject, masks.len());
        for c in &report.classes {
            let mut top: Vec<_> = c.edges.iter().collect();
            top.sort_by(|a, b| b.mean.total_cmp(&a.mean));
            let shown: Vec<String> = top
                .iter()
                .take(3)
                .map(|e| format!("{}->{} {:.3}", e.source, e.target, e.mean))
                .collect();
            println!("  {} (n={}): {}", c.name, c.n_instances, shown.join(", "));
        }
    }
    Ok(())
}
