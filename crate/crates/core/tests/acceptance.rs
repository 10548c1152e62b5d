mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{
    gradient_check, kink_margin, mann_whitney, random_graph_input, random_packet,
    valid_frame_starts_before,
};
use fetopo::adam::{adam_step, AdamConfig, AdamState};
use fetopo::checkpoint::{ModelCheckpoint, FORMAT_VERSION};
use fetopo::dataset::{class_counts, Dataset};
use fetopo::dsp::{bandpass, welch_psd, FeatureWindow, PreprocessConfig, Preprocessor, Recording};
use fetopo::explain::{
    aggregate, edges_csv, explain_instance, explain_windows, masked_probability, select_instances,
    EdgeMask, ExplainerConfig, ExplanationReport, InstanceKey,
};
use fetopo::gcn::{backward, forward, GcnParams, GraphInput, N_PARAMS};
use fetopo::metrics::{f1_score, roc_auc, MetricSummary};
use fetopo::synth::{cohort_windows, write_cohort, CohortConfig, CohortFormats, SubjectSpec};
use fetopo::tgam::{checksum, decode_stream, encode, FrameErrorKind, TgamPacket};
use fetopo::topology::{default_topology, propagation_matrix, Topology};
use fetopo::train::{run_intra_subject, run_loso, IntraSubjectRun, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const REFERENCE_FRAME: [u8; 36] = [
    0xAA, 0xAA, 0x20, 0x02, 0x00, 0x83, 0x18, 0x00, 0x00, 0x94, 0x00, 0x00, 0x42, 0x00, 0x00, 0x0B,
    0x00, 0x00, 0x64, 0x00, 0x00, 0x4D, 0x00, 0x00, 0x3D, 0x00, 0x00, 0x07, 0x00, 0x00, 0x05, 0x04,
    0x0D, 0x05, 0x3D, 0x34,
];

const PARSEVAL_TOL: f64 = 1e-9;
const ENSEMBLE_TOL: f64 = 0.10;
const ALPHA_SHARE: f64 = 0.95;
const DC_REJECTION: f64 = 1e-3;
const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const KINK_MARGIN: f64 = 1e-3;
const AUC_TOL: f64 = 1e-9;
const F1_TARGET: f64 = 0.772;
const F1_TOL: f64 = 0.0005;
const INTRA_ACC: f64 = 0.85;
const INTRA_AUC: f64 = 0.90;
const LOSO_ACC: f64 = 0.70;
const LOSO_AUC: f64 = 0.78;
const NULL_AUC_BAND: f64 = 0.05;
const NON_INCREASE: f64 = 0.95;
const ALL_ONES_TOL: f64 = 1e-12;
const EXPLAIN_CAP: usize = 200;
const TOY_SEEDS: u64 = 10;

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
}

struct Harness {
    outcomes: Vec<Outcome>,
}

impl Harness {
    /// Runs one criterion; it passes only when the check holds within budget.
    fn run<T>(
        &mut self,
        id: u32,
        name: &'static str,
        budget: Option<Duration>,
        f: impl FnOnce() -> (bool, String, T),
    ) -> T {
        let start = Instant::now();
        let (ok, detail, value) = f();
        let took = start.elapsed();
        let in_time = budget.is_none_or(|b| took <= b);
        let passed = ok && in_time;
        let tag = if passed { "PASS" } else { "FAIL" };
        let over = if in_time { "" } else { " over budget" };
        let limit = budget.map_or(String::new(), |b| format!(" of {}s", b.as_secs()));
        println!(
            "[{tag}] {id} {name} ({:.1}s{limit}{over}): {detail}",
            took.as_secs_f64()
        );
        self.outcomes.push(Outcome { id, name, passed });
        value
    }
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn codec_reference() -> (bool, String, ()) {
    let d = decode_stream(&REFERENCE_FRAME);
    let expected_bands = [148, 66, 11, 100, 77, 61, 7, 5];
    let payload = &REFERENCE_FRAME[3..35];
    let sum = payload.iter().fold(0u8, |a, &b| a.wrapping_add(b));
    let ok = d.errors.is_empty()
        && d.packets.len() == 1
        && d.packets[0].attention == Some(13)
        && d.packets[0].meditation == Some(61)
        && d.packets[0].band_powers.map(|b| b.to_array()) == Some(expected_bands)
        && sum == 0xCB
        && checksum(payload) == 0x34;
    let p = d.packets.first().cloned().unwrap_or_default();
    (
        ok,
        format!(
            "attention {:?} meditation {:?} bands {:?} sum {sum:#04X} checksum {:#04X}",
            p.attention,
            p.meditation,
            p.band_powers.map(|b| b.to_array()),
            checksum(payload)
        ),
        (),
    )
}

fn codec_properties() -> (bool, String, ()) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let packets: Vec<TgamPacket> = (0..10_000).map(|_| random_packet(&mut rng)).collect();
    let round_trips = packets
        .iter()
        .filter(|p| {
            let d = decode_stream(&encode(p).unwrap());
            d.errors.is_empty() && d.packets.as_slice() == std::slice::from_ref(*p)
        })
        .count();

    let mut corruptions = 0usize;
    let mut detected = 0usize;
    for p in packets.iter().take(100) {
        let frame = encode(p).unwrap();
        for at in 3..frame.len() - 1 {
            for flip in 1..=255u8 {
                let mut bad = frame.clone();
                bad[at] ^= flip;
                let d = decode_stream(&bad);
                corruptions += 1;
                if d.packets.is_empty()
                    && d.errors
                        .iter()
                        .any(|e| e.kind == FrameErrorKind::BadChecksum && e.offset == 0)
                {
                    detected += 1;
                }
            }
        }
    }

    let mut resync_cases = 0usize;
    let mut resynced = 0usize;
    while resync_cases < 1000 {
        let p = random_packet(&mut rng);
        let head: Vec<u8> = (0..rng.random_range(0..64)).map(|_| rng.random()).collect();
        let tail: Vec<u8> = (0..rng.random_range(0..64)).map(|_| rng.random()).collect();
        let stream = [head.as_slice(), &encode(&p).unwrap(), &tail].concat();
        if valid_frame_starts_before(&stream, head.len()) {
            continue;
        }
        resync_cases += 1;
        if decode_stream(&stream).packets.contains(&p) {
            resynced += 1;
        }
    }
    (
        round_trips == packets.len() && detected == corruptions && resynced == resync_cases,
        format!(
            "round trips {round_trips}/{}, corruptions detected {detected}/{corruptions}, resync {resynced}/{resync_cases}",
            packets.len()
        ),
        (),
    )
}

/// Mean over Welch segments of `sum((x w)^2) / sum(w^2)`.
fn windowed_energy(x: &[f64], nperseg: usize, noverlap: usize) -> f64 {
    let w: Vec<f64> = (0..nperseg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / nperseg as f64).cos())
        .collect();
    let wp: f64 = w.iter().map(|v| v * v).sum();
    let step = nperseg - noverlap;
    let segments = (x.len() - nperseg) / step + 1;
    (0..segments)
        .map(|s| {
            x[s * step..s * step + nperseg]
                .iter()
                .zip(&w)
                .map(|(v, w)| (v * w).powi(2))
                .sum::<f64>()
                / wp
        })
        .sum::<f64>()
        / segments as f64
}

fn dsp_oracles() -> (bool, String, ()) {
    let mut parseval_gap: f64 = 0.0;
    for (n, nperseg, noverlap) in [
        (256, 256, 0),
        (512, 256, 128),
        (1000, 200, 50),
        (257, 257, 0),
    ] {
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / 256.0;
                3.0 * (2.0 * std::f64::consts::PI * 7.0 * t).sin()
                    + (2.0 * std::f64::consts::PI * 23.5 * t * t).cos()
                    + 0.5
            })
            .collect();
        let total = welch_psd(&x, 256.0, nperseg, noverlap)
            .unwrap()
            .total_power();
        let oracle = windowed_energy(&x, nperseg, noverlap);
        parseval_gap = parseval_gap.max((total - oracle).abs() / oracle);
    }

    let sigma: f64 = 4.0;
    let normal = Normal::new(0.0, sigma).unwrap();
    let mean_power = (0..100u64)
        .map(|s| {
            let mut r = ChaCha8Rng::seed_from_u64(1000 + s);
            let x: Vec<f64> = (0..256).map(|_| normal.sample(&mut r)).collect();
            welch_psd(&x, 256.0, 256, 0).unwrap().total_power()
        })
        .sum::<f64>()
        / 100.0;
    let ensemble_gap = (mean_power - sigma * sigma).abs() / (sigma * sigma);

    let rec = Recording {
        subject_id: "S".into(),
        record_id: "S-000".into(),
        label: 0,
        sample_rate: 512,
        samples: (0..512 * 6)
            .map(|i| 50.0 * (2.0 * std::f64::consts::PI * 10.0 * i as f64 / 512.0).sin())
            .collect(),
    };
    let features = Preprocessor::new(PreprocessConfig::default())
        .unwrap()
        .process(&rec)
        .unwrap();
    let alpha_share = features
        .iter()
        .map(|w| w.features[2] / w.features.iter().sum::<f64>())
        .fold(f64::INFINITY, f64::min);

    let dc = vec![100.0; 512 * 10];
    let y = bandpass(&dc, 512.0, 1.0, 50.0, 4).unwrap();
    let dc_ratio = y.iter().fold(0.0f64, |m, v| m.max(v.abs())) / 100.0;

    (
        parseval_gap <= PARSEVAL_TOL
            && ensemble_gap <= ENSEMBLE_TOL
            && alpha_share >= ALPHA_SHARE
            && dc_ratio < DC_REJECTION,
        format!(
            "Parseval rel gap {parseval_gap:.2e}, ensemble gap {:.1}%, min alpha share {:.4}, DC residual {:.2e} ({:.1} dB)",
            100.0 * ensemble_gap,
            alpha_share,
            dc_ratio,
            -20.0 * dc_ratio.log10()
        ),
        (),
    )
}

fn gradients() -> (bool, String, ()) {
    let a = propagation_matrix(&default_topology(), None).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 20 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        seed += 1;
        let params = GcnParams::glorot(&mut r);
        let x = random_graph_input(&mut r, 7);
        if kink_margin(&params, &a, &x) <= KINK_MARGIN {
            continue;
        }
        worst = worst.max(gradient_check(
            &params,
            &a,
            &x,
            f64::from(checked % 2),
            GRAD_EPS,
        ));
        checked += 1;
    }
    (
        worst < GRAD_TOL && GcnParams::zeros().to_flat().len() == 129,
        format!("{checked} instances over {N_PARAMS} parameters, max rel err {worst:.2e}"),
        (),
    )
}

fn metric_oracles() -> (bool, String, ()) {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = r.random_range(10..300);
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let scores: Vec<f64> = labels
            .iter()
            .map(|&y| ((r.random_range(0.0..1.0) + 0.2 * f64::from(y)) * 50.0).round() / 50.0)
            .collect();
        worst = worst.max((roc_auc(&scores, &labels) - mann_whitney(&scores, &labels)).abs());
    }
    let f1 = f1_score(0.701, 0.860);
    (
        worst <= AUC_TOL && (f1 - F1_TARGET).abs() <= F1_TOL,
        format!("max |AUC - Mann-Whitney| {worst:.2e}, F1(0.701, 0.860) = {f1:.5}"),
        (),
    )
}

fn dataset_shape(cfg: &CohortConfig) -> (bool, String, Vec<FeatureWindow>) {
    let (ws, prov) = cohort_windows(cfg, &PreprocessConfig::default()).unwrap();
    let n_records = prov.records.len();
    let positive = ws.iter().filter(|w| w.label == 1).count() as f64 / ws.len() as f64;
    let per_subject: Vec<(usize, usize)> = ["A", "B", "C"]
        .iter()
        .map(|s| {
            let recs: Vec<_> = prov.records.iter().filter(|r| r.subject_id == *s).collect();
            (recs.len(), recs.iter().filter(|r| r.label == 1).count())
        })
        .collect();
    let counts = class_counts(&ws);
    let ok = n_records == 231
        && ws.len() == 138_600
        && (positive * 1000.0).round() == 268.0
        && per_subject == [(78, 21), (65, 18), (88, 23)];
    (
        ok,
        format!(
            "{n_records} records, {} windows, {:.1}% positive, per subject {per_subject:?}, counts {counts:?}",
            ws.len(),
            100.0 * positive
        ),
        ws,
    )
}

fn intra(ds: &Dataset, t: &Topology) -> (bool, String, IntraSubjectRun) {
    let run = run_intra_subject(ds, t, &TrainConfig::default()).unwrap();
    let ok = run
        .subjects
        .iter()
        .all(|r| r.report.accuracy >= INTRA_ACC && r.report.auc >= INTRA_AUC);
    let rows: Vec<String> = run
        .subjects
        .iter()
        .map(|r| {
            format!(
                "{} acc {:.3} auc {:.3}",
                r.subject, r.report.accuracy, r.report.auc
            )
        })
        .collect();
    (ok && run.subjects.len() == 3, rows.join(", "), run)
}

fn loso(ds: &Dataset, t: &Topology, intra: &MetricSummary) -> (bool, String, ()) {
    let run = run_loso(ds, t, &TrainConfig::default()).unwrap();
    let m = run.mean;
    let ok = m.accuracy >= LOSO_ACC
        && m.auc >= LOSO_AUC
        && m.accuracy < intra.accuracy
        && m.auc < intra.auc;
    (
        ok,
        format!(
            "LOSO mean acc {:.3} auc {:.3}; intra mean acc {:.3} auc {:.3}",
            m.accuracy, m.auc, intra.accuracy, intra.auc
        ),
        (),
    )
}

fn null_control(t: &Topology) -> (bool, String, ()) {
    let mut ok = true;
    let mut rows = Vec::new();
    for seed in 0..3u64 {
        let cfg = CohortConfig {
            seed,
            ..CohortConfig::default()
        }
        .null_effect();
        let (ws, _) = cohort_windows(&cfg, &PreprocessConfig::default()).unwrap();
        let ds = Dataset::new(ws).unwrap();
        let run = run_intra_subject(
            &ds,
            t,
            &TrainConfig {
                seed,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        ok &= (run.mean.auc - 0.5).abs() <= NULL_AUC_BAND;
        let per: Vec<String> = run
            .subjects
            .iter()
            .map(|r| format!("{:.3}", r.report.auc))
            .collect();
        rows.push(format!(
            "seed {seed} mean auc {:.3} [{}]",
            run.mean.auc,
            per.join(" ")
        ));
    }
    (ok, rows.join("; "), ())
}

/// Seven-node inputs where only Somatization carries a signed class signal
/// and only Somatization -> Other3 propagates it.
fn decisive_edge_toy(t: &Topology, seed: u64) -> (ModelCheckpoint, Vec<(GraphInput, u8)>) {
    let planted = t.edge_index("Somatization", "Other3").unwrap();
    let som = t.node_index("Somatization").unwrap();
    let mut w = vec![0.0; t.edges().len()];
    w[planted] = 1.0;
    let a = propagation_matrix(t, Some(&w)).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let direction = [1.0, 0.5, -0.5, 1.0, 0.2];
    let data: Vec<(GraphInput, u8)> = (0..400)
        .map(|i| {
            let y = (i % 2) as u8;
            let s = (2.0 * f64::from(y) - 1.0) * r.random_range(0.05..1.0);
            let mut rows: Vec<[f64; 5]> = (0..t.n_nodes())
                .map(|_| std::array::from_fn(|_| noise.sample(&mut r)))
                .collect();
            for (v, d) in rows[som].iter_mut().zip(direction) {
                *v += s * d;
            }
            (GraphInput { rows }, y)
        })
        .collect();

    let mut params = GcnParams::glorot(&mut r);
    let mut flat = params.to_flat();
    let mut state = AdamState::new(N_PARAMS);
    let adam = AdamConfig {
        lr: 0.01,
        ..AdamConfig::default()
    };
    for _ in 0..8 {
        for batch in data.chunks(32) {
            let mut g = GcnParams::zeros();
            for (x, y) in batch {
                let c = forward(&params, &a, x).unwrap();
                let b = backward(&params, &a, &c, f64::from(*y), 1.0, false);
                g.add_scaled(&b.params, 1.0 / batch.len() as f64);
            }
            adam_step(&mut flat, &g.to_flat(), &mut state, &adam);
            params = GcnParams::from_flat(&flat).unwrap();
        }
    }
    let ck = ModelCheckpoint {
        format_version: FORMAT_VERSION,
        params,
        feature_mean: [0.0; 5],
        feature_std: [1.0; 5],
        topology_fingerprint: t.fingerprint(),
        topology: t.to_doc(),
        edge_weights: Some(w),
        train_config: TrainConfig::default(),
        seed,
        loss_curve: vec![],
    };
    (ck, data)
}

struct Explained {
    masks: Vec<Vec<EdgeMask>>,
    report: Vec<ExplanationReport>,
}

fn explain_cohort(ds: &Dataset, t: &Topology, run: &IntraSubjectRun) -> Explained {
    let cfg = ExplainerConfig::default();
    let mut masks = Vec::new();
    let mut report = Vec::new();
    for r in &run.subjects {
        let test = ds.select(&r.split.test_indices);
        let inst = select_instances(&test, &r.checkpoint, t, EXPLAIN_CAP, cfg.seed).unwrap();
        let m = explain_windows(&r.checkpoint, t, &inst, &cfg).unwrap();
        report.push(aggregate(&m, t, &cfg).unwrap());
        masks.push(m);
    }
    Explained { masks, report }
}

fn explainer(ds: &Dataset, t: &Topology, run: &IntraSubjectRun) -> (bool, String, Explained) {
    let planted = t.edge_index("Somatization", "Other3").unwrap();
    let mut recovered = 0;
    let mut toy_total = 0usize;
    let mut toy_non_increase = 0usize;
    let mut ones_gap: f64 = 0.0;
    for seed in 0..TOY_SEEDS {
        let (ck, data) = decisive_edge_toy(t, seed);
        let cfg = ExplainerConfig {
            seed,
            ..ExplainerConfig::default()
        };
        let masks: Vec<EdgeMask> = data
            .iter()
            .take(60)
            .enumerate()
            .map(|(i, (x, y))| {
                let key = InstanceKey {
                    subject_id: "T".into(),
                    record_id: "T-000".into(),
                    window_index: i,
                };
                explain_instance(&ck, t, x, key, *y, &cfg).unwrap()
            })
            .collect();
        toy_total += masks.len();
        toy_non_increase += masks
            .iter()
            .filter(|m| m.final_bce <= m.initial_bce)
            .count();
        let rep = aggregate(&masks, t, &cfg).unwrap();
        let top1 = |c: &fetopo::explain::ClassExplanation| {
            (0..c.edges.len())
                .max_by(|&a, &b| c.edges[a].mean.total_cmp(&c.edges[b].mean))
                .unwrap()
        };
        if rep.classes.len() == 2 && rep.classes.iter().all(|c| top1(c) == planted) {
            recovered += 1;
        }
        let ones = vec![1.0; t.edges().len()];
        let a = ck.propagation(t).unwrap();
        for (x, _) in data.iter().take(60) {
            let p = forward(&ck.params, &a, x).unwrap().p;
            ones_gap = ones_gap.max((masked_probability(&ck, t, x, &ones).unwrap() - p).abs());
        }
    }

    let explained = explain_cohort(ds, t, run);
    let ones = vec![1.0; t.edges().len()];
    for (r, masks) in run.subjects.iter().zip(&explained.masks) {
        let a = r.checkpoint.propagation(t).unwrap();
        let by_key: BTreeMap<_, _> = ds
            .windows()
            .iter()
            .map(|w| (InstanceKey::of(w), w))
            .collect();
        for m in masks {
            let w = by_key[&m.key];
            let x = r.checkpoint.graph_input(&w.features, t.n_nodes()).unwrap();
            let p = r.checkpoint.predict(&a, &w.features).unwrap();
            ones_gap =
                ones_gap.max((masked_probability(&r.checkpoint, t, &x, &ones).unwrap() - p).abs());
        }
    }
    let cohort_total: usize = explained.masks.iter().map(Vec::len).sum();
    let cohort_non_increase: usize = explained
        .masks
        .iter()
        .flatten()
        .filter(|m| m.final_bce <= m.initial_bce)
        .count();

    let mut schema_ok = true;
    for rep in &explained.report {
        schema_ok &= rep.classes.len() == 2;
        for c in &rep.classes {
            let csv = edges_csv(c);
            let rows: Vec<&str> = csv.lines().skip(1).collect();
            schema_ok &= rows.len() == t.edges().len()
                && rows.iter().any(|l| l.starts_with("Somatization,Other3,"))
                && rows.iter().any(|l| l.starts_with("Defense,Other3,"));
        }
    }

    let toy_rate = toy_non_increase as f64 / toy_total as f64;
    let cohort_rate = cohort_non_increase as f64 / cohort_total as f64;
    let ok = recovered == TOY_SEEDS
        && toy_rate >= NON_INCREASE
        && cohort_rate >= NON_INCREASE
        && ones_gap <= ALL_ONES_TOL
        && schema_ok;
    (
        ok,
        format!(
            "planted edge top-1 in {recovered}/{TOY_SEEDS} seeds; BCE non-increase toy {toy_non_increase}/{toy_total} ({:.1}%), cohort {cohort_non_increase}/{cohort_total} ({:.1}%); all-ones gap {ones_gap:.1e}; per-class edge rows {}",
            100.0 * toy_rate,
            100.0 * cohort_rate,
            if schema_ok { "complete" } else { "incomplete" }
        ),
        explained,
    )
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn jsonl(ds: &Dataset) -> Vec<u8> {
    let mut v = Vec::new();
    ds.write_jsonl(&mut v).unwrap();
    v
}

fn report_tree(run: &IntraSubjectRun, explained: &Explained) -> BTreeMap<PathBuf, Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    for (r, rep) in run.subjects.iter().zip(&explained.report) {
        let d = dir.path().join(&r.subject);
        fs::create_dir_all(&d).unwrap();
        r.checkpoint.save(&d.join("model.json")).unwrap();
        fetopo::train::write_report_files(&d.join("eval"), &r.report, &r.checkpoint.loss_curve)
            .unwrap();
        fetopo::explain::write_report_files(&d.join("explain"), rep).unwrap();
    }
    fs::write(
        dir.path().join("intra.json"),
        serde_json::to_string_pretty(run).unwrap(),
    )
    .unwrap();
    tree_bytes(dir.path())
}

fn determinism(
    cfg: &CohortConfig,
    ds: &Dataset,
    t: &Topology,
    run: &IntraSubjectRun,
    explained: &Explained,
) -> (bool, String, ()) {
    let small = CohortConfig {
        subjects: cfg
            .subjects
            .iter()
            .map(|s| SubjectSpec {
                n_records: 3,
                n_nssi_records: 1,
                ..s.clone()
            })
            .collect(),
        duration_s: 20,
        ..cfg.clone()
    };
    let both = CohortFormats {
        csv: true,
        tgam: true,
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_cohort(a.path(), &small, both).unwrap();
    write_cohort(b.path(), &small, both).unwrap();
    let files_same = tree_bytes(a.path()) == tree_bytes(b.path());

    let (ws, _) = cohort_windows(cfg, &PreprocessConfig::default()).unwrap();
    let windows_same = jsonl(&Dataset::new(ws).unwrap()) == jsonl(ds);

    let rerun = run_intra_subject(ds, t, &TrainConfig::default()).unwrap();
    let reexplained = explain_cohort(ds, t, &rerun);
    let first = report_tree(run, explained);
    let second = report_tree(&rerun, &reexplained);
    let reports_same = first == second;
    (
        files_same && windows_same && reports_same,
        format!(
            "cohort files {}, default-cohort windows {}, {} model/eval/explanation files {}",
            if files_same { "identical" } else { "differ" },
            if windows_same { "identical" } else { "differ" },
            first.len(),
            if reports_same { "identical" } else { "differ" }
        ),
        (),
    )
}

#[test]
fn acceptance_criteria() {
    let mut h = Harness {
        outcomes: Vec::new(),
    };
    let t = default_topology();
    let cfg = CohortConfig::default();

    h.run(1, "codec exactness", secs(1), codec_reference);
    h.run(2, "codec properties", secs(30), codec_properties);
    h.run(3, "dsp oracles", secs(30), dsp_oracles);
    h.run(4, "gradient check", secs(10), gradients);
    h.run(5, "metric oracles", secs(10), metric_oracles);
    let ws = h.run(6, "dataset shape", secs(300), || dataset_shape(&cfg));
    let ds = Dataset::new(ws).unwrap();
    let run = h.run(7, "intra-subject", secs(900), || intra(&ds, &t));
    h.run(8, "leave-one-subject-out", secs(2700), || {
        loso(&ds, &t, &run.mean)
    });
    h.run(9, "null-effect control", secs(900), || null_control(&t));
    let explained = h.run(10, "explainer", secs(300), || explainer(&ds, &t, &run));
    h.run(11, "determinism", None, || {
        determinism(&cfg, &ds, &t, &run, &explained)
    });

    let failed: Vec<String> = h
        .outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("{} {}", o.id, o.name))
        .collect();
    println!(
        "{}/{} criteria passed",
        h.outcomes.len() - failed.len(),
        h.outcomes.len()
    );
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
