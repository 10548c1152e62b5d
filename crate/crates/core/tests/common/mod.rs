#![allow(dead_code)]

use fetopo::dsp::FeatureWindow;
use fetopo::gcn::{backward, forward, loss_bce, GcnParams, GraphInput, IN_DIM};
use fetopo::tgam::{checksum, parse_payload, AsicPowers, TgamPacket, MAX_PAYLOAD, SYNC};
use fetopo::topology::PropagationMatrix;
use rand::Rng;

/// Largest raw-sample count that still fits beside every optional row.
pub const MAX_RAW: usize = (MAX_PAYLOAD - 32) / 4;

pub fn random_packet<R: Rng>(rng: &mut R) -> TgamPacket {
    TgamPacket {
        poor_signal: rng.random_bool(0.7).then(|| rng.random_range(0..=200)),
        band_powers: rng
            .random_bool(0.7)
            .then(|| AsicPowers::from_array(std::array::from_fn(|_| rng.random_range(0..1 << 24)))),
        attention: rng.random_bool(0.5).then(|| rng.random_range(0..=100)),
        meditation: rng.random_bool(0.5).then(|| rng.random_range(0..=100)),
        raw_samples: (0..rng.random_range(0..=MAX_RAW))
            .map(|_| rng.random())
            .collect(),
    }
}

/// True when some sync run starting before `before` heads a frame that
/// passes its checksum and parses.
pub fn valid_frame_starts_before(stream: &[u8], before: usize) -> bool {
    (0..before.min(stream.len())).any(|s| {
        if stream[s] != SYNC {
            return false;
        }
        let mut j = s;
        while j < stream.len() && stream[j] == SYNC {
            j += 1;
        }
        let Some(&plen) = stream.get(j) else {
            return false;
        };
        let plen = plen as usize;
        let chk = j + 1 + plen;
        plen <= MAX_PAYLOAD
            && chk < stream.len()
            && checksum(&stream[j + 1..chk]) == stream[chk]
            && parse_payload(&stream[j + 1..chk]).is_ok()
    })
}

/// Fraction of positive/negative pairs ranked correctly, ties counting half.
pub fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs as f64
}

pub fn random_graph_input<R: Rng>(rng: &mut R, n: usize) -> GraphInput {
    GraphInput {
        rows: (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
            .collect(),
    }
}

/// Smallest distance of any hidden pre-activation from the ReLU kink.
pub fn kink_margin(params: &GcnParams, a: &PropagationMatrix, x: &GraphInput) -> f64 {
    let c = forward(params, a, x).unwrap();
    c.z1.iter()
        .chain(&c.z2)
        .flatten()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Largest relative gap between the analytic gradient and central
/// differences of the BCE loss, over every parameter.
pub fn gradient_check(
    params: &GcnParams,
    a: &PropagationMatrix,
    x: &GraphInput,
    y: f64,
    eps: f64,
) -> f64 {
    let cache = forward(params, a, x).unwrap();
    let analytic = backward(params, a, &cache, y, 1.0, false).params.to_flat();
    let flat = params.to_flat();
    let loss = |v: &[f64]| {
        let p = GcnParams::from_flat(v).unwrap();
        loss_bce(forward(&p, a, x).unwrap().p, y)
    };
    let mut worst: f64 = 0.0;
    for k in 0..flat.len() {
        let mut up = flat.clone();
        let mut down = flat.clone();
        up[k] += eps;
        down[k] -= eps;
        let numeric = (loss(&up) - loss(&down)) / (2.0 * eps);
        let rel = (analytic[k] - numeric).abs() / (analytic[k].abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

pub fn window(
    subject: &str,
    record: usize,
    index: usize,
    label: u8,
    f: [f64; IN_DIM],
) -> FeatureWindow {
    FeatureWindow {
        subject_id: subject.into(),
        record_id: format!("{subject}-{record:03}"),
        window_index: index,
        label,
        features: f,
        rejected: false,
    }
}

/// Two subjects whose positive windows carry twenty times the beta power.
pub fn separable<R: Rng>(rng: &mut R) -> Vec<FeatureWindow> {
    let mut out = Vec::new();
    for s in ["A", "B"] {
        for r in 0..10 {
            let label = u8::from(r < 4);
            for k in 0..50 {
                let mut f: [f64; IN_DIM] =
                    std::array::from_fn(|_| 10f64.powf(rng.random_range(0.5..1.5)));
                if label == 1 {
                    f[3] *= 20.0;
                }
                out.push(window(s, r, k, label, f));
            }
        }
    }
    out
}
