//! Two-layer graph convolutional binary classifier.
//!
//! ```text
//! H1 = ReLU(A X W1 + b1)
//! H2 = ReLU(A H1 W2 + b2)
//! g  = mean over nodes of H2
//! p  = sigmoid(g . w_out + b_out)
//! ```
//!
//! `A` is a propagation matrix from [`crate::topology`]; `X` holds the same
//! five standardized band features on every node row. Gradients are
//! computed analytically, including the gradient with respect to `A` used by
//! the edge-mask explainer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::PropagationMatrix;

pub const IN_DIM: usize = 5;
pub const HIDDEN: usize = 8;
pub const N_PARAMS: usize = IN_DIM * HIDDEN + HIDDEN + HIDDEN * HIDDEN + HIDDEN + HIDDEN + 1;

pub const PROB_CLAMP: f64 = 1e-7;
/// Offset inside the log transform used by [`standardize`].
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    pub w1: [[f64; HIDDEN]; IN_DIM],
    pub b1: [f64; HIDDEN],
    pub w2: [[f64; HIDDEN]; HIDDEN],
    pub b2: [f64; HIDDEN],
    pub w_out: [f64; HIDDEN],
    pub b_out: f64,
}

impl Default for GcnParams {
    fn default() -> Self {
        Self::zeros()
    }
}

impl GcnParams {
    pub fn zeros() -> Self {
        GcnParams {
            w1: [[0.0; HIDDEN]; IN_DIM],
            b1: [0.0; HIDDEN],
            w2: [[0.0; HIDDEN]; HIDDEN],
            b2: [0.0; HIDDEN],
            w_out: [0.0; HIDDEN],
            b_out: 0.0,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng>(rng: &mut R) -> Self {
        let mut p = Self::zeros();
        let limit = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let l1 = limit(IN_DIM, HIDDEN);
        p.w1.iter_mut()
            .flatten()
            .for_each(|w| *w = rng.random_range(-l1..l1));
        let l2 = limit(HIDDEN, HIDDEN);
        p.w2.iter_mut()
            .flatten()
            .for_each(|w| *w = rng.random_range(-l2..l2));
        let l3 = limit(HIDDEN, 1);
        p.w_out
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-l3..l3));
        p
    }

    /// Parameters in the order w1 (row-major), b1, w2 (row-major), b2, w_out, b_out.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(N_PARAMS);
        v.extend(self.w1.iter().flatten());
        v.extend(&self.b1);
        v.extend(self.w2.iter().flatten());
        v.extend(&self.b2);
        v.extend(&self.w_out);
        v.push(self.b_out);
        v
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != N_PARAMS {
            return Err(Error::invalid(format!(
                "expected {N_PARAMS} parameters, got {}",
                v.len()
            )));
        }
        let mut p = Self::zeros();
        let mut it = v.iter().copied();
        p.w1.iter_mut()
            .flatten()
            .for_each(|w| *w = it.next().unwrap());
        p.b1.iter_mut().for_each(|w| *w = it.next().unwrap());
        p.w2.iter_mut()
            .flatten()
            .for_each(|w| *w = it.next().unwrap());
        p.b2.iter_mut().for_each(|w| *w = it.next().unwrap());
        p.w_out.iter_mut().for_each(|w| *w = it.next().unwrap());
        p.b_out = it.next().unwrap();
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &GcnParams, scale: f64) {
        for (a, b) in self.w1.iter_mut().flatten().zip(other.w1.iter().flatten()) {
            *a += scale * b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += scale * b;
        }
        for (a, b) in self.w2.iter_mut().flatten().zip(other.w2.iter().flatten()) {
            *a += scale * b;
        }
        for (a, b) in self.b2.iter_mut().zip(&other.b2) {
            *a += scale * b;
        }
        for (a, b) in self.w_out.iter_mut().zip(&other.w_out) {
            *a += scale * b;
        }
        self.b_out += scale * other.b_out;
    }
}

/// Node feature matrix, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub rows: Vec<[f64; IN_DIM]>,
}

impl GraphInput {
    /// The same feature vector on every one of `n_nodes` rows.
    pub fn replicated(features: [f64; IN_DIM], n_nodes: usize) -> Self {
        GraphInput {
            rows: vec![features; n_nodes],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.rows.len()
    }
}

/// `(log10(feature + 1e-12) - mean) / std`, elementwise.
pub fn standardize(
    features: &[f64; IN_DIM],
    mean: &[f64; IN_DIM],
    std: &[f64; IN_DIM],
) -> Result<[f64; IN_DIM]> {
    if let Some(s) = std.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::invalid(format!(
            "standard deviation {s} must be positive"
        )));
    }
    if let Some(f) = features.iter().find(|f| !(**f >= 0.0)) {
        return Err(Error::invalid(format!("feature {f} must be non-negative")));
    }
    let mut out = [0.0; IN_DIM];
    for i in 0..IN_DIM {
        out[i] = (log_feature(features[i]) - mean[i]) / std[i];
    }
    Ok(out)
}

pub fn log_feature(v: f64) -> f64 {
    (v + LOG_FLOOR).log10()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy with the probability clamped to `[1e-7, 1 - 1e-7]`.
pub fn loss_bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Intermediates of one forward pass, kept for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub x: Vec<[f64; IN_DIM]>,
    pub ax: Vec<[f64; IN_DIM]>,
    pub z1: Vec<[f64; HIDDEN]>,
    pub h1: Vec<[f64; HIDDEN]>,
    pub ah: Vec<[f64; HIDDEN]>,
    pub z2: Vec<[f64; HIDDEN]>,
    pub h2: Vec<[f64; HIDDEN]>,
    pub pooled: [f64; HIDDEN],
    pub logit: f64,
    pub p: f64,
}

fn propagate<const D: usize>(a: &PropagationMatrix, x: &[[f64; D]]) -> Vec<[f64; D]> {
    let n = a.n();
    (0..n)
        .map(|i| {
            let mut acc = [0.0; D];
            for (j, &aij) in a.row(i).iter().enumerate() {
                if aij != 0.0 {
                    for d in 0..D {
                        acc[d] += aij * x[j][d];
                    }
                }
            }
            acc
        })
        .collect()
}

fn dense<const I: usize>(
    x: &[[f64; I]],
    w: &[[f64; HIDDEN]; I],
    b: &[f64; HIDDEN],
) -> Vec<[f64; HIDDEN]> {
    x.iter()
        .map(|row| {
            let mut out = *b;
            for (xi, wi) in row.iter().zip(w) {
                for h in 0..HIDDEN {
                    out[h] += xi * wi[h];
                }
            }
            out
        })
        .collect()
}

fn relu(z: &[[f64; HIDDEN]]) -> Vec<[f64; HIDDEN]> {
    z.iter().map(|r| r.map(|v| v.max(0.0))).collect()
}

pub fn forward(params: &GcnParams, a: &PropagationMatrix, x: &GraphInput) -> Result<ForwardCache> {
    let n = a.n();
    if x.n_nodes() != n {
        return Err(Error::invalid(format!(
            "input has {} node rows, propagation matrix {n}",
            x.n_nodes()
        )));
    }
    let ax = propagate(a, &x.rows);
    let z1 = dense(&ax, &params.w1, &params.b1);
    let h1 = relu(&z1);
    let ah = propagate(a, &h1);
    let z2 = dense(&ah, &params.w2, &params.b2);
    let h2 = relu(&z2);
    let mut pooled = [0.0; HIDDEN];
    for row in &h2 {
        for h in 0..HIDDEN {
            pooled[h] += row[h];
        }
    }
    pooled.iter_mut().for_each(|v| *v /= n as f64);
    let logit = params.b_out
        + pooled
            .iter()
            .zip(&params.w_out)
            .map(|(g, w)| g * w)
            .sum::<f64>();
    if !logit.is_finite() || pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite activation in forward pass"));
    }
    Ok(ForwardCache {
        x: x.rows.clone(),
        ax,
        z1,
        h1,
        ah,
        z2,
        h2,
        pooled,
        logit,
        p: sigmoid(logit),
    })
}

/// Gradients of `weight * BCE(p, y)` for one sample.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: GcnParams,
    /// `dL/dA`, row-major, when requested.
    pub adjacency: Option<Vec<f64>>,
}

/// Analytic backward pass.
///
/// Uses `dL/dlogit = weight * (p - y)`, the derivative of the unclamped
/// cross-entropy; it coincides with the clamped loss wherever the clamp is
/// inactive. The ReLU derivative at zero is taken as zero.
pub fn backward(
    params: &GcnParams,
    a: &PropagationMatrix,
    cache: &ForwardCache,
    y: f64,
    weight: f64,
    want_adjacency: bool,
) -> Gradients {
    let n = a.n();
    let dlogit = weight * (cache.p - y);
    let mut g = GcnParams::zeros();
    g.b_out = dlogit;
    for h in 0..HIDDEN {
        g.w_out[h] = dlogit * cache.pooled[h];
    }
    let dpool: [f64; HIDDEN] = params.w_out.map(|w| dlogit * w / n as f64);

    // layer 2
    let dz2: Vec<[f64; HIDDEN]> = cache
        .z2
        .iter()
        .map(|z| {
            let mut d = [0.0; HIDDEN];
            for h in 0..HIDDEN {
                if z[h] > 0.0 {
                    d[h] = dpool[h];
                }
            }
            d
        })
        .collect();
    let mut dah = vec![[0.0; HIDDEN]; n];
    for i in 0..n {
        for h in 0..HIDDEN {
            let d = dz2[i][h];
            if d == 0.0 {
                continue;
            }
            g.b2[h] += d;
            for k in 0..HIDDEN {
                g.w2[k][h] += cache.ah[i][k] * d;
                dah[i][k] += d * params.w2[k][h];
            }
        }
    }
    // dH1 = A^T dAH
    let mut dh1 = vec![[0.0; HIDDEN]; n];
    for i in 0..n {
        for (j, &aij) in a.row(i).iter().enumerate() {
            if aij != 0.0 {
                for k in 0..HIDDEN {
                    dh1[j][k] += aij * dah[i][k];
                }
            }
        }
    }

    // layer 1
    let mut dax = vec![[0.0; IN_DIM]; n];
    for i in 0..n {
        for h in 0..HIDDEN {
            if cache.z1[i][h] <= 0.0 {
                continue;
            }
            let d = dh1[i][h];
            g.b1[h] += d;
            for f in 0..IN_DIM {
                g.w1[f][h] += cache.ax[i][f] * d;
                dax[i][f] += d * params.w1[f][h];
            }
        }
    }

    let adjacency = want_adjacency.then(|| {
        let mut da = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..HIDDEN {
                    s += dah[i][k] * cache.h1[j][k];
                }
                for f in 0..IN_DIM {
                    s += dax[i][f] * cache.x[j][f];
                }
                da[i * n + j] = s;
            }
        }
        da
    });
    Gradients {
        params: g,
        adjacency,
    }
}
