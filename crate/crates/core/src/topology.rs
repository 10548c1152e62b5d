//! The fixed seven-node functional graph and its propagation matrices.
//!
//! Node order is fixed and shared by every matrix in the crate: row `i` of a
//! propagation matrix aggregates messages arriving at node `i`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ENDOGENOUS: &str = "Endogenous";
pub const EXOGENOUS: &str = "Exogenous";
pub const DEFENSE: &str = "Defense";
pub const SOMATIZATION: &str = "Somatization";
pub const OTHER1: &str = "Other1";
pub const OTHER2: &str = "Other2";
pub const OTHER3: &str = "Other3";

pub const NODE_NAMES: [&str; 7] = [
    ENDOGENOUS,
    EXOGENOUS,
    DEFENSE,
    SOMATIZATION,
    OTHER1,
    OTHER2,
    OTHER3,
];
pub const N_NODES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `A[i][j] = w(j->i) / (1 + sum_k w(k->i))`, unit self-loop; rows sum to 1.
    DirectedInDegree,
    /// `D^-1/2 (A + A^T + I) D^-1/2`.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    nodes: Vec<String>,
    edges: Vec<Edge>,
    normalization: Normalization,
}

/// Serialized form: `{"nodes": [...], "edges": [["a","b"], ...], "normalization": "..."}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDoc {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
    #[serde(default = "default_normalization")]
    pub normalization: Normalization,
}

fn default_normalization() -> Normalization {
    Normalization::DirectedInDegree
}

impl Topology {
    /// Validates and builds a topology. With `relax` the node count may differ
    /// from seven.
    pub fn new(
        nodes: Vec<String>,
        edges: Vec<Edge>,
        normalization: Normalization,
        relax: bool,
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Topology("graph has no nodes".into()));
        }
        if !relax && nodes.len() != N_NODES {
            return Err(Error::Topology(format!(
                "expected {N_NODES} nodes, found {}",
                nodes.len()
            )));
        }
        let mut names = BTreeSet::new();
        for n in &nodes {
            if !names.insert(n.as_str()) {
                return Err(Error::Topology(format!("duplicate node name {n:?}")));
            }
        }
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.source >= nodes.len() || e.target >= nodes.len() {
                return Err(Error::Topology(format!(
                    "edge {e:?} references a missing node"
                )));
            }
            if e.source == e.target {
                return Err(Error::Topology(format!("self-loop on {}", nodes[e.source])));
            }
            if !seen.insert(*e) {
                return Err(Error::Topology(format!(
                    "duplicate edge {} -> {}",
                    nodes[e.source], nodes[e.target]
                )));
            }
        }
        Ok(Topology {
            nodes,
            edges,
            normalization,
        })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn edge_index(&self, source: &str, target: &str) -> Option<usize> {
        let (s, t) = (self.node_index(source)?, self.node_index(target)?);
        self.edges
            .iter()
            .position(|e| e.source == s && e.target == t)
    }

    pub fn edge_names(&self, e: &Edge) -> (&str, &str) {
        (&self.nodes[e.source], &self.nodes[e.target])
    }

    pub fn to_doc(&self) -> TopologyDoc {
        TopologyDoc {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| {
                    let (s, t) = self.edge_names(e);
                    (s.to_string(), t.to_string())
                })
                .collect(),
            normalization: self.normalization,
        }
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(&self.to_doc()).expect("topology serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Nodes reachable from `from` along directed edges (including `from`).
    pub fn reachable_from(&self, from: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([from]);
        let mut stack = vec![from];
        while let Some(u) = stack.pop() {
            for e in self.edges.iter().filter(|e| e.source == u) {
                if seen.insert(e.target) {
                    stack.push(e.target);
                }
            }
        }
        seen
    }

    /// All elementary directed cycles, each rotated to start at its smallest
    /// node index.
    pub fn simple_cycles(&self) -> Vec<Vec<usize>> {
        fn dfs(
            t: &Topology,
            start: usize,
            u: usize,
            path: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            for e in t.edges.iter().filter(|e| e.source == u) {
                let v = e.target;
                if v == start {
                    out.push(path.clone());
                } else if v > start && !path.contains(&v) {
                    path.push(v);
                    dfs(t, start, v, path, out);
                    path.pop();
                }
            }
        }
        let mut out = Vec::new();
        for s in 0..self.n_nodes() {
            dfs(self, s, s, &mut vec![s], &mut out);
        }
        out
    }

    /// Copy of the topology with every edge touching `node` removed.
    pub fn without_node_edges(&self, node: usize) -> Topology {
        Topology {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .copied()
                .filter(|e| e.source != node && e.target != node)
                .collect(),
            normalization: self.normalization,
        }
    }
}

/// The canonical fourteen-edge graph.
///
/// Arousal backbone: Endogenous <-> Exogenous and both feeding Defense,
/// Somatization and Other1. Two loops share Other1 and Other3 to form the
/// figure-eight: Other1 -> Other2 -> Somatization -> Other3 -> Other1, and
/// Other3 <-> Defense.
pub fn default_topology() -> Topology {
    const EDGES: [(&str, &str); 14] = [
        (ENDOGENOUS, EXOGENOUS),
        (EXOGENOUS, ENDOGENOUS),
        (ENDOGENOUS, DEFENSE),
        (ENDOGENOUS, SOMATIZATION),
        (EXOGENOUS, DEFENSE),
        (EXOGENOUS, SOMATIZATION),
        (ENDOGENOUS, OTHER1),
        (EXOGENOUS, OTHER1),
        (OTHER1, OTHER2),
        (OTHER2, SOMATIZATION),
        (SOMATIZATION, OTHER3),
        (OTHER3, OTHER1),
        (OTHER3, DEFENSE),
        (DEFENSE, OTHER3),
    ];
    let doc = TopologyDoc {
        nodes: NODE_NAMES.iter().map(|s| s.to_string()).collect(),
        edges: EDGES
            .iter()
            .map(|(s, t)| (s.to_string(), t.to_string()))
            .collect(),
        normalization: Normalization::DirectedInDegree,
    };
    load_topology(&doc, false).expect("default topology is valid")
}

/// Builds a topology from its document form, resolving node names.
pub fn load_topology(doc: &TopologyDoc, relax: bool) -> Result<Topology> {
    let index = |name: &str| {
        doc.nodes
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Topology(format!("edge references unknown node {name:?}")))
    };
    let edges = doc
        .edges
        .iter()
        .map(|(s, t)| {
            Ok(Edge {
                source: index(s)?,
                target: index(t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Topology::new(doc.nodes.clone(), edges, doc.normalization, relax)
}

pub fn parse_topology_json(text: &str, relax: bool) -> Result<Topology> {
    let doc: TopologyDoc = serde_json::from_str(text)?;
    load_topology(&doc, relax)
}

// ---------------------------------------------------------------------------
// Propagation
// ---------------------------------------------------------------------------

/// Dense row-major `n x n` propagation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationMatrix {
    n: usize,
    data: Vec<f64>,
    pub fingerprint: String,
    pub normalization: Normalization,
}

impl PropagationMatrix {
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        fingerprint: String,
        normalization: Normalization,
    ) -> Self {
        let n = rows.len();
        assert!(
            rows.iter().all(|r| r.len() == n),
            "propagation matrix must be square"
        );
        PropagationMatrix {
            n,
            data: rows.into_iter().flatten().collect(),
            fingerprint,
            normalization,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        PropagationMatrix {
            n,
            data,
            fingerprint: String::new(),
            normalization: Normalization::DirectedInDegree,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Conjugation by a node permutation: node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                out.set(perm[i], perm[j], self.get(i, j));
            }
        }
        out
    }
}

fn resolve_weights(t: &Topology, edge_weights: Option<&[f64]>) -> Result<Vec<f64>> {
    match edge_weights {
        None => Ok(vec![1.0; t.edges.len()]),
        Some(w) => {
            if w.len() != t.edges.len() {
                return Err(Error::Topology(format!(
                    "{} edge weights supplied for {} edges",
                    w.len(),
                    t.edges.len()
                )));
            }
            if let Some(bad) = w.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Topology(format!("edge weight {bad} outside [0, 1]")));
            }
            Ok(w.to_vec())
        }
    }
}

/// Normalized propagation matrix including unit self-loops. Missing weights
/// default to one; supplied weights must lie in `[0, 1]`.
pub fn propagation_matrix(t: &Topology, edge_weights: Option<&[f64]>) -> Result<PropagationMatrix> {
    Ok(edge_contributions(t, edge_weights)?.assemble(None))
}

/// Decomposition `A = base + sum_e scale_e * C_e` of a propagation matrix,
/// where `C_e` holds the normalized entries that edge `e` contributes and
/// `base` the self-loop part. Scaling every `C_e` by one reproduces
/// [`propagation_matrix`].
#[derive(Debug, Clone)]
pub struct EdgeContributions {
    pub n: usize,
    pub base: Vec<f64>,
    /// Per edge: the `(row, col, value)` entries it contributes.
    pub entries: Vec<Vec<(usize, usize, f64)>>,
    pub fingerprint: String,
    pub normalization: Normalization,
}

impl EdgeContributions {
    /// Matrix with each edge's contribution multiplied by `scale[e]`
    /// (all ones when `None`).
    pub fn assemble(&self, scale: Option<&[f64]>) -> PropagationMatrix {
        let n = self.n;
        let mut data = self.base.clone();
        for (e, entries) in self.entries.iter().enumerate() {
            let s = scale.map_or(1.0, |s| s[e]);
            for &(i, j, v) in entries {
                data[i * n + j] += s * v;
            }
        }
        PropagationMatrix {
            n,
            data,
            fingerprint: self.fingerprint.clone(),
            normalization: self.normalization,
        }
    }

    /// `dL/dscale_e = sum_ij dL/dA_ij * C_e[i][j]` given `dL/dA` row-major.
    pub fn scale_gradient(&self, grad_a: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .map(|entries| {
                entries
                    .iter()
                    .map(|&(i, j, v)| grad_a[i * self.n + j] * v)
                    .sum()
            })
            .collect()
    }
}

pub fn edge_contributions(t: &Topology, edge_weights: Option<&[f64]>) -> Result<EdgeContributions> {
    let w = resolve_weights(t, edge_weights)?;
    let n = t.n_nodes();
    let mut base = vec![0.0; n * n];
    let entries = match t.normalization {
        Normalization::DirectedInDegree => {
            let mut in_weight = vec![0.0; n];
            for (e, &we) in t.edges.iter().zip(&w) {
                in_weight[e.target] += we;
            }
            for i in 0..n {
                base[i * n + i] = 1.0 / (1.0 + in_weight[i]);
            }
            t.edges
                .iter()
                .zip(&w)
                .map(|(e, &we)| vec![(e.target, e.source, we / (1.0 + in_weight[e.target]))])
                .collect()
        }
        Normalization::Symmetric => {
            let mut degree = vec![1.0; n];
            for (e, &we) in t.edges.iter().zip(&w) {
                degree[e.source] += we;
                degree[e.target] += we;
            }
            for i in 0..n {
                base[i * n + i] = 1.0 / degree[i];
            }
            t.edges
                .iter()
                .zip(&w)
                .map(|(e, &we)| {
                    let v = we / (degree[e.source] * degree[e.target]).sqrt();
                    vec![(e.target, e.source, v), (e.source, e.target, v)]
                })
                .collect()
        }
    };
    Ok(EdgeContributions {
        n,
        base,
        entries,
        fingerprint: t.fingerprint(),
        normalization: t.normalization,
    })
}
