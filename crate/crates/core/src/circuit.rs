//! Synapse multigraph to fixed recurrent matrix, plus diagnostics and the
//! density-matched random control.

use std::collections::HashMap;

use nalgebra::{DMatrix, Schur};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devsim::SimState;
use crate::seeds;

#[derive(Debug, Error)]
pub enum CircuitError {
    #[error("empty circuit: no mature neurons")]
    EmptyCircuit,
    #[error("synapse references cell {0}, which is not a mature neuron")]
    DanglingSynapse(u64),
    #[error("random topology needs at least 2 neurons, got {0}")]
    TooFewNeurons(usize),
    #[error("circuit file: {0}")]
    File(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub pre: usize,
    pub post: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynapseGraph {
    pub neuron_ids: Vec<u64>,
    pub edges: Vec<Edge>,
}

impl SynapseGraph {
    pub fn n(&self) -> usize {
        self.neuron_ids.len()
    }
}

/// Dense row-major N x N matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    pub n: usize,
    pub values: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }

    fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.values)
    }
}

/// Mature neurons in ascending id order, with the whole synapse ledger
/// re-indexed onto them.
pub fn extract_circuit(state: &SimState) -> Result<SynapseGraph, CircuitError> {
    let mut neuron_ids: Vec<u64> = state
        .cells
        .iter()
        .filter(|c| c.mature)
        .map(|c| c.id)
        .collect();
    if neuron_ids.is_empty() {
        return Err(CircuitError::EmptyCircuit);
    }
    neuron_ids.sort_unstable();
    let index: HashMap<u64, usize> = neuron_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let lookup = |id: u64| index.get(&id).copied().ok_or(CircuitError::DanglingSynapse(id));
    let edges = state
        .synapses
        .iter()
        .map(|s| {
            Ok(Edge {
                pre: lookup(s.pre)?,
                post: lookup(s.post)?,
                weight: s.weight,
            })
        })
        .collect::<Result<Vec<_>, CircuitError>>()?;
    Ok(SynapseGraph { neuron_ids, edges })
}

/// Sums parallel edges; self-loops are dropped.
pub fn to_weight_matrix(g: &SynapseGraph) -> WeightMatrix {
    let mut w = WeightMatrix::zeros(g.n());
    for e in &g.edges {
        if e.pre != e.post {
            w.values[e.pre * w.n + e.post] += e.weight;
        }
    }
    w
}

/// Divides each nonzero row by its sum. Zero rows stay zero.
pub fn row_normalize(w: &WeightMatrix) -> WeightMatrix {
    let mut out = w.clone();
    for row in out.values.chunks_mut(w.n.max(1)) {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|x| *x /= s);
        }
    }
    out
}

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n_neurons: usize,
    pub n_synapses: usize,
    /// In plus out degree averaged over neurons: 2E / N.
    pub avg_total_degree: f64,
    pub total_weight: f64,
    /// Edge weights in ten equal bins over [0, 1]; the last bin is closed.
    pub weight_histogram: Vec<usize>,
}

pub fn graph_stats(g: &SynapseGraph) -> GraphStats {
    let mut hist = vec![0usize; HISTOGRAM_BINS];
    for e in &g.edges {
        let bin = ((e.weight * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        hist[bin] += 1;
    }
    let n = g.n();
    GraphStats {
        n_neurons: n,
        n_synapses: g.edges.len(),
        avg_total_degree: if n == 0 { 0.0 } else { 2.0 * g.edges.len() as f64 / n as f64 },
        total_weight: g.edges.iter().map(|e| e.weight).sum(),
        weight_histogram: hist,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralStats {
    pub spectral_radius: f64,
    /// Largest eigenvalue moduli, descending.
    pub top_moduli: Vec<f64>,
    pub iterations: usize,
    pub block_size: usize,
    pub converged: bool,
}

pub const SPECTRAL_TOL: f64 = 1e-6;
pub const SPECTRAL_ATTEMPT_ITER: usize = 2000;
pub const SPECTRAL_STABLE: usize = 20;
const SPECTRAL_TOP: usize = 5;

/// Orthogonal (block power) iteration on a subspace wider than the number of
/// requested eigenvalues. Moduli are read from the Ritz values of the small
/// projected matrix. An attempt converges once the moduli have stayed within
/// `SPECTRAL_TOL` (relative to the largest) for `SPECTRAL_STABLE` consecutive
/// iterations; otherwise the block is doubled and iteration restarts. A block
/// as wide as the matrix is exact after one step, so this always terminates.
pub fn spectral_stats(w: &WeightMatrix) -> SpectralStats {
    let n = w.n;
    let k = SPECTRAL_TOP.min(n);
    if n == 0 || w.values.iter().all(|&x| x == 0.0) {
        return SpectralStats {
            spectral_radius: 0.0,
            top_moduli: vec![0.0; k],
            iterations: 0,
            block_size: 0,
            converged: true,
        };
    }
    let a = w.to_dmatrix();
    let mut rng = seeds::rng(0x5eed);
    let mut p = (2 * k + 2).min(n);
    let mut iterations = 0;
    loop {
        let start = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut q = start.qr().q();
        let mut history: Vec<Vec<f64>> = Vec::new();
        for _ in 0..SPECTRAL_ATTEMPT_ITER {
            iterations += 1;
            q = (&a * &q).qr().q();
            let h = q.transpose() * &a * &q;
            let Some(schur) = Schur::try_new(h, f64::EPSILON, 10_000) else {
                continue;
            };
            let mut m: Vec<f64> = schur.complex_eigenvalues().iter().map(|z| z.norm()).collect();
            m.sort_by(|x, y| y.total_cmp(x));
            m.truncate(k);
            history.push(m);
            let exact = p == n;
            if exact || stable(&history) {
                let moduli = history.pop().unwrap();
                return SpectralStats {
                    spectral_radius: moduli[0],
                    top_moduli: moduli,
                    iterations,
                    block_size: p,
                    converged: true,
                };
            }
        }
        if p == n {
            let moduli = history.pop().unwrap_or_else(|| vec![f64::NAN; k]);
            return SpectralStats {
                spectral_radius: moduli[0],
                top_moduli: moduli,
                iterations,
                block_size: p,
                converged: false,
            };
        }
        p = (2 * p).min(n);
    }
}

fn stable(history: &[Vec<f64>]) -> bool {
    if history.len() <= SPECTRAL_STABLE {
        return false;
    }
    let last = &history[history.len() - 1];
    let scale = last[0].max(f64::MIN_POSITIVE);
    history[history.len() - 1 - SPECTRAL_STABLE..]
        .iter()
        .all(|m| m.iter().zip(last).all(|(x, y)| (x - y).abs() <= SPECTRAL_TOL * scale))
}

/// `n_synapses` directed edges drawn uniformly over ordered pairs (i != j)
/// with replacement, weights uniform on (0, 1].
pub fn random_topology(n_neurons: usize, n_synapses: usize, seed: u64) -> Result<SynapseGraph, CircuitError> {
    if n_neurons < 2 {
        return Err(CircuitError::TooFewNeurons(n_neurons));
    }
    let mut rng = seeds::rng(seed);
    let pairs = n_neurons * (n_neurons - 1);
    let edges = (0..n_synapses)
        .map(|_| {
            let u = rng.random_range(0..pairs);
            let pre = u / (n_neurons - 1);
            let off = u % (n_neurons - 1);
            let post = if off >= pre { off + 1 } else { off };
            let weight = 1.0 - rng.random::<f64>();
            Edge { pre, post, weight }
        })
        .collect();
    Ok(SynapseGraph {
        neuron_ids: (0..n_neurons as u64).collect(),
        edges,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitStats {
    pub graph: GraphStats,
    pub spectral: SpectralStats,
}

/// The on-disk contract between development and training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitFile {
    pub source: String,
    pub n: usize,
    pub neuron_ids: Vec<u64>,
    /// Row-normalized W, row-major.
    pub w: Vec<f64>,
    pub stats: CircuitStats,
}

impl CircuitFile {
    pub fn build(source: &str, g: &SynapseGraph) -> Self {
        let w = row_normalize(&to_weight_matrix(g));
        let stats = CircuitStats {
            graph: graph_stats(g),
            spectral: spectral_stats(&w),
        };
        Self {
            source: source.to_owned(),
            n: w.n,
            neuron_ids: g.neuron_ids.clone(),
            w: w.values,
            stats,
        }
    }

    pub fn weight_matrix(&self) -> WeightMatrix {
        WeightMatrix {
            n: self.n,
            values: self.w.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("circuit serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CircuitError> {
        let c: Self = serde_json::from_str(text).map_err(|e| CircuitError::File(e.to_string()))?;
        if c.w.len() != c.n * c.n || c.neuron_ids.len() != c.n {
            return Err(CircuitError::File(format!(
                "matrix has {} entries and {} ids for n = {}",
                c.w.len(),
                c.neuron_ids.len(),
                c.n
            )));
        }
        Ok(c)
    }
}
