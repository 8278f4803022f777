//! Agent-based growth of a cell population from a single stem cell.
//!
//! Each step runs five phases in a fixed order: division, migration,
//! differentiation, maturation, synaptogenesis. Every random draw comes from
//! one ChaCha8 stream owned by the [`SimState`]; within a phase, cells draw in
//! ascending id order, so a run is a pure function of (rules, config).
//!
//! Draws per step:
//! - division: one uniform per non-mature cell (until the cap is hit), plus
//!   `dims` standard normals for each daughter's offset;
//! - migration: `dims` standard normals per cell;
//! - maturation: one uniform per neuronal progenitor once
//!   `step >= maturation_start`.
//!
//! Normals come from `rand_distr::StandardNormal` (ziggurat).

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grn::{GeneId, RuleSet};
use crate::seeds;

#[derive(Debug, Error)]
pub enum DevError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("marker gene `{0}` is not in the rule set")]
    UnknownMarker(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellType {
    Stem,
    NeuronalProgenitor,
    OligodendrocyteProgenitor,
    Neuron,
    Undefined,
}

impl CellType {
    /// Census row order.
    pub const ALL: [CellType; 5] = [
        CellType::NeuronalProgenitor,
        CellType::OligodendrocyteProgenitor,
        CellType::Stem,
        CellType::Undefined,
        CellType::Neuron,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CellType::Stem => "Stem cell",
            CellType::NeuronalProgenitor => "Neuronal progenitor",
            CellType::OligodendrocyteProgenitor => "Oligodendrocyte progenitor",
            CellType::Neuron => "Neuron (mature)",
            CellType::Undefined => "Undefined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: u64,
    pub position: Vec<f64>,
    pub gene_state: Vec<u8>,
    pub cell_type: CellType,
    pub mature: bool,
    pub birth_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synapse {
    pub pre: u64,
    pub post: u64,
    pub weight: f64,
    pub formed_at: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub steps: usize,
    pub dims: usize,
    pub eta: f64,
    pub radius: f64,
    pub pop_cap: usize,
    pub p_div_min: f64,
    pub p_div_max: f64,
    pub maturation_start: usize,
    pub p_mature: f64,
    pub stemness_genes: Vec<String>,
    pub neuron_markers: Vec<String>,
    pub oligo_markers: Vec<String>,
    pub mature_markers: Vec<String>,
    pub seed: u64,
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for SimConfig {
    /// Calibrated against the bundled expression fixture.
    fn default() -> Self {
        Self {
            steps: 60,
            dims: 3,
            eta: 0.04,
            radius: 0.12,
            pop_cap: 5000,
            p_div_min: 0.14,
            p_div_max: 1.0,
            maturation_start: 40,
            p_mature: 0.001,
            stemness_genes: names(&["Pou5f1", "Nanog", "Sox2"]),
            neuron_markers: names(&[
                "Pax6", "Neurog2", "Eomes", "Neurod1", "Bcl11b", "Tbr1", "Tubb3",
            ]),
            oligo_markers: names(&["Olig2"]),
            mature_markers: names(&["Syp", "Rbfox3"]),
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), DevError> {
        let fail = |msg: &str| Err(DevError::Config(msg.to_owned()));
        if !(0.0..=1.0).contains(&self.p_div_min)
            || !(0.0..=1.0).contains(&self.p_div_max)
            || self.p_div_min > self.p_div_max
        {
            return fail("need 0 <= p_div_min <= p_div_max <= 1");
        }
        if !(0.0..=1.0).contains(&self.p_mature) {
            return fail("p_mature must lie in [0, 1]");
        }
        if !(self.eta > 0.0) {
            return fail("eta must be positive");
        }
        if !(self.radius > 0.0) {
            return fail("radius must be positive");
        }
        if self.dims == 0 {
            return fail("dims must be at least 1");
        }
        if self.pop_cap == 0 {
            return fail("pop_cap must be at least 1");
        }
        // A zero-step run is allowed regardless of the maturation threshold.
        if self.steps > 0 && self.maturation_start >= self.steps {
            return fail("maturation_start must be < steps");
        }
        Ok(())
    }
}

/// Marker gene sets resolved to rule-set gene ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerSets {
    pub stemness: Vec<GeneId>,
    pub neuron: Vec<GeneId>,
    pub oligo: Vec<GeneId>,
    pub mature: Vec<GeneId>,
}

impl MarkerSets {
    pub fn resolve(cfg: &SimConfig, rs: &RuleSet) -> Result<Self, DevError> {
        let ids = |list: &[String]| {
            list.iter()
                .map(|g| rs.gene_id(g).ok_or_else(|| DevError::UnknownMarker(g.clone())))
                .collect::<Result<Vec<_>, _>>()
        };
        Ok(Self {
            stemness: ids(&cfg.stemness_genes)?,
            neuron: ids(&cfg.neuron_markers)?,
            oligo: ids(&cfg.oligo_markers)?,
            mature: ids(&cfg.mature_markers)?,
        })
    }

    pub fn stemness_fraction(&self, state: &[u8]) -> f64 {
        if self.stemness.is_empty() {
            return 0.0;
        }
        on_count(&self.stemness, state) as f64 / self.stemness.len() as f64
    }
}

fn on_count(set: &[GeneId], state: &[u8]) -> usize {
    set.iter().filter(|&&g| state[g] == 1).count()
}

fn majority(set: &[GeneId], state: &[u8]) -> bool {
    !set.is_empty() && 2 * on_count(set, state) > set.len()
}

/// Cell type by priority: mature markers all on, then majorities of neuron,
/// oligodendrocyte and stemness markers.
pub fn classify_cell(gene_state: &[u8], markers: &MarkerSets) -> CellType {
    if !markers.mature.is_empty() && markers.mature.iter().all(|&g| gene_state[g] == 1) {
        CellType::Neuron
    } else if majority(&markers.neuron, gene_state) {
        CellType::NeuronalProgenitor
    } else if majority(&markers.oligo, gene_state) {
        CellType::OligodendrocyteProgenitor
    } else if majority(&markers.stemness, gene_state) {
        CellType::Stem
    } else {
        CellType::Undefined
    }
}

/// Cosine similarity of two binary vectors; 0 when either is all-zero.
pub fn cosine_similarity(a: &[u8], b: &[u8]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine similarity needs equal lengths");
    let (mut dot, mut na, mut nb) = (0u32, 0u32, 0u32);
    for (&x, &y) in a.iter().zip(b) {
        dot += u32::from(x & y);
        na += u32::from(x);
        nb += u32::from(y);
    }
    if na == 0 || nb == 0 {
        return 0.0;
    }
    f64::from(dot) / (f64::from(na).sqrt() * f64::from(nb).sqrt())
}

/// Folds a coordinate back into [0, 1] by mirror reflection at both walls.
pub fn reflect_unit(x: f64) -> f64 {
    let y = x.rem_euclid(2.0);
    if y > 1.0 {
        2.0 - y
    } else {
        y
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub step: usize,
    pub seed: u64,
    pub dims: usize,
    pub genes: Vec<String>,
    pub cells: Vec<Cell>,
    pub synapses: Vec<Synapse>,
    pub rng: ChaCha8Rng,
}

impl SimState {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DevError> {
        serde_json::from_str(text).map_err(|e| DevError::Snapshot(e.to_string()))
    }

    pub fn mature_count(&self) -> usize {
        self.cells.iter().filter(|c| c.mature).count()
    }
}

/// Rule set and config bound together with resolved markers.
pub struct Simulator<'a> {
    rules: &'a RuleSet,
    cfg: &'a SimConfig,
    markers: MarkerSets,
}

impl<'a> Simulator<'a> {
    pub fn new(rules: &'a RuleSet, cfg: &'a SimConfig) -> Result<Self, DevError> {
        cfg.validate()?;
        let markers = MarkerSets::resolve(cfg, rules)?;
        Ok(Self {
            rules,
            cfg,
            markers,
        })
    }

    pub fn markers(&self) -> &MarkerSets {
        &self.markers
    }

    /// One stem cell at the cube centre carrying the rule set's initial state.
    pub fn init(&self) -> SimState {
        let gene_state = self.rules.initial_state.clone();
        let cell = Cell {
            id: 0,
            position: vec![0.5; self.cfg.dims],
            cell_type: classify_cell(&gene_state, &self.markers),
            gene_state,
            mature: false,
            birth_step: 0,
        };
        SimState {
            step: 0,
            seed: self.cfg.seed,
            dims: self.cfg.dims,
            genes: self.rules.genes.clone(),
            cells: vec![cell],
            synapses: Vec::new(),
            rng: seeds::rng(self.cfg.seed),
        }
    }

    /// Non-mature cells split with probability
    /// `p_div_min + (p_div_max - p_div_min) * stemness_fraction`. Mature
    /// neurons are post-mitotic.
    pub fn step_division(&self, state: &mut SimState) {
        let cfg = self.cfg;
        let parents = state.cells.len();
        for i in 0..parents {
            if state.cells.len() >= cfg.pop_cap {
                break;
            }
            if state.cells[i].mature {
                continue;
            }
            let s = self.markers.stemness_fraction(&state.cells[i].gene_state);
            let p = cfg.p_div_min + (cfg.p_div_max - cfg.p_div_min) * s;
            let u: f64 = state.rng.random();
            if u < p {
                let parent = &state.cells[i];
                let mut position = parent.position.clone();
                for x in &mut position {
                    let eps: f64 = state.rng.sample(StandardNormal);
                    *x = (*x + 0.5 * cfg.eta * eps).clamp(0.0, 1.0);
                }
                let daughter = Cell {
                    id: state.cells.len() as u64,
                    position,
                    gene_state: parent.gene_state.clone(),
                    cell_type: parent.cell_type,
                    mature: false,
                    birth_step: state.step,
                };
                state.cells.push(daughter);
            }
        }
    }

    /// Gaussian random walk with step size `eta`, reflected at the walls.
    pub fn step_migration(&self, state: &mut SimState) {
        let eta = self.cfg.eta;
        for cell in &mut state.cells {
            for x in &mut cell.position {
                let eps: f64 = state.rng.sample(StandardNormal);
                *x = reflect_unit(*x + eta * eps);
            }
        }
    }

    /// Synchronous rule update in every cell. Mature neurons keep their
    /// mature markers on and stay neurons.
    pub fn step_differentiation(&self, state: &mut SimState) {
        for cell in &mut state.cells {
            cell.gene_state = self
                .rules
                .apply(&cell.gene_state)
                .expect("cell state length matches rule set");
            if cell.mature {
                for &g in &self.markers.mature {
                    cell.gene_state[g] = 1;
                }
            } else {
                cell.cell_type = classify_cell(&cell.gene_state, &self.markers);
            }
        }
    }

    pub fn step_maturation(&self, state: &mut SimState) {
        if state.step < self.cfg.maturation_start {
            return;
        }
        for cell in &mut state.cells {
            if cell.mature || cell.cell_type != CellType::NeuronalProgenitor {
                continue;
            }
            let u: f64 = state.rng.random();
            if u < self.cfg.p_mature {
                for &g in &self.markers.mature {
                    cell.gene_state[g] = 1;
                }
                cell.mature = true;
                cell.cell_type = CellType::Neuron;
            }
        }
    }

    /// Every pair of mature neurons closer than `radius` with positive cosine
    /// similarity gains one synapse in each direction, weighted
    /// `C * (1 - d / radius)`. Pairs re-form every step they qualify.
    pub fn step_synaptogenesis(&self, state: &mut SimState) {
        let r = self.cfg.radius;
        let neurons: Vec<&Cell> = state.cells.iter().filter(|c| c.mature).collect();
        let mut formed = Vec::new();
        for (a, ni) in neurons.iter().enumerate() {
            for nj in &neurons[a + 1..] {
                let d = distance(&ni.position, &nj.position);
                if d >= r {
                    continue;
                }
                let c = cosine_similarity(&ni.gene_state, &nj.gene_state);
                if c <= 0.0 {
                    continue;
                }
                let weight = c * (1.0 - d / r);
                for (pre, post) in [(ni.id, nj.id), (nj.id, ni.id)] {
                    formed.push(Synapse {
                        pre,
                        post,
                        weight,
                        formed_at: state.step,
                    });
                }
            }
        }
        state.synapses.extend(formed);
    }

    pub fn step(&self, state: &mut SimState) {
        self.step_division(state);
        self.step_migration(state);
        self.step_differentiation(state);
        self.step_maturation(state);
        self.step_synaptogenesis(state);
        state.step += 1;
    }

    pub fn run(&self) -> SimState {
        let mut state = self.init();
        while state.step < self.cfg.steps {
            self.step(&mut state);
        }
        state
    }
}

pub fn init_simulation(rs: &RuleSet, cfg: &SimConfig) -> Result<SimState, DevError> {
    Ok(Simulator::new(rs, cfg)?.init())
}

pub fn run_development(rs: &RuleSet, cfg: &SimConfig) -> Result<SimState, DevError> {
    Ok(Simulator::new(rs, cfg)?.run())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusRow {
    pub cell_type: CellType,
    pub count: usize,
}

/// Per-type cell counts in [`CellType::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub rows: Vec<CensusRow>,
    pub total: usize,
    pub mature: usize,
    pub synapses: usize,
}

impl Census {
    pub fn count(&self, t: CellType) -> usize {
        self.rows
            .iter()
            .find(|r| r.cell_type == t)
            .map_or(0, |r| r.count)
    }

    pub fn proportion(&self, t: CellType) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(t) as f64 / self.total as f64
        }
    }
}

pub fn census(state: &SimState) -> Census {
    let rows = CellType::ALL
        .iter()
        .map(|&t| CensusRow {
            cell_type: t,
            count: state.cells.iter().filter(|c| c.cell_type == t).count(),
        })
        .collect();
    Census {
        rows,
        total: state.cells.len(),
        mature: state.mature_count(),
        synapses: state.synapses.len(),
    }
}

impl fmt::Display for Census {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>7} {:>11}", "Cell Type", "Count", "Proportion")?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<28} {:>7} {:>10.1}%",
                row.cell_type.label(),
                row.count,
                100.0 * self.proportion(row.cell_type)
            )?;
        }
        writeln!(f, "{:<28} {:>7} {:>10.1}%", "Total", self.total, 100.0)?;
        write!(f, "mature neurons: {}, synapses: {}", self.mature, self.synapses)
    }
}
