//! Boolean gene-regulatory rule inference over a binarized expression
//! timecourse.
//!
//! Every gene gets one update function over at most `k_max` regulators. A
//! rule reads regulator states at `t - 1` and predicts the target at `t`, so
//! a matrix with `T` timepoints offers `T - 1` transitions to score against.
//! Regulators must change no later than the target (temporal causality). When
//! no rule scores above `theta` the gene falls back to a constant equal to its
//! terminal observed value.

use std::collections::HashSet;
use std::fmt;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row index of a gene in its [`ExpressionMatrix`].
pub type GeneId = usize;

pub const DEFAULT_THETA: f64 = 0.6;
pub const DEFAULT_K_MAX: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum GrnError {
    #[error("csv: {0}")]
    Csv(String),
    #[error("header must start with `gene` followed by at least one timepoint column")]
    BadHeader,
    #[error("non-binary value at {gene},{column}")]
    NonBinary { gene: String, column: String },
    #[error("row {row} ({gene}) has {found} cells, expected {expected}")]
    Ragged {
        row: usize,
        gene: String,
        found: usize,
        expected: usize,
    },
    #[error("duplicate gene name `{0}`")]
    DuplicateGene(String),
    #[error("empty gene name on row {0}")]
    EmptyGene(usize),
    #[error("matrix has no genes")]
    NoGenes,
    #[error("need at least 2 timepoints, found {0}")]
    TooFewTimepoints(usize),
    #[error("unknown gene id {0}")]
    UnknownGene(GeneId),
    #[error("unknown gene name `{0}`")]
    UnknownGeneName(String),
    #[error("state has {found} genes, rule set expects {expected}")]
    StateLength { found: usize, expected: usize },
    #[error("invalid rule set: {0}")]
    InvalidRuleSet(String),
}

/// Binary gene x timepoint table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpressionMatrix {
    gene_names: Vec<String>,
    timepoints: Vec<String>,
    values: Vec<Vec<u8>>,
}

impl ExpressionMatrix {
    /// Builds a matrix from rows of 0/1 values, one row per gene.
    pub fn new(gene_names: Vec<String>, values: Vec<Vec<u8>>) -> Result<Self, GrnError> {
        let t = values.first().map_or(0, Vec::len);
        let timepoints = (0..t).map(|i| format!("t{i}")).collect();
        Self::with_timepoints(gene_names, timepoints, values)
    }

    fn with_timepoints(
        gene_names: Vec<String>,
        timepoints: Vec<String>,
        values: Vec<Vec<u8>>,
    ) -> Result<Self, GrnError> {
        if gene_names.is_empty() {
            return Err(GrnError::NoGenes);
        }
        let mut seen = HashSet::new();
        for (row, (name, cells)) in gene_names.iter().zip(&values).enumerate() {
            if name.is_empty() {
                return Err(GrnError::EmptyGene(row + 1));
            }
            if !seen.insert(name.as_str()) {
                return Err(GrnError::DuplicateGene(name.clone()));
            }
            if cells.len() != timepoints.len() {
                return Err(GrnError::Ragged {
                    row: row + 1,
                    gene: name.clone(),
                    found: cells.len(),
                    expected: timepoints.len(),
                });
            }
            if let Some(col) = cells.iter().position(|&v| v > 1) {
                return Err(GrnError::NonBinary {
                    gene: name.clone(),
                    column: timepoints[col].clone(),
                });
            }
        }
        if gene_names.len() != values.len() {
            return Err(GrnError::InvalidRuleSet(
                "gene name count differs from row count".into(),
            ));
        }
        if timepoints.len() < 2 {
            return Err(GrnError::TooFewTimepoints(timepoints.len()));
        }
        Ok(Self {
            gene_names,
            timepoints,
            values,
        })
    }

    pub fn n_genes(&self) -> usize {
        self.gene_names.len()
    }

    pub fn n_timepoints(&self) -> usize {
        self.timepoints.len()
    }

    pub fn gene_names(&self) -> &[String] {
        &self.gene_names
    }

    pub fn gene_id(&self, name: &str) -> Option<GeneId> {
        self.gene_names.iter().position(|g| g == name)
    }

    /// Trajectory of one gene across all timepoints.
    pub fn row(&self, gene: GeneId) -> &[u8] {
        &self.values[gene]
    }

    pub fn get(&self, gene: GeneId, t: usize) -> u8 {
        self.values[gene][t]
    }

    /// Expression vector of all genes at timepoint `t`.
    pub fn column(&self, t: usize) -> Vec<u8> {
        self.values.iter().map(|row| row[t]).collect()
    }

    fn check_gene(&self, gene: GeneId) -> Result<(), GrnError> {
        if gene < self.n_genes() {
            Ok(())
        } else {
            Err(GrnError::UnknownGene(gene))
        }
    }
}

/// Parses `gene,t0,...,t{T-1}` CSV content into a matrix, rows in file order.
pub fn parse_expression_matrix(text: &str) -> Result<ExpressionMatrix, GrnError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header = reader
        .headers()
        .map_err(|e| GrnError::Csv(e.to_string()))?
        .clone();
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("gene") {
        return Err(GrnError::BadHeader);
    }
    let timepoints: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();

    let mut names = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| GrnError::Csv(e.to_string()))?;
        let row = i + 1;
        let gene = record.get(0).unwrap_or_default().to_owned();
        if gene.is_empty() {
            return Err(GrnError::EmptyGene(row));
        }
        if record.len() != header.len() {
            return Err(GrnError::Ragged {
                row,
                gene,
                found: record.len() - 1,
                expected: timepoints.len(),
            });
        }
        let mut cells = Vec::with_capacity(timepoints.len());
        for (col, cell) in record.iter().skip(1).enumerate() {
            match cell {
                "0" => cells.push(0),
                "1" => cells.push(1),
                _ => {
                    return Err(GrnError::NonBinary {
                        gene,
                        column: timepoints[col].clone(),
                    })
                }
            }
        }
        names.push(gene);
        values.push(cells);
    }
    ExpressionMatrix::with_timepoints(names, timepoints, values)
}

/// First index `t >= 1` whose value differs from `t - 1`, or `None` when the
/// trajectory never changes.
pub fn change_time(trajectory: &[u8]) -> Option<usize> {
    trajectory
        .windows(2)
        .position(|w| w[0] != w[1])
        .map(|i| i + 1)
}

/// Genes allowed to regulate `target`, in ascending id order.
///
/// A regulator must change no later than the target. A constant target
/// accepts every other gene; a constant regulator carries no causal signal
/// and is rejected for changing targets.
pub fn candidate_regulators(
    target: GeneId,
    m: &ExpressionMatrix,
) -> Result<Vec<GeneId>, GrnError> {
    m.check_gene(target)?;
    let target_change = change_time(m.row(target));
    Ok((0..m.n_genes())
        .filter(|&r| r != target)
        .filter(|&r| match (target_change, change_time(m.row(r))) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(tc), Some(rc)) => rc <= tc,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Inferred,
    ConstantDefault,
}

/// Update function for one gene.
///
/// `truth_table[p]` is the output for input pattern `p`, where the first
/// regulator is the most significant bit of `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct BooleanRule {
    pub target: GeneId,
    pub regulators: Vec<GeneId>,
    pub truth_table: Vec<u8>,
    pub score: f64,
    pub kind: RuleKind,
}

impl BooleanRule {
    /// A rule with a zero score placeholder; see [`agreement_score`].
    pub fn new(target: GeneId, regulators: Vec<GeneId>, truth_table: Vec<u8>) -> Self {
        assert_eq!(
            truth_table.len(),
            1 << regulators.len(),
            "truth table length must be 2^|regulators|"
        );
        Self {
            target,
            regulators,
            truth_table,
            score: 0.0,
            kind: RuleKind::Inferred,
        }
    }

    pub fn constant(target: GeneId, bit: u8) -> Self {
        Self {
            target,
            regulators: Vec::new(),
            truth_table: vec![bit],
            score: 0.0,
            kind: RuleKind::ConstantDefault,
        }
    }

    fn pattern(&self, lookup: impl Fn(GeneId) -> u8) -> usize {
        self.regulators
            .iter()
            .fold(0, |acc, &r| (acc << 1) | lookup(r) as usize)
    }

    /// Output for a full gene-state vector.
    pub fn eval(&self, state: &[u8]) -> u8 {
        self.truth_table[self.pattern(|r| state[r])]
    }
}

/// Fraction of the `T - 1` transitions on which `rule`, fed regulator states
/// at `t - 1`, reproduces the target's value at `t`.
pub fn agreement_score(rule: &BooleanRule, target: GeneId, m: &ExpressionMatrix) -> f64 {
    let transitions = m.n_timepoints() - 1;
    matches(rule, target, m) as f64 / transitions as f64
}

fn matches(rule: &BooleanRule, target: GeneId, m: &ExpressionMatrix) -> usize {
    (1..m.n_timepoints())
        .filter(|&t| rule.truth_table[rule.pattern(|r| m.get(r, t - 1))] == m.get(target, t))
        .count()
}

/// Best rule for `target` over regulator subsets of size `1..=k_max`.
///
/// For a fixed regulator set the optimal truth table is the per-pattern
/// majority of observed target values; patterns that are tied or never
/// observed take 0, which also makes it the lexicographically smallest of the
/// optimal tables. Candidates are visited by size, then in lexicographic id
/// order, and only a strictly better match count replaces the incumbent, so
/// the first optimum found wins every tie.
pub fn infer_rule(
    target: GeneId,
    m: &ExpressionMatrix,
    k_max: usize,
    theta: f64,
) -> Result<BooleanRule, GrnError> {
    let candidates = candidate_regulators(target, m)?;
    let transitions = m.n_timepoints() - 1;

    let mut best: Option<(usize, Vec<GeneId>, Vec<u8>)> = None;
    for size in 1..=k_max.min(candidates.len()) {
        for regs in candidates.iter().copied().combinations(size) {
            let mut counts = vec![[0usize; 2]; 1 << size];
            for t in 1..m.n_timepoints() {
                let p = regs
                    .iter()
                    .fold(0, |acc, &r| (acc << 1) | m.get(r, t - 1) as usize);
                counts[p][m.get(target, t) as usize] += 1;
            }
            let table: Vec<u8> = counts.iter().map(|c| u8::from(c[1] > c[0])).collect();
            let hits: usize = counts.iter().map(|c| c[0].max(c[1])).sum();
            if best.as_ref().is_none_or(|(h, _, _)| hits > *h) {
                best = Some((hits, regs, table));
            }
        }
    }

    let mut rule = match best {
        Some((hits, regs, table)) if hits as f64 / transitions as f64 > theta => {
            BooleanRule::new(target, regs, table)
        }
        _ => BooleanRule::constant(target, m.get(target, m.n_timepoints() - 1)),
    };
    rule.score = agreement_score(&rule, target, m);
    Ok(rule)
}

/// One rule per gene, plus the initial expression state the rules are
/// meant to be iterated from.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    pub genes: Vec<String>,
    pub rules: Vec<BooleanRule>,
    pub theta: f64,
    pub k_max: usize,
    pub initial_state: Vec<u8>,
}

pub fn infer_ruleset(m: &ExpressionMatrix, k_max: usize, theta: f64) -> Result<RuleSet, GrnError> {
    let rules = (0..m.n_genes())
        .map(|g| infer_rule(g, m, k_max, theta))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RuleSet {
        genes: m.gene_names().to_vec(),
        rules,
        theta,
        k_max,
        initial_state: m.column(0),
    })
}

impl RuleSet {
    pub fn n_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn gene_id(&self, name: &str) -> Option<GeneId> {
        self.genes.iter().position(|g| g == name)
    }

    /// Synchronous update: every gene reads the old state.
    pub fn apply(&self, state: &[u8]) -> Result<Vec<u8>, GrnError> {
        if state.len() != self.n_genes() {
            return Err(GrnError::StateLength {
                found: state.len(),
                expected: self.n_genes(),
            });
        }
        Ok(self.rules.iter().map(|r| r.eval(state)).collect())
    }

    pub fn mean_score(&self) -> f64 {
        self.rules.iter().map(|r| r.score).sum::<f64>() / self.rules.len() as f64
    }

    pub fn to_json(&self) -> String {
        let doc = RuleSetDoc {
            theta: self.theta,
            k_max: self.k_max,
            genes: self.genes.clone(),
            initial_state: self.initial_state.clone(),
            rules: self
                .rules
                .iter()
                .map(|r| RuleDoc {
                    gene: self.genes[r.target].clone(),
                    regulators: r.regulators.iter().map(|&g| self.genes[g].clone()).collect(),
                    truth_table: r.truth_table.clone(),
                    score: r.score,
                    kind: r.kind,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("rule set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GrnError> {
        let doc: RuleSetDoc =
            serde_json::from_str(text).map_err(|e| GrnError::InvalidRuleSet(e.to_string()))?;
        let id = |name: &str| {
            doc.genes
                .iter()
                .position(|g| g == name)
                .ok_or_else(|| GrnError::UnknownGeneName(name.to_owned()))
        };
        if doc.rules.len() != doc.genes.len() {
            return Err(GrnError::InvalidRuleSet(format!(
                "{} rules for {} genes",
                doc.rules.len(),
                doc.genes.len()
            )));
        }
        if doc.initial_state.len() != doc.genes.len() || doc.initial_state.iter().any(|&b| b > 1)
        {
            return Err(GrnError::InvalidRuleSet("bad initial_state".into()));
        }
        let mut rules = Vec::with_capacity(doc.rules.len());
        for (g, r) in doc.rules.iter().enumerate() {
            if id(&r.gene)? != g {
                return Err(GrnError::InvalidRuleSet(format!(
                    "rule for `{}` out of gene order",
                    r.gene
                )));
            }
            let regulators = r
                .regulators
                .iter()
                .map(|n| id(n))
                .collect::<Result<Vec<_>, _>>()?;
            if r.truth_table.len() != 1 << regulators.len() || r.truth_table.iter().any(|&b| b > 1)
            {
                return Err(GrnError::InvalidRuleSet(format!(
                    "bad truth table for `{}`",
                    r.gene
                )));
            }
            rules.push(BooleanRule {
                target: g,
                regulators,
                truth_table: r.truth_table.clone(),
                score: r.score,
                kind: r.kind,
            });
        }
        Ok(Self {
            genes: doc.genes,
            rules,
            theta: doc.theta,
            k_max: doc.k_max,
            initial_state: doc.initial_state,
        })
    }
}

pub fn apply_rules(rs: &RuleSet, state: &[u8]) -> Result<Vec<u8>, GrnError> {
    rs.apply(state)
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:<16} {:<10} {:>6}  kind", "gene", "regulators", "table", "score")?;
        for r in &self.rules {
            let regs = r.regulators.iter().map(|&g| self.genes[g].as_str()).join("+");
            let table: String = r.truth_table.iter().map(|b| b.to_string()).collect();
            let kind = match r.kind {
                RuleKind::Inferred => "inferred",
                RuleKind::ConstantDefault => "constant_default",
            };
            writeln!(
                f,
                "{:<10} {:<16} {:<10} {:>6.3}  {}",
                self.genes[r.target],
                if regs.is_empty() { "-".into() } else { regs },
                table,
                r.score,
                kind
            )?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RuleSetDoc {
    theta: f64,
    k_max: usize,
    genes: Vec<String>,
    initial_state: Vec<u8>,
    rules: Vec<RuleDoc>,
}

#[derive(Serialize, Deserialize)]
struct RuleDoc {
    gene: String,
    regulators: Vec<String>,
    truth_table: Vec<u8>,
    score: f64,
    kind: RuleKind,
}
