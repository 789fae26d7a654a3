//! Accuracy metrics: exact-match labels, relative l1 tolerance accuracy and
//! the out-of-distribution grid.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetConfig, DatasetRecord, Task};
use crate::equilibrium::{has_equilibrium, solve_equilibrium};
use crate::generators::{GeneratorConfig, GraphKind};
use crate::tokenizer::{
    decode_float_vector, decode_graph, decode_label, encode_float_vector, encode_label, TokenSequence,
    Vocabulary, WeightEncoding,
};
use crate::transformer::{Scalar, TransformerParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid evaluation configuration: {0}")]
    Config(String),
    #[error("record {index} does not belong to a {task} test set")]
    TaskMismatch { index: usize, task: Task },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Relative l1 thresholds, strictly decreasing.
    pub tolerances: Vec<f64>,
    pub max_decode_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tolerances: vec![0.10, 0.05, 0.02, 0.01],
            max_decode_len: 1024,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.tolerances.is_empty() {
            return Err(EvalError::Config(String::from("no tolerances given")));
        }
        if self.tolerances.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(EvalError::Config(String::from("tolerances must lie in (0, 1)")));
        }
        if self.tolerances.windows(2).any(|w| w[0] <= w[1]) {
            return Err(EvalError::Config(String::from("tolerances must be sorted descending")));
        }
        Ok(())
    }
}

/// Anything that maps an input sequence to an output sequence.
pub trait Predictor {
    fn predict(&self, input: &TokenSequence, max_len: usize) -> TokenSequence;
}

/// Greedy decoding with a trained model. Inputs the model cannot read
/// (unknown tokens, too long) yield an empty, hence invalid, prediction.
pub struct ModelPredictor<'a, T: Scalar> {
    pub params: &'a TransformerParams<T>,
    pub vocab: &'a Vocabulary,
}

impl<T: Scalar> Predictor for ModelPredictor<'_, T> {
    fn predict(&self, input: &TokenSequence, max_len: usize) -> TokenSequence {
        let Ok(ids) = self.vocab.encode_ids(input) else {
            return TokenSequence::new();
        };
        match self.params.greedy_decode(&ids, max_len) {
            Ok(out) => self.vocab.decode_ids(&out).unwrap_or_default(),
            Err(_) => TokenSequence::new(),
        }
    }
}

/// The classical solver posing as a model: parse, solve, re-encode.
#[derive(Debug, Clone, Copy)]
pub struct SolverPredictor {
    pub task: Task,
    pub input_encoding: WeightEncoding,
    pub sig_digits: usize,
}

impl SolverPredictor {
    pub fn for_dataset(config: &DatasetConfig) -> Self {
        SolverPredictor {
            task: config.task,
            input_encoding: config.input_encoding(),
            sig_digits: config.sig_digits,
        }
    }
}

impl Predictor for SolverPredictor {
    fn predict(&self, input: &TokenSequence, _max_len: usize) -> TokenSequence {
        let Ok(net) = decode_graph(input, self.input_encoding) else {
            return TokenSequence::new();
        };
        match self.task {
            Task::Qualitative => has_equilibrium(&net).map(encode_label).unwrap_or_default(),
            Task::Quantitative => solve_equilibrium(&net)
                .ok()
                .and_then(|x| encode_float_vector(x.values(), self.sig_digits).ok())
                .unwrap_or_default(),
        }
    }
}

/// Score of a single prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Label { correct: bool, malformed: bool },
    /// `None` when the prediction is not exactly `n` numbers.
    Vector { rel_error: Option<f64> },
}

/// `||a - b||_1 / ||b||_1`.
pub fn relative_l1(pred: &[f64], truth: &[f64]) -> f64 {
    let diff: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum();
    let norm: f64 = truth.iter().map(|b| b.abs()).sum();
    if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / norm
    }
}

pub fn score_qualitative(record: &DatasetRecord, pred: &TokenSequence) -> Outcome {
    let malformed = decode_label(pred).is_none();
    Outcome::Label {
        correct: *pred == record.output,
        malformed,
    }
}

/// Compares against the exact solution of the record's network, not its
/// rounded stored output.
pub fn score_quantitative(
    record: &DatasetRecord,
    pred: &TokenSequence,
    input_encoding: WeightEncoding,
) -> Option<Outcome> {
    let net = decode_graph(&record.input, input_encoding).ok()?;
    let truth = solve_equilibrium(&net).ok()?;
    let rel_error = decode_float_vector(pred, net.n_internal()).map(|p| relative_l1(&p, truth.values()));
    Some(Outcome::Vector { rel_error })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeBreakdown {
    pub count: usize,
    pub invalid: usize,
    /// Correct counts per tolerance; a single entry for label tasks.
    pub correct: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub count: usize,
    /// Empty for label tasks.
    pub tolerances: Vec<f64>,
    /// One entry per tolerance, or a single exact-match accuracy.
    pub accuracy: Vec<f64>,
    pub invalid_rate: f64,
    pub per_node: BTreeMap<usize, NodeBreakdown>,
}

impl EvalReport {
    /// Exact-match accuracy of a label task.
    pub fn qualitative_accuracy(&self) -> Option<f64> {
        (self.task == Task::Qualitative).then(|| self.accuracy[0])
    }

    pub fn accuracy_at(&self, tolerance: f64) -> Option<f64> {
        let i = self.tolerances.iter().position(|&t| (t - tolerance).abs() < 1e-12)?;
        Some(self.accuracy[i])
    }

    pub fn is_monotone(&self) -> bool {
        self.accuracy.windows(2).all(|w| w[0] >= w[1])
    }

    /// Builds a report from `(n_internal, outcome)` pairs in any order.
    pub fn from_outcomes(task: Task, tolerances: &[f64], outcomes: impl IntoIterator<Item = (usize, Outcome)>) -> Self {
        let slots = match task {
            Task::Qualitative => 1,
            Task::Quantitative => tolerances.len(),
        };
        let mut per_node: BTreeMap<usize, NodeBreakdown> = BTreeMap::new();
        for (n, o) in outcomes {
            let b = per_node.entry(n).or_insert_with(|| NodeBreakdown {
                correct: vec![0; slots],
                ..NodeBreakdown::default()
            });
            b.count += 1;
            match o {
                Outcome::Label { correct, malformed } => {
                    b.correct[0] += correct as usize;
                    b.invalid += malformed as usize;
                }
                Outcome::Vector { rel_error: None } => b.invalid += 1,
                Outcome::Vector { rel_error: Some(e) } => {
                    for (c, &t) in b.correct.iter_mut().zip(tolerances) {
                        *c += (e <= t) as usize;
                    }
                }
            }
        }
        let count: usize = per_node.values().map(|b| b.count).sum();
        let invalid: usize = per_node.values().map(|b| b.invalid).sum();
        let frac = |k: usize| if count == 0 { 0.0 } else { k as f64 / count as f64 };
        let accuracy = (0..slots)
            .map(|i| frac(per_node.values().map(|b| b.correct[i]).sum()))
            .collect();
        EvalReport {
            task,
            count,
            tolerances: match task {
                Task::Qualitative => Vec::new(),
                Task::Quantitative => tolerances.to_vec(),
            },
            accuracy,
            invalid_rate: frac(invalid),
            per_node,
        }
    }

    /// Aligned text table: headline accuracies then a per-node breakdown.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let headers = self.column_names();
        let _ = write!(s, "{:<10}{:>8}", "nodes", "count");
        for h in &headers {
            let _ = write!(s, "{h:>10}");
        }
        let _ = writeln!(s, "{:>10}", "invalid");
        let line = |s: &mut String, label: &str, count: usize, acc: &[f64], inv: f64| {
            let _ = write!(s, "{label:<10}{count:>8}");
            for a in acc {
                let _ = write!(s, "{:>10.1}", 100.0 * a);
            }
            let _ = writeln!(s, "{:>10.1}", 100.0 * inv);
        };
        line(&mut s, "all", self.count, &self.accuracy, self.invalid_rate);
        for (n, b) in &self.per_node {
            let acc: Vec<f64> = b.correct.iter().map(|&c| c as f64 / b.count as f64).collect();
            line(&mut s, &n.to_string(), b.count, &acc, b.invalid as f64 / b.count as f64);
        }
        s
    }

    /// CSV with the same rows as [`EvalReport::to_table`], fractions in [0, 1].
    pub fn to_csv(&self) -> String {
        let mut s = String::from("nodes,count");
        for h in self.column_names() {
            let _ = write!(s, ",{h}");
        }
        s.push_str(",invalid\n");
        let _ = write!(s, "all,{}", self.count);
        for a in &self.accuracy {
            let _ = write!(s, ",{a}");
        }
        let _ = writeln!(s, ",{}", self.invalid_rate);
        for (n, b) in &self.per_node {
            let _ = write!(s, "{n},{}", b.count);
            for &c in &b.correct {
                let _ = write!(s, ",{}", c as f64 / b.count as f64);
            }
            let _ = writeln!(s, ",{}", b.invalid as f64 / b.count as f64);
        }
        s
    }

    fn column_names(&self) -> Vec<String> {
        match self.task {
            Task::Qualitative => vec![String::from("accuracy")],
            Task::Quantitative => self
                .tolerances
                .iter()
                .map(|t| format!("acc@{}%", libm::round(t * 100.0) as i64))
                .collect(),
        }
    }
}

/// Exact-match accuracy on a label test set.
pub fn eval_qualitative(predictor: &impl Predictor, records: &[DatasetRecord], max_len: usize) -> Result<EvalReport, EvalError> {
    let mut outcomes = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if decode_label(&r.output).is_none() {
            return Err(EvalError::TaskMismatch {
                index: i,
                task: Task::Qualitative,
            });
        }
        let pred = predictor.predict(&r.input, max_len);
        outcomes.push((r.meta.n_internal, score_qualitative(r, &pred)));
    }
    Ok(EvalReport::from_outcomes(Task::Qualitative, &[], outcomes))
}

/// Tolerance accuracy on a vector test set.
pub fn eval_quantitative(
    predictor: &impl Predictor,
    records: &[DatasetRecord],
    config: &EvalConfig,
    input_encoding: WeightEncoding,
) -> Result<EvalReport, EvalError> {
    config.validate()?;
    let mut outcomes = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let mismatch = EvalError::TaskMismatch {
            index: i,
            task: Task::Quantitative,
        };
        if decode_label(&r.output).is_some() {
            return Err(mismatch);
        }
        let pred = predictor.predict(&r.input, config.max_decode_len);
        let o = score_quantitative(r, &pred, input_encoding).ok_or(mismatch)?;
        outcomes.push((r.meta.n_internal, o));
    }
    Ok(EvalReport::from_outcomes(Task::Quantitative, &config.tolerances, outcomes))
}

/// Node ranges of the out-of-distribution grid.
pub const OOD_NODE_RANGES: [(usize, usize); 11] = [
    (8, 32),
    (24, 32),
    (32, 40),
    (32, 64),
    (56, 64),
    (64, 72),
    (64, 128),
    (120, 128),
    (128, 136),
    (128, 256),
    (256, 300),
];

/// Edges-per-node ranges of the grid.
pub const OOD_EDGE_RANGES: [(f64, f64); 2] = [(1.0, 2.0), (4.0, 5.0)];

pub const OOD_KINDS: [GraphKind; 2] = [GraphKind::SmallWorld, GraphKind::ScaleFree];

/// One test distribution of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OodCell {
    /// Row name, e.g. `nodes 64-72` or `small-world`.
    pub label: String,
    pub generator: GeneratorConfig,
}

/// One-factor-at-a-time grid around `base`: every node range at the base
/// density and kind, every density and every alternative kind at the base
/// node range. Each cell gets its own seed derived from `seed`.
pub fn ood_grid(base: &GeneratorConfig, seed: u64) -> Vec<OodCell> {
    let mut cells = Vec::new();
    let mut push = |label: String, g: GeneratorConfig| {
        let k = cells.len() as u64;
        let generator = GeneratorConfig {
            seed: crate::rng::RngStream::new(seed).named("ood").child(k).key(),
            ..g
        };
        cells.push(OodCell { label, generator });
    };
    for (lo, hi) in OOD_NODE_RANGES {
        push(format!("nodes {lo}-{hi}"), base.clone().with_nodes(lo, hi));
    }
    for (lo, hi) in OOD_EDGE_RANGES {
        push(format!("edges {lo}-{hi}"), base.clone().with_edge_ratio(lo, hi));
    }
    for kind in OOD_KINDS {
        push(kind.to_string(), base.clone().with_kind(kind));
    }
    cells
}

/// Rows of an OOD evaluation, rendered like the reference tables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OodReport {
    pub rows: Vec<(String, EvalReport)>,
}

impl OodReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let Some((_, first)) = self.rows.first() else {
            return s;
        };
        let _ = write!(s, "{:<18}{:>8}", "test set", "count");
        for h in first.column_names() {
            let _ = write!(s, "{h:>10}");
        }
        let _ = writeln!(s, "{:>10}", "invalid");
        for (label, r) in &self.rows {
            let _ = write!(s, "{label:<18}{:>8}", r.count);
            for a in &r.accuracy {
                let _ = write!(s, "{:>10.1}", 100.0 * a);
            }
            let _ = writeln!(s, "{:>10.1}", 100.0 * r.invalid_rate);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let Some((_, first)) = self.rows.first() else {
            return s;
        };
        s.push_str("test_set,count");
        for h in first.column_names() {
            let _ = write!(s, ",{h}");
        }
        s.push_str(",invalid\n");
        for (label, r) in &self.rows {
            let _ = write!(s, "{label},{}", r.count);
            for a in &r.accuracy {
                let _ = write!(s, ",{a}");
            }
            let _ = writeln!(s, ",{}", r.invalid_rate);
        }
        s
    }
}
