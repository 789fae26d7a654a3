//! Balanced, deduplicated training corpora of tokenized networks.
//!
//! Candidates are produced independently per raw index from a per-index RNG
//! stream ([`candidate`]); an [`Assembler`] then consumes them strictly in
//! index order. Any driver that feeds candidates in that order, serially or
//! after a parallel map, produces the same dataset.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::hash::Hasher;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use siphasher::sip::SipHasher13;
use thiserror::Error;

use crate::equilibrium::{has_equilibrium, solve_equilibrium};
use crate::generators::{generate, sample_with_label, ConfigError, GeneratorConfig, GraphKind};
use crate::graph::MetabolicNetwork;
use crate::rng::RngStream;
use crate::tokenizer::{
    decode_float_vector, decode_graph, decode_label, encode_float_vector, encode_graph_with, encode_label,
    TokenError, TokenSequence, WeightEncoding, DEFAULT_MAX_NODE,
};

/// Raw generations allowed per requested record.
pub const BUDGET_FACTOR: usize = 50;

/// Attempts per candidate in conditional rejection sampling.
const REJECTION_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Predict whether an equilibrium exists.
    Qualitative,
    /// Predict the equilibrium concentrations.
    Quantitative,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Qualitative => "qualitative",
            Task::Quantitative => "quantitative",
        })
    }
}

impl FromStr for Task {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qualitative" | "qual" => Ok(Task::Qualitative),
            "quantitative" | "quant" => Ok(Task::Quantitative),
            _ => Err(DatasetError::Config(alloc::format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Redeem equilibrium-free graphs with probability `redeem_prob`.
    Redemption,
    /// Fix the node count and desired label first, then regenerate until
    /// the label matches.
    Rejection,
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::Redemption => "redemption",
            SamplingMode::Rejection => "rejection",
        })
    }
}

impl FromStr for SamplingMode {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "redemption" | "redeem" => Ok(SamplingMode::Redemption),
            "rejection" | "reject" => Ok(SamplingMode::Rejection),
            _ => Err(DatasetError::Config(alloc::format!("unknown sampling mode `{s}`"))),
        }
    }
}

/// Node-count classes of the reference corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
    ExtraLarge,
}

impl SizeClass {
    /// Class of a node range, by its upper end.
    pub fn of(n_max: usize) -> SizeClass {
        match n_max {
            0..=32 => SizeClass::Small,
            33..=64 => SizeClass::Medium,
            65..=128 => SizeClass::Large,
            _ => SizeClass::ExtraLarge,
        }
    }

    fn doublings(self) -> usize {
        match self {
            SizeClass::Small => 0,
            SizeClass::Medium => 1,
            SizeClass::Large => 2,
            SizeClass::ExtraLarge => 3,
        }
    }

    /// Reference redeem probability of the qualitative corpora.
    pub fn qualitative_redeem_prob(self) -> f64 {
        match self {
            SizeClass::Small => 0.05,
            SizeClass::Medium => 0.4,
            SizeClass::Large => 0.48,
            SizeClass::ExtraLarge => 0.49,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub task: Task,
    /// Whether inputs carry edge weights (and generated weights vary).
    pub weighted: bool,
    pub sig_digits: usize,
    /// Spelling of weights when `weighted`; ignored otherwise.
    pub weight_encoding: WeightEncoding,
    pub sampling: SamplingMode,
    pub redeem_prob: f64,
    pub target_size: usize,
    pub generator: GeneratorConfig,
    pub test_fraction: f64,
    /// Input plus output token cap; `None` uses [`DatasetConfig::default_max_length`].
    pub max_length: Option<usize>,
    pub max_node: u32,
}

impl DatasetConfig {
    /// Unweighted qualitative corpus with the reference redeem probability
    /// of the size class.
    pub fn qualitative(generator: GeneratorConfig, target_size: usize) -> Self {
        let redeem_prob = SizeClass::of(generator.n_max).qualitative_redeem_prob();
        DatasetConfig {
            task: Task::Qualitative,
            weighted: false,
            sig_digits: 3,
            weight_encoding: WeightEncoding::Symbolic,
            sampling: SamplingMode::Redemption,
            redeem_prob,
            target_size,
            generator: generator.with_weighted(false),
            test_fraction: 0.05,
            max_length: None,
            max_node: DEFAULT_MAX_NODE,
        }
    }

    pub fn quantitative(generator: GeneratorConfig, weighted: bool, target_size: usize) -> Self {
        DatasetConfig {
            task: Task::Quantitative,
            weighted,
            sig_digits: 3,
            weight_encoding: WeightEncoding::Symbolic,
            sampling: SamplingMode::Redemption,
            redeem_prob: 1.0,
            target_size,
            generator: generator.with_weighted(weighted),
            test_fraction: 0.05,
            max_length: None,
            max_node: DEFAULT_MAX_NODE,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        self.generator.validate()?;
        if self.generator.weighted != self.weighted {
            return Err(DatasetError::Config(String::from(
                "generator.weighted must agree with weighted",
            )));
        }
        if !(0.0..=1.0).contains(&self.redeem_prob) {
            return Err(DatasetError::Config(String::from("redeem_prob must lie in [0, 1]")));
        }
        if self.target_size == 0 {
            return Err(DatasetError::Config(String::from("target_size must be positive")));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(DatasetError::Config(String::from("test_fraction must lie in (0, 1)")));
        }
        if !(3..=4).contains(&self.sig_digits) {
            return Err(DatasetError::Config(String::from("sig_digits must be 3 or 4")));
        }
        if self.generator.n_max + 2 > self.max_node as usize {
            return Err(DatasetError::Config(alloc::format!(
                "networks of {} internal nodes need node tokens beyond N{}",
                self.generator.n_max,
                self.max_node
            )));
        }
        Ok(())
    }

    /// Weight spelling actually used for inputs.
    pub fn input_encoding(&self) -> WeightEncoding {
        if self.weighted {
            self.weight_encoding
        } else {
            WeightEncoding::None
        }
    }

    /// Reference maximum total length for this configuration's size class.
    /// Entries the reference table lacks are extrapolated by doubling per
    /// class from the nearest listed one.
    pub fn default_max_length(&self) -> usize {
        let class = SizeClass::of(self.generator.n_max);
        let k = class.doublings();
        let from_small = |s: usize| s << k;
        let from_medium = |m: usize| if k == 0 { m.div_ceil(2) } else { m << (k - 1) };
        match self.task {
            Task::Qualitative => from_small(256),
            Task::Quantitative => match (self.input_encoding(), self.sig_digits) {
                (WeightEncoding::None, 3) => from_small(608),
                (WeightEncoding::None, _) => from_medium(1300),
                (WeightEncoding::Symbolic, 3) => match class {
                    SizeClass::Small => 717,
                    SizeClass::Medium => 1436,
                    SizeClass::Large => 2870,
                    SizeClass::ExtraLarge => 5740,
                },
                (WeightEncoding::Symbolic, _) => from_medium(1539),
                (WeightEncoding::Numeric, _) => from_medium(2176),
            },
        }
    }

    pub fn effective_max_length(&self) -> usize {
        self.max_length.unwrap_or_else(|| self.default_max_length())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("invalid dataset configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Generator(#[from] ConfigError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error("generation budget of {budget} raw graphs exhausted with {built} of {target} records")]
    BudgetExceeded { budget: usize, built: usize, target: usize },
    #[error("invalid record: {0}")]
    Record(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub n_internal: usize,
    pub edges: usize,
    pub label: bool,
    pub kind: GraphKind,
    pub redeemed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub input: TokenSequence,
    pub output: TokenSequence,
    pub meta: RecordMeta,
}

impl DatasetRecord {
    pub fn total_len(&self) -> usize {
        self.input.len() + self.output.len()
    }
}

/// Keyed 64-bit hash of a token sequence's text form.
pub fn sequence_hash(seq: &TokenSequence, key: u64) -> u64 {
    let mut h = SipHasher13::new_with_keys(key, 0x6571_6e65_7420_7631);
    for t in seq.tokens() {
        h.write(t.to_string().as_bytes());
        h.write_u8(b' ');
    }
    h.finish()
}

/// Why a raw index yielded no record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// No unique equilibrium to use as a quantitative target.
    Unsolvable,
    /// Conditional rejection sampling ran out of attempts.
    LabelMismatch,
}

/// Result of one raw index.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub record: Result<DatasetRecord, Rejection>,
    /// Raw graphs generated to produce it.
    pub generations: usize,
}

fn make_record(
    config: &DatasetConfig,
    network: &MetabolicNetwork,
    label: bool,
    redeemed: bool,
) -> Result<Result<DatasetRecord, Rejection>, DatasetError> {
    let input = encode_graph_with(network, config.input_encoding(), config.max_node)?;
    let output = match config.task {
        Task::Qualitative => encode_label(label),
        Task::Quantitative => {
            if !label {
                return Ok(Err(Rejection::Unsolvable));
            }
            match solve_equilibrium(network) {
                Ok(x) => encode_float_vector(x.values(), config.sig_digits)?,
                Err(_) => return Ok(Err(Rejection::Unsolvable)),
            }
        }
    };
    Ok(Ok(DatasetRecord {
        input,
        output,
        meta: RecordMeta {
            n_internal: network.n_internal(),
            edges: network.edge_count(),
            label,
            kind: config.generator.kind,
            redeemed,
        },
    }))
}

/// Candidate for raw index `index`, drawn from its own RNG stream.
pub fn candidate(config: &DatasetConfig, index: u64) -> Result<Candidate, DatasetError> {
    let mut rng = RngStream::new(config.generator.seed).named("dataset").child(index);
    match config.sampling {
        SamplingMode::Redemption => {
            let prob = match config.task {
                Task::Qualitative => config.redeem_prob,
                Task::Quantitative => 1.0,
            };
            let s = sample_with_label(&config.generator, prob, &mut rng);
            let record = make_record(config, &s.network, s.label, s.redeemed)?;
            Ok(Candidate { record, generations: 1 })
        }
        SamplingMode::Rejection => {
            let n = rng.range_inclusive(config.generator.n_min as u64, config.generator.n_max as u64) as usize;
            let fixed = config.generator.clone().with_nodes(n, n);
            let want = match config.task {
                Task::Qualitative => rng.bernoulli(0.5),
                Task::Quantitative => true,
            };
            for attempt in 1..=REJECTION_ATTEMPTS {
                let net = generate(&fixed, &mut rng);
                let label = has_equilibrium(&net).unwrap_or(false);
                if label != want {
                    continue;
                }
                match make_record(config, &net, label, false)? {
                    Ok(r) => {
                        return Ok(Candidate {
                            record: Ok(r),
                            generations: attempt,
                        })
                    }
                    Err(_) => continue,
                }
            }
            Ok(Candidate {
                record: Err(Rejection::LabelMismatch),
                generations: REJECTION_ATTEMPTS,
            })
        }
    }
}

/// Counters accumulated while assembling.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildCounts {
    pub raw_generations: usize,
    pub candidates: usize,
    pub duplicates: usize,
    pub overlength: usize,
    pub unsolvable: usize,
    pub label_mismatch: usize,
    /// Dropped because their label class was already full.
    pub surplus: usize,
}

/// Sequential, order-sensitive consumer of candidates.
#[derive(Debug, Clone)]
pub struct Assembler {
    task: Task,
    target: usize,
    max_length: usize,
    budget: usize,
    want_true: usize,
    want_false: usize,
    seen: BTreeSet<u64>,
    records: Vec<DatasetRecord>,
    counts: BuildCounts,
}

impl Assembler {
    /// Qualitative targets split as `ceil(target/2)` positives and
    /// `floor(target/2)` negatives.
    pub fn new(config: &DatasetConfig) -> Self {
        let target = config.target_size;
        let (want_true, want_false) = match config.task {
            Task::Qualitative => (target - target / 2, target / 2),
            Task::Quantitative => (target, 0),
        };
        Assembler {
            task: config.task,
            target,
            max_length: config.effective_max_length(),
            budget: BUDGET_FACTOR * target,
            want_true,
            want_false,
            seen: BTreeSet::new(),
            records: Vec::new(),
            counts: BuildCounts::default(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.records.len() >= self.target
    }

    pub fn is_exhausted(&self) -> bool {
        self.counts.raw_generations >= self.budget
    }

    /// Whether more candidates should be fed.
    pub fn wants_more(&self) -> bool {
        !self.is_complete() && !self.is_exhausted()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counts(&self) -> &BuildCounts {
        &self.counts
    }

    pub fn push(&mut self, c: Candidate) {
        if !self.wants_more() {
            return;
        }
        self.counts.raw_generations += c.generations;
        self.counts.candidates += 1;
        let r = match c.record {
            Ok(r) => r,
            Err(Rejection::Unsolvable) => {
                self.counts.unsolvable += 1;
                return;
            }
            Err(Rejection::LabelMismatch) => {
                self.counts.label_mismatch += 1;
                return;
            }
        };
        if r.total_len() > self.max_length {
            self.counts.overlength += 1;
            return;
        }
        let slot = if self.task == Task::Qualitative && !r.meta.label {
            &mut self.want_false
        } else {
            &mut self.want_true
        };
        if *slot == 0 {
            self.counts.surplus += 1;
            return;
        }
        if !self.seen.insert(sequence_hash(&r.input, 0)) {
            self.counts.duplicates += 1;
            return;
        }
        *slot -= 1;
        self.records.push(r);
    }

    /// Finished records, or the partial set when the budget ran out.
    pub fn finish(self) -> Result<BuildOutput, (DatasetError, BuildOutput)> {
        let complete = self.is_complete();
        let out = BuildOutput {
            stats: stats(&self.records),
            records: self.records,
            counts: self.counts,
        };
        if complete {
            Ok(out)
        } else {
            let err = DatasetError::BudgetExceeded {
                budget: self.budget,
                built: out.records.len(),
                target: self.target,
            };
            Err((err, out))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutput {
    pub records: Vec<DatasetRecord>,
    pub counts: BuildCounts,
    pub stats: StatsReport,
}

/// Single-threaded build.
pub fn build(config: &DatasetConfig) -> Result<BuildOutput, (DatasetError, BuildOutput)> {
    let empty = || BuildOutput {
        records: Vec::new(),
        counts: BuildCounts::default(),
        stats: StatsReport::default(),
    };
    if let Err(e) = config.validate() {
        return Err((e, empty()));
    }
    let mut asm = Assembler::new(config);
    let mut index = 0u64;
    while asm.wants_more() {
        match candidate(config, index) {
            Ok(c) => asm.push(c),
            Err(e) => return Err((e, asm.finish().unwrap_or_else(|(_, o)| o))),
        }
        index += 1;
    }
    asm.finish()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub size: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub mean_input_len: f64,
    pub mean_output_len: f64,
    pub max_total_len: usize,
    /// Fraction of records labelled as having an equilibrium.
    pub label_balance: f64,
    pub redeemed_fraction: f64,
}

pub fn stats(records: &[DatasetRecord]) -> StatsReport {
    if records.is_empty() {
        return StatsReport::default();
    }
    let n = records.len() as f64;
    let mut s = StatsReport {
        size: records.len(),
        n_min: usize::MAX,
        ..StatsReport::default()
    };
    let (mut input, mut output, mut pos, mut red) = (0usize, 0usize, 0usize, 0usize);
    for r in records {
        s.n_min = s.n_min.min(r.meta.n_internal);
        s.n_max = s.n_max.max(r.meta.n_internal);
        s.max_total_len = s.max_total_len.max(r.total_len());
        input += r.input.len();
        output += r.output.len();
        pos += r.meta.label as usize;
        red += r.meta.redeemed as usize;
    }
    s.mean_input_len = input as f64 / n;
    s.mean_output_len = output as f64 / n;
    s.label_balance = pos as f64 / n;
    s.redeemed_fraction = red as f64 / n;
    s
}

/// Whether a record belongs to the test side for this seed.
pub fn is_test(input: &TokenSequence, test_fraction: f64, seed: u64) -> bool {
    let u = (sequence_hash(input, seed) >> 11) as f64 / (1u64 << 53) as f64;
    u < test_fraction
}

/// Hash partition into `(train, test)`.
pub fn split(
    records: Vec<DatasetRecord>,
    test_fraction: f64,
    seed: u64,
) -> (Vec<DatasetRecord>, Vec<DatasetRecord>) {
    records
        .into_iter()
        .partition(|r| !is_test(&r.input, test_fraction, seed))
}

/// Checks that a record is self-consistent under `config`: the input parses
/// to a valid network and the output is exactly what the classical solver
/// produces for it.
pub fn verify_record(record: &DatasetRecord, config: &DatasetConfig) -> Result<(), DatasetError> {
    let net = decode_graph(&record.input, config.input_encoding())?;
    net.ensure_structurally_valid()
        .map_err(|e| DatasetError::Record(e.to_string()))?;
    let label = has_equilibrium(&net).map_err(|e| DatasetError::Record(e.to_string()))?;
    if label != record.meta.label || net.n_internal() != record.meta.n_internal {
        return Err(DatasetError::Record(String::from("metadata disagrees with input")));
    }
    match config.task {
        Task::Qualitative => {
            if decode_label(&record.output) != Some(label) {
                return Err(DatasetError::Record(String::from("label does not match network")));
            }
        }
        Task::Quantitative => {
            let x = solve_equilibrium(&net).map_err(|e| DatasetError::Record(e.to_string()))?;
            let expected = encode_float_vector(x.values(), config.sig_digits)?;
            if expected != record.output {
                return Err(DatasetError::Record(String::from("output differs from re-solved equilibrium")));
            }
            if decode_float_vector(&record.output, net.n_internal()).is_none() {
                return Err(DatasetError::Record(String::from("output does not decode")));
            }
        }
    }
    Ok(())
}
