//! Token codec for networks, labels and concentration vectors.
//!
//! Inputs are symbolic: `N_{n+2}` for the node count, then one `N_src N_dst`
//! pair (plus `N_weight` when weighted) per edge in canonical order. Outputs
//! are either a single label token (`N1` / `N0`) or numbers in scientific
//! notation spelled digit by digit:
//!
//! ```text
//! 0.121  ->  + 1 . 2 1 10^ - 1
//! ```
//!
//! Numbers in a vector are separated by `SEP`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::graph::{GraphError, MetabolicNetwork, WeightedEdge, MAX_WEIGHT, MIN_WEIGHT};

/// Default largest node token. Covers node ids of 300-node graphs
/// (`N0 .. N301`, header `N302`) and every weight.
pub const DEFAULT_MAX_NODE: u32 = 302;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Token {
    Pad,
    Bos,
    Eos,
    Plus,
    Minus,
    Dot,
    Exp,
    Sep,
    Digit(u8),
    Node(u32),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Pad => f.write_str("PAD"),
            Token::Bos => f.write_str("BOS"),
            Token::Eos => f.write_str("EOS"),
            Token::Plus => f.write_str("+"),
            Token::Minus => f.write_str("-"),
            Token::Dot => f.write_str("."),
            Token::Exp => f.write_str("10^"),
            Token::Sep => f.write_str("SEP"),
            Token::Digit(d) => write!(f, "{d}"),
            Token::Node(k) => write!(f, "N{k}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokenError {
    #[error("unknown token `{0}`")]
    Unknown(String),
    #[error("network with {nodes} nodes exceeds the vocabulary limit N{max}")]
    EncodingOverflow { nodes: usize, max: u32 },
    #[error("cannot encode non-finite value")]
    NonFinite,
    #[error("weight {0} outside [1, 100]")]
    WeightRange(u32),
    #[error("significant digits must be at least 1")]
    SigDigits,
    #[error("malformed graph sequence: {0}")]
    MalformedGraph(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl FromStr for Token {
    type Err = TokenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "PAD" => Token::Pad,
            "BOS" => Token::Bos,
            "EOS" => Token::Eos,
            "+" => Token::Plus,
            "-" => Token::Minus,
            "." => Token::Dot,
            "10^" => Token::Exp,
            "SEP" => Token::Sep,
            _ => {
                if s.len() == 1 && s.as_bytes()[0].is_ascii_digit() {
                    Token::Digit(s.as_bytes()[0] - b'0')
                } else if let Some(k) = s.strip_prefix('N').and_then(|r| {
                    (!r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()))
                        .then(|| r.parse::<u32>().ok())
                        .flatten()
                }) {
                    Token::Node(k)
                } else {
                    return Err(TokenError::Unknown(s.to_string()));
                }
            }
        })
    }
}

const PAD_ID: u32 = 0;
const BOS_ID: u32 = 1;
const EOS_ID: u32 = 2;
const DIGIT_BASE: u32 = 8;
const NODE_BASE: u32 = 18;

/// Dense id assignment: specials, punctuation, digits, then `N0..=N_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    max_node: u32,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::new(DEFAULT_MAX_NODE)
    }
}

impl Vocabulary {
    pub const PAD: u32 = PAD_ID;
    pub const BOS: u32 = BOS_ID;
    pub const EOS: u32 = EOS_ID;

    /// `max_node` must be at least 100 so every weight has a token.
    pub fn new(max_node: u32) -> Self {
        assert!(max_node >= MAX_WEIGHT, "vocabulary must cover weights");
        Vocabulary { max_node }
    }

    pub fn max_node(&self) -> u32 {
        self.max_node
    }

    pub fn len(&self) -> usize {
        (NODE_BASE + self.max_node + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: Token) -> Option<u32> {
        Some(match token {
            Token::Pad => PAD_ID,
            Token::Bos => BOS_ID,
            Token::Eos => EOS_ID,
            Token::Plus => 3,
            Token::Minus => 4,
            Token::Dot => 5,
            Token::Exp => 6,
            Token::Sep => 7,
            Token::Digit(d) if d < 10 => DIGIT_BASE + d as u32,
            Token::Node(k) if k <= self.max_node => NODE_BASE + k,
            _ => return None,
        })
    }

    pub fn token(&self, id: u32) -> Option<Token> {
        Some(match id {
            PAD_ID => Token::Pad,
            BOS_ID => Token::Bos,
            EOS_ID => Token::Eos,
            3 => Token::Plus,
            4 => Token::Minus,
            5 => Token::Dot,
            6 => Token::Exp,
            7 => Token::Sep,
            8..=17 => Token::Digit((id - DIGIT_BASE) as u8),
            _ if id >= NODE_BASE && id - NODE_BASE <= self.max_node => Token::Node(id - NODE_BASE),
            _ => return None,
        })
    }

    pub fn encode_ids(&self, seq: &TokenSequence) -> Result<Vec<u32>, TokenError> {
        seq.0
            .iter()
            .map(|&t| self.id(t).ok_or_else(|| TokenError::Unknown(t.to_string())))
            .collect()
    }

    pub fn decode_ids(&self, ids: &[u32]) -> Result<TokenSequence, TokenError> {
        ids.iter()
            .map(|&i| {
                self.token(i)
                    .ok_or_else(|| TokenError::Unknown(format!("#{i}")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(TokenSequence)
    }

    /// All tokens in id order.
    pub fn tokens(&self) -> impl Iterator<Item = Token> + '_ {
        (0..self.len() as u32).filter_map(|i| self.token(i))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenSequence(pub Vec<Token>);

impl TokenSequence {
    pub fn new() -> Self {
        TokenSequence(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }
}

/// Space-separated token spellings.
impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, t) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for TokenSequence {
    type Err = TokenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split_whitespace()
            .map(Token::from_str)
            .collect::<Result<Vec<_>, _>>()
            .map(TokenSequence)
    }
}

impl From<Vec<Token>> for TokenSequence {
    fn from(v: Vec<Token>) -> Self {
        TokenSequence(v)
    }
}

/// How edge weights are spelled in graph inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightEncoding {
    /// No weight token (all weights are 1).
    None,
    /// One `N_w` token per edge.
    Symbolic,
    /// `+` followed by the decimal digits of the weight.
    Numeric,
}

/// Graph input sequence with symbolic or no weights.
pub fn encode_graph(network: &MetabolicNetwork, weighted: bool) -> Result<TokenSequence, TokenError> {
    let enc = if weighted {
        WeightEncoding::Symbolic
    } else {
        WeightEncoding::None
    };
    encode_graph_with(network, enc, DEFAULT_MAX_NODE)
}

pub fn encode_graph_with(
    network: &MetabolicNetwork,
    weights: WeightEncoding,
    max_node: u32,
) -> Result<TokenSequence, TokenError> {
    let nodes = network.node_count();
    if nodes as u64 > max_node as u64 {
        return Err(TokenError::EncodingOverflow {
            nodes,
            max: max_node,
        });
    }
    let edges = network.canonical_edge_order();
    let per_edge = match weights {
        WeightEncoding::None => 2,
        WeightEncoding::Symbolic => 3,
        WeightEncoding::Numeric => 5,
    };
    let mut out = Vec::with_capacity(1 + per_edge * edges.len());
    out.push(Token::Node(nodes as u32));
    for e in edges {
        out.push(Token::Node(e.src.0));
        out.push(Token::Node(e.dst.0));
        match weights {
            WeightEncoding::None => {}
            WeightEncoding::Symbolic => {
                if !(MIN_WEIGHT..=MAX_WEIGHT).contains(&e.weight) {
                    return Err(TokenError::WeightRange(e.weight));
                }
                out.push(Token::Node(e.weight));
            }
            WeightEncoding::Numeric => out.extend(encode_weight_numeric(e.weight)?.0),
        }
    }
    Ok(TokenSequence(out))
}

/// Inverse of [`encode_graph_with`]. Unweighted inputs decode with unit
/// weights.
pub fn decode_graph(seq: &TokenSequence, weights: WeightEncoding) -> Result<MetabolicNetwork, TokenError> {
    let toks = seq.tokens();
    let node = |t: Option<&Token>| match t {
        Some(Token::Node(k)) => Ok(*k),
        _ => Err(TokenError::MalformedGraph("expected node token")),
    };
    let count = node(toks.first())? as usize;
    if count < 3 {
        return Err(TokenError::MalformedGraph("node count below 3"));
    }
    let mut edges = Vec::new();
    let mut k = 1;
    while k < toks.len() {
        let src = node(toks.get(k))?;
        let dst = node(toks.get(k + 1))?;
        k += 2;
        let weight = match weights {
            WeightEncoding::None => 1,
            WeightEncoding::Symbolic => {
                let w = node(toks.get(k))?;
                k += 1;
                w
            }
            WeightEncoding::Numeric => {
                if toks.get(k) != Some(&Token::Plus) {
                    return Err(TokenError::MalformedGraph("expected '+' before weight"));
                }
                k += 1;
                let mut w: u32 = 0;
                let start = k;
                while let Some(Token::Digit(d)) = toks.get(k) {
                    w = w.saturating_mul(10).saturating_add(*d as u32);
                    k += 1;
                }
                if k == start {
                    return Err(TokenError::MalformedGraph("empty weight"));
                }
                w
            }
        };
        edges.push(WeightedEdge::new(src, dst, weight));
    }
    Ok(MetabolicNetwork::new(count - 2, edges)?)
}

pub fn encode_weight_numeric(w: u32) -> Result<TokenSequence, TokenError> {
    if !(MIN_WEIGHT..=MAX_WEIGHT).contains(&w) {
        return Err(TokenError::WeightRange(w));
    }
    let mut out = Vec::with_capacity(4);
    out.push(Token::Plus);
    out.extend(w.to_string().bytes().map(|b| Token::Digit(b - b'0')));
    Ok(TokenSequence(out))
}

pub fn encode_label(has_equilibrium: bool) -> TokenSequence {
    TokenSequence(alloc::vec![Token::Node(has_equilibrium as u32)])
}

pub fn decode_label(seq: &TokenSequence) -> Option<bool> {
    match seq.tokens() {
        [Token::Node(0)] => Some(false),
        [Token::Node(1)] => Some(true),
        _ => None,
    }
}

/// Rounds `x` to `sig_digits` significant digits through its decimal
/// rendering, which is what the codec emits.
pub fn round_significant(x: f64, sig_digits: usize) -> f64 {
    format!("{:.*e}", sig_digits.saturating_sub(1), x)
        .parse()
        .unwrap_or(x)
}

fn push_number(out: &mut Vec<Token>, x: f64, sig_digits: usize) {
    let text = format!("{:.*e}", sig_digits - 1, x.abs());
    let (mantissa, exponent) = text.split_once('e').expect("exponent present");
    out.push(if x < 0.0 { Token::Minus } else { Token::Plus });
    let mut digits = mantissa.bytes().filter(|b| b.is_ascii_digit());
    out.push(Token::Digit(digits.next().unwrap_or(b'0') - b'0'));
    out.push(Token::Dot);
    out.extend(digits.map(|b| Token::Digit(b - b'0')));
    out.push(Token::Exp);
    let (sign, mag) = match exponent.strip_prefix('-') {
        Some(m) => (Token::Minus, m),
        None => (Token::Plus, exponent),
    };
    out.push(sign);
    out.extend(mag.bytes().map(|b| Token::Digit(b - b'0')));
}

/// Each value as `sign d . d..d 10^ sign e..e`, joined by `SEP`.
pub fn encode_float_vector(values: &[f64], sig_digits: usize) -> Result<TokenSequence, TokenError> {
    if sig_digits == 0 {
        return Err(TokenError::SigDigits);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TokenError::NonFinite);
    }
    let mut out = Vec::with_capacity(values.len() * (sig_digits + 6));
    for (k, &v) in values.iter().enumerate() {
        if k > 0 {
            out.push(Token::Sep);
        }
        push_number(&mut out, v, sig_digits);
    }
    Ok(TokenSequence(out))
}

fn parse_number(toks: &[Token]) -> Option<f64> {
    let mut it = toks.iter().peekable();
    let mut text = String::new();
    match it.next()? {
        Token::Plus => {}
        Token::Minus => text.push('-'),
        _ => return None,
    }
    let Token::Digit(lead) = it.next()? else {
        return None;
    };
    text.push((b'0' + lead) as char);
    if it.next()? != &Token::Dot {
        return None;
    }
    text.push('.');
    while let Some(Token::Digit(d)) = it.peek() {
        text.push((b'0' + d) as char);
        it.next();
    }
    if it.next()? != &Token::Exp {
        return None;
    }
    text.push('e');
    match it.next()? {
        Token::Plus => {}
        Token::Minus => text.push('-'),
        _ => return None,
    }
    let mut exp_digits = 0;
    for t in it {
        let Token::Digit(d) = t else { return None };
        text.push((b'0' + d) as char);
        exp_digits += 1;
    }
    if exp_digits == 0 {
        return None;
    }
    text.parse().ok()
}

/// Parses `SEP`-separated numbers; `None` when malformed or when the count is
/// not `expected_len`.
pub fn decode_float_vector(seq: &TokenSequence, expected_len: usize) -> Option<Vec<f64>> {
    if seq.is_empty() {
        return (expected_len == 0).then(Vec::new);
    }
    let values: Option<Vec<f64>> = seq
        .tokens()
        .split(|t| *t == Token::Sep)
        .map(parse_number)
        .collect();
    values.filter(|v| v.len() == expected_len)
}
