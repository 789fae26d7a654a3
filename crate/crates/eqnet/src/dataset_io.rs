//! Dataset directories.
//!
//! ```text
//! <dir>/dataset.conf   generating configuration (key = value)
//! <dir>/train.tsv      <input tokens>\t<output tokens>, one record per line
//! <dir>/test.tsv
//! <dir>/train.meta     <n_internal> <edges> <label 0|1> <kind> <redeemed 0|1>
//! <dir>/test.meta
//! <dir>/summary.txt    statistics and build counters (key = value)
//! ```
//!
//! A `.tsv` without its `.meta` sidecar is still readable; metadata is then
//! recomputed from the decoded input, with kind and redeemed flag unknown.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use eqnet_core::dataset::{self, BuildCounts, BuildOutput, DatasetConfig, DatasetRecord, RecordMeta, StatsReport};
use eqnet_core::tokenizer::{decode_graph, WeightEncoding};
use eqnet_core::{has_equilibrium, GraphKind, TokenSequence};
use rayon::prelude::*;

use crate::config_io::{dataset_to_kv, read_dataset_config};
use crate::error::{Error, Result};
use crate::fsutil::{create_dir, write_atomic};

pub const CONFIG_FILE: &str = "dataset.conf";
pub const SUMMARY_FILE: &str = "summary.txt";

pub fn format_record(r: &DatasetRecord) -> String {
    format!("{}\t{}", r.input, r.output)
}

pub fn format_meta(m: &RecordMeta) -> String {
    format!(
        "{} {} {} {} {}",
        m.n_internal, m.edges, m.label as u8, m.kind, m.redeemed as u8
    )
}

fn parse_flag(s: &str) -> Option<bool> {
    match s {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

pub fn parse_meta(line: &str) -> Option<RecordMeta> {
    let f: Vec<&str> = line.split_whitespace().collect();
    match f.as_slice() {
        [n, e, l, k, r] => Some(RecordMeta {
            n_internal: n.parse().ok()?,
            edges: e.parse().ok()?,
            label: parse_flag(l)?,
            kind: k.parse().ok()?,
            redeemed: parse_flag(r)?,
        }),
        _ => None,
    }
}

fn derive_meta(input: &TokenSequence, encoding: WeightEncoding) -> Option<RecordMeta> {
    let net = decode_graph(input, encoding).ok()?;
    Some(RecordMeta {
        n_internal: net.n_internal(),
        edges: net.edge_count(),
        label: has_equilibrium(&net).ok()?,
        kind: GraphKind::ErdosRenyi,
        redeemed: false,
    })
}

fn meta_path(tsv: &Path) -> PathBuf {
    tsv.with_extension("meta")
}

/// Reads a record file. Corrupt lines are reported with their line number.
pub fn read_records(path: &Path, encoding: WeightEncoding) -> Result<Vec<DatasetRecord>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let mpath = meta_path(path);
    let metas = match std::fs::read_to_string(&mpath) {
        Ok(m) => Some(m),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(&mpath)(e)),
    };
    let mut meta_lines = metas.as_deref().map(str::lines);
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (a, b) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `<input>\\t<output>`"))?;
        let input: TokenSequence = a
            .parse()
            .map_err(|e| Error::parse(path, i + 1, format!("input: {e}")))?;
        let output: TokenSequence = b
            .parse()
            .map_err(|e| Error::parse(path, i + 1, format!("output: {e}")))?;
        let meta = match meta_lines.as_mut() {
            Some(lines) => {
                let m = lines
                    .next()
                    .ok_or_else(|| Error::parse(&mpath, i + 1, "missing metadata line"))?;
                parse_meta(m).ok_or_else(|| Error::parse(&mpath, i + 1, "malformed metadata"))?
            }
            None => derive_meta(&input, encoding)
                .ok_or_else(|| Error::parse(path, i + 1, "input is not a valid network"))?,
        };
        out.push(DatasetRecord { input, output, meta });
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut tsv = String::new();
    let mut meta = String::new();
    for r in records {
        tsv.push_str(&format_record(r));
        tsv.push('\n');
        meta.push_str(&format_meta(&r.meta));
        meta.push('\n');
    }
    write_atomic(path, tsv.as_bytes())?;
    write_atomic(&meta_path(path), meta.as_bytes())
}

pub fn format_summary(stats: &StatsReport, counts: &BuildCounts, train: usize, test: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "size = {}", stats.size);
    let _ = writeln!(s, "train = {train}");
    let _ = writeln!(s, "test = {test}");
    let _ = writeln!(s, "n_min = {}", stats.n_min);
    let _ = writeln!(s, "n_max = {}", stats.n_max);
    let _ = writeln!(s, "mean_input_len = {:.4}", stats.mean_input_len);
    let _ = writeln!(s, "mean_output_len = {:.4}", stats.mean_output_len);
    let _ = writeln!(s, "max_total_len = {}", stats.max_total_len);
    let _ = writeln!(s, "label_balance = {:.6}", stats.label_balance);
    let _ = writeln!(s, "redeemed_fraction = {:.6}", stats.redeemed_fraction);
    let _ = writeln!(s, "raw_generations = {}", counts.raw_generations);
    let _ = writeln!(s, "candidates = {}", counts.candidates);
    let _ = writeln!(s, "duplicates = {}", counts.duplicates);
    let _ = writeln!(s, "overlength = {}", counts.overlength);
    let _ = writeln!(s, "unsolvable = {}", counts.unsolvable);
    let _ = writeln!(s, "label_mismatch = {}", counts.label_mismatch);
    let _ = writeln!(s, "surplus = {}", counts.surplus);
    s
}

/// Builds with a rayon pool. Candidates are generated in parallel chunks and
/// consumed in index order, so the result equals [`dataset::build`] for any
/// worker count.
pub fn build_parallel(
    config: &DatasetConfig,
    workers: Option<usize>,
) -> std::result::Result<BuildOutput, (eqnet_core::dataset::DatasetError, BuildOutput)> {
    if let Err(e) = config.validate() {
        return Err((e, dataset::Assembler::new(config).finish().unwrap_or_else(|(_, o)| o)));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().expect("thread pool");
    let chunk = (pool.current_num_threads() * 64).max(256) as u64;
    let mut asm = dataset::Assembler::new(config);
    let mut next = 0u64;
    while asm.wants_more() {
        let batch: Vec<_> = pool.install(|| {
            (next..next + chunk)
                .into_par_iter()
                .map(|i| dataset::candidate(config, i))
                .collect()
        });
        next += chunk;
        for c in batch {
            if !asm.wants_more() {
                break;
            }
            match c {
                Ok(c) => asm.push(c),
                Err(e) => return Err((e, asm.finish().unwrap_or_else(|(_, o)| o))),
            }
        }
    }
    asm.finish()
}

/// A dataset read back from disk.
#[derive(Debug, Clone)]
pub struct DatasetDir {
    pub config: DatasetConfig,
    pub train: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

/// Splits and writes a build. Returns `(train, test)` sizes.
pub fn write_dataset(dir: &Path, config: &DatasetConfig, out: &BuildOutput) -> Result<(usize, usize)> {
    create_dir(dir)?;
    let (train, test) = dataset::split(out.records.clone(), config.test_fraction, config.generator.seed);
    write_atomic(&dir.join(CONFIG_FILE), dataset_to_kv(config).as_bytes())?;
    write_records(&dir.join("train.tsv"), &train)?;
    write_records(&dir.join("test.tsv"), &test)?;
    let summary = format_summary(&out.stats, &out.counts, train.len(), test.len());
    write_atomic(&dir.join(SUMMARY_FILE), summary.as_bytes())?;
    Ok((train.len(), test.len()))
}

pub fn read_dataset(dir: &Path) -> Result<DatasetDir> {
    let config = read_dataset_config(&dir.join(CONFIG_FILE))?;
    let enc = config.input_encoding();
    Ok(DatasetDir {
        train: read_records(&dir.join("train.tsv"), enc)?,
        test: read_records(&dir.join("test.tsv"), enc)?,
        config,
    })
}

/// Accepts either a dataset directory (its test split) or a bare record file.
pub fn read_test_set(path: &Path, encoding: WeightEncoding) -> Result<(Option<DatasetConfig>, Vec<DatasetRecord>)> {
    if path.is_dir() {
        let config = read_dataset_config(&path.join(CONFIG_FILE))?;
        let recs = read_records(&path.join("test.tsv"), config.input_encoding())?;
        Ok((Some(config), recs))
    } else {
        Ok((None, read_records(path, encoding)?))
    }
}
