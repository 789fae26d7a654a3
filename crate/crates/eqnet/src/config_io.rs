//! Flat `key = value` configuration files.
//!
//! Generator keys are shared by every file that embeds a generator, so a
//! dataset file is a generator file plus dataset keys. Ranges may be given as
//! `nodes = 8:32` and `edges = 2:4`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use eqnet_core::dataset::{DatasetConfig, SamplingMode, Task};
use eqnet_core::eval::EvalConfig;
use eqnet_core::tokenizer::WeightEncoding;
use eqnet_core::transformer::TrainConfig;
use eqnet_core::{GeneratorConfig, GraphKind};

use crate::error::{Error, Result};

/// Parsed `key = value` lines, consumed key by key.
#[derive(Debug, Clone, Default)]
pub struct KvFile {
    path: PathBuf,
    entries: BTreeMap<String, (String, usize)>,
}

/// Parses `lo:hi` into a pair.
pub fn parse_range<T: FromStr>(s: &str) -> Option<(T, T)> {
    match s.split_once(':') {
        Some((a, b)) => Some((a.trim().parse().ok()?, b.trim().parse().ok()?)),
        None => {
            let v: T = s.trim().parse().ok()?;
            let w: T = s.trim().parse().ok()?;
            Some((v, w))
        }
    }
}

impl KvFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `key = value`"))?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (v.trim().to_string(), i + 1)).is_some() {
                return Err(Error::parse(path, i + 1, format!("duplicate key `{key}`")));
            }
        }
        Ok(KvFile {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text, path)
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::parse(&self.path, line, format!("bad value `{v}` for `{key}`"))),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn take_range<T: FromStr>(&mut self, key: &str) -> Result<Option<(T, T)>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => parse_range(&v)
                .map(Some)
                .ok_or_else(|| Error::parse(&self.path, line, format!("bad range `{v}` for `{key}`"))),
        }
    }

    /// Fails on any key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, (_, line))) => Err(Error::parse(&self.path, line, format!("unknown key `{k}`"))),
        }
    }

    pub fn apply_generator(&mut self, g: &mut GeneratorConfig) -> Result<()> {
        if let Some((lo, hi)) = self.take_range("nodes")? {
            (g.n_min, g.n_max) = (lo, hi);
        }
        if let Some((lo, hi)) = self.take_range("edges")? {
            (g.edge_ratio_min, g.edge_ratio_max) = (lo, hi);
        }
        self.set("n_min", &mut g.n_min)?;
        self.set("n_max", &mut g.n_max)?;
        self.set("edge_ratio_min", &mut g.edge_ratio_min)?;
        self.set("edge_ratio_max", &mut g.edge_ratio_max)?;
        if let Some(k) = self.take::<String>("kind")? {
            g.kind = k.parse::<GraphKind>()?;
        }
        self.set("weighted", &mut g.weighted)?;
        self.set("io_attach_prob", &mut g.io_attach_prob)?;
        self.set("scale_free_gamma", &mut g.scale_free_gamma)?;
        self.set("small_world_rewire_prob", &mut g.small_world_rewire_prob)?;
        self.set("seed", &mut g.seed)?;
        Ok(())
    }

    /// Applies dataset keys. `weighted` also sets the generator's flag.
    pub fn apply_dataset(&mut self, d: &mut DatasetConfig) -> Result<()> {
        let weighted = self.entries.contains_key("weighted");
        self.apply_generator(&mut d.generator)?;
        if weighted {
            d.weighted = d.generator.weighted;
        }
        d.generator.weighted = d.weighted;
        if let Some(t) = self.take::<String>("task")? {
            d.task = t.parse::<Task>()?;
        }
        self.set("sig_digits", &mut d.sig_digits)?;
        if let Some(w) = self.take::<String>("weight_encoding")? {
            d.weight_encoding = parse_weight_encoding(&w).ok_or_else(|| Error::Usage(format!("unknown weight encoding `{w}`")))?;
        }
        if let Some(s) = self.take::<String>("sampling")? {
            d.sampling = s.parse::<SamplingMode>()?;
        }
        self.set("redeem_prob", &mut d.redeem_prob)?;
        self.set("target_size", &mut d.target_size)?;
        self.set("test_fraction", &mut d.test_fraction)?;
        if let Some(m) = self.take::<String>("max_length")? {
            d.max_length = if m == "auto" {
                None
            } else {
                Some(m.parse().map_err(|_| Error::Usage(format!("bad max_length `{m}`")))?)
            };
        }
        self.set("max_node", &mut d.max_node)?;
        Ok(())
    }

    pub fn apply_train(&mut self, t: &mut TrainConfig) -> Result<()> {
        self.set("batch_size", &mut t.batch_size)?;
        self.set("learning_rate", &mut t.learning_rate)?;
        self.set("warmup_steps", &mut t.warmup_steps)?;
        self.set("total_steps", &mut t.total_steps)?;
        self.set("clip_norm", &mut t.clip_norm)?;
        self.set("seed", &mut t.seed)?;
        self.set("beta1", &mut t.beta1)?;
        self.set("beta2", &mut t.beta2)?;
        self.set("epsilon", &mut t.epsilon)?;
        self.set("checkpoint_every", &mut t.checkpoint_every)?;
        Ok(())
    }

    pub fn apply_eval(&mut self, e: &mut EvalConfig) -> Result<()> {
        if let Some(list) = self.take::<String>("tolerances")? {
            e.tolerances = parse_list(&list).ok_or_else(|| Error::Usage(format!("bad tolerances `{list}`")))?;
        }
        self.set("max_decode_len", &mut e.max_decode_len)?;
        Ok(())
    }
}

pub fn parse_list(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|x| x.trim().parse().ok()).collect()
}

pub fn parse_weight_encoding(s: &str) -> Option<WeightEncoding> {
    match s {
        "symbolic" => Some(WeightEncoding::Symbolic),
        "numeric" => Some(WeightEncoding::Numeric),
        "none" => Some(WeightEncoding::None),
        _ => None,
    }
}

pub fn weight_encoding_name(w: WeightEncoding) -> &'static str {
    match w {
        WeightEncoding::Symbolic => "symbolic",
        WeightEncoding::Numeric => "numeric",
        WeightEncoding::None => "none",
    }
}

pub fn generator_to_kv(g: &GeneratorConfig) -> String {
    format!(
        "n_min = {}\nn_max = {}\nedge_ratio_min = {}\nedge_ratio_max = {}\nkind = {}\nweighted = {}\n\
         io_attach_prob = {}\nscale_free_gamma = {}\nsmall_world_rewire_prob = {}\nseed = {}\n",
        g.n_min,
        g.n_max,
        g.edge_ratio_min,
        g.edge_ratio_max,
        g.kind,
        g.weighted,
        g.io_attach_prob,
        g.scale_free_gamma,
        g.small_world_rewire_prob,
        g.seed
    )
}

pub fn dataset_to_kv(d: &DatasetConfig) -> String {
    let mut s = generator_to_kv(&d.generator);
    let _ = write!(
        s,
        "task = {}\nsig_digits = {}\nweight_encoding = {}\nsampling = {}\nredeem_prob = {}\n\
         target_size = {}\ntest_fraction = {}\nmax_length = {}\nmax_node = {}\n",
        d.task,
        d.sig_digits,
        weight_encoding_name(d.weight_encoding),
        d.sampling,
        d.redeem_prob,
        d.target_size,
        d.test_fraction,
        d.max_length.map_or_else(|| String::from("auto"), |m| m.to_string()),
        d.max_node
    );
    s
}

pub fn train_to_kv(t: &TrainConfig) -> String {
    format!(
        "batch_size = {}\nlearning_rate = {}\nwarmup_steps = {}\ntotal_steps = {}\nclip_norm = {}\nseed = {}\n\
         beta1 = {}\nbeta2 = {}\nepsilon = {}\ncheckpoint_every = {}\n",
        t.batch_size,
        t.learning_rate,
        t.warmup_steps,
        t.total_steps,
        t.clip_norm,
        t.seed,
        t.beta1,
        t.beta2,
        t.epsilon,
        t.checkpoint_every
    )
}

/// Reads a dataset configuration on top of the qualitative defaults for the
/// task named in the file.
pub fn read_dataset_config(path: &Path) -> Result<DatasetConfig> {
    let mut kv = KvFile::read(path)?;
    let task = match kv.entries.get("task") {
        Some((t, _)) => t.parse::<Task>()?,
        None => Task::Qualitative,
    };
    let mut cfg = match task {
        Task::Qualitative => DatasetConfig::qualitative(GeneratorConfig::default(), 1000),
        Task::Quantitative => DatasetConfig::quantitative(GeneratorConfig::default(), true, 1000),
    };
    let redeem_given = kv.entries.contains_key("redeem_prob");
    kv.apply_dataset(&mut cfg)?;
    kv.finish()?;
    if task == Task::Qualitative && !redeem_given {
        cfg.redeem_prob = eqnet_core::dataset::SizeClass::of(cfg.generator.n_max).qualitative_redeem_prob();
    }
    Ok(cfg)
}
