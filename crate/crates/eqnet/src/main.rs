use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eqnet::checkpoint;
use eqnet::config_io::{self, KvFile};
use eqnet::dataset_io::{self, build_parallel, read_dataset, read_test_set, write_dataset};
use eqnet::error::{Error, Result};
use eqnet::evaluate::{evaluate, ood_suite};
use eqnet::fsutil::{create_dir, write_atomic};
use eqnet::graph_io::{read_graph, write_graph};
use eqnet::manifest::RunRecorder;
use eqnet::train::{self, TrainJob};
use eqnet::verify;
use eqnet_core::dataset::{self, DatasetConfig, DatasetError, Task};
use eqnet_core::equilibrium::SolveError;
use eqnet_core::eval::{EvalConfig, ModelPredictor, Predictor, SolverPredictor};
use eqnet_core::generators::generate;
use eqnet_core::tokenizer::{decode_label, encode_float_vector};
use eqnet_core::transformer::{ModelShape, TrainConfig};
use eqnet_core::{has_equilibrium, solve_equilibrium, GeneratorConfig, GraphKind, RngStream, Vocabulary};

/// Metabolic network equilibria: generation, exact solving, datasets,
/// transformer training and evaluation.
#[derive(Debug, Parser)]
#[command(name = "eqnet", version)]
struct Cli {
    /// Root for default output directories.
    #[arg(long, global = true, env = "EQNET_OUT", default_value = "runs")]
    out_root: PathBuf,
    /// Worker threads for generation and evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write random networks in the graph text format.
    Generate(GenerateArgs),
    /// Decide and compute the equilibrium of a network file.
    Solve { graph: PathBuf },
    /// Build or inspect datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a transformer on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the exact solver) on a test set.
    Eval(EvalArgs),
    /// Evaluate on the out-of-distribution grid.
    Ood(OodArgs),
    /// Cross-check the solver against the ODE oracle and gradients against
    /// finite differences.
    Verify(VerifyArgs),
}

#[derive(Debug, Args, Default)]
struct GeneratorFlags {
    /// Generator kind: erdos-renyi, small-world or scale-free.
    #[arg(long)]
    kind: Option<String>,
    /// Internal node range `min:max`.
    #[arg(long = "n")]
    nodes: Option<String>,
    /// Edges-per-node range `min:max`.
    #[arg(long)]
    edges: Option<String>,
    #[arg(long)]
    weighted: Option<bool>,
    #[arg(long)]
    io_attach_prob: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl GeneratorFlags {
    fn apply(&self, g: &mut GeneratorConfig) -> Result<()> {
        if let Some(k) = &self.kind {
            g.kind = k.parse::<GraphKind>()?;
        }
        if let Some(r) = &self.nodes {
            (g.n_min, g.n_max) = config_io::parse_range(r).ok_or_else(|| Error::Usage(format!("bad node range `{r}`")))?;
        }
        if let Some(r) = &self.edges {
            (g.edge_ratio_min, g.edge_ratio_max) =
                config_io::parse_range(r).ok_or_else(|| Error::Usage(format!("bad edge range `{r}`")))?;
        }
        if let Some(w) = self.weighted {
            g.weighted = w;
        }
        if let Some(p) = self.io_attach_prob {
            g.io_attach_prob = p;
        }
        if let Some(s) = self.seed {
            g.seed = s;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    gen: GeneratorFlags,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Generator config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Generate, balance, deduplicate, split and write a dataset.
    Build(BuildArgs),
    /// Recompute statistics of a dataset directory or record file.
    Stats { path: PathBuf },
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// Dataset config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// qualitative or quantitative.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    target: Option<usize>,
    #[arg(long)]
    sig_digits: Option<usize>,
    /// redemption or rejection.
    #[arg(long)]
    sampling: Option<String>,
    #[arg(long)]
    redeem_prob: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[command(flatten)]
    gen: GeneratorFlags,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Shape `enc:dec:dim:heads`.
    #[arg(long, default_value = "1:1:64:8")]
    model: String,
    /// Training config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print a progress line every this many steps.
    #[arg(long, default_value_t = 100)]
    log_every: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelSource {
    #[arg(long, required_unless_present = "solver")]
    checkpoint: Option<PathBuf>,
    /// Score the exact solver instead of a model.
    #[arg(long, conflicts_with = "checkpoint")]
    solver: bool,
}

#[derive(Debug, Args)]
struct EvalFlags {
    /// Eval config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated relative l1 tolerances.
    #[arg(long)]
    tolerances: Option<String>,
    #[arg(long)]
    max_decode_len: Option<usize>,
}

impl EvalFlags {
    fn resolve(&self) -> Result<EvalConfig> {
        let mut e = EvalConfig::default();
        if let Some(p) = &self.config {
            let mut kv = KvFile::read(p)?;
            kv.apply_eval(&mut e)?;
            kv.finish()?;
        }
        if let Some(t) = &self.tolerances {
            e.tolerances = config_io::parse_list(t).ok_or_else(|| Error::Usage(format!("bad tolerances `{t}`")))?;
        }
        if let Some(m) = self.max_decode_len {
            e.max_decode_len = m;
        }
        e.validate()?;
        Ok(e)
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    source: ModelSource,
    /// Dataset directory (its test split) or a record file.
    #[arg(long)]
    testset: PathBuf,
    /// Needed only for bare record files.
    #[arg(long)]
    task: Option<String>,
    /// Dataset config describing a bare record file.
    #[arg(long)]
    dataset_config: Option<PathBuf>,
    /// Evaluate only the first N records.
    #[arg(long)]
    limit: Option<usize>,
    #[command(flatten)]
    eval: EvalFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OodArgs {
    #[command(flatten)]
    source: ModelSource,
    /// Training dataset directory; its configuration is the grid's base.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 200)]
    per_cell: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    eval: EvalFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 500)]
    graphs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    n_max: usize,
    /// Finite-difference coordinates per tensor family.
    #[arg(long, default_value_t = 100)]
    grad_coords: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Ctx {
    out_root: PathBuf,
    workers: Option<usize>,
    args: Vec<String>,
}

impl Ctx {
    fn out_dir(&self, given: &Option<PathBuf>, sub: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out_root.join(sub))
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn cmd_generate(ctx: &Ctx, a: &GenerateArgs) -> Result<()> {
    let mut g = GeneratorConfig::default();
    if let Some(p) = &a.config {
        let mut kv = KvFile::read(p)?;
        kv.apply_generator(&mut g)?;
        kv.finish()?;
    }
    a.gen.apply(&mut g)?;
    g.validate()?;
    let dir = ctx.out_dir(&a.out, "generate");
    create_dir(&dir)?;
    let mut rec = RunRecorder::start("generate", ctx.args.clone());
    let root = RngStream::new(g.seed).named("generate");
    for i in 0..a.count {
        let net = generate(&g, &mut root.child(i as u64));
        let path = dir.join(format!("graph_{i:05}.txt"));
        write_graph(&path, &net)?;
        rec.output(&path);
    }
    write_atomic(&dir.join("generator.conf"), config_io::generator_to_kv(&g).as_bytes())?;
    rec.finish(&dir, to_json(&g), g.seed)?;
    println!("wrote {} graphs ({}) to {}", a.count, g.kind, dir.display());
    Ok(())
}

fn cmd_solve(path: &Path) -> Result<()> {
    let net = read_graph(path)?;
    if !has_equilibrium(&net)? {
        println!("equilibrium: no");
        return Ok(());
    }
    println!("equilibrium: yes");
    let x = match solve_equilibrium(&net) {
        Ok(x) => x,
        Err(SolveError::NoUniqueEquilibrium) => {
            return Err(Error::Failed(
                "no unique equilibrium: some internal nodes are cut off from both intake and excretion".into(),
            ))
        }
        Err(e) => return Err(e.into()),
    };
    let values: Vec<String> = x.values().iter().map(f64::to_string).collect();
    println!("x = {}", values.join(" "));
    println!("tokens = {}", encode_float_vector(x.values(), 3)?);
    Ok(())
}

fn cmd_dataset_build(ctx: &Ctx, a: &BuildArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => config_io::read_dataset_config(p)?,
        None => DatasetConfig::qualitative(GeneratorConfig::default(), 1000),
    };
    if let Some(t) = &a.task {
        let task: Task = t.parse()?;
        if task != cfg.task {
            let base = cfg.clone();
            cfg = match task {
                Task::Qualitative => DatasetConfig::qualitative(base.generator, base.target_size),
                Task::Quantitative => DatasetConfig::quantitative(base.generator, true, base.target_size),
            };
        }
    }
    a.gen.apply(&mut cfg.generator)?;
    if let Some(w) = a.gen.weighted {
        cfg.weighted = w;
    }
    cfg.generator.weighted = cfg.weighted;
    if cfg.task == Task::Qualitative && a.redeem_prob.is_none() && a.config.is_none() {
        cfg.redeem_prob = dataset::SizeClass::of(cfg.generator.n_max).qualitative_redeem_prob();
    }
    if let Some(n) = a.target {
        cfg.target_size = n;
    }
    if let Some(d) = a.sig_digits {
        cfg.sig_digits = d;
    }
    if let Some(s) = &a.sampling {
        cfg.sampling = s.parse()?;
    }
    if let Some(p) = a.redeem_prob {
        cfg.redeem_prob = p;
    }
    if let Some(f) = a.test_fraction {
        cfg.test_fraction = f;
    }
    cfg.validate()?;
    let dir = ctx.out_dir(&a.out, "dataset");
    let mut rec = RunRecorder::start("dataset build", ctx.args.clone());
    let (out, failure) = match build_parallel(&cfg, ctx.workers) {
        Ok(o) => (o, None),
        Err((e, o)) => (o, Some(e)),
    };
    let (train, test) = write_dataset(&dir, &cfg, &out)?;
    for f in [dataset_io::CONFIG_FILE, "train.tsv", "train.meta", "test.tsv", "test.meta", dataset_io::SUMMARY_FILE] {
        rec.output(dir.join(f));
    }
    rec.finish(&dir, to_json(&cfg), cfg.generator.seed)?;
    print!("{}", dataset_io::format_summary(&out.stats, &out.counts, train, test));
    match failure {
        None => Ok(()),
        Some(e @ DatasetError::BudgetExceeded { .. }) => {
            eprintln!("partial dataset written to {}", dir.display());
            Err(e.into())
        }
        Some(e) => Err(e.into()),
    }
}

fn cmd_dataset_stats(path: &Path) -> Result<()> {
    let records = if path.is_dir() {
        let d = read_dataset(path)?;
        let mut all = d.train;
        all.extend(d.test);
        all
    } else {
        read_records_any(path)?
    };
    let s = dataset::stats(&records);
    print!(
        "{}",
        dataset_io::format_summary(&s, &Default::default(), records.len(), 0)
            .lines()
            .filter(|l| !l.starts_with("test") && !l.starts_with("train"))
            .map(|l| format!("{l}\n"))
            .collect::<String>()
    );
    Ok(())
}

/// Reads a bare record file, trying the symbolic input encoding first.
fn read_records_any(path: &Path) -> Result<Vec<eqnet_core::dataset::DatasetRecord>> {
    use eqnet_core::tokenizer::WeightEncoding;
    let mut last = None;
    for enc in [WeightEncoding::Symbolic, WeightEncoding::None, WeightEncoding::Numeric] {
        match dataset_io::read_records(path, enc) {
            Ok(r) => return Ok(r),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one encoding tried"))
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let vocab = Vocabulary::new(data.config.max_node);
    let mut tc = TrainConfig::default();
    if let Some(p) = &a.config {
        let mut kv = KvFile::read(p)?;
        kv.apply_train(&mut tc)?;
        kv.finish()?;
    }
    if let Some(v) = a.steps {
        tc.total_steps = v;
    }
    if let Some(v) = a.batch {
        tc.batch_size = v;
    }
    if let Some(v) = a.lr {
        tc.learning_rate = v;
    }
    if let Some(v) = a.warmup {
        tc.warmup_steps = v;
    }
    if let Some(v) = a.seed {
        tc.seed = v;
    }
    if let Some(v) = a.checkpoint_every {
        tc.checkpoint_every = v;
    }
    tc.validate()?;
    let shape: ModelShape = a.model.parse()?;
    let mut model = shape.config(vocab.len(), data.config.effective_max_length() + 1);
    if let Some(p) = a.dropout {
        model.dropout_prob = p;
    }
    model.validate()?;
    let examples = train::examples(&vocab, &data.train)?;
    if examples.is_empty() {
        return Err(Error::Usage(format!("{} has no training records", a.data.display())));
    }
    let dir = ctx.out_dir(&a.out, "train");
    let job = TrainJob {
        model: model.clone(),
        train: tc.clone(),
        max_node: data.config.max_node,
        out_dir: dir.clone(),
        resume: a.resume.clone(),
    };
    let mut rec = RunRecorder::start("train", ctx.args.clone());
    let log_every = a.log_every.max(1);
    eprintln!(
        "training {} model on {} examples for {} steps",
        model.shape_string(),
        examples.len(),
        tc.total_steps
    );
    let out = train::run(&job, &examples, |r| {
        if r.step % log_every == 0 {
            eprintln!("step {:>7}  loss {:.5}  lr {:.3e}  |g| {:.3}", r.step, r.loss, r.learning_rate, r.grad_norm);
        }
    })?;
    rec.output(&out.checkpoint);
    rec.output(&out.loss_csv);
    let config = serde_json::json!({ "model": model, "train": tc, "dataset": data.config });
    rec.finish(&dir, config, tc.seed)?;
    println!("checkpoint: {}", out.checkpoint.display());
    println!("loss: {}", out.loss_csv.display());
    Ok(())
}

/// A loaded model or the solver, behind one predictor interface.
enum Source {
    Model(Box<checkpoint::Checkpoint>, Vocabulary),
    Solver(SolverPredictor),
}

impl Source {
    fn load(s: &ModelSource, dataset: &DatasetConfig) -> Result<Self> {
        match &s.checkpoint {
            Some(p) if !s.solver => {
                let ck = checkpoint::load(p)?;
                let vocab = Vocabulary::new(ck.max_node);
                Ok(Source::Model(Box::new(ck), vocab))
            }
            _ => Ok(Source::Solver(SolverPredictor::for_dataset(dataset))),
        }
    }
}

impl Predictor for Source {
    fn predict(&self, input: &eqnet_core::TokenSequence, max_len: usize) -> eqnet_core::TokenSequence {
        match self {
            Source::Model(ck, vocab) => ModelPredictor {
                params: &ck.params,
                vocab,
            }
            .predict(input, max_len),
            Source::Solver(s) => s.predict(input, max_len),
        }
    }
}

fn write_report(dir: &Path, table: &str, csv: &str, json: serde_json::Value, rec: &mut RunRecorder) -> Result<()> {
    create_dir(dir)?;
    for (name, body) in [
        ("report.txt", table.to_string()),
        ("report.csv", csv.to_string()),
        ("report.json", serde_json::to_string_pretty(&json).expect("report serializes")),
    ] {
        let p = dir.join(name);
        write_atomic(&p, body.as_bytes())?;
        rec.output(p);
    }
    Ok(())
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let ecfg = a.eval.resolve()?;
    let fallback = match &a.dataset_config {
        Some(p) => config_io::read_dataset_config(p)?,
        None => DatasetConfig::qualitative(GeneratorConfig::default(), 1),
    };
    let (dcfg, mut records) = if a.testset.is_dir() {
        let (c, r) = read_test_set(&a.testset, fallback.input_encoding())?;
        (c.unwrap_or(fallback), r)
    } else {
        let r = dataset_io::read_records(&a.testset, fallback.input_encoding())?;
        (fallback, r)
    };
    let task = match &a.task {
        Some(t) => t.parse()?,
        None if a.testset.is_dir() || a.dataset_config.is_some() => dcfg.task,
        None => match records.first().map(|r| decode_label(&r.output).is_some()) {
            Some(false) => Task::Quantitative,
            _ => Task::Qualitative,
        },
    };
    if let Some(n) = a.limit {
        records.truncate(n);
    }
    let dcfg = DatasetConfig { task, ..dcfg };
    let source = Source::load(&a.source, &dcfg)?;
    let mut rec = RunRecorder::start("eval", ctx.args.clone());
    let report = evaluate(&source, &records, task, &ecfg, &dcfg)?;
    let table = report.to_table();
    print!("{table}");
    let dir = ctx.out_dir(&a.out, "eval");
    write_report(&dir, &table, &report.to_csv(), to_json(&report), &mut rec)?;
    rec.finish(&dir, serde_json::json!({ "eval": ecfg, "dataset": dcfg }), dcfg.generator.seed)?;
    Ok(())
}

fn cmd_ood(ctx: &Ctx, a: &OodArgs) -> Result<()> {
    let ecfg = a.eval.resolve()?;
    let base = config_io::read_dataset_config(&a.data.join(dataset_io::CONFIG_FILE))?;
    let source = Source::load(&a.source, &base)?;
    let mut rec = RunRecorder::start("ood", ctx.args.clone());
    let report = ood_suite(&source, &base, a.per_cell, a.seed, &ecfg)?;
    let table = report.to_table();
    print!("{table}");
    let rows: Vec<serde_json::Value> = report
        .rows
        .iter()
        .map(|(l, r)| serde_json::json!({ "test_set": l, "report": r }))
        .collect();
    let dir = ctx.out_dir(&a.out, "ood");
    write_report(&dir, &table, &report.to_csv(), serde_json::Value::Array(rows), &mut rec)?;
    let config = serde_json::json!({ "eval": ecfg, "base": base, "per_cell": a.per_cell });
    rec.finish(&dir, config, a.seed)?;
    Ok(())
}

fn cmd_verify(ctx: &Ctx, a: &VerifyArgs) -> Result<()> {
    let mut rec = RunRecorder::start("verify", ctx.args.clone());
    let oracle = verify::oracle_agreement(a.graphs, a.seed, a.n_max);
    println!(
        "oracle: {} graphs, {} compared, {} singular, worst relative l1 gap {:.3e} (limit {:e})",
        oracle.graphs, oracle.compared, oracle.singular, oracle.worst_rel_l1, verify::ORACLE_TOL
    );
    for f in &oracle.failures {
        println!("  FAIL {f}");
    }
    let grad = verify::gradient_check(a.seed, a.grad_coords)?;
    let coords: usize = grad.per_family.values().sum();
    println!(
        "gradients: {} coordinates over {} families, worst relative error {:.3e} (limit {:e})",
        coords,
        grad.per_family.len(),
        grad.worst_rel,
        verify::GRAD_TOL
    );
    for f in &grad.failures {
        println!("  FAIL {f}");
    }
    let dir = ctx.out_dir(&a.out, "verify");
    create_dir(&dir)?;
    let summary = serde_json::json!({ "oracle": oracle, "gradients": grad });
    let p = dir.join("verify.json");
    write_atomic(&p, serde_json::to_string_pretty(&summary).expect("summary serializes").as_bytes())?;
    rec.output(&p);
    let config = serde_json::json!({ "graphs": a.graphs, "n_max": a.n_max, "grad_coords": a.grad_coords });
    rec.finish(&dir, config, a.seed)?;
    if oracle.passed() && grad.passed() {
        println!("verify: ok");
        Ok(())
    } else {
        Err(Error::Failed(format!(
            "{} oracle and {} gradient discrepancies",
            oracle.failures.len(),
            grad.failures.len()
        )))
    }
}

fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::Usage("--workers must be positive".into()));
        }
        // ignore a pool that is already set up (e.g. by a test harness)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let ctx = Ctx {
        out_root: cli.out_root,
        workers: cli.workers,
        args,
    };
    match &cli.command {
        Command::Generate(a) => cmd_generate(&ctx, a),
        Command::Solve { graph } => cmd_solve(graph),
        Command::Dataset(DatasetCommand::Build(a)) => cmd_dataset_build(&ctx, a),
        Command::Dataset(DatasetCommand::Stats { path }) => cmd_dataset_stats(path),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Ood(a) => cmd_ood(&ctx, a),
        Command::Verify(a) => cmd_verify(&ctx, a),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match run(cli, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
