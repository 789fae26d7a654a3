//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line (visible
//! with `--nocapture`) and asserts at the pinned tolerance.
//!
//! The two long training runs and the check that depends on them are
//! `#[ignore]`d; run them with `cargo test --release -p eqnet --test
//! acceptance -- --ignored --nocapture`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use eqnet::checkpoint::{self, Checkpoint};
use eqnet::dataset_io::build_parallel;
use eqnet::evaluate::{cell_dataset, evaluate};
use eqnet::train::{self, TrainJob};
use eqnet_core::dataset::{DatasetConfig, DatasetRecord, Task};
use eqnet_core::equilibrium::{max_stable_dt, ode_relaxation_oracle, stranded_nodes, OracleError};
use eqnet_core::eval::{EvalConfig, ModelPredictor, SolverPredictor};
use eqnet_core::generators::{generate, redeem};
use eqnet_core::tokenizer::{
    decode_float_vector, decode_graph, encode_float_vector, encode_graph_with, round_significant, WeightEncoding,
    DEFAULT_MAX_NODE,
};
use eqnet_core::transformer::{Example, ModelConfig, PackedBatch, TensorFamily, TrainConfig, Trainer, TransformerParams};
use eqnet_core::{
    has_equilibrium, solve_equilibrium, GeneratorConfig, GraphKind, MetabolicNetwork, NodeId, RngStream, TokenSequence,
    Vocabulary,
};
use rayon::prelude::*;

fn verdict(name: &str, pass: bool, detail: String, elapsed: Duration, limit: Duration) -> bool {
    let ok = pass && elapsed <= limit;
    eprintln!(
        "[{}] {name}: {detail} ({:.1} s, limit {} s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    ok
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn random_graph(root: &RngStream, i: u64, n_max: usize, repair: bool) -> MetabolicNetwork {
    let mut rng = root.child(i);
    let kind = GraphKind::ALL[(i % 3) as usize];
    let cfg = GeneratorConfig::default()
        .with_nodes(1, n_max)
        .with_edge_ratio(1.0, 4.0)
        .with_kind(kind);
    let g = generate(&cfg, &mut rng);
    if repair {
        redeem(&g, true, &mut rng)
    } else {
        g
    }
}

fn intake_flux(net: &MetabolicNetwork) -> f64 {
    net.edges()
        .iter()
        .filter(|e| e.src == NodeId::INTAKE)
        .map(|e| e.weight as f64)
        .sum()
}

fn rel_l1(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    d / b.iter().map(|y| y.abs()).sum::<f64>()
}

#[test]
fn criterion_01_solver_matches_ode_relaxation() {
    let t = Instant::now();
    let root = RngStream::new(101).named("acceptance-oracle");
    let mut solvable = Vec::new();
    let mut i = 0;
    while solvable.len() < 500 {
        let net = random_graph(&root, i, 20, true);
        if let Ok(x) = solve_equilibrium(&net) {
            solvable.push((net, x));
        }
        i += 1;
    }
    let gaps: Vec<f64> = solvable
        .par_iter()
        .map(|(net, x)| {
            let dt = max_stable_dt(net).unwrap();
            match ode_relaxation_oracle(net, dt, 20_000_000, 1e-10 * intake_flux(net)) {
                Ok(y) => rel_l1(y.values(), x.values()),
                Err(_) => f64::INFINITY,
            }
        })
        .collect();
    let worst = gaps.iter().cloned().fold(0.0, f64::max);
    let ok = verdict(
        "solver/oracle equivalence",
        worst < 1e-6,
        format!("500 graphs, worst relative l1 gap {worst:.2e} (< 1e-6)"),
        t.elapsed(),
        minutes(1),
    );
    assert!(ok);
}

/// `det` by cofactor expansion along the first row.
fn det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 0 {
        return 1.0;
    }
    (0..n)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * m[0][j] * det(&minor(m, 0, j))
        })
        .sum()
}

fn minor(m: &[Vec<f64>], r: usize, c: usize) -> Vec<Vec<f64>> {
    m.iter()
        .enumerate()
        .filter(|&(i, _)| i != r)
        .map(|(_, row)| row.iter().enumerate().filter(|&(j, _)| j != c).map(|(_, v)| *v).collect())
        .collect()
}

/// `-J1^{-1} phi` through the adjugate, with `J1` assembled straight from the
/// edge list. `None` when `J1` is singular.
fn cofactor_solution(net: &MetabolicNetwork) -> Option<Vec<f64>> {
    let n = net.n_internal();
    let exc = n + 1;
    let mut j = vec![vec![0.0; n]; n];
    let mut phi = vec![0.0; n];
    for e in net.edges() {
        let (s, d, w) = (e.src.0 as usize, e.dst.0 as usize, e.weight as f64);
        if s == 0 {
            if d != exc {
                phi[d - 1] += w;
            }
        } else {
            j[s - 1][s - 1] -= w;
            if d != exc {
                j[d - 1][s - 1] += w;
            }
        }
    }
    let dj = det(&j);
    // integer matrix: a nonzero determinant has magnitude at least 1
    if dj.abs() < 0.5 {
        return None;
    }
    let x = (0..n)
        .map(|r| {
            // (J^{-1})_{rc} = C_{cr} / det
            -(0..n)
                .map(|c| {
                    let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
                    sign * det(&minor(&j, c, r)) * phi[c]
                })
                .sum::<f64>()
                / dj
        })
        .collect();
    Some(x)
}

#[test]
fn criterion_02_solver_matches_cofactor_inversion() {
    let t = Instant::now();
    let root = RngStream::new(202).named("acceptance-cofactor");
    let (mut compared, mut singular, mut worst) = (0, 0, 0.0f64);
    let mut disagreements = Vec::new();
    for i in 0..1000 {
        let net = random_graph(&root, i, 6, i % 2 == 0);
        match (cofactor_solution(&net), solve_equilibrium(&net)) {
            (Some(want), Ok(got)) => {
                compared += 1;
                let gap = want.iter().zip(got.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst = worst.max(gap);
                if !(gap <= 1e-9) {
                    disagreements.push(format!("graph {i}: max abs gap {gap:e}"));
                }
            }
            (None, Err(_)) => singular += 1,
            (a, b) => disagreements.push(format!("graph {i}: cofactor {:?}, solver {:?}", a.is_some(), b.is_ok())),
        }
    }
    let ok = verdict(
        "cofactor equivalence",
        disagreements.is_empty() && compared > 500,
        format!("{compared} compared, {singular} singular on both sides, worst abs gap {worst:.2e} (<= 1e-9)"),
        t.elapsed(),
        minutes(1),
    );
    assert!(ok, "{disagreements:?}");
}

#[test]
fn criterion_03_existence_criterion_matches_dynamics() {
    let t = Instant::now();
    let root = RngStream::new(303).named("acceptance-dynamics");
    let graphs: Vec<MetabolicNetwork> = (0..1000).map(|i| random_graph(&root, i, 10, false)).collect();
    let results: Vec<(bool, Result<(), OracleError>, bool)> = graphs
        .par_iter()
        .map(|net| {
            let label = has_equilibrium(net).unwrap();
            let dt = max_stable_dt(net).unwrap();
            let steps = if label { 20_000_000 } else { 200_000 };
            let r = ode_relaxation_oracle(net, dt, steps, 1e-10 * intake_flux(net)).map(|_| ());
            (label, r, !stranded_nodes(net).is_empty())
        })
        .collect();
    let mut log = Vec::new();
    let (mut negatives, mut documented) = (0, 0);
    for (i, (label, r, stranded)) in results.iter().enumerate() {
        match (label, r) {
            (false, Err(OracleError::Diverged { .. })) => negatives += 1,
            (false, other) => log.push(format!("graph {i}: no equilibrium predicted but oracle gave {other:?}")),
            (true, Ok(())) => {}
            // closed cycles cut off from the intake hold no mass and never
            // matter, but make the system singular
            (true, Err(_)) if *stranded => documented += 1,
            (true, Err(e)) => log.push(format!("graph {i}: equilibrium predicted but oracle gave {e}")),
        }
    }
    let ok = verdict(
        "existence criterion vs dynamics",
        log.is_empty() && negatives > 100,
        format!("{negatives} negatives all diverge, {documented} unreachable-cycle cases, {} discrepancies", log.len()),
        t.elapsed(),
        minutes(2),
    );
    assert!(ok, "{log:?}");
}

fn prevalence(n: usize, count: u64, seed: u64) -> f64 {
    let cfg = GeneratorConfig::default().with_nodes(n, n).with_edge_ratio(2.0, 4.0);
    let root = RngStream::new(seed).named("acceptance-prevalence");
    let hits: usize = (0..count)
        .into_par_iter()
        .map(|i| has_equilibrium(&generate(&cfg, &mut root.child(i))).unwrap() as usize)
        .sum();
    hits as f64 / count as f64
}

#[test]
fn criterion_04_equilibrium_prevalence() {
    let t = Instant::now();
    let p50 = prevalence(50, 20_000, 50);
    let p100 = prevalence(100, 20_000, 100);
    let ok = verdict(
        "equilibrium prevalence",
        (p50 - 0.15).abs() <= 0.05 && (p100 - 0.035).abs() <= 0.02 && p100 < p50,
        format!("n=50: {:.2}% (15 +- 5), n=100: {:.2}% (3.5 +- 2)", 100.0 * p50, 100.0 * p100),
        t.elapsed(),
        minutes(5),
    );
    assert!(ok);
}

#[test]
fn criterion_05_codec_round_trip() {
    let t = Instant::now();
    let mut rng = RngStream::new(505).named("acceptance-codec");
    let mut failures = Vec::new();
    for i in 0..10_000 {
        let len = 1 + rng.below(30);
        let digits = 3 + rng.below(2);
        let v: Vec<f64> = (0..len)
            .map(|_| {
                let m = 1.0 + 9.0 * rng.unit_f64();
                let e = rng.below(19) as i32 - 9;
                let s = if rng.bernoulli(0.2) { -1.0 } else { 1.0 };
                s * m * 10f64.powi(e)
            })
            .collect();
        let want: Vec<f64> = v.iter().map(|&x| round_significant(x, digits)).collect();
        let seq = encode_float_vector(&v, digits).unwrap();
        if decode_float_vector(&seq, len).as_deref() != Some(&want[..]) {
            failures.push(format!("vector {i}"));
        }
    }
    let root = RngStream::new(506).named("acceptance-codec-graphs");
    for i in 0..1000 {
        let net = random_graph(&root, i, 60, i % 2 == 0);
        let seq = encode_graph_with(&net, WeightEncoding::Symbolic, DEFAULT_MAX_NODE).unwrap();
        if decode_graph(&seq, WeightEncoding::Symbolic).ok().as_ref() != Some(&net) {
            failures.push(format!("graph {i}"));
        }
    }
    let literal: TokenSequence = "+ 1 . 2 1 10^ - 1".parse().unwrap();
    let literal_ok = encode_float_vector(&[0.121], 3).unwrap() == literal
        && decode_float_vector(&literal, 1) == Some(vec![0.121]);
    let ok = verdict(
        "codec round trip",
        failures.is_empty() && literal_ok,
        format!("10000 vectors, 1000 graphs, {} failures, literal 0.121 example {}", failures.len(), literal_ok),
        t.elapsed(),
        minutes(1),
    );
    assert!(ok, "{failures:?}");
}

fn loss_at(p: &mut TransformerParams<f64>, t: usize, i: usize, v: f64, b: &PackedBatch) -> f64 {
    let saved = p.tensors()[t].1.data()[i];
    p.tensors_mut()[t].1.data_mut()[i] = v;
    let l = p.batch_loss(b).unwrap();
    p.tensors_mut()[t].1.data_mut()[i] = saved;
    l
}

#[test]
fn criterion_06_gradient_check() {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let t = Instant::now();
    let vocab = 12;
    let cfg = ModelConfig::new(1, 1, 16, 2, vocab, 16);
    let mut rng = RngStream::new(606).named("acceptance-grad");
    let mut params = TransformerParams::<f64>::init(&cfg, &mut rng).unwrap();
    for (name, tensor) in params.tensors_mut() {
        if name.ends_with("gain") || name.ends_with("shift") || name.ends_with("bias") {
            for v in tensor.data_mut() {
                *v += 0.3 * (2.0 * rng.unit_f64() - 1.0);
            }
        }
    }
    let examples: Vec<Example> = (0..3)
        .map(|_| {
            let src = (0..3 + rng.below(4)).map(|_| 3 + rng.below(vocab - 3) as u32).collect();
            let tgt: Vec<u32> = (0..2 + rng.below(3)).map(|_| 3 + rng.below(vocab - 3) as u32).collect();
            Example::teacher_forced(src, &tgt)
        })
        .collect();
    let batch = PackedBatch::new(&examples);
    let (_, grad) = params.loss_and_grad(&batch, None).unwrap();

    let mut families: BTreeMap<TensorFamily, Vec<(usize, usize)>> = BTreeMap::new();
    for (ti, (name, tensor)) in params.tensors().iter().enumerate() {
        families.entry(TensorFamily::of(name)).or_default().extend((0..tensor.len()).map(|i| (ti, i)));
    }
    let mut worst = 0.0f64;
    let mut counts = Vec::new();
    for (fam, coords) in &families {
        // 100 distinct coordinates per family
        let mut picked = coords.clone();
        for k in 0..100.min(picked.len()) {
            let j = k + rng.below(picked.len() - k);
            picked.swap(k, j);
        }
        picked.truncate(100);
        counts.push((*fam, picked.len()));
        for (ti, i) in picked {
            let x = params.tensors()[ti].1.data()[i];
            let numeric = (loss_at(&mut params, ti, i, x + STEP, &batch) - loss_at(&mut params, ti, i, x - STEP, &batch))
                / (2.0 * STEP);
            let analytic = grad.tensors()[ti].1.data()[i];
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR));
        }
    }
    let enough = counts.len() == TensorFamily::ALL.len() && counts.iter().all(|&(_, c)| c >= 100);
    let ok = verdict(
        "gradient check",
        enough && worst < 1e-4,
        format!("{counts:?}, worst relative error {worst:.2e} (< 1e-4)"),
        t.elapsed(),
        minutes(2),
    );
    assert!(ok);
}

fn examples(vocab: &Vocabulary, records: &[DatasetRecord]) -> Vec<Example> {
    train::examples(vocab, records).unwrap()
}

#[test]
fn criterion_07_overfit_small_set() {
    let t = Instant::now();
    let vocab = Vocabulary::new(DEFAULT_MAX_NODE);
    let g = GeneratorConfig {
        seed: 707,
        ..GeneratorConfig::default().with_nodes(4, 8)
    };
    let records = eqnet_core::dataset::build(&DatasetConfig::qualitative(g, 64)).unwrap().records;
    let data = examples(&vocab, &records);
    let cfg = ModelConfig::new(2, 2, 64, 4, vocab.len(), train::required_positions(&data));
    let params = TransformerParams::<f32>::init(&cfg, &mut RngStream::new(7)).unwrap();
    let tc = TrainConfig {
        batch_size: 16,
        learning_rate: 1e-3,
        warmup_steps: 100,
        total_steps: 2000,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(params, tc).unwrap();
    let mut reached = None;
    trainer
        .run(&data, |tr, r| {
            if r.step % 50 == 0 {
                let correct = data
                    .iter()
                    .filter(|e| tr.params.greedy_decode(&e.src, 4).unwrap() == e.labels[..e.labels.len() - 1])
                    .count();
                if correct == data.len() {
                    reached = Some(r.step);
                    return false;
                }
            }
            true
        })
        .unwrap();
    let ok = verdict(
        "overfit 64 records",
        reached.is_some(),
        format!("100% training accuracy at step {reached:?} (<= 2000)"),
        t.elapsed(),
        minutes(5),
    );
    assert!(ok);
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

/// Builds `train_size` training records (plus a hash-split held-out set) of
/// 4-8 node networks.
fn desk_dataset(mut cfg: DatasetConfig, train_size: usize) -> (Vec<DatasetRecord>, Vec<DatasetRecord>) {
    cfg.test_fraction = 0.05;
    cfg.target_size = (train_size as f64 / (1.0 - cfg.test_fraction) * 1.01) as usize;
    let out = build_parallel(&cfg, None).unwrap();
    let (mut train, test) = eqnet_core::dataset::split(out.records, cfg.test_fraction, cfg.generator.seed);
    assert!(train.len() >= train_size, "only {} training records", train.len());
    train.truncate(train_size);
    (train, test)
}

fn train_model(name: &str, model: ModelConfig, tc: TrainConfig, data: &[Example]) -> Checkpoint {
    let dir = cache_dir().join(name);
    let ck = dir.join(train::CHECKPOINT_FILE);
    let resume = match checkpoint::load(&ck) {
        Ok(c) if c.params.config == model && c.step() >= tc.total_steps => return c,
        Ok(c) if c.params.config == model => Some(ck.clone()),
        _ => None,
    };
    let job = TrainJob {
        model,
        train: tc,
        max_node: DEFAULT_MAX_NODE,
        out_dir: dir,
        resume,
    };
    train::run(&job, data, |r| {
        if r.step % 1000 == 0 {
            eprintln!("  {name} step {} loss {:.4}", r.step, r.loss);
        }
    })
    .unwrap();
    checkpoint::load(&ck).unwrap()
}

#[test]
#[ignore = "long training run"]
fn criterion_08_desk_scale_qualitative() {
    let t = Instant::now();
    let vocab = Vocabulary::new(DEFAULT_MAX_NODE);
    let g = GeneratorConfig {
        seed: 808,
        ..GeneratorConfig::default().with_nodes(4, 8)
    };
    let cfg = DatasetConfig::qualitative(g, 1);
    let (train_recs, test_recs) = desk_dataset(cfg.clone(), 200_000);
    let data = examples(&vocab, &train_recs);
    let model = ModelConfig::new(1, 1, 64, 8, vocab.len(), cfg.effective_max_length() + 1);
    let tc = TrainConfig {
        batch_size: 64,
        learning_rate: 1e-3,
        warmup_steps: 1000,
        total_steps: 20_000,
        seed: 8,
        ..TrainConfig::default()
    };
    let ck = train_model("qualitative-1-1-64-8", model, tc, &data);
    let predictor = ModelPredictor {
        params: &ck.params,
        vocab: &vocab,
    };
    let report = evaluate(&predictor, &test_recs, Task::Qualitative, &EvalConfig::default(), &cfg).unwrap();
    let acc = report.qualitative_accuracy().unwrap();
    let ok = verdict(
        "desk-scale qualitative",
        acc >= 0.90,
        format!("held-out accuracy {:.2}% on {} records (>= 90%)", 100.0 * acc, report.count),
        t.elapsed(),
        minutes(120),
    );
    assert!(ok);
}

fn quantitative_config() -> DatasetConfig {
    let g = GeneratorConfig {
        seed: 909,
        ..GeneratorConfig::default().with_nodes(4, 8)
    };
    DatasetConfig::quantitative(g, true, 1)
}

/// The quantitative model plus its held-out report, trained once and cached.
fn quantitative_model() -> (Checkpoint, eqnet_core::eval::EvalReport) {
    let vocab = Vocabulary::new(DEFAULT_MAX_NODE);
    let cfg = quantitative_config();
    let (train_recs, test_recs) = desk_dataset(cfg.clone(), 500_000);
    let data = examples(&vocab, &train_recs);
    let model = ModelConfig::new(4, 2, 256, 8, vocab.len(), cfg.effective_max_length() + 1);
    let ck = train_model("quantitative-4-2-256-8", model, TrainConfig::default(), &data);
    let predictor = ModelPredictor {
        params: &ck.params,
        vocab: &vocab,
    };
    let held_out: Vec<DatasetRecord> = test_recs.into_iter().take(2000).collect();
    let report = evaluate(&predictor, &held_out, Task::Quantitative, &EvalConfig::default(), &cfg).unwrap();
    (ck, report)
}

#[test]
#[ignore = "long training run"]
fn criterion_09_desk_scale_quantitative() {
    let t = Instant::now();
    let (_, report) = quantitative_model();
    let acc = report.accuracy_at(0.10).unwrap();
    let ok = verdict(
        "desk-scale quantitative",
        acc >= 0.70 && report.is_monotone(),
        format!("held-out accuracy {:.2}% at 10% (>= 70%), per tolerance {:?}", 100.0 * acc, report.accuracy),
        t.elapsed(),
        minutes(12 * 60),
    );
    assert!(ok);
}

#[test]
#[ignore = "needs the desk-scale quantitative model"]
fn criterion_10_ood_direction() {
    let t0 = Instant::now();
    let (ck, in_dist) = quantitative_model();
    let t = Instant::now();
    let vocab = Vocabulary::new(ck.max_node);
    let predictor = ModelPredictor {
        params: &ck.params,
        vocab: &vocab,
    };
    let base = quantitative_config();
    let in_acc = in_dist.accuracy_at(0.10).unwrap();
    let acc_on = |g: GeneratorConfig| {
        let d = cell_dataset(&base, GeneratorConfig { seed: 1010, ..g }, 500);
        let recs = build_parallel(&d, None).unwrap().records;
        evaluate(&predictor, &recs, Task::Quantitative, &EvalConfig::default(), &d)
            .unwrap()
            .accuracy_at(0.10)
            .unwrap()
    };
    let disjoint = acc_on(base.generator.clone().with_nodes(24, 32));
    let sw = acc_on(base.generator.clone().with_kind(GraphKind::SmallWorld));
    let sf = acc_on(base.generator.clone().with_kind(GraphKind::ScaleFree));
    let ok = verdict(
        "out-of-distribution direction",
        disjoint < 0.10 && (in_acc - sw).abs() <= 0.20 && (in_acc - sf).abs() <= 0.20,
        format!(
            "in-distribution {:.1}%, 24-32 nodes {:.1}% (< 10%), small-world {:.1}%, scale-free {:.1}% (within 20 points); model ready after {:.0} s",
            100.0 * in_acc,
            100.0 * disjoint,
            100.0 * sw,
            100.0 * sf,
            t0.elapsed().as_secs_f64() - t.elapsed().as_secs_f64()
        ),
        t.elapsed(),
        minutes(10),
    );
    assert!(ok);
}

#[test]
fn criterion_11_perfect_model_evaluation() {
    let t = Instant::now();
    let mut accs = Vec::new();
    for (lo, hi, seed) in [(4, 8, 1), (8, 32, 2), (32, 64, 3)] {
        let g = GeneratorConfig {
            seed,
            ..GeneratorConfig::default().with_nodes(lo, hi)
        };
        let cfg = DatasetConfig::quantitative(g, true, 1000);
        let recs = build_parallel(&cfg, None).unwrap().records;
        let r = evaluate(&SolverPredictor::for_dataset(&cfg), &recs, Task::Quantitative, &EvalConfig::default(), &cfg)
            .unwrap();
        accs.push(r.accuracy.clone());
    }
    let pass = accs
        .iter()
        .all(|a| a[0] == 1.0 && a[1] == 1.0 && a[2] == 1.0 && a[3] >= 0.999);
    let ok = verdict(
        "perfect-model evaluation",
        pass,
        format!("accuracy at 10/5/2/1% per size class: {accs:?}"),
        t.elapsed(),
        minutes(1),
    );
    assert!(ok);
}
