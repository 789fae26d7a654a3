//! Parallel evaluation and the out-of-distribution suite.

use eqnet_core::dataset::{DatasetConfig, DatasetRecord, SizeClass, Task};
use eqnet_core::eval::{
    ood_grid, score_qualitative, score_quantitative, EvalConfig, EvalError, EvalReport, OodReport, Outcome,
    Predictor,
};
use eqnet_core::tokenizer::decode_label;
use rayon::prelude::*;

use crate::dataset_io::build_parallel;
use crate::error::Result;

/// Same contract as the sequential evaluators in the core crate, with
/// predictions computed in parallel. The report does not depend on the
/// number of threads.
pub fn evaluate(
    predictor: &(impl Predictor + Sync),
    records: &[DatasetRecord],
    task: Task,
    config: &EvalConfig,
    dataset: &DatasetConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let enc = dataset.input_encoding();
    let outcomes: Vec<std::result::Result<(usize, Outcome), EvalError>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mismatch = EvalError::TaskMismatch { index: i, task };
            let is_label = decode_label(&r.output).is_some();
            match task {
                Task::Qualitative if !is_label => Err(mismatch),
                Task::Qualitative => {
                    let pred = predictor.predict(&r.input, config.max_decode_len);
                    Ok((r.meta.n_internal, score_qualitative(r, &pred)))
                }
                Task::Quantitative if is_label => Err(mismatch),
                Task::Quantitative => {
                    let pred = predictor.predict(&r.input, config.max_decode_len);
                    let o = score_quantitative(r, &pred, enc).ok_or(mismatch)?;
                    Ok((r.meta.n_internal, o))
                }
            }
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<std::result::Result<Vec<_>, _>>()?;
    let tolerances: &[f64] = match task {
        Task::Qualitative => &[],
        Task::Quantitative => &config.tolerances,
    };
    Ok(EvalReport::from_outcomes(task, tolerances, outcomes))
}

/// Dataset configuration of one grid cell: the base settings with the cell's
/// generator, all records used for testing.
pub fn cell_dataset(base: &DatasetConfig, generator: eqnet_core::GeneratorConfig, size: usize) -> DatasetConfig {
    let mut d = DatasetConfig {
        target_size: size,
        max_length: None,
        ..base.clone()
    };
    if base.task == Task::Qualitative {
        d.redeem_prob = SizeClass::of(generator.n_max).qualitative_redeem_prob();
    }
    d.generator = eqnet_core::GeneratorConfig {
        weighted: base.weighted,
        ..generator
    };
    d
}

/// Evaluates every cell of the grid around `base.generator` on a freshly
/// generated set of `per_cell` records. A cell whose generation budget runs
/// out is evaluated on what was produced.
pub fn ood_suite(
    predictor: &(impl Predictor + Sync),
    base: &DatasetConfig,
    per_cell: usize,
    seed: u64,
    config: &EvalConfig,
) -> Result<OodReport> {
    let mut report = OodReport::default();
    for cell in ood_grid(&base.generator, seed) {
        let d = cell_dataset(base, cell.generator, per_cell);
        let records = match build_parallel(&d, None) {
            Ok(out) => out.records,
            Err((eqnet_core::dataset::DatasetError::BudgetExceeded { .. }, out)) => out.records,
            Err((e, _)) => return Err(e.into()),
        };
        let r = evaluate(predictor, &records, base.task, config, &d)?;
        report.rows.push((cell.label, r));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use eqnet_core::dataset::build;
    use eqnet_core::eval::{eval_quantitative, SolverPredictor};
    use eqnet_core::GeneratorConfig;

    #[test]
    fn parallel_matches_sequential() {
        let cfg = DatasetConfig::quantitative(GeneratorConfig::default().with_nodes(3, 6), true, 60);
        let recs = build(&cfg).unwrap().records;
        let p = SolverPredictor::for_dataset(&cfg);
        let e = EvalConfig::default();
        let seq = eval_quantitative(&p, &recs, &e, cfg.input_encoding()).unwrap();
        let par = evaluate(&p, &recs, Task::Quantitative, &e, &cfg).unwrap();
        assert_eq!(seq, par);
        assert_eq!(par.accuracy_at(0.02), Some(1.0));
    }

    #[test]
    fn task_mismatch_is_an_error() {
        let cfg = DatasetConfig::qualitative(GeneratorConfig::default().with_nodes(3, 6), 10);
        let recs = build(&cfg).unwrap().records;
        let p = SolverPredictor::for_dataset(&cfg);
        assert!(evaluate(&p, &recs, Task::Quantitative, &EvalConfig::default(), &cfg).is_err());
    }

    #[test]
    fn solver_scores_perfectly_across_the_grid() {
        let cfg = DatasetConfig::qualitative(GeneratorConfig::default().with_nodes(4, 8), 10);
        let p = SolverPredictor::for_dataset(&cfg);
        let r = ood_suite(&p, &cfg, 4, 9, &EvalConfig::default()).unwrap();
        assert_eq!(r.rows.len(), 15);
        for (label, row) in &r.rows {
            assert_eq!(row.qualitative_accuracy(), Some(1.0), "{label}");
        }
    }
}
