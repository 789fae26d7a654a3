//! Training driver: checkpoints, loss log and resumption.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use eqnet_core::dataset::DatasetRecord;
use eqnet_core::transformer::{Example, ModelConfig, StepReport, TrainConfig, Trainer, TransformerParams};
use eqnet_core::{RngStream, Vocabulary};

use crate::checkpoint::{self, Checkpoint};
use crate::error::{Error, Result};
use crate::fsutil::{create_dir, write_atomic};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss.csv";
const LOSS_HEADER: &str = "step,loss,learning_rate";

/// Teacher-forced examples from dataset records.
pub fn examples(vocab: &Vocabulary, records: &[DatasetRecord]) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            Ok(Example::teacher_forced(
                vocab.encode_ids(&r.input)?,
                &vocab.encode_ids(&r.output)?,
            ))
        })
        .collect()
}

/// Position table large enough for every sequence in `data`.
pub fn required_positions(data: &[Example]) -> usize {
    data.iter()
        .map(|e| e.src.len().max(e.dec_in.len()))
        .max()
        .unwrap_or(1)
}

#[derive(Debug, Clone)]
pub struct TrainJob {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub max_node: u32,
    pub out_dir: PathBuf,
    /// Continue from this checkpoint instead of a fresh initialization.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub steps: usize,
    pub final_loss: Option<f64>,
}

fn loss_rows(path: &Path, upto: usize) -> Result<Vec<String>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path)(e)),
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let step: usize = line
            .split(',')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, i + 1, "bad loss row"))?;
        if step <= upto {
            rows.push(line.to_string());
        }
    }
    Ok(rows)
}

fn write_loss(path: &Path, rows: &[String]) -> Result<()> {
    let mut s = String::from(LOSS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

fn save(path: &Path, t: &Trainer<f32>, max_node: u32) -> Result<()> {
    checkpoint::save(
        path,
        &Checkpoint {
            params: t.params.clone(),
            adam: Some(t.adam.clone()),
            train: t.config.clone(),
            max_node,
        },
    )
}

/// Trains to `job.train.total_steps`, writing a checkpoint every
/// `checkpoint_every` steps and at the end. A numerical failure leaves the
/// last good checkpoint in place and is returned as an error.
pub fn run(job: &TrainJob, data: &[Example], mut progress: impl FnMut(&StepReport)) -> Result<TrainOutcome> {
    create_dir(&job.out_dir)?;
    let ck_path = job.out_dir.join(CHECKPOINT_FILE);
    let loss_path = job.out_dir.join(LOSS_FILE);
    let mut trainer = match &job.resume {
        Some(p) => {
            let ck = checkpoint::load(p)?;
            if ck.params.config != job.model {
                return Err(Error::Usage(format!(
                    "checkpoint {} holds a {} model, not {}",
                    p.display(),
                    ck.params.config.shape_string(),
                    job.model.shape_string()
                )));
            }
            let adam = ck.adam.ok_or_else(|| Error::Checkpoint {
                path: p.clone(),
                message: "no optimizer state to resume from".into(),
            })?;
            Trainer::resume(ck.params, adam, job.train.clone())?
        }
        None => {
            let mut rng = RngStream::new(job.train.seed).named("init");
            Trainer::new(TransformerParams::<f32>::init(&job.model, &mut rng)?, job.train.clone())?
        }
    };
    let mut rows = if job.resume.is_some() {
        loss_rows(&loss_path, trainer.step_count())?
    } else {
        Vec::new()
    };
    let every = job.train.checkpoint_every;
    let mut last = None;
    let mut io_err = None;
    let result = trainer.run(data, |t, r| {
        let mut row = String::new();
        let _ = write!(row, "{},{},{}", r.step, r.loss, r.learning_rate);
        rows.push(row);
        last = Some(r.loss);
        progress(r);
        if every > 0 && r.step % every == 0 {
            if let Err(e) = save(&ck_path, t, job.max_node).and_then(|_| write_loss(&loss_path, &rows)) {
                io_err = Some(e);
                return false;
            }
        }
        true
    });
    if let Some(e) = io_err {
        return Err(e);
    }
    write_loss(&loss_path, &rows)?;
    result?;
    save(&ck_path, &trainer, job.max_node)?;
    Ok(TrainOutcome {
        checkpoint: ck_path,
        loss_csv: loss_path,
        steps: trainer.step_count(),
        final_loss: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use eqnet_core::dataset::{build, DatasetConfig};
    use eqnet_core::GeneratorConfig;

    fn job(dir: &Path, steps: usize, resume: Option<PathBuf>) -> (TrainJob, Vec<Example>) {
        let vocab = Vocabulary::default();
        let recs = build(&DatasetConfig::qualitative(GeneratorConfig::default().with_nodes(3, 5), 24))
            .unwrap()
            .records;
        let data = examples(&vocab, &recs).unwrap();
        let model = ModelConfig::new(1, 1, 16, 2, vocab.len(), required_positions(&data));
        let train = TrainConfig {
            batch_size: 4,
            warmup_steps: 5,
            total_steps: steps,
            checkpoint_every: 5,
            ..TrainConfig::default()
        };
        (
            TrainJob {
                model,
                train,
                max_node: vocab.max_node(),
                out_dir: dir.to_path_buf(),
                resume,
            },
            data,
        )
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (j, data) = job(a.path(), 12, None);
        run(&j, &data, |_| {}).unwrap();

        let (j1, _) = job(b.path(), 7, None);
        run(&j1, &data, |_| {}).unwrap();
        let (j2, _) = job(b.path(), 12, Some(b.path().join(CHECKPOINT_FILE)));
        let out = run(&j2, &data, |_| {}).unwrap();
        assert_eq!(out.steps, 12);

        let ca = checkpoint::load(&a.path().join(CHECKPOINT_FILE)).unwrap();
        let cb = checkpoint::load(&b.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(ca.params, cb.params);
        let la = std::fs::read_to_string(a.path().join(LOSS_FILE)).unwrap();
        let lb = std::fs::read_to_string(b.path().join(LOSS_FILE)).unwrap();
        assert_eq!(la, lb);
        assert_eq!(la.lines().count(), 13);
    }
}
