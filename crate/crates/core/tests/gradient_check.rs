//! Analytic gradients against central finite differences in double precision.

use std::collections::BTreeMap;

use eqnet_core::transformer::{Example, ModelConfig, PackedBatch, TensorFamily, TransformerParams};
use eqnet_core::RngStream;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
/// Denominator floor so that vanishing gradients are compared absolutely.
const FLOOR: f64 = 1e-6;
const PER_FAMILY: usize = 100;

fn batch(vocab: u32, rng: &mut RngStream) -> PackedBatch {
    let examples: Vec<Example> = (0..3)
        .map(|_| {
            let ls = 3 + rng.below(4);
            let lt = 2 + rng.below(3);
            let src = (0..ls).map(|_| 3 + rng.below(vocab as usize - 3) as u32).collect();
            let tgt: Vec<u32> = (0..lt).map(|_| 3 + rng.below(vocab as usize - 3) as u32).collect();
            Example::teacher_forced(src, &tgt)
        })
        .collect();
    PackedBatch::new(&examples)
}

fn loss_at(params: &mut TransformerParams<f64>, tensor: usize, idx: usize, value: f64, b: &PackedBatch) -> f64 {
    let saved = params.tensors()[tensor].1.data()[idx];
    params.tensors_mut()[tensor].1.data_mut()[idx] = value;
    let l = params.batch_loss(b).unwrap();
    params.tensors_mut()[tensor].1.data_mut()[idx] = saved;
    l
}

#[test]
fn gradients_match_central_differences() {
    let cfg = ModelConfig::new(1, 1, 8, 2, 12, 16);
    let mut rng = RngStream::new(2024);
    let mut params = TransformerParams::<f64>::init(&cfg, &mut rng).unwrap();
    // non-trivial norm gains and biases so their gradients are exercised
    for (name, t) in params.tensors_mut() {
        if name.ends_with("gain") || name.ends_with("shift") || name.ends_with("bias") {
            for v in t.data_mut() {
                *v += 0.3 * (2.0 * rng.unit_f64() - 1.0);
            }
        }
    }
    let b = batch(12, &mut rng);
    let (_, grad) = params.loss_and_grad(&b, None).unwrap();

    let mut coords: BTreeMap<TensorFamily, Vec<(usize, usize)>> = BTreeMap::new();
    for (t, (name, tensor)) in params.tensors().iter().enumerate() {
        let fam = coords.entry(TensorFamily::of(name)).or_default();
        fam.extend((0..tensor.len()).map(|i| (t, i)));
    }

    let mut worst = 0.0f64;
    for fam in TensorFamily::ALL {
        let all = &coords[&fam];
        // every coordinate when the family is small, otherwise a random subset
        let picked: Vec<(usize, usize)> = if all.len() <= PER_FAMILY {
            all.clone()
        } else {
            (0..PER_FAMILY).map(|_| all[rng.below(all.len())]).collect()
        };
        assert!(picked.len() >= PER_FAMILY.min(all.len()));
        for (t, i) in picked {
            let x = params.tensors()[t].1.data()[i];
            let plus = loss_at(&mut params, t, i, x + STEP, &b);
            let minus = loss_at(&mut params, t, i, x - STEP, &b);
            let numeric = (plus - minus) / (2.0 * STEP);
            let analytic = grad.tensors()[t].1.data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
            assert!(
                rel < REL_TOL,
                "{:?} {}[{}]: analytic {analytic:e} numeric {numeric:e} rel {rel:e}",
                fam,
                params.tensors()[t].0,
                i
            );
        }
    }
    eprintln!("worst relative error {worst:e}");
}

#[test]
fn gradients_match_with_padding_in_batch() {
    let cfg = ModelConfig::new(1, 1, 8, 2, 12, 16);
    let mut rng = RngStream::new(7);
    let mut params = TransformerParams::<f64>::init(&cfg, &mut rng).unwrap();
    let ex = [
        Example::teacher_forced(vec![3, 0, 5, 6, 0], &[7, 8]),
        Example {
            src: vec![9, 10],
            dec_in: vec![1, 4, 0],
            labels: vec![4, 2, 0],
        },
    ];
    let b = PackedBatch::new(&ex);
    let (_, grad) = params.loss_and_grad(&b, None).unwrap();
    let n = params.tensors().len();
    for t in 0..n {
        let len = params.tensors()[t].1.len();
        for i in (0..len).step_by(7) {
            let x = params.tensors()[t].1.data()[i];
            let numeric = (loss_at(&mut params, t, i, x + STEP, &b) - loss_at(&mut params, t, i, x - STEP, &b)) / (2.0 * STEP);
            let analytic = grad.tensors()[t].1.data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
            assert!(rel < REL_TOL, "{}[{i}] rel {rel:e}", params.tensors()[t].0);
        }
    }
}
