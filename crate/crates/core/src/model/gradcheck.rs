use std::collections::BTreeSet;

use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::TensorKind;
use super::{Example, Model, ModelError};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// tensor name and flat index of the worst parameter
    pub worst: Option<(String, usize)>,
    pub max_abs_grad: f64,
}

/// Relative error with a floor on the denominator so that parameters with
/// vanishing gradients are judged on absolute error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences with a 1e-5 step on an O(1) loss carry about 1e-10 of
/// rounding noise, so gradients below this floor are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

/// Compares analytic gradients of the mean batch loss against central
/// differences with step `h` on about `samples` parameters, drawn evenly
/// across tensors. Embedding rows are drawn from ids the batch uses.
pub fn grad_check(
    model: &Model<f64>,
    batch: &[Example<f64>],
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    let refs: Vec<&Example<f64>> = batch.iter().collect();
    let (_, grad) = model.loss_and_grad(&refs, None)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(ModelError::NonFinite("analytic gradient".into()));
    }
    let layout = model.layout();
    let d = layout.d_model;
    let src_ids: BTreeSet<u32> = batch.iter().flat_map(|e| e.src.iter().copied()).collect();
    let tgt_ids: BTreeSet<u32> = batch.iter().flat_map(|e| e.dec_in.iter().copied()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_tensor = samples.div_ceil(layout.tensors.len()).max(1);
    let mut picks: Vec<(usize, usize)> = Vec::new();
    for (ti, t) in layout.tensors.iter().enumerate() {
        let candidates: Vec<usize> = match t.kind {
            TensorKind::Embedding { .. } => {
                let ids = if t.offset == layout.src_emb { &src_ids } else { &tgt_ids };
                ids.iter()
                    .flat_map(|&id| {
                        let start = t.offset + id as usize * d;
                        start..start + d
                    })
                    .collect()
            }
            _ => (t.offset..t.offset + t.len).collect(),
        };
        let n = per_tensor.min(candidates.len());
        picks.extend(candidates.into_iter().choose_multiple(&mut rng, n).into_iter().map(|i| (ti, i)));
    }

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
        max_abs_grad: 0.0,
    };
    for (ti, idx) in picks {
        let orig = probe.params()[idx];
        probe.params_mut()[idx] = orig + h;
        let up = probe.loss(batch)?;
        probe.params_mut()[idx] = orig - h;
        let down = probe.loss(batch)?;
        probe.params_mut()[idx] = orig;
        let numeric = (up - down) / (2.0 * h);
        if !numeric.is_finite() {
            return Err(ModelError::NonFinite("finite difference".into()));
        }
        let err = relative_error(grad[idx], numeric);
        report.checked += 1;
        report.max_abs_grad = report.max_abs_grad.max(grad[idx].abs());
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((layout.tensors[ti].name.clone(), idx));
        }
    }
    Ok(report)
}
