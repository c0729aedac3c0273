use super::tensor::Tensor;
use super::NnError;

/// Mean squared error over all entries.
pub fn mse(pred: &Tensor, truth: &Tensor) -> Result<f64, NnError> {
    if pred.shape() != truth.shape() {
        return Err(NnError::shape("mse", pred.shape(), truth.shape()));
    }
    if truth.is_empty() {
        return Err(NnError::InvalidShape("mse of an empty tensor".into()));
    }
    let s: f64 = pred.data().iter().zip(truth.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(s / truth.len() as f64)
}

fn column_nrmse(pred: &Tensor, truth: &Tensor, c: usize) -> Option<f64> {
    let (mut lo, mut hi, mut sq) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for r in 0..truth.rows() {
        let t = truth[(r, c)];
        lo = lo.min(t);
        hi = hi.max(t);
        let d = pred[(r, c)] - t;
        sq += d * d;
    }
    let range = hi - lo;
    if range > 0.0 {
        Some((sq / truth.rows() as f64).sqrt() / range)
    } else {
        None
    }
}

/// Per-column RMSE divided by the column's truth range, averaged over columns.
/// Rows are samples.
pub fn nrmse(pred: &Tensor, truth: &Tensor) -> Result<f64, NnError> {
    if pred.shape() != truth.shape() {
        return Err(NnError::shape("nrmse", pred.shape(), truth.shape()));
    }
    if truth.is_empty() {
        return Err(NnError::InvalidShape("nrmse of an empty tensor".into()));
    }
    let mut total = 0.0;
    for c in 0..truth.cols() {
        total += column_nrmse(pred, truth, c).ok_or(NnError::DegenerateRange { dim: c })?;
    }
    Ok(total / truth.cols() as f64)
}

/// Like [`nrmse`], but averages only over columns whose truth varies.
/// Returns the score and the indices of the columns used.
pub fn nrmse_varying(pred: &Tensor, truth: &Tensor) -> Result<(f64, Vec<usize>), NnError> {
    if pred.shape() != truth.shape() {
        return Err(NnError::shape("nrmse", pred.shape(), truth.shape()));
    }
    let mut used = Vec::new();
    let mut total = 0.0;
    for c in 0..truth.cols() {
        if let Some(v) = column_nrmse(pred, truth, c) {
            total += v;
            used.push(c);
        }
    }
    match used.len() {
        0 => Err(NnError::DegenerateRange { dim: 0 }),
        k => Ok((total / k as f64, used)),
    }
}
