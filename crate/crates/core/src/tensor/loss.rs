use super::Tensor;
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
///
/// The softmax is evaluated in f64 after subtracting the row maximum; the
/// gradient is `(softmax - onehot) / B`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = logits.dims2()?;
    if labels.len() != batch {
        return Err(Error::Dimension(format!(
            "{batch} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut grad = vec![0.0f32; batch * classes];
    let mut total = 0.0f64;
    let scale = 1.0 / batch as f64;
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits.data()[b * classes..(b + 1) * classes];
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() - (row[label] as f64 - max);
        for (c, e) in exps.iter().enumerate() {
            let onehot = if c == label { 1.0 } else { 0.0 };
            grad[b * classes + c] = ((e / z - onehot) * scale) as f32;
        }
    }
    Ok((total * scale, Tensor::new(vec![batch, classes], grad)?))
}
