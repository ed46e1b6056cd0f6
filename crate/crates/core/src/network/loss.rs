use crate::{Error, Result, Scalar};

/// Class-weighted softmax cross-entropy, normalised by the summed weights of
/// the target classes. Returns the loss and its gradient with respect to the
/// logits (row-major `N x num_classes`).
pub fn weighted_ce_loss<T: Scalar>(logits: &[T], labels: &[u16], class_weights: &[T]) -> Result<(T, Vec<T>)> {
    let k = class_weights.len();
    if k < 2 || logits.len() != labels.len() * k {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for {} labels and {} classes",
            logits.len(),
            labels.len(),
            k
        )));
    }
    if class_weights.iter().any(|&w| !(w > T::zero())) {
        return Err(Error::InvalidConfig("class weights must be positive".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::LabelOutOfRange { label: l as usize, num_classes: k });
    }
    let total_w: T = labels.iter().map(|&l| class_weights[l as usize]).sum();
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &l) in logits.chunks(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&z| (z - max).exp()).sum();
        let log_z = max + sum.ln();
        let w = class_weights[l as usize];
        loss = loss + w * (log_z - row[l as usize]);
        let scale = w / total_w;
        for (c, &z) in row.iter().enumerate() {
            let p = (z - log_z).exp();
            let target = if c == l as usize { T::one() } else { T::zero() };
            grad.push(scale * (p - target));
        }
    }
    Ok((loss / total_w, grad))
}
