use super::labels::LabelMatrix;
use crate::error::{Error, Result};
use crate::nnet::PosteriorMatrix;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Entries that had to be clamped.
    pub clamped: usize,
}

/// Mean binary cross-entropy over every row and frame of `labels`.
pub fn bce_loss(post: &PosteriorMatrix, labels: &LabelMatrix) -> Result<LossValue> {
    let (p, y) = (post.values(), labels.values());
    if p.shape() != y.shape() {
        return Err(Error::dim(
            "bce_loss",
            format!("posteriors {:?} vs labels {:?}", p.shape(), y.shape()),
        ));
    }
    let mut clamped = 0;
    let mut sum = 0.0;
    for (&p, &y) in p.data().iter().zip(y.data()) {
        let q = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        if q != p {
            clamped += 1;
        }
        sum += -y * q.ln() - (1.0 - y) * (1.0 - q).ln();
    }
    if clamped > 0 {
        log::warn!("bce_loss clamped {clamped} posterior(s) to [{BCE_EPS}, {}]", 1.0 - BCE_EPS);
    }
    Ok(LossValue {
        value: sum / p.numel().max(1) as f64,
        clamped,
    })
}

/// `L`, or `L + L_EE` when the enhanced posteriors are present.
pub fn total_loss(
    post: &PosteriorMatrix,
    enhanced: Option<&PosteriorMatrix>,
    labels: &LabelMatrix,
) -> Result<f64> {
    let base = bce_loss(post, labels)?.value;
    Ok(match enhanced {
        Some(e) => base + bce_loss(e, labels)?.value,
        None => base,
    })
}
