use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-class weights and the per-voxel inclusion mask of the training loss.
#[derive(Debug, Clone)]
pub struct LossWeights {
    pub class_weights: Vec<f64>,
    /// Same shape as the labels; nonzero entries contribute.
    pub mask: Tensor,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Weighted loss divided by the total included weight (0 when nothing is included).
    pub loss: f64,
    /// Weighted loss before normalization.
    pub weighted_sum: f64,
    pub weight_total: f64,
    /// Gradient of `loss` with respect to the logits.
    pub grad: Tensor,
}

/// Weighted, masked softmax cross-entropy over axis 1 of `logits`
/// (`[N, K, spatial...]`); `labels` is `[N, spatial...]`.
pub fn softmax_ce_loss(logits: &Tensor, labels: &Tensor, weights: &LossWeights) -> Result<LossOutput> {
    let shape = logits.shape();
    if shape.len() < 2 {
        return Err(Error::Shape(format!("logits need a class axis, got {shape:?}")));
    }
    let (batch, k) = (shape[0], shape[1]);
    let mut label_shape = vec![batch];
    label_shape.extend_from_slice(&shape[2..]);
    if labels.shape() != label_shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "loss labels",
            left: labels.shape().to_vec(),
            right: label_shape,
        });
    }
    if weights.mask.shape() != labels.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss mask",
            left: weights.mask.shape().to_vec(),
            right: labels.shape().to_vec(),
        });
    }
    if weights.class_weights.len() != k {
        return Err(Error::Value(format!(
            "{} class weights for {k} classes",
            weights.class_weights.len()
        )));
    }
    if let Some(w) = weights.class_weights.iter().find(|w| **w < 0.0 || !w.is_finite()) {
        return Err(Error::Value(format!(
            "class weight {w} must be finite and non-negative"
        )));
    }
    let vol: usize = shape[2..].iter().product();
    let x = logits.data();
    let mut grad = logits.zeros_like();
    let mut weighted_sum = 0.0;
    let mut weight_total = 0.0;
    let mut probs = vec![0.0; k];
    for n in 0..batch {
        for v in 0..vol {
            let raw = labels.data()[n * vol + v];
            if raw < 0.0 || raw >= k as f64 || raw.fract() != 0.0 {
                return Err(Error::Value(format!("label {raw} outside [0, {k})")));
            }
            if weights.mask.data()[n * vol + v] == 0.0 {
                continue;
            }
            let label = raw as usize;
            let w = weights.class_weights[label];
            let at = |c: usize| (n * k + c) * vol + v;
            let max = (0..k).map(|c| x[at(c)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (c, p) in probs.iter_mut().enumerate() {
                *p = (x[at(c)] - max).exp();
                z += *p;
            }
            weighted_sum += w * (z.ln() - (x[at(label)] - max));
            weight_total += w;
            let g = grad.data_mut();
            for (c, p) in probs.iter().enumerate() {
                let indicator = if c == label { 1.0 } else { 0.0 };
                g[at(c)] = w * (p / z - indicator);
            }
        }
    }
    if weight_total == 0.0 {
        return Ok(LossOutput {
            loss: 0.0,
            weighted_sum: 0.0,
            weight_total: 0.0,
            grad: logits.zeros_like(),
        });
    }
    let grad = grad.scale(1.0 / weight_total);
    Ok(LossOutput {
        loss: weighted_sum / weight_total,
        weighted_sum,
        weight_total,
        grad,
    })
}
