//! Training losses with analytic gradients.
//!
//! Gradients w.r.t. predicted positions treat nearest-neighbor matchings as
//! fixed at their argmin. The segmentation loss has no position gradient: its
//! matching is piecewise constant in the positions.

use ndarray::{Array2, ArrayView1};

use crate::cloud::{bidirectional, ClassScores, Correspondence, LabeledPointCloud, PointCloud};
use crate::error::{Error, Result};

/// Log-probabilities are clamped from below at this value.
pub const LOG_PROB_FLOOR: f64 = -50.0;

/// A scalar loss with its gradients w.r.t. predicted positions and scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrad {
    pub value: f64,
    /// `N_p x 3`, present when the loss depends on predicted positions.
    pub grad_points: Option<Array2<f64>>,
    /// `N_p x N_c`, present when the loss depends on class scores.
    pub grad_scores: Option<Array2<f64>>,
}

impl ValueGrad {
    fn checked(self) -> Result<Self> {
        if !self.value.is_finite() {
            return Err(Error::NonFinite(format!("loss value {}", self.value)));
        }
        for g in [&self.grad_points, &self.grad_scores].into_iter().flatten() {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("loss gradient".into()));
            }
        }
        Ok(self)
    }

    /// Multiplies the value and every gradient by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.value *= factor;
        for g in [&mut self.grad_points, &mut self.grad_scores]
            .into_iter()
            .flatten()
        {
            g.mapv_inplace(|v| v * factor);
        }
        self
    }

    /// Sum of two losses over the same prediction. A gradient absent on one
    /// side counts as zero.
    pub fn combine(self, other: ValueGrad) -> Result<Self> {
        fn add(a: Option<Array2<f64>>, b: Option<Array2<f64>>) -> Result<Option<Array2<f64>>> {
            Ok(match (a, b) {
                (Some(a), Some(b)) => {
                    if a.dim() != b.dim() {
                        return Err(Error::SizeMismatch {
                            what: "gradient rows",
                            expected: a.nrows(),
                            actual: b.nrows(),
                        });
                    }
                    Some(a + b)
                }
                (a, None) => a,
                (None, b) => b,
            })
        }
        Ok(ValueGrad {
            value: self.value + other.value,
            grad_points: add(self.grad_points, other.grad_points)?,
            grad_scores: add(self.grad_scores, other.grad_scores)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let valid = |w: f64| w.is_finite() && w >= 0.0;
        if !valid(alpha) || !valid(beta) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and nonnegative (alpha={alpha}, beta={beta})"
            )));
        }
        if alpha == 0.0 && beta == 0.0 {
            return Err(Error::InvalidArgument(
                "alpha and beta cannot both be zero".into(),
            ));
        }
        Ok(Self { alpha, beta })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1e4,
            beta: 1.0,
        }
    }
}

/// Chamfer distance as a sum over both clouds of squared nearest-neighbor
/// distances. The gradient is taken w.r.t. `pred`.
pub fn chamfer(gt: &PointCloud, pred: &PointCloud) -> Result<ValueGrad> {
    let (fwd, bwd) = bidirectional(gt, pred)?;
    chamfer_from(gt, pred, &fwd, &bwd)
}

pub(crate) fn chamfer_from(
    gt: &PointCloud,
    pred: &PointCloud,
    fwd: &Correspondence,
    bwd: &Correspondence,
) -> Result<ValueGrad> {
    let g = gt.points();
    let p = pred.points();
    let mut grad = Array2::<f64>::zeros((p.len(), 3));
    let mut value = 0.0;
    for m in &fwd.pairs {
        value += m.squared_distance;
        let (src, dst) = (&g[m.source], &p[m.target]);
        for k in 0..3 {
            grad[[m.target, k]] += 2.0 * (dst[k] - src[k]);
        }
    }
    for m in &bwd.pairs {
        value += m.squared_distance;
        let (src, dst) = (&p[m.source], &g[m.target]);
        for k in 0..3 {
            grad[[m.source, k]] += 2.0 * (src[k] - dst[k]);
        }
    }
    ValueGrad {
        value,
        grad_points: Some(grad),
        grad_scores: None,
    }
    .checked()
}

/// Clamped log-softmax of one score row.
fn log_softmax(row: ArrayView1<'_, f64>) -> (Vec<f64>, Vec<f64>) {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let total: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + total.ln();
    let probs = row.iter().map(|&v| (v - max).exp() / total).collect();
    let logp = row.iter().map(|&v| (v - lse).max(LOG_PROB_FLOOR)).collect();
    (logp, probs)
}

/// Adds `weight * CE(label, row)` to the running value and its derivative to
/// `grad_row`.
fn accumulate_ce(
    label: usize,
    row: ArrayView1<'_, f64>,
    weight: f64,
    value: &mut f64,
    mut grad_row: ndarray::ArrayViewMut1<'_, f64>,
) {
    let (logp, probs) = log_softmax(row);
    *value -= weight * logp[label];
    for (k, p) in probs.into_iter().enumerate() {
        let target = if k == label { 1.0 } else { 0.0 };
        grad_row[k] += weight * (p - target);
    }
}

/// Per-point categorical cross-entropy, averaged over points.
pub fn cross_entropy(labels: &[usize], scores: &ClassScores) -> Result<ValueGrad> {
    let n = scores.num_points();
    if labels.len() != n {
        return Err(Error::SizeMismatch {
            what: "label count vs score rows",
            expected: n,
            actual: labels.len(),
        });
    }
    crate::cloud::check_labels(labels, scores.num_classes())?;
    let weight = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = Array2::<f64>::zeros((n, scores.num_classes()));
    for (i, &label) in labels.iter().enumerate() {
        accumulate_ce(label, scores.row(i), weight, &mut value, grad.row_mut(i));
    }
    ValueGrad {
        value,
        grad_points: None,
        grad_scores: Some(grad),
    }
    .checked()
}

/// Location-aware segmentation loss: cross-entropy across forward and
/// backward nearest-neighbor correspondences, each averaged over its source
/// cloud, summed. The position gradient is reported as zero.
pub fn loc_aware_seg_loss(
    gt: &LabeledPointCloud,
    pred: &PointCloud,
    scores: &ClassScores,
) -> Result<ValueGrad> {
    let (fwd, bwd) = bidirectional(gt.cloud(), pred)?;
    loc_aware_from(gt, pred, scores, &fwd, &bwd)
}

pub(crate) fn loc_aware_from(
    gt: &LabeledPointCloud,
    pred: &PointCloud,
    scores: &ClassScores,
    fwd: &Correspondence,
    bwd: &Correspondence,
) -> Result<ValueGrad> {
    if scores.num_points() != pred.len() {
        return Err(Error::SizeMismatch {
            what: "score rows vs predicted points",
            expected: pred.len(),
            actual: scores.num_points(),
        });
    }
    if scores.num_classes() != gt.num_classes() {
        return Err(Error::SizeMismatch {
            what: "score columns vs ground-truth classes",
            expected: gt.num_classes(),
            actual: scores.num_classes(),
        });
    }
    let labels = gt.labels();
    let mut value = 0.0;
    let mut grad = Array2::<f64>::zeros((pred.len(), scores.num_classes()));

    let w_fwd = 1.0 / gt.len() as f64;
    for m in &fwd.pairs {
        let j = m.target;
        accumulate_ce(
            labels[m.source],
            scores.row(j),
            w_fwd,
            &mut value,
            grad.row_mut(j),
        );
    }
    let w_bwd = 1.0 / pred.len() as f64;
    for m in &bwd.pairs {
        let j = m.source;
        accumulate_ce(
            labels[m.target],
            scores.row(j),
            w_bwd,
            &mut value,
            grad.row_mut(j),
        );
    }
    ValueGrad {
        value,
        grad_points: Some(Array2::zeros((pred.len(), 3))),
        grad_scores: Some(grad),
    }
    .checked()
}

/// The components of a joint-training loss, kept for logging.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub chamfer: f64,
    pub segmentation: f64,
    pub total: ValueGrad,
}

/// `alpha * chamfer + beta * loc_aware_seg_loss`, sharing one pair of
/// correspondence passes.
pub fn total_loss(
    gt: &LabeledPointCloud,
    pred: &PointCloud,
    scores: &ClassScores,
    weights: LossWeights,
) -> Result<ValueGrad> {
    Ok(total_loss_parts(gt, pred, scores, weights)?.total)
}

pub fn total_loss_parts(
    gt: &LabeledPointCloud,
    pred: &PointCloud,
    scores: &ClassScores,
    weights: LossWeights,
) -> Result<TotalLoss> {
    let (fwd, bwd) = bidirectional(gt.cloud(), pred)?;
    let rec = chamfer_from(gt.cloud(), pred, &fwd, &bwd)?;
    let seg = loc_aware_from(gt, pred, scores, &fwd, &bwd)?;
    let (chamfer, segmentation) = (rec.value, seg.value);
    let total = rec
        .scaled(weights.alpha)
        .combine(seg.scaled(weights.beta))?
        .checked()?;
    Ok(TotalLoss {
        chamfer,
        segmentation,
        total,
    })
}
