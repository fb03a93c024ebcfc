//! Evaluation metrics: Chamfer, EMD, and bidirectional part mIoU.
//!
//! Metrics are computed after both clouds are mapped into a unit bounding box.
//! Reports hold raw values; the x100 table scaling is applied only when
//! formatting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assignment::{auction, hungarian, CostMatrix};
use crate::cloud::{
    check_labels, correspondences, ClassScores, Direction, LabeledPointCloud, PointCloud,
};
use crate::error::{Error, Result};
use crate::losses::chamfer;

/// Clouds larger than this use the auction solver in [`evaluate`].
pub const EXACT_EMD_MAX_POINTS: usize = 512;
pub const DEFAULT_EMD_EPSILON: f64 = 0.01;
/// Table scaling for Chamfer and EMD.
pub const TABLE_SCALE: f64 = 100.0;

/// Translates and uniformly scales `cloud` so its bounding box is centered at
/// the origin with longest side 1.
pub fn renormalize_unit_box(cloud: &PointCloud) -> Result<PointCloud> {
    let (lo, hi) = cloud.bounds();
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    if extent == 0.0 {
        return Err(Error::DegenerateExtent);
    }
    let center = [
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    ];
    PointCloud::new(
        cloud
            .points()
            .iter()
            .map(|p| {
                [
                    (p[0] - center[0]) / extent,
                    (p[1] - center[1]) / extent,
                    (p[2] - center[2]) / extent,
                ]
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmdMode {
    Exact,
    /// Auction with epsilon scaling; cost is certified within `(1 + epsilon)`
    /// of optimal.
    Approximate {
        epsilon: f64,
    },
}

/// A bijection from ground-truth indices to predicted indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub mapping: Vec<usize>,
    /// Sum of L2 distances under `mapping`.
    pub cost: f64,
    /// Certified lower bound on the optimal cost.
    pub lower_bound: f64,
}

/// Earth mover's distance between equal-size clouds, as a summed L2 cost.
pub fn emd(gt: &PointCloud, pred: &PointCloud, mode: EmdMode) -> Result<Assignment> {
    if gt.len() != pred.len() {
        return Err(Error::SizeMismatch {
            what: "EMD requires equal-size clouds",
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    let (g, p) = (gt.points(), pred.points());
    let costs = CostMatrix::from_fn(g.len(), |i, j| {
        crate::cloud::squared_distance(&g[i], &p[j]).sqrt()
    });
    Ok(match mode {
        EmdMode::Exact => {
            let mapping = hungarian(&costs);
            let cost = costs.cost_of(&mapping);
            Assignment {
                mapping,
                cost,
                lower_bound: cost,
            }
        }
        EmdMode::Approximate { epsilon } => {
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "EMD epsilon must be positive, got {epsilon}"
                )));
            }
            let result = auction(&costs, epsilon);
            Assignment {
                mapping: result.row_to_col,
                cost: result.cost,
                lower_bound: result.lower_bound,
            }
        }
    })
}

/// Label co-occurrence counts under forward and backward correspondences.
/// Rows index the ground-truth label, columns the predicted label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub num_classes: usize,
    pub forward: Vec<Vec<u64>>,
    pub backward: Vec<Vec<u64>>,
}

pub fn confusion(
    gt: &LabeledPointCloud,
    pred: &PointCloud,
    pred_labels: &[usize],
) -> Result<ConfusionCounts> {
    if pred_labels.len() != pred.len() {
        return Err(Error::SizeMismatch {
            what: "predicted label count vs predicted points",
            expected: pred.len(),
            actual: pred_labels.len(),
        });
    }
    let num_classes = gt.num_classes();
    check_labels(pred_labels, num_classes)?;
    let gt_labels = gt.labels();
    let mut forward = vec![vec![0u64; num_classes]; num_classes];
    let mut backward = vec![vec![0u64; num_classes]; num_classes];
    for m in correspondences(gt.cloud(), pred, Direction::Forward)?.pairs {
        forward[gt_labels[m.source]][pred_labels[m.target]] += 1;
    }
    for m in correspondences(pred, gt.cloud(), Direction::Backward)?.pairs {
        backward[gt_labels[m.target]][pred_labels[m.source]] += 1;
    }
    Ok(ConfusionCounts {
        num_classes,
        forward,
        backward,
    })
}

fn directional_miou(counts: &[Vec<u64>]) -> f64 {
    let n = counts.len();
    (0..n)
        .map(|i| {
            let row: u64 = counts[i].iter().sum();
            let col: u64 = counts.iter().map(|r| r[i]).sum();
            let union = row + col - counts[i][i];
            if union == 0 {
                1.0
            } else {
                counts[i][i] as f64 / union as f64
            }
        })
        .sum::<f64>()
        / n as f64
}

/// Average of forward and backward class-mean IoU. A class with an empty
/// union in one direction scores 1 in that direction.
pub fn miou(counts: &ConfusionCounts) -> f64 {
    0.5 * (directional_miou(&counts.forward) + directional_miou(&counts.backward))
}

/// Metrics for one predicted shape, unscaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Chamfer distance (summed over both directions).
    pub chamfer: f64,
    /// EMD divided by the number of points.
    pub emd: f64,
    /// EMD as the raw summed transport cost.
    pub emd_sum: f64,
    /// In `[0, 1]`.
    pub miou: f64,
}

impl MetricReport {
    /// `key=value` lines with Chamfer and EMD scaled for tables.
    pub fn to_key_value(&self) -> String {
        format!(
            "chamfer={:.6}\nemd={:.6}\nemd_sum={:.6}\nmiou={:.4}\n",
            self.chamfer * TABLE_SCALE,
            self.emd * TABLE_SCALE,
            self.emd_sum,
            self.miou * 100.0
        )
    }
}

pub fn emd_mode_for(n_points: usize) -> EmdMode {
    if n_points <= EXACT_EMD_MAX_POINTS {
        EmdMode::Exact
    } else {
        EmdMode::Approximate {
            epsilon: DEFAULT_EMD_EPSILON,
        }
    }
}

/// Renormalizes both clouds, then computes Chamfer, EMD and mIoU with the
/// arg-max of `scores` as predicted labels.
pub fn evaluate(
    gt: &LabeledPointCloud,
    pred: &PointCloud,
    scores: &ClassScores,
) -> Result<MetricReport> {
    if scores.num_points() != pred.len() {
        return Err(Error::SizeMismatch {
            what: "score rows vs predicted points",
            expected: pred.len(),
            actual: scores.num_points(),
        });
    }
    let gt_norm = renormalize_unit_box(gt.cloud())?;
    let pred_norm = renormalize_unit_box(pred)?;
    let chamfer = chamfer(&gt_norm, &pred_norm)?.value;
    let transport = emd(&gt_norm, &pred_norm, emd_mode_for(gt.len()))?;
    let gt_norm = LabeledPointCloud::new(gt_norm, gt.labels().to_vec(), gt.num_classes())?;
    let counts = confusion(&gt_norm, &pred_norm, &scores.argmax())?;
    Ok(MetricReport {
        chamfer,
        emd: transport.cost / gt.len() as f64,
        emd_sum: transport.cost,
        miou: miou(&counts),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub chamfer: f64,
    pub emd: f64,
    pub miou: f64,
    pub shapes: usize,
}

impl MetricSummary {
    fn mean_of<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> Self {
        let mut s = MetricSummary::default();
        for r in reports {
            s.chamfer += r.chamfer;
            s.emd += r.emd;
            s.miou += r.miou;
            s.shapes += 1;
        }
        if s.shapes > 0 {
            let n = s.shapes as f64;
            s.chamfer /= n;
            s.emd /= n;
            s.miou /= n;
        }
        s
    }
}

/// Per-category means and their unweighted mean across categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub per_category: BTreeMap<String, MetricSummary>,
    pub mean: MetricSummary,
}

impl SummaryTable {
    /// `shapes` pairs each report with its category, in shape order.
    pub fn from_reports(shapes: &[(String, MetricReport)]) -> Self {
        let mut grouped: BTreeMap<String, Vec<MetricReport>> = BTreeMap::new();
        for (category, report) in shapes {
            grouped.entry(category.clone()).or_default().push(*report);
        }
        let per_category: BTreeMap<String, MetricSummary> = grouped
            .iter()
            .map(|(c, reports)| (c.clone(), MetricSummary::mean_of(reports)))
            .collect();
        let k = per_category.len().max(1) as f64;
        let mut mean = MetricSummary::default();
        for s in per_category.values() {
            mean.chamfer += s.chamfer / k;
            mean.emd += s.emd / k;
            mean.miou += s.miou / k;
            mean.shapes += s.shapes;
        }
        Self { per_category, mean }
    }

    /// Text table: Chamfer and EMD x100, mIoU in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>10} {:>10} {:>8}",
            "category", "shapes", "chamfer", "emd", "miou"
        );
        let rows = self
            .per_category
            .iter()
            .map(|(c, s)| (c.as_str(), s))
            .chain(std::iter::once(("mean", &self.mean)));
        for (name, s) in rows {
            let _ = writeln!(
                out,
                "{:<12} {:>8} {:>10.4} {:>10.4} {:>8.2}",
                name,
                s.shapes,
                s.chamfer * TABLE_SCALE,
                s.emd * TABLE_SCALE,
                s.miou * 100.0
            );
        }
        out
    }
}
