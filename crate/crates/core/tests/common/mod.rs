//! Independent reference implementations used as test oracles. Nothing here
//! calls into the code under test except to build input types.
#![allow(dead_code)]

pub mod checks;

use pcsem_core::{ClassScores, LabeledPointCloud, PointCloud};
use rand::Rng;

pub fn random_cloud(rng: &mut impl Rng, n: usize, spread: f64) -> PointCloud {
    let points = (0..n)
        .map(|_| {
            [
                rng.gen_range(-spread..spread),
                rng.gen_range(-spread..spread),
                rng.gen_range(-spread..spread),
            ]
        })
        .collect();
    PointCloud::new(points).unwrap()
}

pub fn random_labeled(rng: &mut impl Rng, n: usize, classes: usize) -> LabeledPointCloud {
    let cloud = random_cloud(rng, n, 1.0);
    let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    LabeledPointCloud::new(cloud, labels, classes).unwrap()
}

pub fn random_scores(rng: &mut impl Rng, n: usize, classes: usize) -> ClassScores {
    let values = (0..n * classes).map(|_| rng.gen_range(-3.0..3.0)).collect();
    ClassScores::from_rows(n, classes, values).unwrap()
}

pub fn sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Exhaustive nearest neighbor; the first index wins ties.
pub fn brute_nearest(q: &[f64; 3], target: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, sq(q, &target[0]));
    for (j, t) in target.iter().enumerate().skip(1) {
        let d = sq(q, t);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let one_way = |x: &[[f64; 3]], y: &[[f64; 3]]| -> f64 {
        x.iter()
            .map(|p| y.iter().map(|q| sq(p, q)).fold(f64::INFINITY, f64::min))
            .sum()
    };
    one_way(a, b) + one_way(b, a)
}

/// `-log softmax(row)[label]` computed directly from exponentials.
pub fn neg_log_softmax(row: &[f64], label: usize) -> f64 {
    let z: f64 = row.iter().map(|v| v.exp()).sum();
    -(row[label].exp() / z).ln()
}

pub fn score_rows(scores: &ClassScores) -> Vec<Vec<f64>> {
    (0..scores.num_points())
        .map(|i| scores.row(i).to_vec())
        .collect()
}

pub fn brute_cross_entropy(labels: &[usize], rows: &[Vec<f64>]) -> f64 {
    labels
        .iter()
        .zip(rows)
        .map(|(&l, r)| neg_log_softmax(r, l))
        .sum::<f64>()
        / labels.len() as f64
}

/// Forward term over every gt point plus backward term over every predicted
/// point, each averaged over its own source cloud.
pub fn brute_loc_aware(
    gt: &[[f64; 3]],
    labels: &[usize],
    pred: &[[f64; 3]],
    rows: &[Vec<f64>],
) -> f64 {
    let forward: f64 = gt
        .iter()
        .zip(labels)
        .map(|(g, &l)| neg_log_softmax(&rows[brute_nearest(g, pred).0], l))
        .sum();
    let backward: f64 = pred
        .iter()
        .zip(rows)
        .map(|(p, r)| neg_log_softmax(r, labels[brute_nearest(p, gt).0]))
        .sum();
    forward / gt.len() as f64 + backward / pred.len() as f64
}

/// Forward and backward label co-occurrence tables, rows = gt label.
pub fn brute_confusion(
    gt: &[[f64; 3]],
    gt_labels: &[usize],
    pred: &[[f64; 3]],
    pred_labels: &[usize],
    classes: usize,
) -> (Vec<Vec<u64>>, Vec<Vec<u64>>) {
    let mut fwd = vec![vec![0; classes]; classes];
    let mut bwd = vec![vec![0; classes]; classes];
    for (g, &l) in gt.iter().zip(gt_labels) {
        fwd[l][pred_labels[brute_nearest(g, pred).0]] += 1;
    }
    for (p, &l) in pred.iter().zip(pred_labels) {
        bwd[gt_labels[brute_nearest(p, gt).0]][l] += 1;
    }
    (fwd, bwd)
}

/// Minimum over all bijections of the summed L2 distance.
pub fn enumerate_emd(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    fn go(i: usize, a: &[[f64; 3]], b: &[[f64; 3]], used: &mut [bool], acc: f64, best: &mut f64) {
        if i == a.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                go(i + 1, a, b, used, acc + sq(&a[i], &b[j]).sqrt(), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, a, b, &mut vec![false; b.len()], 0.0, &mut best);
    best
}

pub const FD_STEP: f64 = 1e-6;

/// Central differences of `f` around `x`.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let hi = f(&probe);
            probe[i] = orig - FD_STEP;
            let lo = f(&probe);
            probe[i] = orig;
            (hi - lo) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Central differences, or `None` when some coordinate's one-sided
/// differences disagree: a ReLU or max-pool switch lies within the step and
/// the function is not differentiable there.
pub fn smooth_central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Option<Vec<f64>> {
    let f0 = f(x);
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let hi = f(&probe);
        probe[i] = orig - FD_STEP;
        let lo = f(&probe);
        probe[i] = orig;
        let (fwd, bwd) = ((hi - f0) / FD_STEP, (f0 - lo) / FD_STEP);
        if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-3) {
            return None;
        }
        out.push((hi - lo) / (2.0 * FD_STEP));
    }
    Some(out)
}

/// Largest entry-wise relative error. Entries far below the gradient's own
/// scale are compared against one millionth of its largest magnitude, so a
/// numerically zero entry cannot blow up the ratio.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (scale * 1e-6).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// True when some source point's two nearest targets are within `margin`
/// of each other in squared distance.
pub fn has_near_tie(source: &[[f64; 3]], target: &[[f64; 3]], margin: f64) -> bool {
    source.iter().any(|p| {
        let mut d: Vec<f64> = target.iter().map(|q| sq(p, q)).collect();
        d.sort_by(f64::total_cmp);
        d.len() > 1 && d[1] - d[0] < margin
    })
}
