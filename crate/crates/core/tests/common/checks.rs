//! Randomized checks shared by the focused test files and the acceptance
//! suite. Each returns the worst observed discrepancy (or a failure count) so
//! callers choose the instance count and tolerance.

use ndarray::Array2;
use pcsem_core::cloud::{correspondences, Direction};
use pcsem_core::losses::{chamfer, cross_entropy, loc_aware_seg_loss, total_loss};
use pcsem_core::metrics::{confusion, emd, miou, renormalize_unit_box, ConfusionCounts, EmdMode};
use pcsem_core::nn::{
    backward_decoder, split_joint_output, DenseLayout, DenseNet, Network, SegNet,
};
use pcsem_core::{ClassScores, LabeledPointCloud, LossWeights, PointCloud};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const TIE_MARGIN: f64 = 1e-4;

fn tie_free(a: &PointCloud, b: &PointCloud) -> bool {
    !has_near_tie(a.points(), b.points(), TIE_MARGIN)
        && !has_near_tie(b.points(), a.points(), TIE_MARGIN)
}

fn tie_free_pair(rng: &mut ChaCha8Rng, max_n: usize) -> (PointCloud, PointCloud) {
    loop {
        let (na, nb) = (rng.gen_range(1..=max_n), rng.gen_range(1..=max_n));
        let a = random_cloud(rng, na, 1.0);
        let b = random_cloud(rng, nb, 1.0);
        if tie_free(&a, &b) {
            return (a, b);
        }
    }
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn with_labels(cloud: PointCloud, rng: &mut ChaCha8Rng, classes: usize) -> LabeledPointCloud {
    let labels = (0..cloud.len())
        .map(|_| rng.gen_range(0..classes))
        .collect();
    LabeledPointCloud::new(cloud, labels, classes).unwrap()
}

fn scores_from(flat: &[f64], n: usize, classes: usize) -> ClassScores {
    ClassScores::from_rows(n, classes, flat.to_vec()).unwrap()
}

/// Worst relative error of the Chamfer position gradient.
pub fn chamfer_gradients(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|_| {
            let (gt, pred) = tie_free_pair(&mut rng, 12);
            let analytic = flat(&chamfer(&gt, &pred).unwrap().grad_points.unwrap());
            let numeric = central_diff(&pred.flatten(), |x| {
                brute_chamfer(gt.points(), PointCloud::from_flat(x).unwrap().points())
            });
            max_rel_error(&analytic, &numeric)
        })
        .fold(0.0, f64::max)
}

pub fn cross_entropy_gradients(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|_| {
            let n = rng.gen_range(1..=10);
            let classes = rng.gen_range(2..=5);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
            let scores = random_scores(&mut rng, n, classes);
            let analytic = flat(
                &cross_entropy(&labels, &scores)
                    .unwrap()
                    .grad_scores
                    .unwrap(),
            );
            let numeric = central_diff(&flat(&scores.scores().to_owned()), |x| {
                brute_cross_entropy(&labels, &score_rows(&scores_from(x, n, classes)))
            });
            max_rel_error(&analytic, &numeric)
        })
        .fold(0.0, f64::max)
}

/// Checks score and position gradients; the latter must be zero on both
/// sides away from correspondence ties.
pub fn loc_aware_gradients(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|_| {
            let (gt, pred) = tie_free_pair(&mut rng, 10);
            let classes = rng.gen_range(2..=4);
            let gt = with_labels(gt, &mut rng, classes);
            let scores = random_scores(&mut rng, pred.len(), classes);
            let vg = loc_aware_seg_loss(&gt, &pred, &scores).unwrap();
            let rows = score_rows(&scores);
            let numeric_scores = central_diff(&flat(&scores.scores().to_owned()), |x| {
                let rows = score_rows(&scores_from(x, pred.len(), classes));
                brute_loc_aware(gt.cloud().points(), gt.labels(), pred.points(), &rows)
            });
            let numeric_points = central_diff(&pred.flatten(), |x| {
                let p = PointCloud::from_flat(x).unwrap();
                brute_loc_aware(gt.cloud().points(), gt.labels(), p.points(), &rows)
            });
            let score_err = max_rel_error(&flat(&vg.grad_scores.unwrap()), &numeric_scores);
            let point_err = max_rel_error(&flat(&vg.grad_points.unwrap()), &numeric_points);
            score_err.max(point_err)
        })
        .fold(0.0, f64::max)
}

fn brute_total(
    gt: &LabeledPointCloud,
    pred: &[[f64; 3]],
    rows: &[Vec<f64>],
    w: LossWeights,
) -> f64 {
    w.alpha * brute_chamfer(gt.cloud().points(), pred)
        + w.beta * brute_loc_aware(gt.cloud().points(), gt.labels(), pred, rows)
}

/// At `alpha = 1e4` the summed loss is large enough that differencing it
/// directly loses the segmentation term to rounding, so the reference
/// gradient is `alpha * d(chamfer) + beta * d(seg)`, each differenced alone.
pub fn total_loss_gradients(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|i| {
            let (gt, pred) = tie_free_pair(&mut rng, 10);
            let classes = rng.gen_range(2..=4);
            let gt = with_labels(gt, &mut rng, classes);
            let scores = random_scores(&mut rng, pred.len(), classes);
            let w = if i % 2 == 0 {
                LossWeights::default()
            } else {
                LossWeights::new(rng.gen_range(0.0..100.0), rng.gen_range(0.1..3.0)).unwrap()
            };
            let vg = total_loss(&gt, &pred, &scores, w).unwrap();
            let (g, labels) = (gt.cloud().points(), gt.labels());
            let rows = score_rows(&scores);
            let cd_points = central_diff(&pred.flatten(), |x| {
                brute_chamfer(g, PointCloud::from_flat(x).unwrap().points())
            });
            let seg_points = central_diff(&pred.flatten(), |x| {
                brute_loc_aware(g, labels, PointCloud::from_flat(x).unwrap().points(), &rows)
            });
            let seg_scores = central_diff(&flat(&scores.scores().to_owned()), |x| {
                let rows = score_rows(&scores_from(x, pred.len(), classes));
                brute_loc_aware(g, labels, pred.points(), &rows)
            });
            let numeric_points: Vec<f64> = cd_points
                .iter()
                .zip(&seg_points)
                .map(|(c, s)| w.alpha * c + w.beta * s)
                .collect();
            let numeric_scores: Vec<f64> = seg_scores.iter().map(|s| w.beta * s).collect();
            max_rel_error(&flat(&vg.grad_points.unwrap()), &numeric_points).max(max_rel_error(
                &flat(&vg.grad_scores.unwrap()),
                &numeric_scores,
            ))
        })
        .fold(0.0, f64::max)
}

/// Joint decoder trained on the total loss: parameter gradients from
/// backprop against central differences of the loss through a forward pass.
pub fn joint_network_gradients(
    widths: &[usize],
    n_points: usize,
    n_classes: usize,
    instances: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = DenseLayout::new(widths.to_vec(), false).unwrap();
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < instances {
        let net = DenseNet::new(layout.clone(), rng.gen());
        let feature: Vec<f64> = (0..widths[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n_gt = rng.gen_range(1..=6);
        let gt = random_labeled(&mut rng, n_gt, n_classes);
        let input = Array2::from_shape_vec((1, feature.len()), feature.clone()).unwrap();
        let tape = net.forward(input.view()).unwrap();
        let (pred, scores) = split_joint_output(tape.output().row(0), n_points, n_classes).unwrap();
        if !tie_free(gt.cloud(), &pred) {
            continue;
        }
        let w = LossWeights::new(rng.gen_range(0.5..10.0), 1.0).unwrap();
        let vg = total_loss(&gt, &pred, &scores, w).unwrap();
        let analytic = backward_decoder(&net, &tape, &[vg], n_points).unwrap();
        let numeric = smooth_central_diff(net.params(), |p| {
            let probe = DenseNet::from_params(layout.clone(), p.to_vec()).unwrap();
            let out = probe.predict(&feature).unwrap();
            let (pred, scores) = split_joint_output(out.view(), n_points, n_classes).unwrap();
            brute_total(&gt, pred.points(), &score_rows(&scores), w)
        });
        let Some(numeric) = numeric else { continue };
        worst = worst.max(max_rel_error(&analytic, &numeric));
        done += 1;
    }
    worst
}

/// Segmentation network trained on cross-entropy.
pub fn segnet_gradients(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < instances {
        let classes = 3;
        let net = SegNet::new(&[6, 8], &[7], classes, rng.gen()).unwrap();
        let n = rng.gen_range(1..=8);
        let gt = random_labeled(&mut rng, n, classes);
        let tape = net.forward(gt.cloud()).unwrap();
        let vg = cross_entropy(gt.labels(), &tape.scores().unwrap()).unwrap();
        let analytic = net.backward(&tape, vg.grad_scores.unwrap().view()).unwrap();
        let numeric = smooth_central_diff(net.params(), |p| {
            let probe = SegNet::from_params(&[6, 8], &[7], classes, p.to_vec()).unwrap();
            let scores = probe.forward(gt.cloud()).unwrap().scores().unwrap();
            brute_cross_entropy(gt.labels(), &score_rows(&scores))
        });
        let Some(numeric) = numeric else { continue };
        worst = worst.max(max_rel_error(&analytic, &numeric));
        done += 1;
    }
    worst
}

/// Clouds that mix continuous coordinates with a coarse integer grid, so
/// exact distance ties occur regularly.
fn tie_prone_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    if rng.gen_bool(0.5) {
        random_cloud(rng, n, 1.0)
    } else {
        let points = (0..n)
            .map(|_| [0, 1, 2].map(|_| rng.gen_range(-2..=2) as f64))
            .collect();
        PointCloud::new(points).unwrap()
    }
}

/// Instances (N up to 200) where the kd-tree correspondences differ from an
/// exhaustive scan in target index or squared distance, in either direction.
pub fn correspondence_mismatches(instances: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .filter(|_| {
            let (na, nb) = (rng.gen_range(1..=200), rng.gen_range(1..=200));
            let a = tie_prone_cloud(&mut rng, na);
            let b = tie_prone_cloud(&mut rng, nb);
            [(&a, &b), (&b, &a)].iter().any(|(s, t)| {
                let got = correspondences(s, t, Direction::Forward).unwrap();
                got.pairs.iter().zip(s.points()).any(|(m, p)| {
                    let (j, d) = brute_nearest(p, t.points());
                    m.target != j || m.squared_distance.to_bits() != d.to_bits()
                })
            })
        })
        .count()
}

pub fn confusion_mismatches(instances: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .filter(|_| {
            let classes = rng.gen_range(1..=5);
            let (na, nb) = (rng.gen_range(1..=200), rng.gen_range(1..=200));
            let gt_cloud = tie_prone_cloud(&mut rng, na);
            let gt = with_labels(gt_cloud, &mut rng, classes);
            let pred = tie_prone_cloud(&mut rng, nb);
            let pred_labels: Vec<usize> =
                (0..pred.len()).map(|_| rng.gen_range(0..classes)).collect();
            let got = confusion(&gt, &pred, &pred_labels).unwrap();
            let (fwd, bwd) = brute_confusion(
                gt.cloud().points(),
                gt.labels(),
                pred.points(),
                &pred_labels,
                classes,
            );
            got.forward != fwd || got.backward != bwd
        })
        .count()
}

/// Worst relative gap between the exact solver and exhaustive enumeration
/// over `trials` instances with 1 to 6 points.
pub fn exact_emd_gap(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            let n = rng.gen_range(1..=6);
            let a = random_cloud(&mut rng, n, 1.0);
            let b = random_cloud(&mut rng, n, 1.0);
            let got = emd(&a, &b, EmdMode::Exact).unwrap();
            let mut seen = got.mapping.clone();
            seen.sort_unstable();
            assert_eq!(
                seen,
                (0..n).collect::<Vec<_>>(),
                "mapping is not a bijection"
            );
            let best = enumerate_emd(a.points(), b.points());
            (got.cost - best).abs() / best.max(1e-12)
        })
        .fold(0.0, f64::max)
}

/// Largest `approximate / exact` cost ratio over `instances` clouds with up
/// to `max_n` points, and the smallest ratio (which must not drop below 1).
pub fn approx_emd_ratio(instances: usize, max_n: usize, epsilon: f64, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0f64, f64::INFINITY);
    for _ in 0..instances {
        let n = rng.gen_range(2..=max_n);
        let a = random_cloud(&mut rng, n, 1.0);
        // Structured predictions: a jittered permuted copy of `a` half the time.
        let b = if rng.gen_bool(0.5) {
            let mut pts = a.points().to_vec();
            pts.shuffle(&mut rng);
            for p in &mut pts {
                for c in p.iter_mut() {
                    *c += rng.gen_range(-0.05..0.05);
                }
            }
            PointCloud::new(pts).unwrap()
        } else {
            random_cloud(&mut rng, n, 1.0)
        };
        let exact = emd(&a, &b, EmdMode::Exact).unwrap().cost;
        let approx = emd(&a, &b, EmdMode::Approximate { epsilon }).unwrap().cost;
        let ratio = approx / exact;
        worst = (worst.0.max(ratio), worst.1.min(ratio));
    }
    worst
}

/// Counts of violated metric invariants over `cases` random cases each:
/// zero distance on identical clouds, permutation invariance of Chamfer and
/// EMD, mIoU range with the empty-union rule, and idempotent
/// renormalization.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct InvariantViolations {
    pub identical_not_zero: usize,
    pub permutation_variant: usize,
    pub miou_out_of_range: usize,
    pub empty_union_not_one: usize,
    pub renormalize_not_idempotent: usize,
}

impl InvariantViolations {
    pub fn total(&self) -> usize {
        self.identical_not_zero
            + self.permutation_variant
            + self.miou_out_of_range
            + self.empty_union_not_one
            + self.renormalize_not_idempotent
    }
}

fn shuffled(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

pub fn metric_invariants(cases: usize, seed: u64) -> InvariantViolations {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = InvariantViolations::default();
    for _ in 0..cases {
        let n = rng.gen_range(1..=40);
        let spread = rng.gen_range(0.1..10.0);
        let a = random_cloud(&mut rng, n, spread);
        let b = random_cloud(&mut rng, n, 1.0);

        let self_cd = chamfer(&a, &a).unwrap().value;
        let self_emd = emd(&a, &a, EmdMode::Exact).unwrap().cost;
        if self_cd != 0.0 || self_emd != 0.0 {
            v.identical_not_zero += 1;
        }

        let pa = a.permuted(&shuffled(&mut rng, n)).unwrap();
        let pb = b.permuted(&shuffled(&mut rng, n)).unwrap();
        let cd = chamfer(&a, &b).unwrap().value;
        let cd_perm = chamfer(&pa, &pb).unwrap().value;
        let cd_swap = chamfer(&b, &a).unwrap().value;
        let e = emd(&a, &b, EmdMode::Exact).unwrap().cost;
        let e_perm = emd(&pa, &pb, EmdMode::Exact).unwrap().cost;
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs());
        if !close(cd, cd_perm) || !close(cd, cd_swap) || !close(e, e_perm) {
            v.permutation_variant += 1;
        }

        let classes = rng.gen_range(1..=5);
        let gt = with_labels(a.clone(), &mut rng, classes);
        let pred_labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let m = miou(&confusion(&gt, &b, &pred_labels).unwrap());
        if !(0.0..=1.0).contains(&m) {
            v.miou_out_of_range += 1;
        }

        // Perfect labels using only classes below `used`: every other class
        // has an empty union in both directions.
        let used = rng.gen_range(1..=classes);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..used)).collect();
        let gt = LabeledPointCloud::new(a.clone(), labels.clone(), classes + 1).unwrap();
        let counts: ConfusionCounts = confusion(&gt, &a, &labels).unwrap();
        if miou(&counts) != 1.0 {
            v.empty_union_not_one += 1;
        }

        if n > 1 {
            let once = renormalize_unit_box(&a).unwrap();
            let twice = renormalize_unit_box(&once).unwrap();
            let same = once
                .points()
                .iter()
                .zip(twice.points())
                .all(|(p, q)| (0..3).all(|k| (p[k] - q[k]).abs() <= 1e-12));
            if !same {
                v.renormalize_not_idempotent += 1;
            }
        }
    }
    v
}
