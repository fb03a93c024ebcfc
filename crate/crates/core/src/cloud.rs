//! Point-cloud types and exact nearest-neighbor correspondences.
//!
//! Every loss and metric in this crate pairs points of one cloud with their
//! nearest neighbors in another. The pairing is exact and deterministic: ties
//! between equidistant targets go to the lowest target index.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Squared Euclidean distance, summed in a fixed coordinate order so that
/// every code path produces bit-identical values.
#[inline]
pub fn squared_distance(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// A non-empty set of points with finite coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(index) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFiniteCoordinate { index });
        }
        Ok(Self { points })
    }

    /// Builds a cloud from a flat `[x0, y0, z0, x1, ...]` slice.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(3) {
            return Err(Error::SizeMismatch {
                what: "flat coordinate length must be a multiple of 3",
                expected: coords.len() / 3 * 3,
                actual: coords.len(),
            });
        }
        Self::new(coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    /// Returns a copy with points reordered so that `out[k] = self[order[k]]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.len())?;
        Ok(Self {
            points: order.iter().map(|&i| self.points[i]).collect(),
        })
    }

    /// Axis-aligned bounding box as (min corner, max corner).
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }
}

pub(crate) fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::SizeMismatch {
            what: "permutation length",
            expected: n,
            actual: order.len(),
        });
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!(
                "index {i} makes the order not a permutation of 0..{n}"
            )));
        }
    }
    Ok(())
}

/// A cloud with one part label per point.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointCloud {
    cloud: PointCloud,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledPointCloud {
    pub fn new(cloud: PointCloud, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument(
                "num_classes must be at least 1".into(),
            ));
        }
        if labels.len() != cloud.len() {
            return Err(Error::SizeMismatch {
                what: "label count vs point count",
                expected: cloud.len(),
                actual: labels.len(),
            });
        }
        check_labels(&labels, num_classes)?;
        Ok(Self {
            cloud,
            labels,
            num_classes,
        })
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn into_parts(self) -> (PointCloud, Vec<usize>, usize) {
        (self.cloud, self.labels, self.num_classes)
    }
}

pub(crate) fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    match labels.iter().position(|&l| l >= num_classes) {
        Some(index) => Err(Error::LabelOutOfRange {
            index,
            label: labels[index],
            num_classes,
        }),
        None => Ok(()),
    }
}

/// Per-point unnormalized class scores, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    scores: Array2<f64>,
}

impl ClassScores {
    pub fn new(scores: Array2<f64>) -> Result<Self> {
        if scores.nrows() == 0 || scores.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "class scores need at least one point and one class".into(),
            ));
        }
        if !scores.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("class score".into()));
        }
        Ok(Self { scores })
    }

    pub fn from_rows(rows: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        let expected = rows * classes;
        let actual = values.len();
        let scores =
            Array2::from_shape_vec((rows, classes), values).map_err(|_| Error::SizeMismatch {
                what: "score buffer length",
                expected,
                actual,
            })?;
        Self::new(scores)
    }

    /// All-zero scores, i.e. a uniform softmax on every row.
    pub fn uniform(rows: usize, classes: usize) -> Result<Self> {
        Self::new(Array2::zeros((rows, classes)))
    }

    pub fn num_points(&self) -> usize {
        self.scores.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.scores.ncols()
    }

    pub fn scores(&self) -> ArrayView2<'_, f64> {
        self.scores.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.scores.row(i)
    }

    /// Row-wise softmax with max subtraction.
    pub fn probabilities(&self) -> Array2<f64> {
        let mut out = self.scores.clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let total = row.sum();
            row.mapv_inplace(|v| v / total);
        }
        out
    }

    /// Most likely class per point; ties resolve to the lowest class index.
    pub fn argmax(&self) -> Vec<usize> {
        self.scores
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.num_points())?;
        Ok(Self {
            scores: self.scores.select(ndarray::Axis(0), order),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Ground truth into prediction.
    Forward,
    /// Prediction into ground truth.
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub source: usize,
    pub target: usize,
    pub squared_distance: f64,
}

/// Directed nearest-neighbor map, one entry per source point in source order.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub direction: Direction,
    pub pairs: Vec<Match>,
}

impl Correspondence {
    pub fn targets(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|m| m.target)
    }
}

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree over a cloud answering exact nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct NearestNeighborIndex {
    points: Vec<Point>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl NearestNeighborIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let points = cloud.points().to_vec();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        let n = order.len();
        build_node(&points, &mut order, 0, n, &mut nodes);
        Ok(Self {
            points,
            order,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of and squared distance to the nearest point; lowest index on ties.
    pub fn nearest(&self, query: &Point) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        best
    }

    fn search(&self, node: usize, query: &Point, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = squared_distance(query, &self.points[i]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = query[axis] - value;
                let (near, far) = if delta <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, best);
                // Equal distance must still be explored: a lower index may tie.
                if delta * delta <= best.1 {
                    self.search(far, query, best);
                }
            }
        }
    }
}

fn build_node(
    points: &[Point],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &order[start..end];
    let mut lo = points[slice[0]];
    let mut hi = lo;
    for &i in slice {
        for k in 0..3 {
            lo[k] = lo[k].min(points[i][k]);
            hi[k] = hi[k].max(points[i][k]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    if hi[axis] == lo[axis] {
        // All points identical: no split separates them.
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let value = points[order[start + mid]][axis];
    // Left holds coordinates <= value, right holds >= value.
    nodes.push(Node::Leaf { start, end });
    let left = build_node(points, order, start, start + mid, nodes);
    let right = build_node(points, order, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

/// Nearest target point for every source point.
pub fn correspondences(
    source: &PointCloud,
    target: &PointCloud,
    direction: Direction,
) -> Result<Correspondence> {
    let index = NearestNeighborIndex::build(target)?;
    Ok(correspondences_with_index(source, &index, direction))
}

pub fn correspondences_with_index(
    source: &PointCloud,
    index: &NearestNeighborIndex,
    direction: Direction,
) -> Correspondence {
    let pairs = source
        .points()
        .iter()
        .enumerate()
        .map(|(source, p)| {
            let (target, squared_distance) = index.nearest(p);
            Match {
                source,
                target,
                squared_distance,
            }
        })
        .collect();
    Correspondence { direction, pairs }
}

/// Forward (gt into pred) and backward (pred into gt) correspondences.
pub fn bidirectional(
    gt: &PointCloud,
    pred: &PointCloud,
) -> Result<(Correspondence, Correspondence)> {
    Ok((
        correspondences(gt, pred, Direction::Forward)?,
        correspondences(pred, gt, Direction::Backward)?,
    ))
}
