//! Procedurally generated part-labeled shapes and the labeled-cloud text
//! format.
//!
//! Every category has three parts, so all shapes share one label space of
//! size [`NUM_CLASSES`]. A shape is described by six generative parameters in
//! `[-1, 1]`; the network feature is the category one-hot followed by those
//! parameters.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::{LabeledPointCloud, Point, PointCloud};
use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;
pub const NUM_SHAPE_PARAMS: usize = 6;
pub const FEATURE_DIM: usize = Category::ALL.len() + NUM_SHAPE_PARAMS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Chair,
    Table,
    Airplane,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Chair, Category::Table, Category::Airplane];

    pub fn name(self) -> &'static str {
        match self {
            Category::Chair => "chair",
            Category::Table => "table",
            Category::Airplane => "airplane",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn part_names(self) -> [&'static str; NUM_CLASSES] {
        match self {
            Category::Chair => ["leg", "seat", "back"],
            Category::Table => ["leg", "top", "shelf"],
            Category::Airplane => ["body", "wing", "tail"],
        }
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown category `{s}`")))
    }
}

/// A surface primitive that can be sampled area-uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Cuboid {
        center: Point,
        half: [f64; 3],
    },
    /// Closed cylinder (side plus both caps) along coordinate `axis`.
    Cylinder {
        center: Point,
        axis: usize,
        radius: f64,
        half_length: f64,
    },
}

impl Primitive {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Primitive::Cuboid { half, .. } => half.iter().all(|&h| h > 0.0 && h.is_finite()),
            Primitive::Cylinder {
                axis,
                radius,
                half_length,
                ..
            } => {
                axis < 3
                    && radius > 0.0
                    && half_length > 0.0
                    && radius.is_finite()
                    && half_length.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "degenerate primitive {self:?}"
            )))
        }
    }

    /// Surface patches with their areas: six faces, or side and two caps.
    pub fn face_areas(&self) -> Vec<f64> {
        match *self {
            Primitive::Cuboid {
                half: [a, b, c], ..
            } => {
                let (xy, xz, yz) = (4.0 * a * b, 4.0 * a * c, 4.0 * b * c);
                vec![yz, yz, xz, xz, xy, xy]
            }
            Primitive::Cylinder {
                radius,
                half_length,
                ..
            } => {
                let cap = std::f64::consts::PI * radius * radius;
                vec![
                    2.0 * std::f64::consts::PI * radius * 2.0 * half_length,
                    cap,
                    cap,
                ]
            }
        }
    }

    pub fn area(&self) -> f64 {
        self.face_areas().iter().sum()
    }

    /// Returns a surface point and the index of the face it lies on.
    pub fn sample(&self, rng: &mut impl Rng) -> (Point, usize) {
        let areas = self.face_areas();
        let total: f64 = areas.iter().sum();
        let mut pick = rng.gen::<f64>() * total;
        let mut face = areas.len() - 1;
        for (i, &a) in areas.iter().enumerate() {
            if pick < a {
                face = i;
                break;
            }
            pick -= a;
        }
        let u = rng.gen::<f64>() * 2.0 - 1.0;
        let v = rng.gen::<f64>() * 2.0 - 1.0;
        let point = match *self {
            Primitive::Cuboid { center, half } => {
                let axis = face / 2;
                let sign = if face.is_multiple_of(2) { -1.0 } else { 1.0 };
                let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                let mut p = center;
                p[axis] += sign * half[axis];
                p[a1] += u * half[a1];
                p[a2] += v * half[a2];
                p
            }
            Primitive::Cylinder {
                center,
                axis,
                radius,
                half_length,
            } => {
                let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                let mut p = center;
                if face == 0 {
                    let theta = std::f64::consts::PI * u;
                    p[axis] += v * half_length;
                    p[a1] += radius * theta.cos();
                    p[a2] += radius * theta.sin();
                } else {
                    // Uniform on a disk: radius ~ sqrt(uniform).
                    let r = radius * (0.5 * (v + 1.0)).sqrt();
                    let theta = std::f64::consts::PI * u;
                    p[axis] += if face == 1 { -half_length } else { half_length };
                    p[a1] += r * theta.cos();
                    p[a2] += r * theta.sin();
                }
                p
            }
        };
        (point, face)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub label: usize,
    pub primitive: Primitive,
    pub points: usize,
}

/// Full description of one shape to sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub category: Category,
    pub parts: Vec<Part>,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn num_points(&self) -> usize {
        self.parts.iter().map(|p| p.points).sum()
    }

    pub fn num_classes(&self) -> usize {
        self.parts.iter().map(|p| p.label + 1).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() || self.num_points() == 0 {
            return Err(Error::InvalidArgument(
                "shape has no parts or no points".into(),
            ));
        }
        for part in &self.parts {
            part.primitive.validate()?;
        }
        let k = self.num_classes();
        for label in 0..k {
            if !self.parts.iter().any(|p| p.label == label) {
                return Err(Error::InvalidArgument(format!(
                    "part labels are not contiguous: {label} missing below {k}"
                )));
            }
        }
        Ok(())
    }

    /// Builds a category's shape from six parameters in `[-1, 1]`,
    /// allocating points to parts in proportion to surface area.
    pub fn from_params(
        category: Category,
        params: &[f64; NUM_SHAPE_PARAMS],
        n_points: usize,
        seed: u64,
    ) -> Result<Self> {
        if let Some(p) = params.iter().find(|p| !(-1.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!(
                "shape parameter {p} outside [-1, 1]"
            )));
        }
        let lerp = |i: usize, lo: f64, hi: f64| lo + (hi - lo) * 0.5 * (params[i] + 1.0);
        let cuboid = |center: Point, size: [f64; 3]| Primitive::Cuboid {
            center,
            half: [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0],
        };
        let mut prims: Vec<(usize, Primitive)> = Vec::new();
        match category {
            Category::Chair => {
                let w = lerp(0, 0.35, 0.55);
                let d = lerp(1, 0.35, 0.5);
                let leg_h = lerp(2, 0.3, 0.5);
                let back_h = lerp(3, 0.3, 0.55);
                let leg_t = lerp(4, 0.03, 0.06);
                let seat_t = lerp(5, 0.03, 0.07);
                let base = -0.5;
                for (sx, sz) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
                    let c = [
                        sx * (w - leg_t) / 2.0,
                        base + leg_h / 2.0,
                        sz * (d - leg_t) / 2.0,
                    ];
                    prims.push((0, cuboid(c, [leg_t, leg_h, leg_t])));
                }
                prims.push((
                    1,
                    cuboid([0.0, base + leg_h + seat_t / 2.0, 0.0], [w, seat_t, d]),
                ));
                let back_t = 0.04;
                prims.push((
                    2,
                    cuboid(
                        [
                            0.0,
                            base + leg_h + seat_t + back_h / 2.0,
                            -(d - back_t) / 2.0,
                        ],
                        [w, back_h, back_t],
                    ),
                ));
            }
            Category::Table => {
                let w = lerp(0, 0.6, 1.0);
                let d = lerp(1, 0.4, 0.7);
                let h = lerp(2, 0.4, 0.7);
                let top_t = lerp(3, 0.03, 0.08);
                let leg_t = lerp(4, 0.04, 0.08);
                let shelf_frac = lerp(5, 0.2, 0.5);
                let base = -0.4;
                let leg_h = h - top_t;
                for (sx, sz) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
                    let c = [
                        sx * (w - leg_t) / 2.0,
                        base + leg_h / 2.0,
                        sz * (d - leg_t) / 2.0,
                    ];
                    prims.push((0, cuboid(c, [leg_t, leg_h, leg_t])));
                }
                prims.push((
                    1,
                    cuboid([0.0, base + leg_h + top_t / 2.0, 0.0], [w, top_t, d]),
                ));
                prims.push((
                    2,
                    cuboid(
                        [0.0, base + shelf_frac * leg_h, 0.0],
                        [w - 2.0 * leg_t, 0.02, d - 2.0 * leg_t],
                    ),
                ));
            }
            Category::Airplane => {
                let len = lerp(0, 0.8, 1.2);
                let radius = lerp(1, 0.05, 0.1);
                let span = lerp(2, 0.8, 1.3);
                let chord = lerp(3, 0.15, 0.3);
                let wing_x = lerp(4, -0.15, 0.15);
                let tail_h = lerp(5, 0.12, 0.25);
                prims.push((
                    0,
                    Primitive::Cylinder {
                        center: [0.0; 3],
                        axis: 0,
                        radius,
                        half_length: len / 2.0,
                    },
                ));
                prims.push((1, cuboid([wing_x, 0.0, 0.0], [chord, 0.03, span])));
                let tail_x = -len / 2.0 + 0.08;
                prims.push((
                    2,
                    cuboid([tail_x, radius + tail_h / 2.0, 0.0], [0.12, tail_h, 0.02]),
                ));
                prims.push((
                    2,
                    cuboid([tail_x, radius * 0.5, 0.0], [0.1, 0.02, 0.35 * span]),
                ));
            }
        }
        let counts = allocate(
            n_points,
            &prims.iter().map(|(_, p)| p.area()).collect::<Vec<_>>(),
        )?;
        let spec = ShapeSpec {
            category,
            parts: prims
                .into_iter()
                .zip(counts)
                .map(|((label, primitive), points)| Part {
                    label,
                    primitive,
                    points,
                })
                .collect(),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Splits `total` across `weights` by largest remainder, at least one each.
fn allocate(total: usize, weights: &[f64]) -> Result<Vec<usize>> {
    let k = weights.len();
    if total < k {
        return Err(Error::InvalidArgument(format!(
            "{total} points cannot cover {k} parts"
        )));
    }
    let spare = (total - k) as f64;
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| spare * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| 1 + e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    let mut remaining = total - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    Ok(counts)
}

/// Samples every part's surface; points are ordered part by part.
pub fn generate(spec: &ShapeSpec) -> Result<LabeledPointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::with_capacity(spec.num_points());
    let mut labels = Vec::with_capacity(spec.num_points());
    for part in &spec.parts {
        for _ in 0..part.points {
            points.push(part.primitive.sample(&mut rng).0);
            labels.push(part.label);
        }
    }
    LabeledPointCloud::new(PointCloud::new(points)?, labels, spec.num_classes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count: usize,
    pub n_points: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Standard deviation of Gaussian-like noise added to the parameter part
    /// of each feature.
    pub feature_noise: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 100,
            n_points: 256,
            train_fraction: 0.8,
            val_fraction: 0.1,
            feature_noise: 0.0,
        }
    }
}

impl DatasetConfig {
    /// Sizes of (train, val, test).
    pub fn split_sizes(&self) -> Result<(usize, usize, usize)> {
        let fractions_ok = (0.0..=1.0).contains(&self.train_fraction)
            && (0.0..=1.0).contains(&self.val_fraction)
            && self.train_fraction + self.val_fraction <= 1.0;
        if !fractions_ok {
            return Err(Error::InvalidArgument(format!(
                "split fractions train={} val={} are invalid",
                self.train_fraction, self.val_fraction
            )));
        }
        let train = (self.count as f64 * self.train_fraction).round() as usize;
        let val = ((self.count as f64 * self.val_fraction).round() as usize)
            .min(self.count - train.min(self.count));
        let test = self.count.saturating_sub(train + val);
        for (name, n) in [("train", train), ("val", val), ("test", test)] {
            if n == 0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} split would be empty for {} shapes",
                    self.count
                )));
            }
        }
        Ok((train, val, test))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub category: Category,
    pub split: Split,
    pub feature: Vec<f64>,
    pub cloud: LabeledPointCloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_points: usize,
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

fn shape_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_add(0xD1B5_4A32_D192_ED03)
}

/// Generates `config.count` shapes round-robin over categories and assigns
/// splits by a seeded shuffle.
pub fn make_dataset(config: &DatasetConfig, seed: u64) -> Result<Dataset> {
    let (n_train, n_val, _) = config.split_sizes()?;
    if config.n_points == 0 {
        return Err(Error::InvalidArgument("n_points must be positive".into()));
    }
    let mut order: Vec<usize> = (0..config.count).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = split_rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut splits = vec![Split::Test; config.count];
    for (rank, &index) in order.iter().enumerate() {
        splits[index] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let mut samples = Vec::with_capacity(config.count);
    for (index, &split) in splits.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(shape_seed(seed, index));
        let category = Category::ALL[index % Category::ALL.len()];
        let mut params = [0.0; NUM_SHAPE_PARAMS];
        for p in &mut params {
            *p = rng.gen_range(-1.0..=1.0);
        }
        let spec = ShapeSpec::from_params(category, &params, config.n_points, rng.gen())?;
        let cloud = generate(&spec)?;
        let mut feature = vec![0.0; FEATURE_DIM];
        feature[category.index()] = 1.0;
        for (k, p) in params.iter().enumerate() {
            let noise = if config.feature_noise > 0.0 {
                // Sum of uniforms: zero mean, unit variance.
                let s: f64 = (0..12).map(|_| rng.gen::<f64>()).sum::<f64>() - 6.0;
                config.feature_noise * s
            } else {
                0.0
            };
            feature[Category::ALL.len() + k] = p + noise;
        }
        samples.push(Sample {
            index,
            category,
            split,
            feature,
            cloud,
        });
    }
    Ok(Dataset {
        n_points: config.n_points,
        num_classes: NUM_CLASSES,
        samples,
    })
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> + '_ {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// SHA-256 over every sample's index, split, category, feature, points
    /// and labels.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_points as u64).to_le_bytes());
        h.update((self.num_classes as u64).to_le_bytes());
        for s in &self.samples {
            h.update((s.index as u64).to_le_bytes());
            h.update(s.split.name().as_bytes());
            h.update(s.category.name().as_bytes());
            for f in &s.feature {
                h.update(f.to_le_bytes());
            }
            for p in s.cloud.cloud().points() {
                for c in p {
                    h.update(c.to_le_bytes());
                }
            }
            for &l in s.cloud.labels() {
                h.update((l as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

pub const CLOUD_FORMAT_VERSION: u32 = 1;

/// Renders a labeled cloud in the versioned text format.
pub fn format_labeled_cloud(cloud: &LabeledPointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 64);
    let _ = writeln!(out, "version {CLOUD_FORMAT_VERSION}");
    let _ = writeln!(out, "num_points {}", cloud.len());
    let _ = writeln!(out, "num_classes {}", cloud.num_classes());
    for (p, l) in cloud.cloud().points().iter().zip(cloud.labels()) {
        let _ = writeln!(out, "{:.8e} {:.8e} {:.8e} {}", p[0], p[1], p[2], l);
    }
    out
}

pub fn write_labeled_cloud(path: &Path, cloud: &LabeledPointCloud) -> Result<()> {
    std::fs::write(path, format_labeled_cloud(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_labeled_cloud(path: &Path) -> Result<LabeledPointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labeled_cloud(&text, path)
}

fn header_value(
    line: Option<(usize, &str)>,
    key: &str,
    path: &Path,
    fallback_line: usize,
) -> Result<usize> {
    let (n, line) =
        line.ok_or_else(|| Error::parse(path, fallback_line, format!("missing `{key}` header")))?;
    let mut words = line.split_whitespace();
    match (words.next(), words.next(), words.next()) {
        (Some(k), Some(v), None) if k == key => v.parse().map_err(|_| {
            Error::parse(
                path,
                n,
                format!("`{key}` expects an unsigned integer, got `{v}`"),
            )
        }),
        _ => Err(Error::parse(
            path,
            n,
            format!("expected `{key} <value>`, got `{line}`"),
        )),
    }
}

/// Parses the text format; errors carry 1-based line numbers.
pub fn parse_labeled_cloud(text: &str, path: &Path) -> Result<LabeledPointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let version = header_value(lines.next(), "version", path, 1)?;
    if version != CLOUD_FORMAT_VERSION as usize {
        return Err(Error::parse(
            path,
            1,
            format!("unsupported version {version}"),
        ));
    }
    let n = header_value(lines.next(), "num_points", path, 2)?;
    let num_classes = header_value(lines.next(), "num_classes", path, 3)?;
    if n == 0 {
        return Err(Error::parse(path, 2, "point section is empty"));
    }
    if num_classes == 0 {
        return Err(Error::parse(path, 3, "num_classes must be at least 1"));
    }
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected `x y z label`, got `{line}`"),
            ));
        }
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = fields[k].parse::<f64>().map_err(|_| {
                Error::parse(path, line_no, format!("bad coordinate `{}`", fields[k]))
            })?;
            if !p[k].is_finite() {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("non-finite coordinate `{}`", fields[k]),
                ));
            }
        }
        let label: usize = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad label `{}`", fields[3])))?;
        if label >= num_classes {
            return Err(Error::parse(
                path,
                line_no,
                format!("label {label} is not below num_classes {num_classes}"),
            ));
        }
        if points.len() == n {
            return Err(Error::parse(path, line_no, format!("more than {n} points")));
        }
        points.push(p);
        labels.push(label);
    }
    if points.len() != n {
        return Err(Error::parse(
            path,
            text.lines().count().max(1),
            format!("expected {n} points, found {}", points.len()),
        ));
    }
    LabeledPointCloud::new(PointCloud::new(points)?, labels, num_classes)
}

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CLOUD_DIR: &str = "clouds";

/// Writes one cloud file per sample plus a manifest listing relative paths,
/// split tags, categories and features. Returns the manifest's SHA-256.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<String> {
    let cloud_dir = dir.join(CLOUD_DIR);
    std::fs::create_dir_all(&cloud_dir).map_err(|e| Error::io(&cloud_dir, e))?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "version 1");
    let _ = writeln!(manifest, "num_points {}", dataset.n_points);
    let _ = writeln!(manifest, "num_classes {}", dataset.num_classes);
    let _ = writeln!(manifest, "content_digest {}", dataset.digest());
    for s in &dataset.samples {
        let rel = format!("{CLOUD_DIR}/shape_{:05}.txt", s.index);
        write_labeled_cloud(&dir.join(&rel), &s.cloud)?;
        let features: Vec<String> = s.feature.iter().map(|f| format!("{f:?}")).collect();
        let _ = writeln!(
            manifest,
            "{} {} {} {}",
            rel,
            s.split.name(),
            s.category.name(),
            features.join(",")
        );
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, &manifest).map_err(|e| Error::io(&path, e))?;
    Ok(hex::encode(Sha256::digest(manifest.as_bytes())))
}

/// Loads a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let version = header_value(lines.next(), "version", &path, 1)?;
    if version != 1 {
        return Err(Error::parse(
            &path,
            1,
            format!("unsupported manifest version {version}"),
        ));
    }
    let n_points = header_value(lines.next(), "num_points", &path, 2)?;
    let num_classes = header_value(lines.next(), "num_classes", &path, 3)?;
    let mut samples = Vec::new();
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            ["content_digest", _] => continue,
            [rel, split, category, features] => {
                let bad = |m: String| Error::parse(&path, line_no, m);
                let split: Split = split.parse().map_err(|e: Error| bad(e.to_string()))?;
                let category: Category = category.parse().map_err(|e: Error| bad(e.to_string()))?;
                let feature = features
                    .split(',')
                    .map(|f| {
                        f.parse::<f64>()
                            .map_err(|_| bad(format!("bad feature `{f}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let cloud = read_labeled_cloud(&dir.join(rel))?;
                if cloud.len() != n_points || cloud.num_classes() != num_classes {
                    return Err(bad(format!("{rel} does not match the manifest header")));
                }
                samples.push(Sample {
                    index: samples.len(),
                    category,
                    split,
                    feature,
                    cloud,
                });
            }
            _ => {
                return Err(Error::parse(
                    &path,
                    line_no,
                    "expected `path split category features`",
                ))
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::parse(&path, 4, "manifest lists no shapes"));
    }
    Ok(Dataset {
        n_points,
        num_classes,
        samples,
    })
}
