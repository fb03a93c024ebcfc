//! Training, evaluation and the alpha sweep.
//!
//! Joint mode trains a single decoder on `alpha * chamfer + beta * seg`.
//! Baseline mode trains a reconstruction decoder on Chamfer and, separately,
//! a point-wise segmentation network on ground-truth clouds; at test time the
//! reconstruction is fed to the segmentation network.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::cloud::{ClassScores, LabeledPointCloud, PointCloud};
use crate::data::{Dataset, Sample, Split, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::losses::{chamfer, cross_entropy, total_loss_parts, LossWeights};
use crate::metrics::{evaluate, MetricReport, SummaryTable};
use crate::nn::{
    backward_decoder, forward_rec, split_joint_output, DenseLayout, DenseNet, Network, SegNet,
    TrainState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Joint,
    Baseline,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Joint => "joint",
            Mode::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Mode::Joint),
            "baseline" => Ok(Mode::Baseline),
            _ => Err(Error::InvalidArgument(format!(
                "mode must be `joint` or `baseline`, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub n_points: usize,
    pub n_classes: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Joint decoder and baseline segmentation network.
    pub learning_rate: f64,
    /// Baseline reconstruction decoder.
    pub rec_learning_rate: f64,
    /// Multiplies both learning rates. The shortened toy schedules need
    /// larger steps than the full-length defaults.
    pub lr_scale: f64,
    pub joint_epochs: usize,
    pub baseline_epochs: usize,
    pub epoch_scale: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub decoder_hidden: Vec<usize>,
    pub seg_encoder: Vec<usize>,
    pub seg_decoder_hidden: Vec<usize>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Joint,
            n_points: 256,
            n_classes: crate::data::NUM_CLASSES,
            alpha: 1e4,
            beta: 1.0,
            learning_rate: 5e-4,
            rec_learning_rate: 5e-5,
            lr_scale: 20.0,
            joint_epochs: 500,
            baseline_epochs: 1000,
            epoch_scale: 0.2,
            batch_size: 32,
            seed: 0,
            decoder_hidden: vec![64, 64, 64],
            seg_encoder: vec![32, 32, 64],
            seg_decoder_hidden: vec![64, 32],
            data: None,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("rec_learning_rate", self.rec_learning_rate)?;
        positive("lr_scale", self.lr_scale)?;
        positive("scaled learning_rate", self.step_size(Mode::Joint))?;
        positive("scaled rec_learning_rate", self.step_size(Mode::Baseline))?;
        positive("epoch_scale", self.epoch_scale)?;
        if self.n_points == 0 || self.n_classes == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "n_points, n_classes and batch_size must be positive".into(),
            ));
        }
        if self.decoder_hidden.contains(&0)
            || self.seg_encoder.is_empty()
            || self.seg_encoder.contains(&0)
            || self.seg_decoder_hidden.contains(&0)
        {
            return Err(Error::InvalidArgument(
                "layer widths must be positive".into(),
            ));
        }
        if self.epochs(Mode::Joint) == 0 || self.epochs(Mode::Baseline) == 0 {
            return Err(Error::InvalidArgument("scaled epoch count is zero".into()));
        }
        // Baseline reconstruction ignores beta, but the weights still must be
        // well-formed for joint mode.
        if self.mode == Mode::Joint {
            LossWeights::new(self.alpha, self.beta)?;
        }
        Ok(())
    }

    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.alpha, self.beta)
    }

    /// Epochs actually run for `mode` after scaling.
    pub fn epochs(&self, mode: Mode) -> usize {
        let base = match mode {
            Mode::Joint => self.joint_epochs,
            Mode::Baseline => self.baseline_epochs,
        };
        (base as f64 * self.epoch_scale).round() as usize
    }

    /// Effective step size: the joint decoder and segmentation network for
    /// `Joint`, the baseline reconstruction decoder for `Baseline`.
    pub fn step_size(&self, network: Mode) -> f64 {
        let base = match network {
            Mode::Joint => self.learning_rate,
            Mode::Baseline => self.rec_learning_rate,
        };
        base * self.lr_scale
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    fn decoder_layout(&self, n_classes: usize) -> Result<DenseLayout> {
        let mut widths = vec![FEATURE_DIM];
        widths.extend_from_slice(&self.decoder_hidden);
        widths.push(self.n_points * (3 + n_classes));
        DenseLayout::new(widths, false)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub network: &'static str,
    pub epoch: usize,
    pub loss: f64,
    pub chamfer: f64,
    pub segmentation: f64,
}

impl EpochRecord {
    pub const HEADER: &'static str = "network epoch loss chamfer segmentation";

    pub fn to_line(&self) -> String {
        format!(
            "{} {} {:.9e} {:.9e} {:.9e}",
            self.network, self.epoch, self.loss, self.chamfer, self.segmentation
        )
    }
}

#[derive(Debug, Clone)]
pub enum Trained {
    Joint(TrainState<DenseNet>),
    Baseline {
        rec: TrainState<DenseNet>,
        seg: TrainState<SegNet>,
    },
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

fn batch_input(batch: &[&Sample]) -> Result<Array2<f64>> {
    let mut input = Array2::<f64>::zeros((batch.len(), FEATURE_DIM));
    for (row, s) in batch.iter().enumerate() {
        if s.feature.len() != FEATURE_DIM {
            return Err(Error::SizeMismatch {
                what: "feature width",
                expected: FEATURE_DIM,
                actual: s.feature.len(),
            });
        }
        input
            .row_mut(row)
            .assign(&ndarray::ArrayView1::from(&s.feature[..]));
    }
    Ok(input)
}

fn diverged(network: &str, epoch: usize, err: Error) -> Error {
    match err {
        Error::NonFinite(_) | Error::NonFiniteCoordinate { .. } => {
            Error::Diverged(format!("{network} network at epoch {epoch}: {err}"))
        }
        other => other,
    }
}

/// Trains a decoder. With `weights` set it is a joint decoder on the total
/// loss; otherwise a reconstruction decoder on Chamfer alone.
fn train_decoder(
    config: &ExperimentConfig,
    train: &[&Sample],
    weights: Option<LossWeights>,
    epochs: usize,
    learning_rate: f64,
    log: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainState<DenseNet>> {
    let n_points = config.n_points;
    let n_classes = if weights.is_some() {
        config.n_classes
    } else {
        0
    };
    let network = if weights.is_some() { "joint" } else { "rec" };
    let seed = config.seed;
    let net = DenseNet::new(config.decoder_layout(n_classes)?, seed);
    let mut state = TrainState::new(net, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5E_ED0F_5A3B);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=epochs {
        shuffle(&mut order, &mut rng);
        let (mut loss_sum, mut rec_sum, mut seg_sum) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train[i]).collect();
            let input = batch_input(&batch)?;
            let tape = state.net.forward(input.view())?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads = Vec::with_capacity(batch.len());
            for (row, sample) in tape.output().rows().into_iter().zip(&batch) {
                let vg = match weights {
                    Some(w) => {
                        let (pred, scores) = split_joint_output(row, n_points, n_classes)
                            .map_err(|e| diverged(network, epoch, e))?;
                        let parts = total_loss_parts(&sample.cloud, &pred, &scores, w)
                            .map_err(|e| diverged(network, epoch, e))?;
                        rec_sum += parts.chamfer;
                        seg_sum += parts.segmentation;
                        parts.total
                    }
                    None => {
                        let pred = PointCloud::from_flat(row.as_slice().unwrap_or(&row.to_vec()))
                            .map_err(|e| diverged(network, epoch, e))?;
                        let vg = chamfer(sample.cloud.cloud(), &pred)
                            .map_err(|e| diverged(network, epoch, e))?;
                        rec_sum += vg.value;
                        vg
                    }
                };
                loss_sum += vg.value;
                grads.push(vg.scaled(scale));
            }
            let param_grads = backward_decoder(&state.net, &tape, &grads, n_points)?;
            state
                .adam_step(&param_grads, learning_rate)
                .map_err(|e| diverged(network, epoch, e))?;
        }
        let n = train.len() as f64;
        log(&EpochRecord {
            network,
            epoch,
            loss: loss_sum / n,
            chamfer: rec_sum / n,
            segmentation: seg_sum / n,
        })?;
    }
    Ok(state)
}

/// Trains the point-wise segmentation network on ground-truth clouds.
fn train_segnet(
    config: &ExperimentConfig,
    train: &[&Sample],
    epochs: usize,
    log: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainState<SegNet>> {
    let seed = config.seed.wrapping_add(1);
    let net = SegNet::new(
        &config.seg_encoder,
        &config.seg_decoder_hidden,
        config.n_classes,
        seed,
    )?;
    let mut state = TrainState::new(net, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5_E60F_5A3B);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=epochs {
        shuffle(&mut order, &mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut grads = vec![0.0; state.net.params().len()];
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let sample = train[i];
                let tape = state.net.forward(sample.cloud.cloud())?;
                let scores = tape.scores().map_err(|e| diverged("seg", epoch, e))?;
                let vg = cross_entropy(sample.cloud.labels(), &scores)
                    .map_err(|e| diverged("seg", epoch, e))?;
                loss_sum += vg.value;
                let g = vg.grad_scores.expect("cross-entropy has score gradients") * scale;
                for (acc, v) in grads.iter_mut().zip(state.net.backward(&tape, g.view())?) {
                    *acc += v;
                }
            }
            state
                .adam_step(&grads, config.step_size(Mode::Joint))
                .map_err(|e| diverged("seg", epoch, e))?;
        }
        let n = train.len() as f64;
        log(&EpochRecord {
            network: "seg",
            epoch,
            loss: loss_sum / n,
            chamfer: 0.0,
            segmentation: loss_sum / n,
        })?;
    }
    Ok(state)
}

fn check_compatible(config: &ExperimentConfig, dataset: &Dataset) -> Result<()> {
    config.validate()?;
    if dataset.n_points != config.n_points || dataset.num_classes != config.n_classes {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} points / {} classes but config expects {} / {}",
            dataset.n_points, dataset.num_classes, config.n_points, config.n_classes
        )));
    }
    if dataset.split(Split::Train).next().is_none() {
        return Err(Error::InvalidArgument("train split is empty".into()));
    }
    Ok(())
}

/// Trains according to `config.mode` on the dataset's train split.
pub fn train(
    config: &ExperimentConfig,
    dataset: &Dataset,
    log: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<Trained> {
    check_compatible(config, dataset)?;
    let train: Vec<&Sample> = dataset.split(Split::Train).collect();
    match config.mode {
        Mode::Joint => {
            let weights = config.weights()?;
            let state = train_decoder(
                config,
                &train,
                Some(weights),
                config.epochs(Mode::Joint),
                config.step_size(Mode::Joint),
                log,
            )?;
            Ok(Trained::Joint(state))
        }
        Mode::Baseline => {
            let epochs = config.epochs(Mode::Baseline);
            let rec = train_decoder(
                config,
                &train,
                None,
                epochs,
                config.step_size(Mode::Baseline),
                log,
            )?;
            let seg = train_segnet(config, &train, epochs, log)?;
            Ok(Trained::Baseline { rec, seg })
        }
    }
}

/// Produces a predicted cloud and class scores for a sample.
#[derive(Debug, Clone)]
pub enum Predictor {
    Joint {
        net: DenseNet,
        n_points: usize,
        n_classes: usize,
    },
    /// Reconstruct, then segment the reconstruction.
    Baseline {
        rec: DenseNet,
        seg: SegNet,
        n_points: usize,
    },
    /// The ground truth itself with one-hot scores.
    GroundTruth,
}

impl Predictor {
    pub fn from_trained(trained: &Trained, config: &ExperimentConfig) -> Self {
        match trained {
            Trained::Joint(state) => Predictor::Joint {
                net: state.net.clone(),
                n_points: config.n_points,
                n_classes: config.n_classes,
            },
            Trained::Baseline { rec, seg } => Predictor::Baseline {
                rec: rec.net.clone(),
                seg: seg.net.clone(),
                n_points: config.n_points,
            },
        }
    }

    pub fn predict(&self, sample: &Sample) -> Result<(PointCloud, ClassScores)> {
        match self {
            Predictor::Joint {
                net,
                n_points,
                n_classes,
            } => split_joint_output(net.predict(&sample.feature)?.view(), *n_points, *n_classes),
            Predictor::Baseline { rec, seg, n_points } => {
                let cloud = forward_rec(rec, &sample.feature, *n_points)?;
                let scores = crate::nn::forward_seg(seg, &cloud)?;
                Ok((cloud, scores))
            }
            Predictor::GroundTruth => Ok((sample.cloud.cloud().clone(), one_hot(&sample.cloud)?)),
        }
    }
}

fn one_hot(cloud: &LabeledPointCloud) -> Result<ClassScores> {
    let c = cloud.num_classes();
    let mut scores = Array2::<f64>::zeros((cloud.len(), c));
    for (i, &l) in cloud.labels().iter().enumerate() {
        scores[[i, l]] = 1.0;
    }
    ClassScores::new(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeResult {
    pub index: usize,
    pub category: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Structured evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub mode: String,
    pub shapes: Vec<ShapeResult>,
    pub summary: SummaryTable,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: EvalReport = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("report: {e}")))?;
        if report.format_version != REPORT_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported report format_version {}",
                report.format_version
            )));
        }
        Ok(report)
    }

    /// Per-shape `key=value` blocks separated by blank lines.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for s in &self.shapes {
            let _ = writeln!(out, "index={}\ncategory={}", s.index, s.category);
            out.push_str(&s.report.to_key_value());
            out.push('\n');
        }
        out
    }
}

/// Evaluates every sample of `split`. Shapes are processed in parallel and
/// reported in dataset order.
pub fn evaluate_split(
    predictor: &Predictor,
    dataset: &Dataset,
    split: Split,
    mode_name: &str,
) -> Result<EvalReport> {
    let samples: Vec<&Sample> = dataset.split(split).collect();
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} split is empty",
            split.name()
        )));
    }
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(samples.len());
    let chunk = samples.len().div_ceil(workers);
    let results: Vec<Result<Vec<ShapeResult>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| {
                            let (pred, scores) = predictor.predict(s)?;
                            Ok(ShapeResult {
                                index: s.index,
                                category: s.category.name().to_string(),
                                report: evaluate(&s.cloud, &pred, &scores)?,
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut shapes = Vec::with_capacity(samples.len());
    for r in results {
        shapes.extend(r?);
    }
    let pairs: Vec<(String, MetricReport)> = shapes
        .iter()
        .map(|s| (s.category.clone(), s.report))
        .collect();
    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        mode: mode_name.to_string(),
        summary: SummaryTable::from_reports(&pairs),
        shapes,
    })
}

pub const LOG_FILE: &str = "train.log";
pub const CONFIG_FILE: &str = "config.toml";
pub const JOINT_CHECKPOINT: &str = "joint.ckpt";
pub const REC_CHECKPOINT: &str = "rec.ckpt";
pub const SEG_CHECKPOINT: &str = "seg.ckpt";

fn append_log(path: &Path) -> Result<std::fs::File> {
    std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

/// Trains and writes the config echo, the append-only log and checkpoints
/// into `out`.
pub fn run_training(config: &ExperimentConfig, dataset: &Dataset, out: &Path) -> Result<Trained> {
    use std::io::Write;
    check_compatible(config, dataset)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_path = out.join(CONFIG_FILE);
    std::fs::write(&config_path, config.to_toml()).map_err(|e| Error::io(&config_path, e))?;
    let log_path = out.join(LOG_FILE);
    let mut log_file = append_log(&log_path)?;
    writeln!(log_file, "# {} seed={}", EpochRecord::HEADER, config.seed)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = |r: &EpochRecord| -> Result<()> {
        writeln!(log_file, "{}", r.to_line()).map_err(|e| Error::io(&log_path, e))
    };
    let trained = train(config, dataset, &mut log)?;
    match &trained {
        Trained::Joint(state) => {
            Checkpoint::Dense(state.clone()).save(&out.join(JOINT_CHECKPOINT))?;
        }
        Trained::Baseline { rec, seg } => {
            Checkpoint::Dense(rec.clone()).save(&out.join(REC_CHECKPOINT))?;
            Checkpoint::Seg(seg.clone()).save(&out.join(SEG_CHECKPOINT))?;
        }
    }
    Ok(trained)
}

/// Loads the predictor stored by [`run_training`] in `run_dir`.
pub fn load_predictor(run_dir: &Path) -> Result<(ExperimentConfig, Predictor)> {
    let config_path = run_dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config = ExperimentConfig::from_toml(&text)?;
    let predictor = match config.mode {
        Mode::Joint => Predictor::Joint {
            net: Checkpoint::load(&run_dir.join(JOINT_CHECKPOINT))?
                .into_dense()?
                .net,
            n_points: config.n_points,
            n_classes: config.n_classes,
        },
        Mode::Baseline => Predictor::Baseline {
            rec: Checkpoint::load(&run_dir.join(REC_CHECKPOINT))?
                .into_dense()?
                .net,
            seg: Checkpoint::load(&run_dir.join(SEG_CHECKPOINT))?
                .into_seg()?
                .net,
            n_points: config.n_points,
        },
    };
    Ok((config, predictor))
}

pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_SHAPES: &str = "shapes.txt";

pub fn write_eval_report(report: &EvalReport, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (name, body) in [
        (
            REPORT_TEXT,
            format!("mode {}\n{}", report.mode, report.summary.to_table()),
        ),
        (REPORT_JSON, report.to_json()),
        (REPORT_SHAPES, report.to_key_value()),
    ] {
        let path = out.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub const DEFAULT_ALPHA_GRID: [f64; 4] = [1e2, 1e3, 1e4, 1e5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub alpha: f64,
    /// Means over seeds of the test-set mean row.
    pub chamfer: f64,
    pub emd: f64,
    pub miou: f64,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub format_version: u32,
    pub beta: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>10} {:>10} {:>10} {:>8}",
            "alpha", "chamfer", "emd", "miou"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>10.0e} {:>10.4} {:>10.4} {:>8.2}",
                r.alpha,
                r.chamfer * crate::metrics::TABLE_SCALE,
                r.emd * crate::metrics::TABLE_SCALE,
                r.miou * 100.0
            );
        }
        out
    }

    /// Tab-separated raw values, one row per alpha, for plotting.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("alpha\tchamfer\temd\tmiou\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:e}\t{:.9e}\t{:.9e}\t{:.9e}",
                r.alpha, r.chamfer, r.emd, r.miou
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("ablation: {e}")))
    }
}

/// Trains the joint decoder for every `(alpha, seed)` pair with `config.beta`
/// and reports per-alpha test metrics averaged over seeds.
pub fn run_ablation(
    config: &ExperimentConfig,
    dataset: &Dataset,
    alphas: &[f64],
    seeds: &[u64],
    progress: &mut dyn FnMut(f64, u64, &EvalReport),
) -> Result<AblationReport> {
    if alphas.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "ablation needs at least one alpha and one seed".into(),
        ));
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut row = AblationRow {
            alpha,
            chamfer: 0.0,
            emd: 0.0,
            miou: 0.0,
            seeds: seeds.to_vec(),
        };
        for &seed in seeds {
            let run = ExperimentConfig {
                mode: Mode::Joint,
                alpha,
                seed,
                ..config.clone()
            };
            let trained = train(&run, dataset, &mut |_| Ok(()))?;
            let report = evaluate_split(
                &Predictor::from_trained(&trained, &run),
                dataset,
                Split::Test,
                "joint",
            )?;
            progress(alpha, seed, &report);
            let k = seeds.len() as f64;
            row.chamfer += report.summary.mean.chamfer / k;
            row.emd += report.summary.mean.emd / k;
            row.miou += report.summary.mean.miou / k;
        }
        rows.push(row);
    }
    Ok(AblationReport {
        format_version: REPORT_FORMAT_VERSION,
        beta: config.beta,
        rows,
    })
}
