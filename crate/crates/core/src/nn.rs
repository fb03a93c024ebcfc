//! Small dense networks with hand-written reverse-mode gradients.
//!
//! A forward pass returns a tape holding the activations that the backward
//! pass needs. Tapes are stamped with the parameter version they were recorded
//! against; any parameter update invalidates older tapes.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{ClassScores, PointCloud};
use crate::error::{Error, Result};
use crate::losses::ValueGrad;

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Anything with a flat parameter vector.
pub trait Network {
    fn params(&self) -> &[f64];
    /// Mutable parameters. Invalidates every outstanding forward record.
    fn params_mut(&mut self) -> &mut [f64];
    fn num_params(&self) -> usize {
        self.params().len()
    }
}

/// Shape of a fully connected stack. Hidden layers use ReLU; the last layer
/// is linear unless `relu_output` is set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseLayout {
    widths: Vec<usize>,
    relu_output: bool,
}

impl DenseLayout {
    pub fn new(widths: Vec<usize>, relu_output: bool) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must list at least two positive sizes, got {widths:?}"
            )));
        }
        Ok(Self {
            widths,
            relu_output,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn relu_output(&self) -> bool {
        self.relu_output
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offsets of (weights, bias) for layer `l`; weights are `in x out`
    /// row-major.
    fn offsets(&self, layer: usize) -> (usize, usize) {
        let start: usize = self.widths[..layer + 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        (start, start + self.widths[layer] * self.widths[layer + 1])
    }

    fn weights<'a>(
        &self,
        params: &'a [f64],
        layer: usize,
    ) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let (w, b) = self.offsets(layer);
        let (fan_in, fan_out) = (self.widths[layer], self.widths[layer + 1]);
        let weights = ArrayView2::from_shape((fan_in, fan_out), &params[w..b]).unwrap();
        let bias = ArrayView1::from(&params[b..b + fan_out]);
        (weights, bias)
    }

    fn has_relu(&self, layer: usize) -> bool {
        layer + 1 < self.num_layers() || self.relu_output
    }

    /// Uniform weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params()];
        for layer in 0..self.num_layers() {
            let (w, b) = self.offsets(layer);
            let bound = (6.0 / self.widths[layer] as f64).sqrt();
            for p in &mut params[w..b] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        params
    }

    /// Returns the output and every layer input (the last entry is the output).
    fn forward(&self, params: &[f64], input: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        if input.ncols() != self.input_width() {
            return Err(Error::SizeMismatch {
                what: "network input width",
                expected: self.input_width(),
                actual: input.ncols(),
            });
        }
        let mut acts = Vec::with_capacity(self.widths.len());
        acts.push(input.to_owned());
        for layer in 0..self.num_layers() {
            let (w, b) = self.weights(params, layer);
            let mut z = acts[layer].dot(&w);
            z += &b;
            if self.has_relu(layer) {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// w.r.t. the input.
    fn backward(
        &self,
        params: &[f64],
        acts: &[Array2<f64>],
        grad_out: ArrayView2<'_, f64>,
        grads: &mut [f64],
    ) -> Result<Array2<f64>> {
        let out = acts.last().unwrap();
        if grad_out.dim() != out.dim() {
            return Err(Error::SizeMismatch {
                what: "output gradient shape",
                expected: out.len(),
                actual: grad_out.len(),
            });
        }
        let mut delta = grad_out.to_owned();
        for layer in (0..self.num_layers()).rev() {
            if self.has_relu(layer) {
                delta.zip_mut_with(&acts[layer + 1], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let (w_off, b_off) = self.offsets(layer);
            let (fan_in, fan_out) = (self.widths[layer], self.widths[layer + 1]);
            let gw = acts[layer].t().dot(&delta);
            for (g, v) in grads[w_off..b_off].iter_mut().zip(gw.iter()) {
                *g += v;
            }
            let gb = delta.sum_axis(Axis(0));
            for (g, v) in grads[b_off..b_off + fan_out].iter_mut().zip(gb.iter()) {
                *g += v;
            }
            let (w, _) = self.weights(params, layer);
            debug_assert_eq!(w.dim(), (fan_in, fan_out));
            delta = delta.dot(&w.t());
        }
        Ok(delta)
    }
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct DenseTape {
    stamp: u64,
    acts: Vec<Array2<f64>>,
}

impl DenseTape {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.acts.last().unwrap().view()
    }
}

#[derive(Debug, Clone)]
pub struct DenseNet {
    layout: DenseLayout,
    params: Vec<f64>,
    stamp: u64,
}

impl DenseNet {
    pub fn new(layout: DenseLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout.init(&mut rng);
        Self {
            layout,
            params,
            stamp: fresh_stamp(),
        }
    }

    pub fn from_params(layout: DenseLayout, params: Vec<f64>) -> Result<Self> {
        if params.len() != layout.num_params() {
            return Err(Error::SizeMismatch {
                what: "parameter count",
                expected: layout.num_params(),
                actual: params.len(),
            });
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("network parameter".into()));
        }
        Ok(Self {
            layout,
            params,
            stamp: fresh_stamp(),
        })
    }

    pub fn layout(&self) -> &DenseLayout {
        &self.layout
    }

    /// Runs a batch (one row per example) and records a tape.
    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<DenseTape> {
        Ok(DenseTape {
            stamp: self.stamp,
            acts: self.layout.forward(&self.params, input)?,
        })
    }

    pub fn predict(&self, input: &[f64]) -> Result<Array1<f64>> {
        let input = ArrayView2::from_shape((1, input.len()), input).unwrap();
        let tape = self.forward(input)?;
        Ok(tape.output().row(0).to_owned())
    }

    /// Parameter gradients for the batch recorded in `tape`.
    pub fn backward(&self, tape: &DenseTape, grad_out: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if tape.stamp != self.stamp {
            return Err(Error::StaleRecord);
        }
        let mut grads = vec![0.0; self.params.len()];
        self.layout
            .backward(&self.params, &tape.acts, grad_out, &mut grads)?;
        Ok(grads)
    }
}

impl Network for DenseNet {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.stamp = fresh_stamp();
        &mut self.params
    }
}

fn joint_classes(net: &DenseNet, n_points: usize) -> Result<usize> {
    let width = net.layout().output_width();
    if n_points == 0 || !width.is_multiple_of(n_points) || width / n_points <= 3 {
        return Err(Error::SizeMismatch {
            what: "joint output width must be n_points * (3 + n_classes)",
            expected: n_points * 4,
            actual: width,
        });
    }
    Ok(width / n_points - 3)
}

/// Splits one joint output row into positions (first `3 * n_points` entries)
/// and per-point class scores.
pub fn split_joint_output(
    row: ArrayView1<'_, f64>,
    n_points: usize,
    n_classes: usize,
) -> Result<(PointCloud, ClassScores)> {
    let expected = n_points * (3 + n_classes);
    if row.len() != expected {
        return Err(Error::SizeMismatch {
            what: "joint output width",
            expected,
            actual: row.len(),
        });
    }
    let row = row.to_vec();
    let cloud = PointCloud::from_flat(&row[..3 * n_points])?;
    let scores = ClassScores::from_rows(n_points, n_classes, row[3 * n_points..].to_vec())?;
    Ok((cloud, scores))
}

/// Inverse of [`split_joint_output`].
pub fn flatten_joint_output(cloud: &PointCloud, scores: &ClassScores) -> Vec<f64> {
    let mut out = cloud.flatten();
    out.extend(scores.scores().iter());
    out
}

/// Decodes a feature vector into a cloud plus per-point class scores.
pub fn forward_joint(
    net: &DenseNet,
    feature: &[f64],
    n_points: usize,
) -> Result<(PointCloud, ClassScores)> {
    let n_classes = joint_classes(net, n_points)?;
    split_joint_output(net.predict(feature)?.view(), n_points, n_classes)
}

/// Decodes a feature vector into a cloud (reconstruction-only decoder).
pub fn forward_rec(net: &DenseNet, feature: &[f64], n_points: usize) -> Result<PointCloud> {
    let width = net.layout().output_width();
    if width != 3 * n_points {
        return Err(Error::SizeMismatch {
            what: "reconstruction output width",
            expected: 3 * n_points,
            actual: width,
        });
    }
    PointCloud::from_flat(net.predict(feature)?.as_slice().unwrap())
}

/// Packs per-example loss gradients into the output-gradient matrix of a
/// joint (or, with `n_classes == 0`, reconstruction-only) decoder.
pub fn decoder_output_grad(
    losses: &[ValueGrad],
    n_points: usize,
    n_classes: usize,
) -> Result<Array2<f64>> {
    let width = n_points * (3 + n_classes);
    let mut out = Array2::<f64>::zeros((losses.len(), width));
    for (row, vg) in losses.iter().enumerate() {
        if let Some(gp) = &vg.grad_points {
            if gp.dim() != (n_points, 3) {
                return Err(Error::SizeMismatch {
                    what: "position gradient rows",
                    expected: n_points,
                    actual: gp.nrows(),
                });
            }
            out.slice_mut(s![row, ..3 * n_points])
                .iter_mut()
                .zip(gp.iter())
                .for_each(|(o, g)| *o = *g);
        }
        if let Some(gs) = &vg.grad_scores {
            if n_classes == 0 || gs.dim() != (n_points, n_classes) {
                return Err(Error::SizeMismatch {
                    what: "score gradient shape",
                    expected: n_points * n_classes,
                    actual: gs.len(),
                });
            }
            out.slice_mut(s![row, 3 * n_points..])
                .iter_mut()
                .zip(gs.iter())
                .for_each(|(o, g)| *o = *g);
        }
    }
    Ok(out)
}

/// Parameter gradients of a decoder given one loss gradient per batch row.
pub fn backward_decoder(
    net: &DenseNet,
    tape: &DenseTape,
    losses: &[ValueGrad],
    n_points: usize,
) -> Result<Vec<f64>> {
    let width = net.layout().output_width();
    let n_classes = (width / n_points.max(1)).saturating_sub(3);
    if n_points * (3 + n_classes) != width {
        return Err(Error::SizeMismatch {
            what: "decoder output width",
            expected: n_points * (3 + n_classes),
            actual: width,
        });
    }
    let grad_out = decoder_output_grad(losses, n_points, n_classes)?;
    net.backward(tape, grad_out.view())
}

/// Point-wise segmentation network: a shared per-point encoder, a coordinate
/// max over points, and a decoder applied to each point's feature
/// concatenated with the pooled feature.
#[derive(Debug, Clone)]
pub struct SegNet {
    encoder: DenseLayout,
    decoder: DenseLayout,
    params: Vec<f64>,
    stamp: u64,
}

/// Forward record of a [`SegNet`] pass.
#[derive(Debug, Clone)]
pub struct SegTape {
    stamp: u64,
    enc_acts: Vec<Array2<f64>>,
    dec_acts: Vec<Array2<f64>>,
    /// Row that supplied the max for each pooled channel.
    pool_rows: Vec<usize>,
}

impl SegNet {
    /// `encoder_widths` maps 3 coordinates to per-point features; the decoder
    /// maps `2 * feature` to `n_classes`.
    pub fn new(
        encoder_widths: &[usize],
        decoder_hidden: &[usize],
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let (encoder, decoder) = Self::layouts(encoder_widths, decoder_hidden, n_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = encoder.init(&mut rng);
        params.extend(decoder.init(&mut rng));
        Ok(Self {
            encoder,
            decoder,
            params,
            stamp: fresh_stamp(),
        })
    }

    fn layouts(
        encoder_widths: &[usize],
        decoder_hidden: &[usize],
        n_classes: usize,
    ) -> Result<(DenseLayout, DenseLayout)> {
        let mut enc = vec![3];
        enc.extend_from_slice(encoder_widths);
        let encoder = DenseLayout::new(enc, true)?;
        let mut dec = vec![2 * encoder.output_width()];
        dec.extend_from_slice(decoder_hidden);
        dec.push(n_classes);
        let decoder = DenseLayout::new(dec, false)?;
        Ok((encoder, decoder))
    }

    pub fn from_params(
        encoder_widths: &[usize],
        decoder_hidden: &[usize],
        n_classes: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let (encoder, decoder) = Self::layouts(encoder_widths, decoder_hidden, n_classes)?;
        let expected = encoder.num_params() + decoder.num_params();
        if params.len() != expected {
            return Err(Error::SizeMismatch {
                what: "parameter count",
                expected,
                actual: params.len(),
            });
        }
        Ok(Self {
            encoder,
            decoder,
            params,
            stamp: fresh_stamp(),
        })
    }

    /// Encoder widths after the 3-wide input.
    pub fn encoder_widths(&self) -> &[usize] {
        &self.encoder.widths()[1..]
    }

    /// Decoder hidden widths (between the concatenated input and the classes).
    pub fn decoder_hidden(&self) -> &[usize] {
        let w = self.decoder.widths();
        &w[1..w.len() - 1]
    }

    pub fn num_classes(&self) -> usize {
        self.decoder.output_width()
    }

    fn split_params(&self) -> (&[f64], &[f64]) {
        self.params.split_at(self.encoder.num_params())
    }

    pub fn forward(&self, cloud: &PointCloud) -> Result<SegTape> {
        let n = cloud.len();
        let coords = Array2::from_shape_vec((n, 3), cloud.flatten()).unwrap();
        let (enc_params, dec_params) = self.split_params();
        let enc_acts = self.encoder.forward(enc_params, coords.view())?;
        let features = enc_acts.last().unwrap();
        let width = features.ncols();

        let mut pool_rows = vec![0usize; width];
        let mut pooled = vec![f64::NEG_INFINITY; width];
        for (i, row) in features.rows().into_iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v > pooled[c] {
                    pooled[c] = v;
                    pool_rows[c] = i;
                }
            }
        }
        let mut concat = Array2::<f64>::zeros((n, 2 * width));
        concat.slice_mut(s![.., ..width]).assign(features);
        concat
            .slice_mut(s![.., width..])
            .assign(&ArrayView1::from(&pooled[..]));
        let dec_acts = self.decoder.forward(dec_params, concat.view())?;
        Ok(SegTape {
            stamp: self.stamp,
            enc_acts,
            dec_acts,
            pool_rows,
        })
    }

    pub fn backward(&self, tape: &SegTape, grad_scores: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if tape.stamp != self.stamp {
            return Err(Error::StaleRecord);
        }
        let (enc_params, dec_params) = self.split_params();
        let mut grads = vec![0.0; self.params.len()];
        let (enc_grads, dec_grads) = grads.split_at_mut(enc_params.len());
        let d_concat = self
            .decoder
            .backward(dec_params, &tape.dec_acts, grad_scores, dec_grads)?;
        let width = self.encoder.output_width();
        let mut d_features = d_concat.slice(s![.., ..width]).to_owned();
        let d_pooled = d_concat.slice(s![.., width..]).sum_axis(Axis(0));
        for (c, &row) in tape.pool_rows.iter().enumerate() {
            d_features[[row, c]] += d_pooled[c];
        }
        self.encoder
            .backward(enc_params, &tape.enc_acts, d_features.view(), enc_grads)?;
        Ok(grads)
    }
}

impl SegTape {
    pub fn scores(&self) -> Result<ClassScores> {
        ClassScores::new(self.dec_acts.last().unwrap().clone())
    }
}

impl Network for SegNet {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.stamp = fresh_stamp();
        &mut self.params
    }
}

/// Per-point class scores for a cloud.
pub fn forward_seg(net: &SegNet, cloud: &PointCloud) -> Result<ClassScores> {
    net.forward(cloud)?.scores()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// A network together with its optimizer state.
#[derive(Debug, Clone)]
pub struct TrainState<N> {
    pub net: N,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl<N: Network> TrainState<N> {
    pub fn new(net: N, seed: u64) -> Self {
        let n = net.num_params();
        Self {
            net,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step: 0,
            seed,
            adam: AdamConfig::default(),
        }
    }

    /// One bias-corrected adaptive-moment update.
    pub fn adam_step(&mut self, grads: &[f64], learning_rate: f64) -> Result<()> {
        let n = self.net.num_params();
        if grads.len() != n || self.first_moment.len() != n || self.second_moment.len() != n {
            return Err(Error::SizeMismatch {
                what: "gradient length vs parameter count",
                expected: n,
                actual: grads.len(),
            });
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.adam;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let params = self.net.params_mut();
        for i in 0..n {
            let g = grads[i];
            let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            params[i] -= learning_rate * (m / c1) / ((v / c2).sqrt() + epsilon);
        }
        Ok(())
    }
}
