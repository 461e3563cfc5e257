//! Fully connected sigmoid autoencoder trained with Adam on a masked
//! squared-error loss.
//!
//! Activations are stored one sample per row, so a layer maps an
//! `n × fan_in` batch to `n × fan_out` via `A · Wᵀ + b`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, RhaError};
use crate::mask::Mask;
use crate::numerics::{Matrix, Rng};

/// Pre-activations are clamped to this range so every sigmoid output stays
/// strictly inside (0, 1) in double precision.
const LOGIT_CLAMP: f64 = 36.0;

const CHECKPOINT_MAGIC: &[u8; 4] = b"RHAE";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_adam: f64,
    pub shuffle_seed: u64,
    /// Encoder widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 40,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_adam: 1e-8,
            shuffle_seed: 0,
            hidden: vec![200, 50],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(RhaError::param("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(RhaError::param("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(RhaError::param("Adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon_adam > 0.0) {
            return Err(RhaError::param("epsilon_adam must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(RhaError::param("hidden layer widths must be positive"));
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).exp())
}

/// One sigmoid layer with its Adam moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub m_weights: Matrix,
    pub v_weights: Matrix,
    pub m_bias: Vec<f64>,
    pub v_bias: Vec<f64>,
}

impl DenseLayer {
    /// Zero-moment layer from explicit parameters; `weights` is `fan_out × fan_in`.
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(RhaError::shape(
                "dense layer bias",
                weights.shape(),
                (bias.len(), 1),
            ));
        }
        let (o, i) = weights.shape();
        Ok(Self {
            m_weights: Matrix::zeros(o, i),
            v_weights: Matrix::zeros(o, i),
            m_bias: vec![0.0; o],
            v_bias: vec![0.0; o],
            weights,
            bias,
        })
    }

    /// Uniform init in ±sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = Matrix::random_uniform(fan_out, fan_in, -limit, limit, rng);
        Self::new(weights, vec![0.0; fan_out]).expect("bias sized from fan_out")
    }

    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    fn activate(&self, input: &Matrix) -> Result<Matrix> {
        let mut z = input.matmul_nt(&self.weights)?;
        z.add_row_vector_in_place(&self.bias);
        Ok(z.map(sigmoid))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
    /// Loss at the parameters the gradient was taken at.
    pub loss: f64,
}

impl Gradients {
    pub fn zeros_like(model: &Autoencoder) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Matrix::zeros(l.fan_out(), l.fan_in()),
                    bias: vec![0.0; l.fan_out()],
                })
                .collect(),
            loss: 0.0,
        }
    }
}

/// Encoder layers followed by the mirrored decoder layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    layers: Vec<DenseLayer>,
    step_count: u64,
}

impl Autoencoder {
    /// Builds `input → hidden[0] → … → hidden[k] → … → hidden[0] → input`.
    pub fn new(input_width: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        if input_width == 0 {
            return Err(RhaError::param("input width must be positive"));
        }
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(RhaError::param("need at least one positive hidden width"));
        }
        let mut widths = vec![input_width];
        widths.extend_from_slice(hidden);
        widths.extend(hidden.iter().rev().skip(1));
        widths.push(input_width);
        let layers = widths
            .windows(2)
            .map(|w| DenseLayer::init(w[0], w[1], rng))
            .collect();
        Ok(Self {
            layers,
            step_count: 0,
        })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        Self::from_parts(layers, 0)
    }

    fn from_parts(layers: Vec<DenseLayer>, step_count: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(RhaError::param("autoencoder needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(RhaError::shape(
                    "layer chain",
                    pair[0].weights.shape(),
                    pair[1].weights.shape(),
                ));
            }
        }
        let first = &layers[0];
        let last = &layers[layers.len() - 1];
        if first.fan_in() != last.fan_out() {
            return Err(RhaError::shape(
                "autoencoder input/output width",
                first.weights.shape(),
                last.weights.shape(),
            ));
        }
        Ok(Self { layers, step_count })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_width() {
            return Err(RhaError::shape(
                "autoencoder input",
                x.shape(),
                (x.rows(), self.input_width()),
            ));
        }
        Ok(())
    }

    /// Reconstruction `D(E(x))`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        let mut a = x.clone();
        for layer in &self.layers {
            a = layer.activate(&a)?;
        }
        Ok(a)
    }

    /// Bottleneck code `E(x)`.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        let mut a = x.clone();
        for layer in &self.layers[..self.layers.len().div_ceil(2)] {
            a = layer.activate(&a)?;
        }
        Ok(a)
    }

    /// Input plus every layer's activation, in order.
    fn forward_cached(&self, input: Matrix) -> Result<Vec<Matrix>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        for layer in &self.layers {
            let next = layer.activate(acts.last().expect("non-empty"))?;
            acts.push(next);
        }
        Ok(acts)
    }

    fn check_loss_inputs(&self, x: &Matrix, s: &Matrix, mask: &Mask) -> Result<()> {
        self.check_width(x)?;
        if s.shape() != x.shape() {
            return Err(RhaError::shape("sparse part", x.shape(), s.shape()));
        }
        if mask.shape() != x.shape() {
            return Err(RhaError::shape("mask", x.shape(), mask.shape()));
        }
        Ok(())
    }

    /// `‖((X − S) − D(E(X))) ⊙ Ω‖²_F / rows`, with unobserved inputs replaced
    /// by the mask's fill value before the forward pass.
    pub fn masked_loss(&self, x: &Matrix, s: &Matrix, mask: &Mask) -> Result<f64> {
        self.check_loss_inputs(x, s, mask)?;
        let y = self.forward(&mask.fill_unobserved(x)?)?;
        Ok(masked_sq_error(x, s, &y, mask) / x.rows().max(1) as f64)
    }

    /// Gradient of [`Autoencoder::masked_loss`] with respect to every weight and bias.
    pub fn backward(&self, x: &Matrix, s: &Matrix, mask: &Mask) -> Result<Gradients> {
        self.check_loss_inputs(x, s, mask)?;
        let rows = x.rows().max(1) as f64;
        let acts = self.forward_cached(mask.fill_unobserved(x)?)?;
        let y = acts.last().expect("output layer");
        let loss = masked_sq_error(x, s, y, mask) / rows;

        // Output error term; exactly +0.0 wherever Ω = 0.
        let (n, d) = y.shape();
        let mut delta = Matrix::zeros(n, d);
        {
            let out = delta.as_mut_slice();
            let (xs, ss, ys, ws) = (
                x.as_slice(),
                s.as_slice(),
                y.as_slice(),
                mask.indicator().as_slice(),
            );
            for i in 0..out.len() {
                if ws[i] != 0.0 {
                    let yi = ys[i];
                    out[i] = 2.0 / rows * (yi - (xs[i] - ss[i])) * yi * (1.0 - yi);
                }
            }
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let prev = &acts[k];
            grads.push(LayerGradient {
                weights: delta.matmul_tn(prev)?,
                bias: delta.column_sums(),
            });
            if k > 0 {
                let back = delta.matmul(&layer.weights)?;
                delta = back.zip_map(prev, "backprop", |g, a| g * a * (1.0 - a))?;
            }
        }
        grads.reverse();
        Ok(Gradients {
            layers: grads,
            loss,
        })
    }

    /// One bias-corrected Adam update; increments the step counter.
    pub fn adam_step(&mut self, grads: &Gradients, config: &TrainConfig) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(RhaError::param(format!(
                "gradient has {} layers, model has {}",
                grads.layers.len(),
                self.layers.len()
            )));
        }
        for (layer, g) in self.layers.iter().zip(&grads.layers) {
            if g.weights.shape() != layer.weights.shape() || g.bias.len() != layer.bias.len() {
                return Err(RhaError::shape(
                    "adam gradient",
                    layer.weights.shape(),
                    g.weights.shape(),
                ));
            }
        }
        self.step_count += 1;
        let adam = AdamCoefficients::new(config, self.step_count);
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            adam.update(
                layer.weights.as_mut_slice(),
                g.weights.as_slice(),
                layer.m_weights.as_mut_slice(),
                layer.v_weights.as_mut_slice(),
            );
            adam.update(
                &mut layer.bias,
                &g.bias,
                &mut layer.m_bias,
                &mut layer.v_bias,
            );
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for layer in &self.layers {
            w.write_all(&(layer.fan_in() as u32).to_le_bytes())?;
            w.write_all(&(layer.fan_out() as u32).to_le_bytes())?;
            for block in [
                layer.weights.as_slice(),
                &layer.bias,
                layer.m_weights.as_slice(),
                layer.v_weights.as_slice(),
                &layer.m_bias,
                &layer.v_bias,
            ] {
                for v in block {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.write_all(&self.step_count.to_le_bytes())?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self> {
        let mut r = ByteReader::new(r);
        let mut magic = [0u8; 4];
        r.exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(RhaError::format(0, "bad checkpoint magic, expected RHAE"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(RhaError::format(
                4,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let fan_in = r.u32()? as usize;
            let fan_out = r.u32()? as usize;
            let weights = r.matrix(fan_out, fan_in)?;
            let bias = r.f64s(fan_out)?;
            let m_weights = r.matrix(fan_out, fan_in)?;
            let v_weights = r.matrix(fan_out, fan_in)?;
            let m_bias = r.f64s(fan_out)?;
            let v_bias = r.f64s(fan_out)?;
            layers.push(DenseLayer {
                weights,
                bias,
                m_weights,
                v_weights,
                m_bias,
                v_bias,
            });
        }
        let step_count = r.u64()?;
        if r.has_trailing()? {
            return Err(RhaError::format(
                r.offset,
                "trailing bytes after checkpoint",
            ));
        }
        Self::from_parts(layers, step_count)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(BufReader::new(File::open(path)?))
    }
}

fn masked_sq_error(x: &Matrix, s: &Matrix, y: &Matrix, mask: &Mask) -> f64 {
    let ws = mask.indicator().as_slice();
    let mut acc = 0.0;
    for (i, ((&xv, &sv), &yv)) in x
        .as_slice()
        .iter()
        .zip(s.as_slice())
        .zip(y.as_slice())
        .enumerate()
    {
        if ws[i] != 0.0 {
            let r = (xv - sv) - yv;
            acc += r * r;
        }
    }
    acc
}

struct AdamCoefficients {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    correction1: f64,
    correction2: f64,
}

impl AdamCoefficients {
    fn new(config: &TrainConfig, step: u64) -> Self {
        let t = step.min(i32::MAX as u64) as i32;
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon_adam,
            correction1: 1.0 - config.beta1.powi(t),
            correction2: 1.0 - config.beta2.powi(t),
        }
    }

    fn update(&self, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]) {
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / self.correction1;
            let v_hat = *v / self.correction2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Minibatch Adam loop with a shuffle stream that persists across calls, so
/// `k` calls of `e` epochs replay exactly one call of `k·e` epochs.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    rng: Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let rng = Rng::new(config.shuffle_seed);
        Ok(Self { config, rng })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Runs `epochs` passes of shuffled minibatches over the rows of `x`.
    ///
    /// The returned trace holds, per epoch, the row-weighted mean of the
    /// batch losses measured just before each update.
    pub fn train_epochs(
        &mut self,
        model: &mut Autoencoder,
        x: &Matrix,
        s: &Matrix,
        mask: &Mask,
        epochs: usize,
    ) -> Result<Vec<f64>> {
        model.check_loss_inputs(x, s, mask)?;
        let n = x.rows();
        let mut trace = Vec::with_capacity(epochs);
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..epochs {
            order.sort_unstable();
            self.rng.shuffle(&mut order);
            let mut weighted = 0.0;
            for batch in order.chunks(self.config.batch_size) {
                let xb = x.select_rows(batch);
                let sb = s.select_rows(batch);
                let mb = mask.select_rows(batch);
                let grads = model.backward(&xb, &sb, &mb)?;
                weighted += grads.loss * batch.len() as f64;
                model.adam_step(&grads, &self.config)?;
            }
            trace.push(if n == 0 { 0.0 } else { weighted / n as f64 });
        }
        Ok(trace)
    }
}

/// One-shot training with a fresh shuffle stream seeded from `config.shuffle_seed`.
pub fn train_epochs(
    model: &mut Autoencoder,
    x: &Matrix,
    s: &Matrix,
    mask: &Mask,
    config: &TrainConfig,
    epochs: usize,
) -> Result<Vec<f64>> {
    Trainer::new(config.clone())?.train_epochs(model, x, s, mask, epochs)
}

/// Little-endian reader that reports the byte offset of truncation.
pub(crate) struct ByteReader<R> {
    inner: R,
    pub(crate) offset: usize,
}

impl<R: Read> ByteReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub(crate) fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len();
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(RhaError::format(
                self.offset,
                format!("truncated input, needed {} more bytes", buf.len()),
            )),
            Err(e) => Err(e.into()),
        }
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n.min(1 << 24));
        let mut b = [0u8; 8];
        for _ in 0..n {
            self.exact(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    }

    pub(crate) fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| RhaError::format(self.offset, "matrix dimensions overflow"))?;
        let data = self.f64s(len)?;
        Matrix::new(rows, cols, data)
    }

    pub(crate) fn has_trailing(&mut self) -> Result<bool> {
        let mut b = [0u8; 1];
        Ok(self.inner.read(&mut b)? > 0)
    }
}
