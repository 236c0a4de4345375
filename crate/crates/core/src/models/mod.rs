//! Reference autoencoders: a convolutional digit autoencoder for 28×28 inputs
//! and a patch autoencoder for 15×15 inputs.

mod adam;
mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Graph, Tensor, Var};
use crate::error::{Error, Result};

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    DigitAe,
    PatchAe,
}

impl Architecture {
    pub fn id(self) -> u32 {
        match self {
            Architecture::DigitAe => 1,
            Architecture::PatchAe => 2,
        }
    }

    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            1 => Ok(Architecture::DigitAe),
            2 => Ok(Architecture::PatchAe),
            _ => Err(Error::format(format!("unknown architecture id {id}"))),
        }
    }

    /// `[C, H, W]` of one input.
    pub fn input_shape(self) -> [usize; 3] {
        match self {
            Architecture::DigitAe => [1, 28, 28],
            Architecture::PatchAe => [1, 15, 15],
        }
    }

    pub fn default_latent_dim(self) -> usize {
        match self {
            Architecture::DigitAe => 32,
            Architecture::PatchAe => 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub architecture: Architecture,
    pub latent_dim: usize,
    /// Seed of the weight initialization.
    pub seed: u64,
}

impl AutoencoderSpec {
    pub fn new(architecture: Architecture, seed: u64) -> Self {
        AutoencoderSpec {
            architecture,
            latent_dim: architecture.default_latent_dim(),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    Conv { cin: usize, cout: usize, k: usize, pad: usize },
    ConvT { cin: usize, cout: usize, k: usize, pad: usize },
    Dense { fan_in: usize, fan_out: usize },
    BatchNorm { channels: usize },
    LeakyRelu,
    Gelu,
    Sigmoid,
    MaxPool,
    Upsample,
    Reshape(Vec<usize>),
}

impl Layer {
    fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            Layer::Conv { cin, cout, k, .. } => vec![vec![cout, cin, k, k], vec![cout]],
            Layer::ConvT { cin, cout, k, .. } => vec![vec![cin, cout, k, k], vec![cout]],
            Layer::Dense { fan_in, fan_out } => vec![vec![fan_out, fan_in], vec![fan_out]],
            Layer::BatchNorm { channels } => vec![vec![channels], vec![channels]],
            _ => vec![],
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Layer::Conv { cin, k, .. } | Layer::ConvT { cin, k, .. } => cin * k * k,
            Layer::Dense { fan_in, .. } => fan_in,
            _ => 1,
        }
    }
}

fn layers(spec: &AutoencoderSpec) -> (Vec<Layer>, Vec<Layer>) {
    use Layer::*;
    let d = spec.latent_dim;
    match spec.architecture {
        Architecture::DigitAe => (
            vec![
                Conv { cin: 1, cout: 4, k: 5, pad: 2 },
                BatchNorm { channels: 4 },
                LeakyRelu,
                MaxPool,
                Conv { cin: 4, cout: 8, k: 5, pad: 2 },
                BatchNorm { channels: 8 },
                LeakyRelu,
                MaxPool,
                Reshape(vec![392]),
                Dense { fan_in: 392, fan_out: d },
            ],
            vec![
                Dense { fan_in: d, fan_out: 392 },
                Reshape(vec![8, 7, 7]),
                LeakyRelu,
                Upsample,
                ConvT { cin: 8, cout: 8, k: 5, pad: 2 },
                BatchNorm { channels: 8 },
                LeakyRelu,
                Upsample,
                ConvT { cin: 8, cout: 4, k: 5, pad: 2 },
                BatchNorm { channels: 4 },
                LeakyRelu,
                ConvT { cin: 4, cout: 1, k: 5, pad: 2 },
                Sigmoid,
            ],
        ),
        // Unpadded convolutions shrink 15 → 11 → 9 → 7 → 5; the transposed
        // convolutions of the decoder grow the same sizes back.
        Architecture::PatchAe => (
            vec![
                Conv { cin: 1, cout: 3, k: 5, pad: 0 },
                BatchNorm { channels: 3 },
                Gelu,
                Conv { cin: 3, cout: 4, k: 3, pad: 0 },
                BatchNorm { channels: 4 },
                Gelu,
                Conv { cin: 4, cout: 12, k: 3, pad: 0 },
                BatchNorm { channels: 12 },
                Gelu,
                Conv { cin: 12, cout: 16, k: 3, pad: 0 },
                BatchNorm { channels: 16 },
                Gelu,
                Reshape(vec![400]),
                Dense { fan_in: 400, fan_out: d },
            ],
            vec![
                Dense { fan_in: d, fan_out: 400 },
                Reshape(vec![16, 5, 5]),
                Gelu,
                ConvT { cin: 16, cout: 12, k: 3, pad: 0 },
                BatchNorm { channels: 12 },
                Gelu,
                ConvT { cin: 12, cout: 4, k: 3, pad: 0 },
                BatchNorm { channels: 4 },
                Gelu,
                ConvT { cin: 4, cout: 3, k: 3, pad: 0 },
                BatchNorm { channels: 3 },
                Gelu,
                ConvT { cin: 3, cout: 1, k: 5, pad: 0 },
                Sigmoid,
            ],
        ),
    }
}

/// Whether batch-norm layers use batch statistics (and report them) or the
/// running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running mean/variance of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Parameters of an autoencoder placed on a graph.
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl BoundParams {
    /// Variables of the encoder followed by the decoder, in layer order.
    pub fn all(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    spec: AutoencoderSpec,
    encoder: Vec<Layer>,
    decoder: Vec<Layer>,
    params: Vec<Tensor>,
    encoder_param_count: usize,
    running: Vec<RunningStats>,
}

impl Autoencoder {
    /// Fresh model with fan-in scaled uniform initialization.
    pub fn new(spec: AutoencoderSpec) -> Result<Self> {
        if spec.latent_dim == 0 {
            return Err(Error::usage("latent_dim must be positive"));
        }
        let (encoder, decoder) = layers(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = Vec::new();
        let mut running = Vec::new();
        let mut encoder_param_count = 0;
        for (part, layer) in encoder.iter().map(|l| (0, l)).chain(decoder.iter().map(|l| (1, l))) {
            if let Layer::BatchNorm { channels } = *layer {
                params.push(Tensor::full(&[channels], 1.0));
                params.push(Tensor::zeros(&[channels]));
                running.push(RunningStats {
                    mean: vec![0.0; channels],
                    var: vec![1.0; channels],
                });
            } else {
                let shapes = layer.param_shapes();
                let fan_in = layer.fan_in() as f64;
                for (i, shape) in shapes.iter().enumerate() {
                    let bound = if i == 0 {
                        (6.0 / fan_in).sqrt()
                    } else {
                        1.0 / fan_in.sqrt()
                    };
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                    params.push(Tensor::new(shape.clone(), data)?);
                }
            }
            if part == 0 {
                encoder_param_count = params.len();
            }
        }
        Ok(Autoencoder {
            spec,
            encoder,
            decoder,
            params,
            encoder_param_count,
            running,
        })
    }

    pub fn spec(&self) -> &AutoencoderSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Number of parameter tensors that belong to the encoder (they come first).
    pub fn encoder_tensor_count(&self) -> usize {
        self.encoder_param_count
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Flat parameters followed by every running mean and variance.
    pub fn state_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.params.iter().flat_map(|t| t.data().iter().copied()).collect();
        for r in &self.running {
            v.extend_from_slice(&r.mean);
            v.extend_from_slice(&r.var);
        }
        v
    }

    pub fn load_state_vector(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.state_vector().len();
        if values.len() != expected {
            return Err(Error::format(format!(
                "state of {} values, model needs {expected}",
                values.len()
            )));
        }
        let mut pos = 0;
        for t in &mut self.params {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[pos..pos + n]);
            pos += n;
        }
        for r in &mut self.running {
            let c = r.mean.len();
            r.mean.copy_from_slice(&values[pos..pos + c]);
            pos += c;
            r.var.copy_from_slice(&values[pos..pos + c]);
            pos += c;
        }
        Ok(())
    }

    /// Places every parameter on `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Result<BoundParams> {
        let vars = self
            .params
            .iter()
            .map(|p| g.param(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundParams { vars })
    }

    /// Places the parameters on `g` as constants (inference only).
    pub fn bind_frozen(&self, g: &mut Graph) -> Result<BoundParams> {
        let vars = self
            .params
            .iter()
            .map(|p| g.constant(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundParams { vars })
    }

    fn run(
        &self,
        g: &mut Graph,
        layers: &[Layer],
        params: &[Var],
        bn_offset: usize,
        x: Var,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        let mut h = x;
        let mut p = 0;
        let mut bn = bn_offset;
        for layer in layers {
            h = match layer {
                Layer::Conv { pad, .. } => {
                    let out = g.conv2d(h, params[p], params[p + 1], *pad)?;
                    p += 2;
                    out
                }
                Layer::ConvT { pad, .. } => {
                    let out = g.conv_transpose2d(h, params[p], params[p + 1], *pad)?;
                    p += 2;
                    out
                }
                Layer::Dense { .. } => {
                    let out = g.dense(h, params[p], params[p + 1])?;
                    p += 2;
                    out
                }
                Layer::BatchNorm { .. } => {
                    let (gamma, beta) = (params[p], params[p + 1]);
                    p += 2;
                    let out = match mode {
                        Mode::Train => {
                            let (out, s) = g.batch_norm_train(h, gamma, beta, BN_EPS)?;
                            stats.push(s);
                            out
                        }
                        Mode::Eval => {
                            let r = &self.running[bn];
                            g.batch_norm_eval(h, gamma, beta, &r.mean, &r.var, BN_EPS)?
                        }
                    };
                    bn += 1;
                    out
                }
                Layer::LeakyRelu => g.leaky_relu(h, LEAKY_SLOPE)?,
                Layer::Gelu => g.gelu(h)?,
                Layer::Sigmoid => g.sigmoid(h)?,
                Layer::MaxPool => g.max_pool2(h)?,
                Layer::Upsample => g.upsample2(h)?,
                Layer::Reshape(shape) => {
                    let n = g.value(h).shape()[0];
                    let mut full = vec![n];
                    full.extend_from_slice(shape);
                    g.reshape(h, &full)?
                }
            };
        }
        Ok(h)
    }

    fn encoder_bn_count(&self) -> usize {
        self.encoder
            .iter()
            .filter(|l| matches!(l, Layer::BatchNorm { .. }))
            .count()
    }

    /// Encoder on a graph: `x: [N, C, H, W]` → `[N, latent_dim]`. In training
    /// mode the measured batch statistics are appended to `stats`.
    pub fn encode_var(
        &self,
        g: &mut Graph,
        params: &BoundParams,
        x: Var,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        self.check_input(g.value(x).shape())?;
        let enc = &params.vars[..self.encoder_param_count];
        self.run(g, &self.encoder, enc, 0, x, mode, stats)
    }

    /// Decoder on a graph: `[N, latent_dim]` → `[N, C, H, W]`.
    pub fn decode_var(
        &self,
        g: &mut Graph,
        params: &BoundParams,
        z: Var,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        let shape = g.value(z).shape();
        if shape.len() != 2 || shape[1] != self.spec.latent_dim {
            return Err(Error::usage(format!(
                "decoder expects [N, {}], got {shape:?}",
                self.spec.latent_dim
            )));
        }
        let dec = &params.vars[self.encoder_param_count..];
        self.run(g, &self.decoder, dec, self.encoder_bn_count(), z, mode, stats)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let expected = self.spec.architecture.input_shape();
        if shape.len() != 4 || shape[1..] != expected {
            return Err(Error::usage(format!(
                "{:?} expects [N, {}, {}, {}], got {shape:?}",
                self.spec.architecture, expected[0], expected[1], expected[2]
            )));
        }
        Ok(())
    }

    /// Folds training-mode statistics (encoder then decoder order) into the
    /// running estimates.
    pub fn update_running_stats(&mut self, stats: &[BatchStats], batch_elements: &[usize]) {
        for ((r, s), &count) in self.running.iter_mut().zip(stats).zip(batch_elements) {
            let unbias = if count > 1 {
                count as f64 / (count - 1) as f64
            } else {
                1.0
            };
            for c in 0..r.mean.len() {
                r.mean[c] = (1.0 - BN_MOMENTUM) * r.mean[c] + BN_MOMENTUM * s.mean[c];
                r.var[c] = (1.0 - BN_MOMENTUM) * r.var[c] + BN_MOMENTUM * s.var[c] * unbias;
            }
        }
    }

    /// Elements per channel seen by each batch-norm layer for a batch of `n`.
    pub fn bn_counts(&self, n: usize) -> Vec<usize> {
        let [_, mut h, mut w] = self.spec.architecture.input_shape();
        let mut counts = Vec::new();
        for layer in self.encoder.iter().chain(&self.decoder) {
            match layer {
                Layer::Conv { k, pad, .. } => {
                    h = h + 2 * pad + 1 - k;
                    w = w + 2 * pad + 1 - k;
                }
                Layer::ConvT { k, pad, .. } => {
                    h = h + k - 1 - 2 * pad;
                    w = w + k - 1 - 2 * pad;
                }
                Layer::MaxPool => {
                    h /= 2;
                    w /= 2;
                }
                Layer::Upsample => {
                    h *= 2;
                    w *= 2;
                }
                Layer::Reshape(shape) => {
                    if shape.len() == 3 {
                        h = shape[1];
                        w = shape[2];
                    } else {
                        h = 1;
                        w = 1;
                    }
                }
                Layer::BatchNorm { .. } => counts.push(n * h * w),
                _ => {}
            }
        }
        counts
    }

    /// Inference-mode latents for `x: [N, C, H, W]`, processed in chunks.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        self.chunked(x, self.spec.latent_dim, |g, p, xv| {
            self.encode_var(g, p, xv, Mode::Eval, &mut Vec::new())
        })
    }

    /// Inference-mode reconstructions for latents `z: [N, latent_dim]`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let [c, h, w] = self.spec.architecture.input_shape();
        let out = self.chunked(z, c * h * w, |g, p, zv| {
            self.decode_var(g, p, zv, Mode::Eval, &mut Vec::new())
        })?;
        let n = z.shape()[0];
        out.reshaped(vec![n, c, h, w])
    }

    /// Inference-mode reconstructions of `x`.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.encode(x)?;
        self.decode(&z)
    }

    fn chunked(
        &self,
        x: &Tensor,
        out_width: usize,
        f: impl Fn(&mut Graph, &BoundParams, Var) -> Result<Var>,
    ) -> Result<Tensor> {
        const CHUNK: usize = 256;
        let n = *x.shape().first().ok_or_else(|| Error::usage("empty input"))?;
        let row = x.len() / n.max(1);
        let mut out = Vec::with_capacity(n * out_width);
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let mut shape = x.shape().to_vec();
            shape[0] = end - start;
            let part = Tensor::new(shape, x.data()[start * row..end * row].to_vec())?;
            let mut g = Graph::new();
            let p = self.bind_frozen(&mut g)?;
            let xv = g.constant(part)?;
            let y = f(&mut g, &p, xv)?;
            out.extend_from_slice(g.value(y).data());
            start = end;
        }
        Tensor::new(vec![n, out_width], out)
    }
}

/// `Σᵢ ‖xᵢ − x̂ᵢ‖²` over a batch.
pub fn reconstruction_loss(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::usage(format!(
            "reconstruction of shape {:?} for input {:?}",
            x_hat.shape(),
            x.shape()
        )));
    }
    Ok(x.data().iter().zip(x_hat.data()).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Mean squared reconstruction error of each sample.
pub fn per_sample_mse(x: &Tensor, x_hat: &Tensor) -> Result<Vec<f64>> {
    if x.shape() != x_hat.shape() {
        return Err(Error::usage("reconstruction shape differs from input"));
    }
    let n = x.shape()[0];
    let row = x.len() / n.max(1);
    Ok(x.data()
        .chunks(row)
        .zip(x_hat.data().chunks(row))
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / row as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn digit() -> Autoencoder {
        Autoencoder::new(AutoencoderSpec::new(Architecture::DigitAe, 7)).unwrap()
    }

    #[test]
    fn digit_shapes() {
        let m = digit();
        let x = Tensor::full(&[3, 1, 28, 28], 0.5);
        let z = m.encode(&x).unwrap();
        assert_eq!(z.shape(), &[3, 32]);
        let xh = m.decode(&z).unwrap();
        assert_eq!(xh.shape(), x.shape());
        assert!(xh.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn patch_shapes() {
        let m = Autoencoder::new(AutoencoderSpec::new(Architecture::PatchAe, 1)).unwrap();
        let x = Tensor::full(&[1, 1, 15, 15], 0.3);
        let z = m.encode(&x).unwrap();
        assert_eq!(z.shape(), &[1, 16]);
        assert_eq!(m.reconstruct(&x).unwrap().shape(), x.shape());
    }

    #[test]
    fn wrong_input_size_rejected() {
        let m = digit();
        assert!(m.encode(&Tensor::zeros(&[1, 1, 15, 15])).is_err());
        assert!(m.decode(&Tensor::zeros(&[1, 16])).is_err());
    }

    #[test]
    fn digit_parameter_count() {
        // conv 1→4: 4·25+4, bn: 8, conv 4→8: 8·4·25+8, bn: 16, dense 392→32: 392·32+32,
        // dense 32→392: 32·392+392, tconv 8→8: 8·8·25+8, bn: 16, tconv 8→4: 8·4·25+4,
        // bn: 8, tconv 4→1: 4·25+1.
        assert_eq!(digit().parameter_count(), 28_985);
    }

    #[test]
    fn identical_inputs_give_identical_latents() {
        let m = digit();
        let img: Vec<f64> = (0..784).map(|i| (i % 17) as f64 / 17.0).collect();
        let mut data = img.clone();
        data.extend_from_slice(&img);
        let z = m.encode(&Tensor::new(vec![2, 1, 28, 28], data).unwrap()).unwrap();
        assert_eq!(z.row(0), z.row(1));
    }

    #[test]
    fn seeded_initialization_is_reproducible() {
        assert_eq!(digit(), digit());
        let other = Autoencoder::new(AutoencoderSpec::new(Architecture::DigitAe, 8)).unwrap();
        assert_ne!(digit().params()[0], other.params()[0]);
    }

    #[test]
    fn encoder_ignores_decoder_parameters() {
        let mut m = digit();
        let x = Tensor::full(&[2, 1, 28, 28], 0.25);
        let before = m.encode(&x).unwrap();
        let k = m.encoder_tensor_count();
        for t in &mut m.params_mut()[k..] {
            t.data_mut().iter_mut().for_each(|v| *v += 1.0);
        }
        assert_eq!(m.encode(&x).unwrap(), before);
    }

    #[test]
    fn reconstruction_loss_examples() {
        let x = Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);
        let y = Tensor::new(vec![2, 2], vec![2.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(reconstruction_loss(&x, &y).unwrap(), 4.0);
        let a = Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap();
        let b = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(reconstruction_loss(&a, &b).unwrap(), 6.0);
        assert_eq!(per_sample_mse(&a, &b).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn state_vector_roundtrip() {
        let m = digit();
        let mut other = Autoencoder::new(AutoencoderSpec::new(Architecture::DigitAe, 99)).unwrap();
        other.load_state_vector(&m.state_vector()).unwrap();
        assert_eq!(other.params(), m.params());
        assert!(other.load_state_vector(&[0.0]).is_err());
    }

    #[test]
    fn bn_counts_follow_spatial_sizes() {
        assert_eq!(digit().bn_counts(2), vec![2 * 784, 2 * 196, 2 * 196, 2 * 784]);
        let p = Autoencoder::new(AutoencoderSpec::new(Architecture::PatchAe, 0)).unwrap();
        assert_eq!(p.bn_counts(1), vec![121, 81, 49, 25, 49, 81, 121]);
    }
}
