//! Network hyperparameters and the flat parameter store.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Conv2d;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub height: usize,
    pub width: usize,
    /// Heatmaps plus part masks, `K + Z`.
    pub input_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `d`, the embedding width.
    pub embed_dim: usize,
    /// Output width of each graph convolution; the last must be 3.
    pub gconv_widths: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            input_channels: 20,
            encoder_channels: vec![16, 32, 32],
            kernel: 3,
            stride: 2,
            padding: 1,
            embed_dim: 128,
            gconv_widths: vec![128, 64, 32, 32, 3],
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gconv_widths.last() != Some(&3) {
            return Err(Error::Invalid("the last graph convolution must output 3 coordinates".into()));
        }
        if self.gconv_widths.len() < 2 {
            return Err(Error::Invalid("need at least two graph convolutions (camera head pools the penultimate)".into()));
        }
        if self.encoder_channels.is_empty() || self.embed_dim == 0 || self.input_channels == 0 {
            return Err(Error::Invalid("encoder needs at least one layer and nonzero widths".into()));
        }
        let (h, w) = self.encoder_output();
        if h == 0 || w == 0 {
            return Err(Error::Invalid("input too small for the encoder".into()));
        }
        Ok(())
    }

    /// Spatial size after the last encoder convolution.
    pub fn encoder_output(&self) -> (usize, usize) {
        let conv = Conv2d::<f64>::new(self.kernel, self.stride, self.padding, true);
        let mut hw = (self.height, self.width);
        for _ in &self.encoder_channels {
            if hw.0 + 2 * self.padding < self.kernel || hw.1 + 2 * self.padding < self.kernel {
                return (0, 0);
            }
            hw = conv.output_size(hw.0, hw.1);
        }
        hw
    }

    /// Widths `d_1 … d_{T+1}` along the graph-convolution chain.
    pub fn gconv_chain(&self) -> Vec<usize> {
        std::iter::once(self.embed_dim + 3).chain(self.gconv_widths.iter().copied()).collect()
    }

    pub fn num_gconv_layers(&self) -> usize {
        self.gconv_widths.len()
    }

    /// `(name, shape, fan_in, fan_out, is_bias)` for every tensor, in slot order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>, usize, usize, bool)> {
        let mut out = Vec::new();
        let mut cin = self.input_channels;
        let kk = self.kernel * self.kernel;
        for (i, &c) in self.encoder_channels.iter().enumerate() {
            out.push((format!("enc.{i}.w"), vec![kk * cin, c], kk * cin, kk * c, false));
            out.push((format!("enc.{i}.b"), vec![c], 0, 0, true));
            cin = c;
        }
        let (h, w) = self.encoder_output();
        let flat = h * w * cin;
        out.push(("fc.w".into(), vec![flat, self.embed_dim], flat, self.embed_dim, false));
        out.push(("fc.b".into(), vec![self.embed_dim], 0, 0, true));
        let chain = self.gconv_chain();
        for t in 0..self.num_gconv_layers() {
            out.push((format!("gconv.{t}"), vec![chain[t], chain[t + 1]], chain[t], chain[t + 1], false));
        }
        let pooled = chain[chain.len() - 2];
        out.push(("cam.w".into(), vec![pooled, 3], pooled, 3, false));
        out.push(("cam.b".into(), vec![3], 0, 0, true));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub config: NetConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

/// Slot indices of each parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Slots {
    pub encoder: Vec<(usize, usize)>,
    pub fc: (usize, usize),
    pub gconv: Vec<usize>,
    pub camera: (usize, usize),
}

impl<T: Real> NetworkParams<T> {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, fan_in, fan_out, bias) in config.layout() {
            let n: usize = shape.iter().product();
            let data = if bias {
                vec![T::zero(); n]
            } else {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| T::c(rng.random_range(-a..a))).collect()
            };
            names.push(name);
            tensors.push(Tensor::from_vec(&shape, data)?);
        }
        Ok(Self {
            config: config.clone(),
            names,
            tensors,
        })
    }

    pub fn slots(&self) -> Slots {
        let e = self.config.encoder_channels.len();
        let t = self.config.num_gconv_layers();
        Slots {
            encoder: (0..e).map(|i| (2 * i, 2 * i + 1)).collect(),
            fc: (2 * e, 2 * e + 1),
            gconv: (0..t).map(|i| 2 * e + 2 + i).collect(),
            camera: (2 * e + 2 + t, 2 * e + 3 + t),
        }
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::dim("flat parameters", self.num_scalars(), flat.len()));
        }
        let mut at = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Checks that tensors match the configured layout.
    pub fn validate(&self) -> Result<()> {
        let layout = self.config.layout();
        if layout.len() != self.tensors.len() {
            return Err(Error::dim("parameter tensors", layout.len(), self.tensors.len()));
        }
        for ((name, shape, ..), (n, t)) in layout.iter().zip(self.names.iter().zip(&self.tensors)) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(Error::Invalid(format!("parameter {n} has shape {:?}, expected {name} {shape:?}", t.shape())));
            }
        }
        Ok(())
    }
}
