//! Residual k-space U-Net.
//!
//! Input is signed-log k-space packed as two channels, optionally followed by
//! the broadcast sampling mask as a third channel. The network predicts a
//! correction that is added to its k-space input.
//!
//! The signed-log domain carries a factor of 1e5, so the network body works
//! on `input / io_scale` and its last convolution is multiplied back by
//! `io_scale` before the residual sum. Both factors are fixed constants of
//! the config, not learned.
//!
//! Layout for `depth = D`, `base = c`, where `block` is
//! `conv3x3 -> norm -> relu -> conv3x3 -> norm -> relu` and `norm` is an
//! affine-free instance normalization (skipped when `instance_norm` is off):
//!
//! ```text
//! enc.l      block (c·2^l channels), then maxpool
//! bottleneck block (c·2^D channels)
//! dec.l      upsample, concat enc.l, block (c·2^l channels)
//! head       conv1x1 -> relu -> conv1x1 (2 channels, zero-initialized)
//! ```

mod checkpoint;

pub use checkpoint::{Checkpoint, CheckpointHeader, ParamEntry};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameter, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::seed;

/// Default rescaling between transformed k-space and the network body.
pub const DEFAULT_IO_SCALE: f64 = 1e3;

/// Which training configuration a model belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Mask-blind, trained on one frozen equispaced mask.
    Fixed,
    /// Mask-blind, trained with a fresh equispaced offset per sample.
    Baseline,
    /// Mask as third input channel, trained with varying offsets.
    Mask,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Fixed, ModelKind::Baseline, ModelKind::Mask];

    pub fn in_channels(self) -> usize {
        match self {
            ModelKind::Mask => 3,
            _ => 2,
        }
    }

    pub fn uses_mask(self) -> bool {
        self == ModelKind::Mask
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Fixed => "fixed",
            ModelKind::Baseline => "baseline",
            ModelKind::Mask => "mask",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(ModelKind::Fixed),
            "baseline" => Ok(ModelKind::Baseline),
            "mask" => Ok(ModelKind::Mask),
            other => Err(Error::ModelConfig(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnetConfig {
    pub in_channels: usize,
    pub depth: usize,
    pub base_channels: usize,
    /// Instance normalization after every 3×3 convolution.
    #[serde(default = "default_true")]
    pub instance_norm: bool,
    #[serde(default = "default_io_scale")]
    pub io_scale: f64,
}

fn default_io_scale() -> f64 {
    DEFAULT_IO_SCALE
}

fn default_true() -> bool {
    true
}

/// Variance floor of the instance normalization.
pub const NORM_EPS: f64 = 1e-5;

impl UnetConfig {
    pub fn new(in_channels: usize, depth: usize, base_channels: usize) -> Self {
        Self {
            in_channels,
            depth,
            base_channels,
            instance_norm: true,
            io_scale: DEFAULT_IO_SCALE,
        }
    }

    /// Desk-scale default: depth 3, 16 base channels.
    pub fn for_kind(kind: ModelKind) -> Self {
        Self::new(kind.in_channels(), 3, 16)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 2 && self.in_channels != 3 {
            return Err(Error::ModelConfig(format!(
                "in_channels must be 2 or 3, got {}",
                self.in_channels
            )));
        }
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::ModelConfig(format!("depth must be in 1..=8, got {}", self.depth)));
        }
        if !(self.io_scale > 0.0) || !self.io_scale.is_finite() {
            return Err(Error::ModelConfig(format!("io_scale must be positive, got {}", self.io_scale)));
        }
        if self.base_channels == 0 {
            return Err(Error::ModelConfig("base_channels must be positive".into()));
        }
        Ok(())
    }

    /// Input height/width must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }

    fn head_channels(&self) -> usize {
        (self.base_channels / 2).max(2)
    }

    /// Every convolution in forward order.
    fn layers(&self) -> Vec<ConvLayer> {
        let c = |l: usize| self.base_channels << l;
        let mut layers = Vec::new();
        let mut cin = self.in_channels;
        for l in 0..self.depth {
            layers.push(ConvLayer::new(format!("enc.{l}.conv1"), cin, c(l), 3));
            layers.push(ConvLayer::new(format!("enc.{l}.conv2"), c(l), c(l), 3));
            cin = c(l);
        }
        let d = self.depth;
        layers.push(ConvLayer::new("bottleneck.conv1".into(), cin, c(d), 3));
        layers.push(ConvLayer::new("bottleneck.conv2".into(), c(d), c(d), 3));
        let mut below = c(d);
        for l in (0..self.depth).rev() {
            layers.push(ConvLayer::new(format!("dec.{l}.conv1"), below + c(l), c(l), 3));
            layers.push(ConvLayer::new(format!("dec.{l}.conv2"), c(l), c(l), 3));
            below = c(l);
        }
        layers.push(ConvLayer::new("head.conv1".into(), c(0), self.head_channels(), 1));
        layers.push(ConvLayer::new("head.conv2".into(), self.head_channels(), 2, 1));
        layers
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.cout * l.cin * l.k * l.k + l.cout)
            .sum()
    }
}

struct ConvLayer {
    name: String,
    cin: usize,
    cout: usize,
    k: usize,
}

impl ConvLayer {
    fn new(name: String, cin: usize, cout: usize, k: usize) -> Self {
        Self { name, cin, cout, k }
    }
}

/// Parameters bound to a tape for one forward pass.
pub struct Bound {
    vars: Vec<Var>,
}

/// Outputs of [`UnetModel::forward`].
pub struct ForwardOutput {
    /// `input + residual`, N×2×H×W.
    pub output: Var,
    /// Network correction before the residual sum.
    pub residual: Var,
    pub bound: Bound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnetModel<T: Real = f32> {
    config: UnetConfig,
    params: Vec<Parameter<T>>,
}

/// Builds a model with He-uniform weights (bound `sqrt(6 / fan_in)`), zero
/// biases and an all-zero final 1×1 convolution.
pub fn build_unet<T: Real>(config: UnetConfig, seed: u64) -> Result<UnetModel<T>> {
    config.validate()?;
    let mut rng = seed::rng(seed);
    let layers = config.layers();
    let last = layers.len() - 1;
    let mut params = Vec::with_capacity(2 * layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let shape = [layer.cout, layer.cin, layer.k, layer.k];
        let numel: usize = shape.iter().product();
        let weight = if i == last {
            vec![T::ZERO; numel]
        } else {
            let bound = (6.0 / (layer.cin * layer.k * layer.k) as f64).sqrt();
            (0..numel)
                .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                .collect()
        };
        params.push(Parameter::new(
            format!("{}.weight", layer.name),
            Tensor::new(shape.to_vec(), weight)?,
        ));
        params.push(Parameter::new(
            format!("{}.bias", layer.name),
            Tensor::zeros(&[layer.cout]),
        ));
    }
    Ok(UnetModel { config, params })
}

impl<T: Real> UnetModel<T> {
    /// Assembles a model from explicit parameters (checkpoint loading).
    pub fn from_params(config: UnetConfig, params: Vec<Parameter<T>>) -> Result<Self> {
        let reference = build_unet::<T>(config, 0)?;
        if reference.params.len() != params.len()
            || reference
                .params
                .iter()
                .zip(&params)
                .any(|(a, b)| a.name != b.name || a.value.shape() != b.value.shape())
        {
            return Err(Error::ModelConfig("parameters do not match the config layout".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &UnetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> UnetModel<U> {
        UnetModel {
            config: self.config,
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.value.cast()))
                .collect(),
        }
    }

    /// Records a forward pass. `mask` must be given iff the model has three
    /// input channels. With `track_grads` the parameters become gradient
    /// leaves.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        mask: Option<Var>,
        track_grads: bool,
    ) -> Result<ForwardOutput> {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), track_grads))
            .collect::<Result<Vec<_>>>()?;
        let (output, residual) = self.forward_with_params(tape, &vars, input, mask)?;
        Ok(ForwardOutput {
            output,
            residual,
            bound: Bound { vars },
        })
    }

    /// Forward pass using `params` (tape variables in [`Self::params`]
    /// order, same shapes) instead of the stored values. Returns the output
    /// and the residual.
    pub fn forward_with_params(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        input: Var,
        mask: Option<Var>,
    ) -> Result<(Var, Var)> {
        if params.len() != self.params.len()
            || params
                .iter()
                .zip(&self.params)
                .any(|(&v, p)| tape.value(v).shape() != p.value.shape())
        {
            return Err(Error::ModelConfig("parameter variables do not match the model layout".into()));
        }
        let (n, c, h, w) = tape.value(input).dims4("unet")?;
        if c != 2 {
            return Err(Error::shape("unet", format!("k-space input needs 2 channels, got {c}")));
        }
        let m = self.config.spatial_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::shape(
                "unet",
                format!("spatial size {h}×{w} not divisible by {m}"),
            ));
        }
        let scaled = tape.scale(input, T::from_f64(1.0 / self.config.io_scale))?;
        let x0 = match (self.config.in_channels, mask) {
            (3, Some(mv)) => {
                let ms = tape.value(mv).shape();
                if ms != [n, 1, h, w] {
                    return Err(Error::shape(
                        "unet",
                        format!("mask channel must be {n}×1×{h}×{w}, got {ms:?}"),
                    ));
                }
                tape.concat_channels(scaled, mv)?
            }
            (2, None) => scaled,
            (3, None) => {
                return Err(Error::InvalidArgument("3-channel model requires a mask channel".into()))
            }
            _ => {
                return Err(Error::InvalidArgument("2-channel model takes no mask channel".into()))
            }
        };

        let mut layer = 0;
        let norm = self.config.instance_norm;
        let mut conv = |tape: &mut Tape<T>, x: Var, relu: bool| -> Result<Var> {
            let mut y = tape.conv2d(x, params[2 * layer], params[2 * layer + 1])?;
            if norm && tape.value(params[2 * layer]).shape()[2] > 1 {
                y = tape.instance_norm(y, NORM_EPS)?;
            }
            layer += 1;
            if relu {
                tape.relu(y)
            } else {
                Ok(y)
            }
        };

        let mut x = x0;
        let mut skips = Vec::with_capacity(self.config.depth);
        for _ in 0..self.config.depth {
            x = conv(tape, x, true)?;
            x = conv(tape, x, true)?;
            skips.push(x);
            x = tape.maxpool2(x)?;
        }
        x = conv(tape, x, true)?;
        x = conv(tape, x, true)?;
        for skip in skips.into_iter().rev() {
            let up = tape.upsample_bilinear2(x)?;
            x = tape.concat_channels(up, skip)?;
            x = conv(tape, x, true)?;
            x = conv(tape, x, true)?;
        }
        x = conv(tape, x, true)?;
        let unit = conv(tape, x, false)?;
        let residual = tape.scale(unit, T::from_f64(self.config.io_scale))?;
        let output = tape.add(input, residual)?;
        Ok((output, residual))
    }

    /// Copies gradients of the bound parameters out of a differentiated tape.
    pub fn collect_grads(&mut self, tape: &Tape<T>, bound: &Bound) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            p.grad = Some(
                tape.grad(v)
                    .cloned()
                    .ok_or_else(|| Error::MissingGradient(p.name.clone()))?,
            );
        }
        Ok(())
    }

    /// Residual correction only (no gradient tracking), for a 1×C×H×W input.
    pub fn predict_residual(&self, input: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone(), false)?;
        let m = mask.map(|m| tape.leaf(m.clone(), false)).transpose()?;
        let out = self.forward(&mut tape, x, m, false)?;
        Ok(tape.value(out.residual).clone())
    }

    /// Full residual output `input + net(input)` without gradient tracking.
    pub fn predict(&self, input: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone(), false)?;
        let m = mask.map(|m| tape.leaf(m.clone(), false)).transpose()?;
        let out = self.forward(&mut tape, x, m, false)?;
        Ok(tape.value(out.output).clone())
    }
}
