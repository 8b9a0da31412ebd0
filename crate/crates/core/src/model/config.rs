use core::fmt;
use core::str::FromStr;

use crate::error::invalid;
use crate::{Error, Result};

/// Pointwise nonlinearity used between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    Tanh,
    /// `ln(1 + eˣ)`.
    Softplus,
    /// Not differentiable at zero; finite-difference checks can trip on it,
    /// so gradient checks use the smooth variants.
    #[default]
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::Relu => "relu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            "relu" => Ok(Activation::Relu),
            other => Err(invalid!("unknown activation `{}`", other)),
        }
    }
}

/// Fixed, parameter-free transform applied to pixels before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputFilter {
    /// `x − 0.5`.
    Centered,
    /// `x` minus its reflect-padded 3×3 mean, which removes content brightness.
    HighPass,
    /// Both of the above as separate planes.
    #[default]
    Stacked,
}

impl InputFilter {
    pub fn name(self) -> &'static str {
        match self {
            InputFilter::Centered => "centered",
            InputFilter::HighPass => "highpass",
            InputFilter::Stacked => "stacked",
        }
    }

    /// Planes produced per input channel.
    pub fn planes(self) -> usize {
        match self {
            InputFilter::Stacked => 2,
            _ => 1,
        }
    }
}

impl FromStr for InputFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centered" => Ok(InputFilter::Centered),
            "highpass" => Ok(InputFilter::HighPass),
            "stacked" => Ok(InputFilter::Stacked),
            other => Err(invalid!("unknown input filter `{}`", other)),
        }
    }
}

/// Shape and initialization of the convolutional encoder and its head.
///
/// Encoder: two 3×3 stride-2 convolutions, global average pooling, a hidden
/// fully connected layer and a linear projection to `embed_dim`, optionally
/// L2-normalized. Head: an optional hidden layer then six logistic outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub input_channels: usize,
    /// Square input side in pixels.
    pub input_size: usize,
    pub conv_channels: [usize; 2],
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Zero for a purely linear head.
    pub head_hidden: usize,
    pub activation: Activation,
    pub input_filter: InputFilter,
    /// L2-normalize embeddings before dot products and the head.
    pub normalize: bool,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            input_size: 16,
            conv_channels: [8, 16],
            hidden_dim: 32,
            embed_dim: 64,
            head_hidden: 32,
            activation: Activation::Relu,
            input_filter: InputFilter::Stacked,
            normalize: true,
            init_seed: 0,
        }
    }
}

impl EncoderConfig {
    /// A very small network for finite-difference gradient checks.
    pub fn tiny(init_seed: u64) -> Self {
        Self {
            input_channels: 1,
            input_size: 8,
            conv_channels: [3, 4],
            hidden_dim: 6,
            embed_dim: 8,
            head_hidden: 5,
            activation: Activation::Tanh,
            input_filter: InputFilter::Stacked,
            normalize: true,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 8 {
            return Err(invalid!("embed_dim must be >= 8, got {}", self.embed_dim));
        }
        if self.input_size < 4 {
            return Err(invalid!("input_size must be >= 4, got {}", self.input_size));
        }
        if self.input_channels == 0 || self.conv_channels.contains(&0) || self.hidden_dim == 0 {
            return Err(invalid!("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }
}

/// The full-scale transformer the toy encoder stands in for. Recorded for
/// provenance; not buildable here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerReference {
    pub input_size: usize,
    pub layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    /// Layer-scale init and stochastic-depth rate, in thousandths.
    pub layerscale_milli: u32,
    pub drop_path_milli: u32,
    pub outputs: usize,
}

pub const VIT_B_REFERENCE: TransformerReference = TransformerReference {
    input_size: 192,
    layers: 12,
    embed_dim: 768,
    heads: 12,
    layerscale_milli: 100,
    drop_path_milli: 100,
    outputs: 6,
};
