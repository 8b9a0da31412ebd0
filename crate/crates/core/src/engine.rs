//! The noise engine: six parametric primitives applied in sequence, each
//! stage clamped back into `[0, 1]`, with strengths drawn as the softmax of
//! a standard normal vector.
//!
//! Every primitive has a `*_perturb` form that returns the unclamped result
//! (useful for measuring the injected noise) and an `apply_*` form that
//! clamps. A strength of exactly zero short-circuits to a bit-exact copy of
//! the input and consumes no draws.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::invalid;
use crate::math;
use crate::rng::RngStream;
use crate::tensor::{clamp01_in_place, conv2d_same, ImageTensor, Kernel2d};
use crate::{Error, Result};

/// Number of strength components (five noise sources plus clean signal).
pub const NUM_COMPONENTS: usize = 6;

/// Below this step the quantizer is a pass-through.
pub const QUANT_MIN_STEP: f64 = 1e-6;

/// Largest impulse threshold for which the salt and pepper regions are disjoint.
pub const SALT_PEPPER_MAX: f64 = 0.5;

/// One noise source. Declaration order is the default stage order and the
/// tie-break order for dominant-component decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Primitive {
    Gaussian,
    SaltPepper,
    Poisson,
    Quantization,
    Anisotropic,
    Clean,
}

impl Primitive {
    pub const ALL: [Primitive; NUM_COMPONENTS] = [
        Primitive::Gaussian,
        Primitive::SaltPepper,
        Primitive::Poisson,
        Primitive::Quantization,
        Primitive::Anisotropic,
        Primitive::Clean,
    ];

    /// The five sources that actually alter pixels.
    pub const NOISY: [Primitive; 5] = [
        Primitive::Gaussian,
        Primitive::SaltPepper,
        Primitive::Poisson,
        Primitive::Quantization,
        Primitive::Anisotropic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Gaussian => "gaussian",
            Primitive::SaltPepper => "salt-pepper",
            Primitive::Poisson => "poisson",
            Primitive::Quantization => "quantization",
            Primitive::Anisotropic => "anisotropic",
            Primitive::Clean => "clean",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gaussian" | "gauss" => Primitive::Gaussian,
            "salt-pepper" | "salt_pepper" | "sp" => Primitive::SaltPepper,
            "poisson" => Primitive::Poisson,
            "quantization" | "quant" => Primitive::Quantization,
            "anisotropic" | "aniso" => Primitive::Anisotropic,
            "clean" => Primitive::Clean,
            other => return Err(invalid!("unknown noise primitive `{}`", other)),
        })
    }
}

/// Parses a stage order given by name.
pub fn parse_order<S: AsRef<str>>(names: &[S]) -> Result<Vec<Primitive>> {
    let order = names
        .iter()
        .map(|s| s.as_ref().parse())
        .collect::<Result<Vec<Primitive>>>()?;
    check_permutation(&order)?;
    Ok(order)
}

/// Errors unless `order` lists every primitive exactly once.
pub fn check_permutation(order: &[Primitive]) -> Result<()> {
    let mut seen = [false; NUM_COMPONENTS];
    for p in order {
        if core::mem::replace(&mut seen[p.index()], true) {
            return Err(invalid!("primitive `{}` appears twice in stage order", p));
        }
    }
    if order.len() != NUM_COMPONENTS {
        return Err(invalid!(
            "stage order must list all {} primitives, got {}",
            NUM_COMPONENTS,
            order.len()
        ));
    }
    Ok(())
}

/// Strength vector, one component per [`Primitive`] in declaration order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseStrengths([f64; NUM_COMPONENTS]);

impl NoiseStrengths {
    /// Each component must lie in `[0, 1]`.
    pub fn new(values: [f64; NUM_COMPONENTS]) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid!("strength {} outside [0, 1]", v));
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_COMPONENTS] = values.try_into().map_err(|_| {
            invalid!(
                "expected {} strengths, got {}",
                NUM_COMPONENTS,
                values.len()
            )
        })?;
        Self::new(arr)
    }

    /// All weight on one component.
    pub fn one_hot(p: Primitive) -> Self {
        let mut v = [0.0; NUM_COMPONENTS];
        v[p.index()] = 1.0;
        Self(v)
    }

    /// `p` at strength `eta`, clean carrying the remainder.
    pub fn single(p: Primitive, eta: f64) -> Result<Self> {
        let mut v = [0.0; NUM_COMPONENTS];
        v[p.index()] = eta;
        if p != Primitive::Clean {
            v[Primitive::Clean.index()] = (1.0 - eta).max(0.0);
        }
        Self::new(v)
    }

    /// Softmax of `z`.
    pub fn softmax(z: [f64; NUM_COMPONENTS]) -> Self {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut e = z.map(|v| math::exp(v - m));
        let s: f64 = e.iter().sum();
        for v in &mut e {
            *v /= s;
        }
        Self(e)
    }

    pub fn get(&self, p: Primitive) -> f64 {
        self.0[p.index()]
    }

    pub fn as_array(&self) -> &[f64; NUM_COMPONENTS] {
        &self.0
    }

    pub fn gaussian(&self) -> f64 {
        self.0[0]
    }
    pub fn salt_pepper(&self) -> f64 {
        self.0[1]
    }
    pub fn poisson(&self) -> f64 {
        self.0[2]
    }
    pub fn quantization(&self) -> f64 {
        self.0[3]
    }
    pub fn anisotropic(&self) -> f64 {
        self.0[4]
    }
    pub fn clean(&self) -> f64 {
        self.0[5]
    }

    /// Argmax; ties go to the earliest component.
    pub fn dominant(&self) -> Primitive {
        dominant_of(&self.0)
    }
}

/// Argmax over a strength-like slice with first-index tie breaking.
pub fn dominant_of(v: &[f64]) -> Primitive {
    let mut best = 0;
    for i in 1..v.len().min(NUM_COMPONENTS) {
        if v[i] > v[best] {
            best = i;
        }
    }
    Primitive::ALL[best]
}

/// Draws `z ~ N(0, I₆)` from `stream` and returns its softmax.
pub fn sample_strengths(stream: &RngStream) -> NoiseStrengths {
    let mut d = stream.draws();
    let mut z = [0.0; NUM_COMPONENTS];
    for v in &mut z {
        *v = d.standard_normal();
    }
    NoiseStrengths::softmax(z)
}

/// How the quantization primitive treats its step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuantizationMode {
    /// `η·⌊x/η + U⌋`: subtractive-free dithered quantization onto the η lattice.
    #[default]
    Dithered,
    /// `η·(x/η + U)` taken literally, i.e. additive uniform noise `x + η·U`.
    Additive,
}

/// How the Poisson primitive adds its shot noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoissonMode {
    /// `x + Poisson(η·x)`.
    #[default]
    Literal,
    /// `x + Poisson(η·x) − η·x`, zero-mean shot noise.
    Centered,
}

/// Primitive variants selected for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EngineConfig {
    pub quantization: QuantizationMode,
    pub poisson: PoissonMode,
}

/// The fixed 5×5 smoothing kernel for anisotropic noise: the outer product
/// of the binomial row `[1, 4, 6, 4, 1] / 16` with itself.
pub fn aniso_kernel() -> Kernel2d {
    const ROW: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    Kernel2d::separable(&ROW, &ROW).expect("5x5 is odd")
}

fn check_nonneg(eta: f64, what: &str) -> Result<()> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(invalid!(
            "{} strength must be finite and >= 0, got {}",
            what,
            eta
        ));
    }
    Ok(())
}

/// `x + N`, `N ~ N(0, η²)` per pixel, unclamped.
pub fn gaussian_perturb(x: &ImageTensor, eta: f64, stream: &RngStream) -> Result<ImageTensor> {
    check_nonneg(eta, "gaussian")?;
    if eta == 0.0 {
        return Ok(x.clone());
    }
    let mut d = stream.draws();
    let mut out = x.clone();
    for v in out.data_mut() {
        *v += eta * d.standard_normal();
    }
    Ok(out)
}

pub fn apply_gaussian(x: &ImageTensor, eta: f64, stream: &RngStream) -> Result<ImageTensor> {
    finish(x, eta, gaussian_perturb(x, eta, stream)?)
}

/// Impulse noise: with `R ~ U[0,1)` per pixel, 0 where `R < η`, 1 where `R > 1 − η`.
pub fn apply_salt_pepper(x: &ImageTensor, eta: f64, stream: &RngStream) -> Result<ImageTensor> {
    check_nonneg(eta, "salt-pepper")?;
    if eta > SALT_PEPPER_MAX {
        return Err(invalid!(
            "salt-pepper strength {} exceeds {} (salt and pepper regions would overlap)",
            eta,
            SALT_PEPPER_MAX
        ));
    }
    if eta == 0.0 {
        return Ok(x.clone());
    }
    let mut d = stream.draws();
    let mut out = x.clone();
    for v in out.data_mut() {
        let r = d.uniform01();
        if r < eta {
            *v = 0.0;
        } else if r > 1.0 - eta {
            *v = 1.0;
        }
    }
    Ok(out)
}

/// Shot noise with rate `η·x` per pixel, unclamped.
pub fn poisson_perturb(
    x: &ImageTensor,
    eta: f64,
    stream: &RngStream,
    mode: PoissonMode,
) -> Result<ImageTensor> {
    check_nonneg(eta, "poisson")?;
    if eta == 0.0 {
        return Ok(x.clone());
    }
    let mut d = stream.draws();
    let mut out = x.clone();
    for v in out.data_mut() {
        let rate = eta * v.max(0.0);
        let k = d.poisson(rate) as f64;
        *v += match mode {
            PoissonMode::Literal => k,
            PoissonMode::Centered => k - rate,
        };
    }
    Ok(out)
}

pub fn apply_poisson(
    x: &ImageTensor,
    eta: f64,
    stream: &RngStream,
    mode: PoissonMode,
) -> Result<ImageTensor> {
    finish(x, eta, poisson_perturb(x, eta, stream, mode)?)
}

/// Quantization with step `η`, unclamped. Steps below [`QUANT_MIN_STEP`] pass through.
pub fn quantization_perturb(
    x: &ImageTensor,
    eta: f64,
    stream: &RngStream,
    mode: QuantizationMode,
) -> Result<ImageTensor> {
    check_nonneg(eta, "quantization")?;
    if eta < QUANT_MIN_STEP {
        return Ok(x.clone());
    }
    let mut d = stream.draws();
    let mut out = x.clone();
    for v in out.data_mut() {
        let u = d.uniform01();
        *v = match mode {
            QuantizationMode::Dithered => eta * math::floor(*v / eta + u),
            QuantizationMode::Additive => eta * (*v / eta + u),
        };
    }
    Ok(out)
}

pub fn apply_quantization(
    x: &ImageTensor,
    eta: f64,
    stream: &RngStream,
    mode: QuantizationMode,
) -> Result<ImageTensor> {
    if (0.0..QUANT_MIN_STEP).contains(&eta) {
        return Ok(x.clone());
    }
    finish(x, eta, quantization_perturb(x, eta, stream, mode)?)
}

/// The spatially correlated field `N′ ∗ K` with `N′ ~ N(0, η²)`.
pub fn anisotropic_field(
    channels: usize,
    height: usize,
    width: usize,
    eta: f64,
    stream: &RngStream,
) -> ImageTensor {
    let mut d = stream.draws();
    let white = ImageTensor::from_fn(channels, height, width, |_, _, _| eta * d.standard_normal());
    conv2d_same(&white, &aniso_kernel())
}

/// `x + (N′ ∗ K)`, unclamped.
pub fn anisotropic_perturb(x: &ImageTensor, eta: f64, stream: &RngStream) -> Result<ImageTensor> {
    check_nonneg(eta, "anisotropic")?;
    if eta == 0.0 {
        return Ok(x.clone());
    }
    let (c, h, w) = x.shape();
    let field = anisotropic_field(c, h, w, eta, stream);
    let mut out = x.clone();
    for (v, n) in out.data_mut().iter_mut().zip(field.data()) {
        *v += n;
    }
    Ok(out)
}

pub fn apply_anisotropic(x: &ImageTensor, eta: f64, stream: &RngStream) -> Result<ImageTensor> {
    finish(x, eta, anisotropic_perturb(x, eta, stream)?)
}

/// Pass-through; the clean strength is a label only.
pub fn apply_clean(x: &ImageTensor, _eta: f64) -> ImageTensor {
    x.clone()
}

fn finish(x: &ImageTensor, eta: f64, mut out: ImageTensor) -> Result<ImageTensor> {
    if eta == 0.0 {
        return Ok(x.clone());
    }
    clamp01_in_place(&mut out);
    Ok(out)
}

/// One primitive at strength `eta`, clamped, as a composition stage.
///
/// Inside a composition the impulse threshold saturates at
/// [`SALT_PEPPER_MAX`] (every pixel already becomes an impulse there), so
/// softmax strengths above it stay usable as labels.
pub fn apply_stage(
    p: Primitive,
    x: &ImageTensor,
    eta: f64,
    stream: &RngStream,
    config: &EngineConfig,
) -> Result<ImageTensor> {
    match p {
        Primitive::Gaussian => apply_gaussian(x, eta, stream),
        Primitive::SaltPepper => apply_salt_pepper(x, eta.min(SALT_PEPPER_MAX), stream),
        Primitive::Poisson => apply_poisson(x, eta, stream, config.poisson),
        Primitive::Quantization => apply_quantization(x, eta, stream, config.quantization),
        Primitive::Anisotropic => apply_anisotropic(x, eta, stream),
        Primitive::Clean => Ok(apply_clean(x, eta)),
    }
}

/// Stream used by stage `position` of a composition rooted at `sample`.
pub fn stage_stream(sample: &RngStream, p: Primitive, position: usize) -> RngStream {
    sample.derive(p.name(), position as u64)
}

/// Applies every primitive in `order`, clamping after each stage.
pub fn compose_image(
    x: &ImageTensor,
    strengths: &NoiseStrengths,
    order: &[Primitive],
    stream: &RngStream,
    config: &EngineConfig,
) -> Result<ImageTensor> {
    check_permutation(order)?;
    let mut cur = x.clone();
    for (i, &p) in order.iter().enumerate() {
        cur = apply_stage(
            p,
            &cur,
            strengths.get(p),
            &stage_stream(stream, p, i),
            config,
        )?;
    }
    Ok(cur)
}

/// A corrupted image together with everything needed to regenerate it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample {
    pub clean_id: String,
    pub corrupted: ImageTensor,
    pub strengths: NoiseStrengths,
    pub seed: RngStream,
    pub order: Vec<Primitive>,
    pub config: EngineConfig,
}

impl NoiseSample {
    /// Re-runs the composition from the recorded fields.
    pub fn resynthesize(&self, clean: &ImageTensor) -> Result<ImageTensor> {
        compose_image(
            clean,
            &self.strengths,
            &self.order,
            &self.seed,
            &self.config,
        )
    }
}

/// [`compose_image`] packaged with its provenance.
pub fn compose(
    clean_id: &str,
    x: &ImageTensor,
    strengths: &NoiseStrengths,
    order: &[Primitive],
    stream: &RngStream,
    config: &EngineConfig,
) -> Result<NoiseSample> {
    let corrupted = compose_image(x, strengths, order, stream, config)?;
    Ok(NoiseSample {
        clean_id: String::from(clean_id),
        corrupted,
        strengths: *strengths,
        seed: stream.clone(),
        order: order.to_vec(),
        config: *config,
    })
}

/// Strengths and corruption for one sample stream: strengths come from the
/// `strengths` child, stages from their own children.
pub fn synthesize(
    clean_id: &str,
    x: &ImageTensor,
    order: &[Primitive],
    stream: &RngStream,
    config: &EngineConfig,
) -> Result<NoiseSample> {
    let strengths = sample_strengths(&stream.derive("strengths", 0));
    compose(clean_id, x, &strengths, order, stream, config)
}
