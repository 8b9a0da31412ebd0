//! Seeded clean-image textures. Values stay inside `[0.1, 0.9]` so that
//! single-source corruptions are rarely clipped.

use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::invalid;
use crate::math;
use crate::rng::{Draws, RngStream};
use crate::tensor::{conv2d_same, ImageTensor, Kernel2d};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TextureKind {
    Gradient,
    Checker,
    Stripes,
    Blobs,
    /// Random blend of two of the above.
    Mixed,
}

impl TextureKind {
    pub const BASIC: [TextureKind; 4] = [
        TextureKind::Gradient,
        TextureKind::Checker,
        TextureKind::Stripes,
        TextureKind::Blobs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TextureKind::Gradient => "gradient",
            TextureKind::Checker => "checker",
            TextureKind::Stripes => "stripes",
            TextureKind::Blobs => "blobs",
            TextureKind::Mixed => "mixed",
        }
    }
}

impl FromStr for TextureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gradient" => TextureKind::Gradient,
            "checker" => TextureKind::Checker,
            "stripes" => TextureKind::Stripes,
            "blobs" => TextureKind::Blobs,
            "mixed" => TextureKind::Mixed,
            other => return Err(invalid!("unknown texture kind `{}`", other)),
        })
    }
}

/// Two texture families with no kind in common, for domain-shift checks.
pub const FAMILY_GEOMETRIC: [TextureKind; 2] = [TextureKind::Gradient, TextureKind::Checker];
pub const FAMILY_ORGANIC: [TextureKind; 2] = [TextureKind::Stripes, TextureKind::Blobs];

const LO: f64 = 0.1;
const HI: f64 = 0.9;

fn range(d: &mut Draws) -> (f64, f64) {
    let a = LO + (HI - LO) * d.uniform01();
    let b = LO + (HI - LO) * d.uniform01();
    if (a - b).abs() < 0.2 {
        let mid = 0.5 * (a + b);
        ((mid - 0.15).max(LO), (mid + 0.15).min(HI))
    } else if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn plane(kind: TextureKind, h: usize, w: usize, d: &mut Draws) -> Vec<f64> {
    let (lo, hi) = range(d);
    let span = hi - lo;
    let mut out = Vec::with_capacity(h * w);
    match kind {
        TextureKind::Gradient => {
            let theta = 2.0 * core::f64::consts::PI * d.uniform01();
            let (c, s) = (math::cos(theta), math::sin(theta));
            let diag = math::sqrt((h * h + w * w) as f64).max(1.0);
            for y in 0..h {
                for x in 0..w {
                    let t = ((x as f64 - w as f64 / 2.0) * c + (y as f64 - h as f64 / 2.0) * s)
                        / diag
                        + 0.5;
                    out.push(lo + span * t.clamp(0.0, 1.0));
                }
            }
        }
        TextureKind::Checker => {
            let cell = 2 + d.below(7) as usize;
            let oy = d.below(cell as u64) as usize;
            let ox = d.below(cell as u64) as usize;
            for y in 0..h {
                for x in 0..w {
                    let parity = ((y + oy) / cell + (x + ox) / cell) % 2;
                    out.push(if parity == 0 { lo } else { hi });
                }
            }
        }
        TextureKind::Stripes => {
            let theta = core::f64::consts::PI * d.uniform01();
            let period = 3.0 + 9.0 * d.uniform01();
            let phase = 2.0 * core::f64::consts::PI * d.uniform01();
            let (c, s) = (math::cos(theta), math::sin(theta));
            for y in 0..h {
                for x in 0..w {
                    let u = x as f64 * c + y as f64 * s;
                    let t = 0.5 + 0.5 * math::sin(2.0 * core::f64::consts::PI * u / period + phase);
                    out.push(lo + span * t);
                }
            }
        }
        TextureKind::Blobs => {
            let white = ImageTensor::from_fn(1, h, w, |_, _, _| d.uniform01());
            let k = Kernel2d::mean(5).expect("odd");
            let mut smooth = white;
            for _ in 0..3 {
                smooth = conv2d_same(&smooth, &k);
            }
            let data = smooth.data();
            let mn = data.iter().copied().fold(f64::INFINITY, f64::min);
            let mx = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let scale = if mx > mn { 1.0 / (mx - mn) } else { 0.0 };
            for &v in data {
                out.push(lo + span * (v - mn) * scale);
            }
        }
        TextureKind::Mixed => {
            let a = TextureKind::BASIC[d.below(4) as usize];
            let b = TextureKind::BASIC[d.below(4) as usize];
            let wgt = 0.3 + 0.4 * d.uniform01();
            let pa = plane(a, h, w, d);
            let pb = plane(b, h, w, d);
            for (x, y) in pa.iter().zip(&pb) {
                out.push(wgt * x + (1.0 - wgt) * y);
            }
        }
    }
    out
}

/// A `channels × height × width` texture of the given kind.
///
/// Channels share the spatial structure and differ by a small offset.
pub fn texture(
    kind: TextureKind,
    channels: usize,
    height: usize,
    width: usize,
    stream: &RngStream,
) -> ImageTensor {
    let mut d = stream.draws();
    let base = plane(kind, height, width, &mut d);
    let mut data = Vec::with_capacity(channels * base.len());
    for c in 0..channels {
        let offset = if c == 0 {
            0.0
        } else {
            0.1 * (d.uniform01() - 0.5)
        };
        data.extend(base.iter().map(|v| (v + offset).clamp(LO, HI)));
    }
    ImageTensor::new(channels, height, width, data).expect("consistent shape")
}

/// Texture kind for image `index` drawn from `kinds`, cycling.
pub fn kind_for(kinds: &[TextureKind], index: usize) -> TextureKind {
    kinds[index % kinds.len()]
}
