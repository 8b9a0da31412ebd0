//! Counter-based, splittable random streams.
//!
//! A stream is identified by a root seed plus a derivation path of
//! `(label, index)` steps. The path is folded into a 64-bit Philox key, and
//! draws are the Philox4x32-10 encryption of an incrementing 128-bit counter
//! under that key. Two streams with the same `(root_seed, path)` produce the
//! same draws on any platform; siblings differ in their key and so in every
//! block they emit.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::math;

/// Name of the generator recorded in checkpoints and reports.
pub const GENERATOR_ID: &str = "philox4x32-10/fnv1a-path";

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

// Domain separation between the draw counter space and path derivation.
const DERIVE_TWEAK: u64 = 0x6A09_E667_F3BC_C909;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// One Philox4x32-10 block.
pub fn philox4x32(counter: [u32; 4], key: u64) -> [u32; 4] {
    let mut c = counter;
    let mut k0 = key as u32;
    let mut k1 = (key >> 32) as u32;
    for round in 0..10 {
        if round > 0 {
            k0 = k0.wrapping_add(PHILOX_W0);
            k1 = k1.wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0];
    }
    c
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// One derivation step of a stream path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathStep {
    pub label: String,
    pub index: u64,
}

/// An immutable, splittable random stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RngStream {
    root_seed: u64,
    path: Vec<PathStep>,
    key: u64,
}

impl RngStream {
    pub fn new(root_seed: u64) -> Self {
        Self {
            root_seed,
            path: Vec::new(),
            key: root_seed,
        }
    }

    /// Rebuilds a stream from its recorded root seed and path.
    pub fn from_path(root_seed: u64, path: &[PathStep]) -> Self {
        path.iter().fold(Self::new(root_seed), |s, step| {
            s.derive(&step.label, step.index)
        })
    }

    /// Deterministic child stream for `(label, index)`.
    pub fn derive(&self, label: &str, index: u64) -> Self {
        let h = fnv1a(label.as_bytes());
        let block = philox4x32(
            [
                h as u32,
                (h >> 32) as u32,
                index as u32,
                (index >> 32) as u32,
            ],
            self.key ^ DERIVE_TWEAK,
        );
        let mut path = self.path.clone();
        path.push(PathStep {
            label: label.to_string(),
            index,
        });
        Self {
            root_seed: self.root_seed,
            path,
            key: u64::from(block[0]) | (u64::from(block[1]) << 32),
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn path(&self) -> &[PathStep] {
        &self.path
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// A fresh sampler positioned at the start of this stream.
    pub fn draws(&self) -> Draws {
        Draws {
            key: self.key,
            counter: 0,
            buf: [0; 4],
            pos: 4,
            spare_normal: None,
        }
    }
}

impl fmt::Display for RngStream {
    /// `seed` followed by `/label:index` for each step.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root_seed)?;
        for step in &self.path {
            write!(f, "/{}:{}", step.label, step.index)?;
        }
        Ok(())
    }
}

/// Parses the [`Display`](fmt::Display) form of a stream path.
pub fn parse_stream(text: &str) -> Option<RngStream> {
    let mut parts = text.split('/');
    let root: u64 = parts.next()?.parse().ok()?;
    let mut steps = Vec::new();
    for part in parts {
        let (label, index) = part.rsplit_once(':')?;
        steps.push(PathStep {
            label: label.to_string(),
            index: index.parse().ok()?,
        });
    }
    Some(RngStream::from_path(root, &steps))
}

/// Sequential sampler over one stream.
#[derive(Debug, Clone)]
pub struct Draws {
    key: u64,
    counter: u64,
    buf: [u32; 4],
    pos: usize,
    spare_normal: Option<f64>,
}

impl Draws {
    #[inline]
    pub fn next_u32(&mut self) -> u32 {
        if self.pos == 4 {
            let c = self.counter;
            self.buf = philox4x32([c as u32, (c >> 32) as u32, 0, 0], self.key);
            self.counter += 1;
            self.pos = 0;
        }
        let v = self.buf[self.pos];
        self.pos += 1;
        v
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let lo = u64::from(self.next_u32());
        let hi = u64::from(self.next_u32());
        lo | (hi << 32)
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        loop {
            let x = self.next_u64();
            let m = u128::from(x) * u128::from(n);
            let lo = m as u64;
            if lo >= n || lo >= n.wrapping_neg() % n {
                return (m >> 64) as u64;
            }
        }
    }

    /// Standard normal via Box–Muller; the second variate of each pair is cached.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform01();
        let u2 = self.uniform01();
        let r = math::sqrt(-2.0 * math::ln(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare_normal = Some(r * math::sin(theta));
        r * math::cos(theta)
    }

    /// Fisher–Yates shuffle in place.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    pub fn normal(&mut self, mean: f64, stddev: f64) -> f64 {
        mean + stddev * self.standard_normal()
    }

    /// Poisson variate. Inversion below rate 10, PTRS rejection above.
    pub fn poisson(&mut self, rate: f64) -> u64 {
        if rate <= 0.0 || rate.is_nan() {
            return 0;
        }
        if rate < 10.0 {
            self.poisson_inversion(rate)
        } else {
            self.poisson_ptrs(rate)
        }
    }

    fn poisson_inversion(&mut self, rate: f64) -> u64 {
        let u = self.uniform01();
        let mut k = 0u64;
        let mut p = math::exp(-rate);
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= rate / k as f64;
            let next = cdf + p;
            // Tail mass below double resolution.
            if next == cdf {
                break;
            }
            cdf = next;
        }
        k
    }

    // Hörmann (1993), transformed rejection with squeeze.
    fn poisson_ptrs(&mut self, rate: f64) -> u64 {
        let slam = math::sqrt(rate);
        let loglam = math::ln(rate);
        let b = 0.931 + 2.53 * slam;
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let vr = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.uniform01() - 0.5;
            let v = self.uniform01();
            let us = 0.5 - u.abs();
            let k = math::floor((2.0 * a / us + b) * u + rate + 0.43);
            if us >= 0.07 && v <= vr {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = math::ln(v) + math::ln(inv_alpha) - math::ln(a / (us * us) + b);
            let rhs = -rate + k * loglam - math::ln_gamma(k + 1.0);
            if lhs <= rhs {
                return k as u64;
            }
        }
    }
}
