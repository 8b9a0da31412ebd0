//! `C×H×W` image tensors and the handful of operations the engine needs.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::Result;

/// A row-major `channels × height × width` image. Values are `f64`
/// internally; file storage narrows to `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(invalid!(
                "data length {} does not match shape {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Plane of one channel.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    /// Element-wise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(invalid!(
                "shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        })
    }

    /// `height × width` crop with top-left corner `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(invalid!(
                "crop {}x{}@({},{}) exceeds {}x{}",
                height,
                width,
                top,
                left,
                self.height,
                self.width
            ));
        }
        Ok(Self::from_fn(self.channels, height, width, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }

    /// Pads up to at least `height × width` by reflection about the borders.
    pub fn reflect_pad_to(&self, height: usize, width: usize) -> Self {
        let h = height.max(self.height);
        let w = width.max(self.width);
        Self::from_fn(self.channels, h, w, |c, y, x| {
            self.get(
                c,
                reflect_index(y as isize, self.height),
                reflect_index(x as isize, self.width),
            )
        })
    }
}

/// Every value forced into `[0, 1]`.
pub fn clamp01(x: &ImageTensor) -> ImageTensor {
    let mut out = x.clone();
    clamp01_in_place(&mut out);
    out
}

pub fn clamp01_in_place(x: &mut ImageTensor) {
    for v in x.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Mirror index into `0..n` without repeating the edge sample
/// (`-1 → 1`, `n → n-2`), folding repeatedly for offsets wider than `n`.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// A dense 2-D kernel with odd side lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2d {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Kernel2d {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows % 2 == 0 || cols % 2 == 0 {
            return Err(invalid!("kernel sides must be odd, got {}x{}", rows, cols));
        }
        if data.len() != rows * cols {
            return Err(invalid!(
                "kernel data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Outer product `col ⊗ row`.
    pub fn separable(col: &[f64], row: &[f64]) -> Result<Self> {
        let data = col
            .iter()
            .flat_map(|&a| row.iter().map(move |&b| a * b))
            .collect();
        Self::new(col.len(), row.len(), data)
    }

    /// `n × n` box filter summing to one.
    pub fn mean(n: usize) -> Result<Self> {
        let w = 1.0 / (n * n) as f64;
        Self::new(n, n, vec![w; n * n])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `Σ K(a,b)·K(a+dy, b+dx)` over overlapping taps.
    pub fn autocorrelation(&self, dy: isize, dx: isize) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.rows as isize {
            for c in 0..self.cols as isize {
                let (r2, c2) = (r + dy, c + dx);
                if r2 >= 0 && c2 >= 0 && (r2 as usize) < self.rows && (c2 as usize) < self.cols {
                    acc += self.at(r as usize, c as usize) * self.at(r2 as usize, c2 as usize);
                }
            }
        }
        acc
    }
}

/// Same-size 2-D correlation of every channel with `kernel`, reflect padding.
///
/// The kernel is applied without flipping; every kernel used in this crate
/// is symmetric, where correlation and convolution coincide.
pub fn conv2d_same(x: &ImageTensor, kernel: &Kernel2d) -> ImageTensor {
    let (ch, h, w) = x.shape();
    let ry = (kernel.rows / 2) as isize;
    let rx = (kernel.cols / 2) as isize;
    let mut out = vec![0.0; x.len()];
    for c in 0..ch {
        let plane = x.channel(c);
        let dst = &mut out[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for ky in 0..kernel.rows {
                    let sy = reflect_index(y as isize + ky as isize - ry, h);
                    let row = &plane[sy * w..(sy + 1) * w];
                    let krow = &kernel.data[ky * kernel.cols..(ky + 1) * kernel.cols];
                    for (kx, &kv) in krow.iter().enumerate() {
                        let sx = reflect_index(xx as isize + kx as isize - rx, w);
                        acc += kv * row[sx];
                    }
                }
                dst[y * w + xx] = acc;
            }
        }
    }
    ImageTensor {
        channels: ch,
        height: h,
        width: w,
        data: out,
    }
}
