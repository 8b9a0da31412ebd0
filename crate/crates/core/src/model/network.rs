//! Forward and backward passes over flat parameter vectors.
//!
//! Parameters live in one `Vec<f64>` per block (encoder, head); the layout
//! structs below know the offsets. Backward passes accumulate into a
//! gradient buffer of the same layout.

use alloc::vec;
use alloc::vec::Vec;

use super::config::{Activation, EncoderConfig, InputFilter};
use crate::error::invalid;
use crate::math;
use crate::rng::RngStream;
use crate::tensor::{conv2d_same, ImageTensor, Kernel2d};
use crate::Result;

const KERNEL: usize = 3;

#[inline]
fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Tanh => math::tanh(x),
        Activation::Softplus => {
            if x > 30.0 {
                x
            } else {
                math::ln_1p(math::exp(x))
            }
        }
        Activation::Relu => x.max(0.0),
    }
}

/// Derivative given the pre-activation `x` and output `y`.
#[inline]
fn act_grad(a: Activation, x: f64, y: f64) -> f64 {
    match a {
        Activation::Tanh => 1.0 - y * y,
        Activation::Softplus => math::sigmoid(x),
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[inline]
fn conv_out(n: usize) -> usize {
    n.div_ceil(2)
}

#[derive(Debug, Clone, Copy)]
struct ConvLayout {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    weight: usize,
    bias: usize,
}

impl ConvLayout {
    fn oh(&self) -> usize {
        conv_out(self.h)
    }
    fn ow(&self) -> usize {
        conv_out(self.w)
    }
    fn n_params(&self) -> usize {
        self.cout * self.cin * KERNEL * KERNEL + self.cout
    }

    /// 3×3, stride 2, zero padding 1.
    fn forward(&self, p: &[f64], input: &[f64], out: &mut [f64]) {
        let (oh, ow) = (self.oh(), self.ow());
        let w = &p[self.weight..self.weight + self.cout * self.cin * 9];
        let b = &p[self.bias..self.bias + self.cout];
        for o in 0..self.cout {
            let dst = &mut out[o * oh * ow..(o + 1) * oh * ow];
            dst.fill(b[o]);
            for i in 0..self.cin {
                let src = &input[i * self.h * self.w..(i + 1) * self.h * self.w];
                let k = &w[(o * self.cin + i) * 9..(o * self.cin + i + 1) * 9];
                for oy in 0..oh {
                    for ky in 0..KERNEL {
                        let sy = (2 * oy + ky) as isize - 1;
                        if sy < 0 || sy as usize >= self.h {
                            continue;
                        }
                        let row = &src[sy as usize * self.w..(sy as usize + 1) * self.w];
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for kx in 0..KERNEL {
                                let sx = (2 * ox + kx) as isize - 1;
                                if sx >= 0 && (sx as usize) < self.w {
                                    acc += k[ky * 3 + kx] * row[sx as usize];
                                }
                            }
                            dst[oy * ow + ox] += acc;
                        }
                    }
                }
            }
        }
    }

    fn backward(
        &self,
        p: &[f64],
        input: &[f64],
        grad_out: &[f64],
        grad_p: &mut [f64],
        mut grad_in: Option<&mut [f64]>,
    ) {
        let (oh, ow) = (self.oh(), self.ow());
        for o in 0..self.cout {
            let g = &grad_out[o * oh * ow..(o + 1) * oh * ow];
            grad_p[self.bias + o] += g.iter().sum::<f64>();
            for i in 0..self.cin {
                let src = &input[i * self.h * self.w..(i + 1) * self.h * self.w];
                let kbase = self.weight + (o * self.cin + i) * 9;
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let mut acc = 0.0;
                        let wv = p[kbase + ky * 3 + kx];
                        for oy in 0..oh {
                            let sy = (2 * oy + ky) as isize - 1;
                            if sy < 0 || sy as usize >= self.h {
                                continue;
                            }
                            for ox in 0..ow {
                                let sx = (2 * ox + kx) as isize - 1;
                                if sx < 0 || sx as usize >= self.w {
                                    continue;
                                }
                                let si = sy as usize * self.w + sx as usize;
                                let gv = g[oy * ow + ox];
                                acc += gv * src[si];
                                if let Some(gi) = grad_in.as_deref_mut() {
                                    gi[i * self.h * self.w + si] += gv * wv;
                                }
                            }
                        }
                        grad_p[kbase + ky * 3 + kx] += acc;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct DenseLayout {
    nin: usize,
    nout: usize,
    weight: usize,
    bias: usize,
}

impl DenseLayout {
    fn n_params(&self) -> usize {
        self.nin * self.nout + self.nout
    }

    fn forward(&self, p: &[f64], input: &[f64], out: &mut [f64]) {
        for o in 0..self.nout {
            let row = &p[self.weight + o * self.nin..self.weight + (o + 1) * self.nin];
            out[o] = p[self.bias + o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    fn backward(
        &self,
        p: &[f64],
        input: &[f64],
        grad_out: &[f64],
        grad_p: &mut [f64],
        grad_in: Option<&mut [f64]>,
    ) {
        for o in 0..self.nout {
            let g = grad_out[o];
            grad_p[self.bias + o] += g;
            let wrow = self.weight + o * self.nin;
            for (k, x) in input.iter().enumerate() {
                grad_p[wrow + k] += g * x;
            }
        }
        if let Some(gi) = grad_in {
            for o in 0..self.nout {
                let g = grad_out[o];
                let row = &p[self.weight + o * self.nin..self.weight + (o + 1) * self.nin];
                for (k, w) in row.iter().enumerate() {
                    gi[k] += g * w;
                }
            }
        }
    }
}

/// Parameter layout of the encoder.
#[derive(Debug, Clone)]
pub struct EncoderNet {
    activation: Activation,
    filter: InputFilter,
    normalize: bool,
    channels: usize,
    size: usize,
    conv1: ConvLayout,
    conv2: ConvLayout,
    fc1: DenseLayout,
    fc2: DenseLayout,
    n_params: usize,
}

/// Intermediate values from one encoder forward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    input: Vec<f64>,
    c1_pre: Vec<f64>,
    c1: Vec<f64>,
    c2_pre: Vec<f64>,
    c2: Vec<f64>,
    pooled: Vec<f64>,
    f1_pre: Vec<f64>,
    f1: Vec<f64>,
    raw: Vec<f64>,
    norm: f64,
    /// The encoder output (normalized if configured).
    pub embedding: Vec<f64>,
}

impl EncoderNet {
    pub fn new(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let [c1, c2] = cfg.conv_channels;
        let s = cfg.input_size;
        let mut off = 0;
        let cin = cfg.input_channels * cfg.input_filter.planes();
        let conv1 = ConvLayout {
            cin,
            cout: c1,
            h: s,
            w: s,
            weight: off,
            bias: off + c1 * cin * 9,
        };
        off += conv1.n_params();
        let conv2 = ConvLayout {
            cin: c1,
            cout: c2,
            h: conv_out(s),
            w: conv_out(s),
            weight: off,
            bias: off + c2 * c1 * 9,
        };
        off += conv2.n_params();
        let fc1 = DenseLayout {
            nin: c2,
            nout: cfg.hidden_dim,
            weight: off,
            bias: off + c2 * cfg.hidden_dim,
        };
        off += fc1.n_params();
        let fc2 = DenseLayout {
            nin: cfg.hidden_dim,
            nout: cfg.embed_dim,
            weight: off,
            bias: off + cfg.hidden_dim * cfg.embed_dim,
        };
        off += fc2.n_params();
        Ok(Self {
            activation: cfg.activation,
            filter: cfg.input_filter,
            normalize: cfg.normalize,
            channels: cfg.input_channels,
            size: s,
            conv1,
            conv2,
            fc1,
            fc2,
            n_params: off,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn embed_dim(&self) -> usize {
        self.fc2.nout
    }

    /// LeCun-normal weights (variance `1/fan_in`) and zero biases.
    pub fn init(&self, stream: &RngStream) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        let mut d = stream.derive("encoder", 0).draws();
        let mut fill = |start: usize, len: usize, fan_in: usize| {
            let sd = 1.0 / math::sqrt(fan_in as f64);
            for v in &mut p[start..start + len] {
                *v = sd * d.standard_normal();
            }
        };
        fill(
            self.conv1.weight,
            self.conv1.cout * self.conv1.cin * 9,
            self.conv1.cin * 9,
        );
        fill(
            self.conv2.weight,
            self.conv2.cout * self.conv2.cin * 9,
            self.conv2.cin * 9,
        );
        fill(self.fc1.weight, self.fc1.nin * self.fc1.nout, self.fc1.nin);
        fill(self.fc2.weight, self.fc2.nin * self.fc2.nout, self.fc2.nin);
        p
    }

    pub fn check_input(&self, x: &ImageTensor) -> Result<()> {
        if x.shape() != (self.channels, self.size, self.size) {
            return Err(invalid!(
                "encoder expects {}x{}x{}, got {:?}",
                self.channels,
                self.size,
                self.size,
                x.shape()
            ));
        }
        Ok(())
    }

    pub fn forward(&self, p: &[f64], x: &ImageTensor) -> Result<EncoderTrace> {
        self.check_input(x)?;
        let centered = || x.data().iter().map(|v| v - 0.5);
        let highpass = || -> Result<Vec<f64>> {
            let local = conv2d_same(x, &Kernel2d::mean(3)?);
            Ok(x.data()
                .iter()
                .zip(local.data())
                .map(|(v, m)| v - m)
                .collect())
        };
        let input: Vec<f64> = match self.filter {
            InputFilter::Centered => centered().collect(),
            InputFilter::HighPass => highpass()?,
            InputFilter::Stacked => centered().chain(highpass()?).collect(),
        };
        let a = self.activation;
        let mut c1_pre = vec![0.0; self.conv1.cout * self.conv1.oh() * self.conv1.ow()];
        self.conv1.forward(p, &input, &mut c1_pre);
        let c1: Vec<f64> = c1_pre.iter().map(|&v| act(a, v)).collect();
        let mut c2_pre = vec![0.0; self.conv2.cout * self.conv2.oh() * self.conv2.ow()];
        self.conv2.forward(p, &c1, &mut c2_pre);
        let c2: Vec<f64> = c2_pre.iter().map(|&v| act(a, v)).collect();
        let plane = self.conv2.oh() * self.conv2.ow();
        let pooled: Vec<f64> = (0..self.conv2.cout)
            .map(|o| c2[o * plane..(o + 1) * plane].iter().sum::<f64>() / plane as f64)
            .collect();
        let mut f1_pre = vec![0.0; self.fc1.nout];
        self.fc1.forward(p, &pooled, &mut f1_pre);
        let f1: Vec<f64> = f1_pre.iter().map(|&v| act(a, v)).collect();
        let mut raw = vec![0.0; self.fc2.nout];
        self.fc2.forward(p, &f1, &mut raw);
        let norm = math::sqrt(raw.iter().map(|v| v * v).sum::<f64>());
        let embedding = if self.normalize {
            let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
            raw.iter().map(|v| v * inv).collect()
        } else {
            raw.clone()
        };
        Ok(EncoderTrace {
            input,
            c1_pre,
            c1,
            c2_pre,
            c2,
            pooled,
            f1_pre,
            f1,
            raw,
            norm,
            embedding,
        })
    }

    /// Accumulates `∂L/∂params` given `∂L/∂embedding`.
    pub fn backward(
        &self,
        p: &[f64],
        t: &EncoderTrace,
        grad_embedding: &[f64],
        grad_p: &mut [f64],
    ) {
        let a = self.activation;
        let g_raw: Vec<f64> = if self.normalize && t.norm > 0.0 {
            // d(u/|u|) = (I − e eᵀ)/|u|
            let dot: f64 = t
                .embedding
                .iter()
                .zip(grad_embedding)
                .map(|(e, g)| e * g)
                .sum();
            t.embedding
                .iter()
                .zip(grad_embedding)
                .map(|(e, g)| (g - e * dot) / t.norm)
                .collect()
        } else {
            grad_embedding.to_vec()
        };
        let _ = &t.raw;
        let mut g_f1 = vec![0.0; self.fc1.nout];
        self.fc2.backward(p, &t.f1, &g_raw, grad_p, Some(&mut g_f1));
        for ((g, &x), &y) in g_f1.iter_mut().zip(&t.f1_pre).zip(&t.f1) {
            *g *= act_grad(a, x, y);
        }
        let mut g_pooled = vec![0.0; self.fc1.nin];
        self.fc1
            .backward(p, &t.pooled, &g_f1, grad_p, Some(&mut g_pooled));
        let plane = self.conv2.oh() * self.conv2.ow();
        let mut g_c2 = vec![0.0; t.c2.len()];
        for o in 0..self.conv2.cout {
            let g = g_pooled[o] / plane as f64;
            for k in o * plane..(o + 1) * plane {
                g_c2[k] = g * act_grad(a, t.c2_pre[k], t.c2[k]);
            }
        }
        let mut g_c1 = vec![0.0; t.c1.len()];
        self.conv2
            .backward(p, &t.c1, &g_c2, grad_p, Some(&mut g_c1));
        for ((g, &x), &y) in g_c1.iter_mut().zip(&t.c1_pre).zip(&t.c1) {
            *g *= act_grad(a, x, y);
        }
        self.conv1.backward(p, &t.input, &g_c1, grad_p, None);
    }
}

/// Parameter layout of the quantification head.
#[derive(Debug, Clone)]
pub struct HeadNet {
    activation: Activation,
    hidden: Option<DenseLayout>,
    out: DenseLayout,
    n_params: usize,
}

#[derive(Debug, Clone)]
pub struct HeadTrace {
    input: Vec<f64>,
    h_pre: Vec<f64>,
    h: Vec<f64>,
    /// Logistic outputs in `[0, 1]`.
    pub output: [f64; 6],
}

impl HeadNet {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let mut off = 0;
        let hidden = (cfg.head_hidden > 0).then(|| {
            let l = DenseLayout {
                nin: cfg.embed_dim,
                nout: cfg.head_hidden,
                weight: 0,
                bias: cfg.embed_dim * cfg.head_hidden,
            };
            off += l.n_params();
            l
        });
        let nin = hidden.map_or(cfg.embed_dim, |h| h.nout);
        let out = DenseLayout {
            nin,
            nout: 6,
            weight: off,
            bias: off + nin * 6,
        };
        off += out.n_params();
        Self {
            activation: cfg.activation,
            hidden,
            out,
            n_params: off,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Weights scaled for unit-norm inputs; output biases start at the logit
    /// of 1/6 so an untrained head predicts the mean softmax strength.
    pub fn init(&self, stream: &RngStream) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        let mut d = stream.derive("head", 0).draws();
        if let Some(h) = self.hidden {
            for v in &mut p[h.weight..h.weight + h.nin * h.nout] {
                *v = d.standard_normal();
            }
        }
        let sd = 1.0 / math::sqrt(self.out.nin as f64);
        for v in &mut p[self.out.weight..self.out.weight + self.out.nin * 6] {
            *v = sd * d.standard_normal();
        }
        let logit = math::ln(1.0 / 5.0);
        for v in &mut p[self.out.bias..self.out.bias + 6] {
            *v = logit;
        }
        p
    }

    pub fn forward(&self, p: &[f64], e: &[f64]) -> HeadTrace {
        let (h_pre, h) = match self.hidden {
            Some(l) => {
                let mut pre = vec![0.0; l.nout];
                l.forward(p, e, &mut pre);
                let post = pre.iter().map(|&v| act(self.activation, v)).collect();
                (pre, post)
            }
            None => (Vec::new(), e.to_vec()),
        };
        let mut z = [0.0; 6];
        self.out.forward(p, &h, &mut z);
        HeadTrace {
            input: e.to_vec(),
            h_pre,
            h,
            output: z.map(math::sigmoid),
        }
    }

    /// Accumulates head gradients from `∂L/∂output`; returns `∂L/∂embedding`.
    pub fn backward(
        &self,
        p: &[f64],
        t: &HeadTrace,
        grad_out: &[f64; 6],
        grad_p: &mut [f64],
    ) -> Vec<f64> {
        let g_z: Vec<f64> = grad_out
            .iter()
            .zip(&t.output)
            .map(|(g, y)| g * y * (1.0 - y))
            .collect();
        let mut g_h = vec![0.0; self.out.nin];
        self.out.backward(p, &t.h, &g_z, grad_p, Some(&mut g_h));
        match self.hidden {
            Some(l) => {
                for ((g, &x), &y) in g_h.iter_mut().zip(&t.h_pre).zip(&t.h) {
                    *g *= act_grad(self.activation, x, y);
                }
                let mut g_e = vec![0.0; l.nin];
                l.backward(p, &t.input, &g_h, grad_p, Some(&mut g_e));
                g_e
            }
            None => g_h,
        }
    }
}
