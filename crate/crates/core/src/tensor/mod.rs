//! Dense `f64` tensors and a reverse-mode tape.
//!
//! Every differentiable operation exists twice: as a plain function on
//! [`Tensor`] (used for inference) and as a [`Tape`] method that records the
//! same computation together with whatever its vector-Jacobian product needs.
//! Image tensors are laid out `[batch, channel, x, y]`, row-major.

pub mod fft;

use num_complex::Complex64;

use crate::{Error, Result};

type Accumulate<'a> = dyn FnMut(Var, &mut [Option<Vec<f64>>], &mut dyn FnMut(&mut [f64])) + 'a;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn dims4(&self, what: &str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [b, c, x, y] => Ok([b, c, x, y]),
            _ => Err(Error::ShapeMismatch(format!(
                "{what} expects [batch, channel, x, y], got {:?}",
                self.shape
            ))),
        }
    }

    fn expect_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "{what}: expected {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Forward kernels

/// `out[b,o,:,:] = Σ_c w[o,c] x[b,c,:,:] + bias[o]`.
pub fn pointwise_affine(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [nb, ci, nx, ny] = x.dims4("pointwise_affine")?;
    let co = match w.shape[..] {
        [o, c] if c == ci => o,
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "pointwise_affine: weight {:?} for {ci} input channels",
                w.shape
            )))
        }
    };
    bias.expect_shape(&[co], "pointwise_affine bias")?;
    let p = nx * ny;
    let mut out = vec![0.0; nb * co * p];
    for b in 0..nb {
        for o in 0..co {
            let dst = &mut out[(b * co + o) * p..(b * co + o + 1) * p];
            dst.fill(bias.data[o]);
            for c in 0..ci {
                let wv = w.data[o * ci + c];
                let src = &x.data[(b * ci + c) * p..(b * ci + c + 1) * p];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wv * s;
                }
            }
        }
    }
    Tensor::new(vec![nb, co, nx, ny], out)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `x Φ(x)` with the exact normal CDF.
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| gelu_scalar(v)).collect(),
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    b.expect_shape(&a.shape, "add")?;
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(p, q)| p + q).collect(),
    })
}

/// Spectral weights are `[c_in, c_out, m, m, 2]` with real and imaginary
/// parts interleaved in the last axis.
fn spectral_dims(x: &Tensor, w: &Tensor) -> Result<([usize; 4], usize, usize)> {
    let [nb, ci, nx, ny] = x.dims4("spectral_conv")?;
    let (co, m) = match w.shape[..] {
        [c, o, m1, m2, 2] if c == ci && m1 == m2 => (o, m1),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "spectral weights {:?} for {ci} input channels",
                w.shape
            )))
        }
    };
    if m == 0 || m > nx || m > fft::half_len(ny) {
        return Err(Error::ShapeMismatch(format!(
            "{m} modes do not fit a {nx}x{ny} spectrum"
        )));
    }
    Ok(([nb, ci, nx, ny], co, m))
}

#[inline]
fn weight(w: &Tensor, co: usize, m: usize, c: usize, o: usize, kx: usize, ky: usize) -> Complex64 {
    let base = (((c * co + o) * m + kx) * m + ky) * 2;
    Complex64::new(w.data[base], w.data[base + 1])
}

/// Truncated spectral convolution. Returns the output and the input spectra
/// (`[batch][channel][nx × (ny/2+1)]`, flattened).
pub fn spectral_conv_with_spectra(x: &Tensor, w: &Tensor) -> Result<(Tensor, Vec<Complex64>)> {
    let ([nb, ci, nx, ny], co, m) = spectral_dims(x, w)?;
    let p = nx * ny;
    let hy = fft::half_len(ny);
    let q = nx * hy;
    let mut spectra = Vec::with_capacity(nb * ci * q);
    for b in 0..nb {
        for c in 0..ci {
            spectra.extend(fft::rfft2(&x.data[(b * ci + c) * p..(b * ci + c + 1) * p], nx, ny));
        }
    }
    let mut out = vec![0.0; nb * co * p];
    let mut y_hat = vec![Complex64::new(0.0, 0.0); q];
    for b in 0..nb {
        for o in 0..co {
            y_hat.fill(Complex64::new(0.0, 0.0));
            for c in 0..ci {
                let xs = &spectra[(b * ci + c) * q..(b * ci + c + 1) * q];
                for kx in 0..m {
                    for ky in 0..m {
                        y_hat[kx * hy + ky] += weight(w, co, m, c, o, kx, ky) * xs[kx * hy + ky];
                    }
                }
            }
            out[(b * co + o) * p..(b * co + o + 1) * p].copy_from_slice(&fft::irfft2(&y_hat, nx, ny));
        }
    }
    Ok((Tensor::new(vec![nb, co, nx, ny], out)?, spectra))
}

pub fn spectral_conv(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    spectral_conv_with_spectra(x, w).map(|(y, _)| y)
}

#[inline]
fn reflect(s: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if s < 0 {
        -s
    } else if s >= n {
        2 * (n - 1) - s
    } else {
        s
    };
    r as usize
}

/// Mirror padding of both spatial axes without repeating the edge.
pub fn reflection_pad(x: &Tensor, pad: usize) -> Result<Tensor> {
    let [nb, nc, nx, ny] = x.dims4("reflection_pad")?;
    if pad >= nx || pad >= ny {
        return Err(Error::InvalidArgument(format!(
            "padding {pad} too large for a {nx}x{ny} grid"
        )));
    }
    let (px, py) = (nx + 2 * pad, ny + 2 * pad);
    let mut out = vec![0.0; nb * nc * px * py];
    for plane in 0..nb * nc {
        let src = &x.data[plane * nx * ny..(plane + 1) * nx * ny];
        let dst = &mut out[plane * px * py..(plane + 1) * px * py];
        for i in 0..px {
            let si = reflect(i as isize - pad as isize, nx);
            for j in 0..py {
                let sj = reflect(j as isize - pad as isize, ny);
                dst[i * py + j] = src[si * ny + sj];
            }
        }
    }
    Tensor::new(vec![nb, nc, px, py], out)
}

pub fn crop(x: &Tensor, pad: usize) -> Result<Tensor> {
    let [nb, nc, px, py] = x.dims4("crop")?;
    if 2 * pad >= px || 2 * pad >= py {
        return Err(Error::InvalidArgument(format!(
            "crop {pad} too large for a {px}x{py} grid"
        )));
    }
    let (nx, ny) = (px - 2 * pad, py - 2 * pad);
    let mut out = Vec::with_capacity(nb * nc * nx * ny);
    for plane in 0..nb * nc {
        let src = &x.data[plane * px * py..(plane + 1) * px * py];
        for i in 0..nx {
            let row = (i + pad) * py + pad;
            out.extend_from_slice(&src[row..row + ny]);
        }
    }
    Tensor::new(vec![nb, nc, nx, ny], out)
}

/// `out[b,c] = x[b,c] · scale[c] + shift[c]`.
pub fn channel_affine(x: &Tensor, scale: &[f64], shift: &[f64]) -> Result<Tensor> {
    let [_, nc, nx, ny] = x.dims4("channel_affine")?;
    if scale.len() != nc || shift.len() != nc {
        return Err(Error::ShapeMismatch(format!(
            "channel_affine: {nc} channels, {} scales, {} shifts",
            scale.len(),
            shift.len()
        )));
    }
    let p = nx * ny;
    let data = x
        .data
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let c = (k / p) % nc;
            v * scale[c] + shift[c]
        })
        .collect();
    Ok(Tensor { shape: x.shape.clone(), data })
}

pub fn mul_field(x: &Tensor, field: &Tensor) -> Result<Tensor> {
    field.expect_shape(&x.shape, "mul_field")?;
    Ok(Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().zip(&field.data).map(|(a, b)| a * b).collect(),
    })
}

/// Centered differences along spatial `axis` (0 for x, 1 for y); border
/// entries along that axis are zero.
pub fn fd_grad(x: &Tensor, axis: usize, spacing: f64) -> Result<Tensor> {
    let [_, _, nx, ny] = x.dims4("fd_grad")?;
    check_fd(nx, ny, axis, spacing)?;
    let mut out = vec![0.0; x.len()];
    let inv = 0.5 / spacing;
    for (plane, dst) in out.chunks_mut(nx * ny).enumerate() {
        let src = &x.data[plane * nx * ny..(plane + 1) * nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                dst[i * ny + j] = match axis {
                    0 if i > 0 && i + 1 < nx => (src[(i + 1) * ny + j] - src[(i - 1) * ny + j]) * inv,
                    1 if j > 0 && j + 1 < ny => (src[i * ny + j + 1] - src[i * ny + j - 1]) * inv,
                    _ => 0.0,
                };
            }
        }
    }
    Ok(Tensor { shape: x.shape.clone(), data: out })
}

fn check_fd(nx: usize, ny: usize, axis: usize, spacing: f64) -> Result<()> {
    if axis > 1 {
        return Err(Error::InvalidArgument(format!("fd axis {axis} is not spatial")));
    }
    if nx < 3 || ny < 3 {
        return Err(Error::InvalidArgument(format!(
            "finite differences need at least 3x3 nodes, got {nx}x{ny}"
        )));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidArgument(format!("grid spacing must be positive, got {spacing}")));
    }
    Ok(())
}

/// Per-batch sum of squares over masked pixels. `x` must have one channel.
pub fn masked_sq_norm(x: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let [nb, nc, nx, ny] = x.dims4("masked_sq_norm")?;
    if nc != 1 || mask.len() != nx * ny {
        return Err(Error::ShapeMismatch(format!(
            "masked_sq_norm: {nc} channels on {nx}x{ny}, mask of {}",
            mask.len()
        )));
    }
    let p = nx * ny;
    let data = (0..nb)
        .map(|b| {
            x.data[b * p..(b + 1) * p]
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(v, _)| v * v)
                .sum()
        })
        .collect();
    Tensor::new(vec![nb], data)
}

// ---------------------------------------------------------------------------
// Tape

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Gelu { x: Var },
    Add { a: Var, b: Var },
    Spectral { x: Var, w: Var, spectra: Vec<Complex64> },
    Pad { x: Var, pad: usize },
    Crop { x: Var, pad: usize },
    ChannelAffine { x: Var, scale: Vec<f64> },
    MulField { x: Var, field: Tensor },
    AddField { x: Var },
    FdGrad { x: Var, axis: usize, spacing: f64 },
    MaskedSqNorm { x: Var, mask: Vec<bool> },
    Sum { x: Var },
    Scale { x: Var, factor: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of one computation. A tape is used from one thread.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` for nodes the output does not reach.
pub struct Gradients(Vec<Option<Vec<f64>>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zeros when disconnected.
    pub fn take(&mut self, v: Var, len: usize) -> Vec<f64> {
        self.0
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| vec![0.0; len])
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn pointwise_affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = pointwise_affine(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Affine { x, w, b }))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let y = gelu(self.value(x));
        self.push(y, Op::Gelu { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = add(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn spectral_conv(&mut self, x: Var, w: Var) -> Result<Var> {
        let (y, spectra) = spectral_conv_with_spectra(self.value(x), self.value(w))?;
        Ok(self.push(y, Op::Spectral { x, w, spectra }))
    }

    pub fn reflection_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        let y = reflection_pad(self.value(x), pad)?;
        Ok(self.push(y, Op::Pad { x, pad }))
    }

    pub fn crop(&mut self, x: Var, pad: usize) -> Result<Var> {
        let y = crop(self.value(x), pad)?;
        Ok(self.push(y, Op::Crop { x, pad }))
    }

    pub fn channel_affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let y = channel_affine(self.value(x), scale, shift)?;
        Ok(self.push(y, Op::ChannelAffine { x, scale: scale.to_vec() }))
    }

    /// Elementwise product with a constant field.
    pub fn mul_field(&mut self, x: Var, field: Tensor) -> Result<Var> {
        let y = mul_field(self.value(x), &field)?;
        Ok(self.push(y, Op::MulField { x, field }))
    }

    /// Elementwise sum with a constant field.
    pub fn add_field(&mut self, x: Var, field: &Tensor) -> Result<Var> {
        let y = add(self.value(x), field)?;
        Ok(self.push(y, Op::AddField { x }))
    }

    pub fn fd_grad(&mut self, x: Var, axis: usize, spacing: f64) -> Result<Var> {
        let y = fd_grad(self.value(x), axis, spacing)?;
        Ok(self.push(y, Op::FdGrad { x, axis, spacing }))
    }

    pub fn masked_sq_norm(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let y = masked_sq_norm(self.value(x), mask)?;
        Ok(self.push(y, Op::MaskedSqNorm { x, mask: mask.to_vec() }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x);
        let y = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|a| a * factor).collect(),
        };
        self.push(y, Op::Scale { x, factor })
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(out).shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![1.0]);
        for id in (0..=out.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.propagate(node, &gy, &mut grads);
            grads[id] = Some(gy);
        }
        Ok(Gradients(grads))
    }

    fn propagate(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, grads: &mut [Option<Vec<f64>>], f: &mut dyn FnMut(&mut [f64])| {
            let len = self.nodes[v.0].value.len();
            let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(g);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let [nb, ci, nx, ny] = xv.dims4("affine").expect("recorded shape");
                let co = wv.shape[0];
                let p = nx * ny;
                acc(*x, grads, &mut |gx| {
                    for bi in 0..nb {
                        for o in 0..co {
                            let gyo = &gy[(bi * co + o) * p..(bi * co + o + 1) * p];
                            for c in 0..ci {
                                let wc = wv.data[o * ci + c];
                                let dst = &mut gx[(bi * ci + c) * p..(bi * ci + c + 1) * p];
                                for (d, g) in dst.iter_mut().zip(gyo) {
                                    *d += wc * g;
                                }
                            }
                        }
                    }
                });
                acc(*w, grads, &mut |gw| {
                    for bi in 0..nb {
                        for o in 0..co {
                            let gyo = &gy[(bi * co + o) * p..(bi * co + o + 1) * p];
                            for c in 0..ci {
                                let xc = &xv.data[(bi * ci + c) * p..(bi * ci + c + 1) * p];
                                gw[o * ci + c] += gyo.iter().zip(xc).map(|(g, x)| g * x).sum::<f64>();
                            }
                        }
                    }
                });
                acc(*b, grads, &mut |gb| {
                    for bi in 0..nb {
                        for o in 0..co {
                            gb[o] += gy[(bi * co + o) * p..(bi * co + o + 1) * p].iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::Gelu { x } => {
                let xv = self.value(*x);
                acc(*x, grads, &mut |gx| {
                    for ((d, g), &v) in gx.iter_mut().zip(gy).zip(&xv.data) {
                        *d += g * (normal_cdf(v) + v * normal_pdf(v));
                    }
                });
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    acc(*v, grads, &mut |g| g.iter_mut().zip(gy).for_each(|(d, s)| *d += s));
                }
            }
            Op::Spectral { x, w, spectra } => self.spectral_backward(*x, *w, spectra, gy, &mut acc, grads),
            Op::Pad { x, pad } => {
                let [nb, nc, nx, ny] = self.value(*x).dims4("pad").expect("recorded shape");
                let (px, py) = (nx + 2 * pad, ny + 2 * pad);
                acc(*x, grads, &mut |gx| {
                    for plane in 0..nb * nc {
                        for i in 0..px {
                            let si = reflect(i as isize - *pad as isize, nx);
                            for j in 0..py {
                                let sj = reflect(j as isize - *pad as isize, ny);
                                gx[plane * nx * ny + si * ny + sj] += gy[plane * px * py + i * py + j];
                            }
                        }
                    }
                });
            }
            Op::Crop { x, pad } => {
                let [nb, nc, px, py] = self.value(*x).dims4("crop").expect("recorded shape");
                let (nx, ny) = (px - 2 * pad, py - 2 * pad);
                acc(*x, grads, &mut |gx| {
                    for plane in 0..nb * nc {
                        for i in 0..nx {
                            for j in 0..ny {
                                gx[plane * px * py + (i + pad) * py + j + pad] += gy[plane * nx * ny + i * ny + j];
                            }
                        }
                    }
                });
            }
            Op::ChannelAffine { x, scale } => {
                let [_, nc, nx, ny] = self.value(*x).dims4("channel_affine").expect("recorded shape");
                let p = nx * ny;
                acc(*x, grads, &mut |gx| {
                    for (k, (d, g)) in gx.iter_mut().zip(gy).enumerate() {
                        *d += g * scale[(k / p) % nc];
                    }
                });
            }
            Op::MulField { x, field } => {
                acc(*x, grads, &mut |gx| {
                    for ((d, g), f) in gx.iter_mut().zip(gy).zip(&field.data) {
                        *d += g * f;
                    }
                });
            }
            Op::AddField { x } => acc(*x, grads, &mut |gx| gx.iter_mut().zip(gy).for_each(|(d, s)| *d += s)),
            Op::FdGrad { x, axis, spacing } => {
                let [_, _, nx, ny] = self.value(*x).dims4("fd_grad").expect("recorded shape");
                let inv = 0.5 / spacing;
                acc(*x, grads, &mut |gx| {
                    for (plane, dst) in gx.chunks_mut(nx * ny).enumerate() {
                        let g = &gy[plane * nx * ny..(plane + 1) * nx * ny];
                        for i in 0..nx {
                            for j in 0..ny {
                                let v = g[i * ny + j] * inv;
                                match axis {
                                    0 if i > 0 && i + 1 < nx => {
                                        dst[(i + 1) * ny + j] += v;
                                        dst[(i - 1) * ny + j] -= v;
                                    }
                                    1 if j > 0 && j + 1 < ny => {
                                        dst[i * ny + j + 1] += v;
                                        dst[i * ny + j - 1] -= v;
                                    }
                                    _ => {}
                                }
                            }
                        }
                    }
                });
            }
            Op::MaskedSqNorm { x, mask } => {
                let xv = self.value(*x);
                let p = mask.len();
                acc(*x, grads, &mut |gx| {
                    for (k, d) in gx.iter_mut().enumerate() {
                        if mask[k % p] {
                            *d += 2.0 * xv.data[k] * gy[k / p];
                        }
                    }
                });
            }
            Op::Sum { x } => acc(*x, grads, &mut |gx| gx.iter_mut().for_each(|d| *d += gy[0])),
            Op::Scale { x, factor } => {
                acc(*x, grads, &mut |gx| gx.iter_mut().zip(gy).for_each(|(d, g)| *d += g * factor))
            }
        }
    }

    fn spectral_backward(
        &self,
        x: Var,
        w: Var,
        spectra: &[Complex64],
        gy: &[f64],
        acc: &mut Accumulate,
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (xv, wv) = (self.value(x), self.value(w));
        let ([nb, ci, nx, ny], co, m) = spectral_dims(xv, wv).expect("recorded shape");
        let p = nx * ny;
        let hy = fft::half_len(ny);
        let q = nx * hy;
        let n = p as f64;
        // Gradient with respect to the retained output modes.
        let mut gy_hat = vec![Complex64::new(0.0, 0.0); nb * co * q];
        for plane in 0..nb * co {
            let g = fft::rfft2(&gy[plane * p..(plane + 1) * p], nx, ny);
            for kx in 0..m {
                for ky in 0..m {
                    gy_hat[plane * q + kx * hy + ky] = g[kx * hy + ky] * (fft::column_weight(ky, ny) / n);
                }
            }
        }
        acc(w, grads, &mut |gw| {
            for b in 0..nb {
                for c in 0..ci {
                    let xs = &spectra[(b * ci + c) * q..(b * ci + c + 1) * q];
                    for o in 0..co {
                        let gs = &gy_hat[(b * co + o) * q..(b * co + o + 1) * q];
                        for kx in 0..m {
                            for ky in 0..m {
                                let k = kx * hy + ky;
                                let gwk = gs[k] * xs[k].conj();
                                let base = (((c * co + o) * m + kx) * m + ky) * 2;
                                gw[base] += gwk.re;
                                gw[base + 1] += gwk.im;
                            }
                        }
                    }
                }
            }
        });
        acc(x, grads, &mut |gx| {
            let mut gx_hat = vec![Complex64::new(0.0, 0.0); q];
            for b in 0..nb {
                for c in 0..ci {
                    gx_hat.fill(Complex64::new(0.0, 0.0));
                    for o in 0..co {
                        let gs = &gy_hat[(b * co + o) * q..(b * co + o + 1) * q];
                        for kx in 0..m {
                            for ky in 0..m {
                                let k = kx * hy + ky;
                                gx_hat[k] += weight(wv, co, m, c, o, kx, ky).conj() * gs[k];
                            }
                        }
                    }
                    for kx in 0..m {
                        for ky in 0..m {
                            gx_hat[kx * hy + ky] /= fft::column_weight(ky, ny);
                        }
                    }
                    let back = fft::irfft2(&gx_hat, nx, ny);
                    let dst = &mut gx[(b * ci + c) * p..(b * ci + c + 1) * p];
                    for (d, v) in dst.iter_mut().zip(back) {
                        *d += v * n;
                    }
                }
            }
        });
    }
}
