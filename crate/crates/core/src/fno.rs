//! Fourier neural operator over nodal grids and its checkpoint format.
//!
//! Layer sequence: stack `(f, φ, g)` → standardize → lift → reflection pad →
//! four Fourier layers `gelu(spectral(x) + affine(x))` → crop → affine to
//! `n_q` channels → gelu → affine to one channel → unstandardize.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::FieldGrid;
use crate::tensor::{self, Tape, Tensor, Var};
use crate::{Error, Result};

pub const N_LAYERS: usize = 4;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PHIFNOCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FnoHyperparams {
    /// Hidden channels.
    pub n_d: usize,
    /// Retained Fourier modes per axis.
    pub modes: usize,
    /// Width of the projection hidden layer.
    pub n_q: usize,
    pub c_in: usize,
    pub pad: usize,
    /// Pad and crop around every Fourier layer instead of once.
    pub pad_per_layer: bool,
    /// Output is `u` directly instead of `w` with `u = φ w + g`.
    pub predict_u: bool,
}

impl Default for FnoHyperparams {
    fn default() -> Self {
        Self {
            n_d: 20,
            modes: 10,
            n_q: 128,
            c_in: 3,
            pad: 8,
            pad_per_layer: false,
            predict_u: false,
        }
    }
}

impl FnoHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_d == 0 || self.modes == 0 || self.n_q == 0 || self.c_in == 0 {
            return Err(Error::InvalidArgument(format!(
                "FNO widths and mode count must be at least 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Checks that an `nx × ny` input can be processed.
    pub fn check_grid(&self, nx: usize, ny: usize) -> Result<()> {
        if self.pad >= nx || self.pad >= ny {
            return Err(Error::InvalidArgument(format!(
                "padding {} too large for a {nx}x{ny} grid",
                self.pad
            )));
        }
        let (px, py) = (nx + 2 * self.pad, ny + 2 * self.pad);
        if self.modes > px.min(py) / 2 {
            return Err(Error::InvalidArgument(format!(
                "{} modes exceed half of the padded {px}x{py} grid",
                self.modes
            )));
        }
        Ok(())
    }
}

/// Number of trainable scalars; complex weights count twice.
pub fn param_count(h: &FnoHyperparams) -> usize {
    let (nd, m, nq) = (h.n_d, h.modes, h.n_q);
    (h.c_in + 1) * nd + N_LAYERS * (2 * nd * nd * m * m + nd * nd + nd) + (nd + 2) * nq + 1
}

/// Names and shapes of every parameter tensor, in blob order.
pub fn param_layout(h: &FnoHyperparams) -> Vec<(String, Vec<usize>)> {
    let (nd, m, nq) = (h.n_d, h.modes, h.n_q);
    let mut out = vec![
        ("lift.weight".to_string(), vec![nd, h.c_in]),
        ("lift.bias".to_string(), vec![nd]),
    ];
    for l in 0..N_LAYERS {
        out.push((format!("layer{l}.spectral"), vec![nd, nd, m, m, 2]));
        out.push((format!("layer{l}.weight"), vec![nd, nd]));
        out.push((format!("layer{l}.bias"), vec![nd]));
    }
    out.push(("proj1.weight".to_string(), vec![nq, nd]));
    out.push(("proj1.bias".to_string(), vec![nq]));
    out.push(("proj2.weight".to_string(), vec![1, nq]));
    out.push(("proj2.bias".to_string(), vec![1]));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: f64,
    pub output_std: f64,
}

impl ChannelStats {
    /// Identity normalization for `c_in` channels.
    pub fn identity(c_in: usize) -> Self {
        Self {
            input_mean: vec![0.0; c_in],
            input_std: vec![1.0; c_in],
            output_mean: 0.0,
            output_std: 1.0,
        }
    }

    pub fn validate(&self, c_in: usize) -> Result<()> {
        if self.input_mean.len() != c_in || self.input_std.len() != c_in {
            return Err(Error::ShapeMismatch(format!(
                "channel stats cover {} channels, model has {c_in}",
                self.input_mean.len()
            )));
        }
        let all_std = self.input_std.iter().chain(std::iter::once(&self.output_std));
        let all_mean = self.input_mean.iter().chain(std::iter::once(&self.output_mean));
        if all_std.clone().any(|s| !(*s > 0.0 && s.is_finite())) || all_mean.clone().any(|m| !m.is_finite()) {
            return Err(Error::DegenerateStats("non-positive or non-finite normalization".into()));
        }
        Ok(())
    }
}

/// One training sample as seen by [`compute_channel_stats`].
pub struct ChannelSample<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub output: &'a [f64],
    /// Pixels inside Ω_h.
    pub mask: &'a [bool],
}

fn pooled(values: impl Iterator<Item = f64> + Clone, what: &str) -> Result<(f64, f64)> {
    let (mut n, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no pixels inside the domain".into()));
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return Err(Error::DegenerateStats(format!("{what} has zero variance inside the domain")));
    }
    Ok((mean, std))
}

/// Pooled mean and population std over the masked pixels of all samples.
pub fn compute_channel_stats(samples: &[ChannelSample<'_>]) -> Result<ChannelStats> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("channel stats need at least one sample".into()))?;
    let c_in = first.inputs.len();
    for s in samples {
        let p = s.mask.len();
        if s.inputs.len() != c_in || s.output.len() != p || s.inputs.iter().any(|c| c.len() != p) {
            return Err(Error::ShapeMismatch("channel stats samples disagree in shape".into()));
        }
    }
    // `None` selects the output channel.
    let masked = |channel: Option<usize>| {
        let it = samples.iter().flat_map(move |s| {
            let values = channel.map_or(s.output, |c| s.inputs[c]);
            values.iter().zip(s.mask).filter(|(_, &m)| m).map(|(v, _)| *v)
        });
        let what = channel.map_or("output channel".to_string(), |c| format!("input channel {c}"));
        pooled(it, &what)
    };
    let mut input_mean = Vec::with_capacity(c_in);
    let mut input_std = Vec::with_capacity(c_in);
    for c in 0..c_in {
        let (m, s) = masked(Some(c))?;
        input_mean.push(m);
        input_std.push(s);
    }
    let (output_mean, output_std) = masked(None)?;
    Ok(ChannelStats {
        input_mean,
        input_std,
        output_mean,
        output_std,
    })
}

fn standardize_coeffs(stats: &ChannelStats) -> (Vec<f64>, Vec<f64>) {
    let scale: Vec<f64> = stats.input_std.iter().map(|s| 1.0 / s).collect();
    let shift = stats.input_mean.iter().zip(&stats.input_std).map(|(m, s)| -m / s).collect();
    (scale, shift)
}

pub fn standardize(x: &Tensor, stats: &ChannelStats) -> Result<Tensor> {
    let (scale, shift) = standardize_coeffs(stats);
    tensor::channel_affine(x, &scale, &shift)
}

/// Inverse of [`standardize`] for the input channels.
pub fn destandardize_inputs(x: &Tensor, stats: &ChannelStats) -> Result<Tensor> {
    tensor::channel_affine(x, &stats.input_std, &stats.input_mean)
}

/// Maps the one-channel network output back to physical units.
pub fn unstandardize(y: &Tensor, stats: &ChannelStats) -> Result<Tensor> {
    tensor::channel_affine(y, &[stats.output_std], &[stats.output_mean])
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierLayer {
    /// `[n_d, n_d, m, m, 2]`, real and imaginary parts interleaved.
    pub spectral: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnoParams {
    pub hyper: FnoHyperparams,
    pub stats: ChannelStats,
    pub lift_weight: Tensor,
    pub lift_bias: Tensor,
    pub layers: Vec<FourierLayer>,
    pub proj1_weight: Tensor,
    pub proj1_bias: Tensor,
    pub proj2_weight: Tensor,
    pub proj2_bias: Tensor,
}

impl FnoParams {
    /// Parameter tensors in blob order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.lift_weight, &self.lift_bias];
        for l in &self.layers {
            out.extend([&l.spectral, &l.weight, &l.bias]);
        }
        out.extend([&self.proj1_weight, &self.proj1_bias, &self.proj2_weight, &self.proj2_bias]);
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(param_count(&self.hyper));
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn from_flat(hyper: FnoHyperparams, stats: ChannelStats, flat: &[f64]) -> Result<Self> {
        hyper.validate()?;
        stats.validate(hyper.c_in)?;
        if flat.len() != param_count(&hyper) {
            return Err(Error::ShapeMismatch(format!(
                "parameter blob has {} values, model needs {}",
                flat.len(),
                param_count(&hyper)
            )));
        }
        let mut offset = 0;
        let mut tensors = param_layout(&hyper).into_iter().map(|(_, shape)| {
            let n: usize = shape.iter().product();
            let t = Tensor::new(shape, flat[offset..offset + n].to_vec()).expect("layout shape");
            offset += n;
            t
        });
        let mut next = || tensors.next().expect("layout length");
        let lift_weight = next();
        let lift_bias = next();
        let layers = (0..N_LAYERS)
            .map(|_| FourierLayer {
                spectral: next(),
                weight: next(),
                bias: next(),
            })
            .collect();
        Ok(Self {
            hyper,
            stats,
            lift_weight,
            lift_bias,
            layers,
            proj1_weight: next(),
            proj1_bias: next(),
            proj2_weight: next(),
            proj2_bias: next(),
        })
    }
}

/// Seeded initialization: spectral weights `U[0,1) / (n_d·n_d)` for both
/// real and imaginary parts; affine weights and biases `U(±1/√fan_in)`.
pub fn init_params<R: Rng + ?Sized>(hyper: &FnoHyperparams, stats: ChannelStats, rng: &mut R) -> Result<FnoParams> {
    hyper.validate()?;
    let spectral_scale = 1.0 / (hyper.n_d * hyper.n_d) as f64;
    let mut flat = Vec::with_capacity(param_count(hyper));
    for (name, shape) in param_layout(hyper) {
        let n: usize = shape.iter().product();
        if name.ends_with("spectral") {
            flat.extend((0..n).map(|_| spectral_scale * rng.random::<f64>()));
        } else {
            let fan_in = match (name.as_str(), shape.as_slice()) {
                (_, [_, fan]) => *fan,
                ("lift.bias", _) => hyper.c_in,
                ("proj1.bias", _) => hyper.n_d,
                ("proj2.bias", _) => hyper.n_q,
                _ => hyper.n_d,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            flat.extend((0..n).map(|_| rng.random_range(-bound..bound)));
        }
    }
    FnoParams::from_flat(*hyper, stats, &flat)
}

pub fn fourier_layer(x: &Tensor, layer: &FourierLayer) -> Result<Tensor> {
    let s = tensor::spectral_conv(x, &layer.spectral)?;
    let a = tensor::pointwise_affine(x, &layer.weight, &layer.bias)?;
    Ok(tensor::gelu(&tensor::add(&s, &a)?))
}

fn stack_inputs(inputs: &[&FieldGrid]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no input channels".into()))?;
    let mut data = Vec::with_capacity(inputs.len() * first.values.len());
    for g in inputs {
        first.check_same_shape(g, "FNO input")?;
        data.extend_from_slice(&g.values);
    }
    Tensor::new(vec![1, inputs.len(), first.nx, first.ny], data)
}

/// Network output (`w_θ`, or `u_θ` when `predict_u`) on the input grid.
pub fn fno_forward(params: &FnoParams, f_h: &FieldGrid, phi_h: &FieldGrid, g_h: &FieldGrid) -> Result<FieldGrid> {
    let h = &params.hyper;
    if h.c_in != 3 {
        return Err(Error::InvalidArgument(format!("model expects {} channels, got 3", h.c_in)));
    }
    h.check_grid(f_h.nx, f_h.ny)?;
    let mut x = standardize(&stack_inputs(&[f_h, phi_h, g_h])?, &params.stats)?;
    x = tensor::pointwise_affine(&x, &params.lift_weight, &params.lift_bias)?;
    if !h.pad_per_layer {
        x = tensor::reflection_pad(&x, h.pad)?;
    }
    for layer in &params.layers {
        if h.pad_per_layer {
            x = tensor::crop(&fourier_layer(&tensor::reflection_pad(&x, h.pad)?, layer)?, h.pad)?;
        } else {
            x = fourier_layer(&x, layer)?;
        }
    }
    if !h.pad_per_layer {
        x = tensor::crop(&x, h.pad)?;
    }
    x = tensor::gelu(&tensor::pointwise_affine(&x, &params.proj1_weight, &params.proj1_bias)?);
    x = tensor::pointwise_affine(&x, &params.proj2_weight, &params.proj2_bias)?;
    let y = unstandardize(&x, &params.stats)?;
    FieldGrid::new(f_h.nx, f_h.ny, y.into_data())
}

/// Parameter leaves of one recorded forward pass, in blob order.
pub struct ParamVars(pub Vec<Var>);

/// Records the parameters as leaves of `tape`.
pub fn record_params(tape: &mut Tape, params: &FnoParams) -> ParamVars {
    ParamVars(params.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect())
}

/// Same computation as [`fno_forward`], recorded on `tape`. Returns the
/// `[1, 1, nx, ny]` output node.
pub fn fno_forward_tape(
    tape: &mut Tape,
    vars: &ParamVars,
    hyper: &FnoHyperparams,
    stats: &ChannelStats,
    inputs: [&FieldGrid; 3],
) -> Result<Var> {
    hyper.check_grid(inputs[0].nx, inputs[0].ny)?;
    let p = &vars.0;
    let x = tape.leaf(stack_inputs(&inputs)?);
    let (scale, shift) = standardize_coeffs(stats);
    let mut x = tape.channel_affine(x, &scale, &shift)?;
    x = tape.pointwise_affine(x, p[0], p[1])?;
    if !hyper.pad_per_layer {
        x = tape.reflection_pad(x, hyper.pad)?;
    }
    for l in 0..N_LAYERS {
        let (sw, w, b) = (p[2 + 3 * l], p[3 + 3 * l], p[4 + 3 * l]);
        let input = if hyper.pad_per_layer { tape.reflection_pad(x, hyper.pad)? } else { x };
        let s = tape.spectral_conv(input, sw)?;
        let a = tape.pointwise_affine(input, w, b)?;
        let sum = tape.add(s, a)?;
        x = tape.gelu(sum);
        if hyper.pad_per_layer {
            x = tape.crop(x, hyper.pad)?;
        }
    }
    if !hyper.pad_per_layer {
        x = tape.crop(x, hyper.pad)?;
    }
    let q = 2 + 3 * N_LAYERS;
    x = tape.pointwise_affine(x, p[q], p[q + 1])?;
    x = tape.gelu(x);
    x = tape.pointwise_affine(x, p[q + 2], p[q + 3])?;
    tape.channel_affine(x, &[stats.output_std], &[stats.output_mean])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    scalar: String,
    byte_order: String,
    complex_layout: String,
    hyperparams: FnoHyperparams,
    stats: ChannelStats,
    param_count: usize,
    tensors: Vec<TensorEntry>,
}

/// Serializes `magic ‖ header length (u64 LE) ‖ JSON header ‖ f64 LE blob`.
pub fn checkpoint_bytes(params: &FnoParams) -> Result<Vec<u8>> {
    let mut offset = 0;
    let tensors = param_layout(&params.hyper)
        .into_iter()
        .map(|(name, shape)| {
            let len = shape.iter().product();
            let e = TensorEntry { name, shape, offset, len };
            offset += len;
            e
        })
        .collect();
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        scalar: "f64".into(),
        byte_order: "little".into(),
        complex_layout: "interleaved re,im in last axis".into(),
        hyperparams: params.hyper,
        stats: params.stats.clone(),
        param_count: param_count(&params.hyper),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let flat = params.to_flat();
    let mut out = Vec::with_capacity(16 + json.len() + 8 * flat.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8], path: &Path) -> Result<FnoParams> {
    let bad = |msg: String| Error::format(path, msg);
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(header_len))
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported format version {}", header.format_version)));
    }
    let expected = param_count(&header.hyperparams);
    if header.param_count != expected {
        return Err(bad(format!("header declares {} parameters, hyperparameters imply {expected}", header.param_count)));
    }
    let layout = param_layout(&header.hyperparams);
    if layout.len() != header.tensors.len()
        || layout.iter().zip(&header.tensors).any(|((n, s), e)| *n != e.name || *s != e.shape)
    {
        return Err(bad("tensor manifest does not match hyperparameters".into()));
    }
    let blob = &bytes[16 + header_len..];
    if blob.len() != 8 * expected {
        return Err(bad(format!("blob holds {} bytes, expected {}", blob.len(), 8 * expected)));
    }
    let flat: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    FnoParams::from_flat(header.hyperparams, header.stats, &flat).map_err(|e| bad(e.to_string()))
}

pub fn save_checkpoint(params: &FnoParams, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(params)?;
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<FnoParams> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, path)
}
