//! Masked H¹ loss, the relative error metric, ADAM, the plateau scheduler
//! and the epoch loop.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::fno::{self, ChannelSample, ChannelStats, FnoHyperparams, FnoParams};
use crate::mesh::{masks_for, FieldGrid, PixelMasks};
use crate::phifem::reconstruct_u;
use crate::tensor::{self, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Values on S0 plus gradients on S1.
    #[default]
    FullH1,
    /// Gradients on S1 only.
    SemiH1,
}

/// Centered differences in `x` and `y`; border rows and columns are zero.
pub fn fd_gradients(u: &FieldGrid, dx: f64, dy: f64) -> Result<(FieldGrid, FieldGrid)> {
    let t = Tensor::new(vec![1, 1, u.nx, u.ny], u.values.clone())?;
    let gx = tensor::fd_grad(&t, 0, dx)?;
    let gy = tensor::fd_grad(&t, 1, dy)?;
    Ok((
        FieldGrid { nx: u.nx, ny: u.ny, values: gx.into_data() },
        FieldGrid { nx: u.nx, ny: u.ny, values: gy.into_data() },
    ))
}

fn spacing(nx: usize, ny: usize) -> (f64, f64) {
    (1.0 / (nx - 1) as f64, 1.0 / (ny - 1) as f64)
}

fn grid_tensor(g: &FieldGrid) -> Tensor {
    Tensor::new(vec![1, 1, g.nx, g.ny], g.values.clone()).expect("grid shape")
}

/// Loss of one sample: `‖u_pred − u_true‖²_{S0} + ‖∇_h(u_pred − u_true)‖²_{S1}`
/// (the first term is dropped in semi-H¹ mode). Pixel sums carry no area weight.
pub fn sample_loss(u_true: &FieldGrid, u_pred: &FieldGrid, masks: &PixelMasks, mode: LossMode) -> Result<f64> {
    u_true.check_same_shape(u_pred, "loss")?;
    if masks.nx != u_true.nx || masks.ny != u_true.ny {
        return Err(Error::ShapeMismatch("loss masks do not match the grid".into()));
    }
    let diff = FieldGrid {
        nx: u_true.nx,
        ny: u_true.ny,
        values: u_pred.values.iter().zip(&u_true.values).map(|(p, t)| p - t).collect(),
    };
    let (dx, dy) = spacing(diff.nx, diff.ny);
    let (gx, gy) = fd_gradients(&diff, dx, dy)?;
    let sq = |g: &FieldGrid, mask: &[bool]| -> f64 {
        g.values.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v * v).sum()
    };
    let e1 = sq(&gx, &masks.s1) + sq(&gy, &masks.s1);
    Ok(match mode {
        LossMode::FullH1 => sq(&diff, &masks.s0) + e1,
        LossMode::SemiH1 => e1,
    })
}

/// Batch mean of [`sample_loss`].
pub fn loss(batch_true: &[FieldGrid], batch_pred: &[FieldGrid], masks: &[PixelMasks], mode: LossMode) -> Result<f64> {
    if batch_true.is_empty() {
        return Err(Error::InvalidArgument("loss of an empty batch".into()));
    }
    if batch_pred.len() != batch_true.len() || masks.len() != batch_true.len() {
        return Err(Error::ShapeMismatch("loss batch sizes differ".into()));
    }
    let mut total = 0.0;
    for ((t, p), m) in batch_true.iter().zip(batch_pred).zip(masks) {
        total += sample_loss(t, p, m, mode)?;
    }
    Ok(total / batch_true.len() as f64)
}

/// Records [`sample_loss`] on a tape, with `u_pred` a `[1,1,nx,ny]` node.
pub fn sample_loss_tape(tape: &mut Tape, u_pred: Var, u_true: &FieldGrid, masks: &PixelMasks, mode: LossMode) -> Result<Var> {
    let neg = Tensor::new(vec![1, 1, u_true.nx, u_true.ny], u_true.values.iter().map(|v| -v).collect())?;
    let diff = tape.add_field(u_pred, &neg)?;
    let (dx, dy) = spacing(u_true.nx, u_true.ny);
    let gx = tape.fd_grad(diff, 0, dx)?;
    let gy = tape.fd_grad(diff, 1, dy)?;
    let ex = tape.masked_sq_norm(gx, &masks.s1)?;
    let ey = tape.masked_sq_norm(gy, &masks.s1)?;
    let mut total = tape.add(ex, ey)?;
    if mode == LossMode::FullH1 {
        let e0 = tape.masked_sq_norm(diff, &masks.s0)?;
        total = tape.add(total, e0)?;
    }
    Ok(tape.sum(total))
}

/// `√(Σ_{S0} (u_true − u_pred)² / Σ_{S0} u_true²)`.
pub fn metric_e1(u_true: &FieldGrid, u_pred: &FieldGrid, s0: &[bool]) -> Result<f64> {
    u_true.check_same_shape(u_pred, "metric")?;
    if s0.len() != u_true.values.len() {
        return Err(Error::ShapeMismatch("metric mask does not match the grid".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..s0.len() {
        if s0[k] {
            num += (u_true.values[k] - u_pred.values[k]).powi(2);
            den += u_true.values[k].powi(2);
        }
    }
    if den == 0.0 {
        return Err(Error::Degenerate("reference solution vanishes on S0".into()));
    }
    Ok((num / den).sqrt())
}

/// Inputs, target and masks of one training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub f: FieldGrid,
    pub phi: FieldGrid,
    pub g: FieldGrid,
    pub w: FieldGrid,
    pub u: FieldGrid,
    pub masks: PixelMasks,
}

impl TrainSample {
    pub fn new(f: FieldGrid, phi: FieldGrid, g: FieldGrid, w: FieldGrid) -> Result<Self> {
        let u = reconstruct_u(&phi, &w, &g)?;
        f.check_same_shape(&phi, "sample")?;
        let masks = masks_for(&phi)?;
        Ok(Self { f, phi, g, w, u, masks })
    }

    /// Network target: `w`, or `u` for models predicting `u` directly.
    pub fn target(&self, predict_u: bool) -> &FieldGrid {
        if predict_u {
            &self.u
        } else {
            &self.w
        }
    }
}

/// Normalization statistics over Ω_h pixels of the training samples.
pub fn training_stats(samples: &[TrainSample], predict_u: bool) -> Result<ChannelStats> {
    let rows: Vec<ChannelSample<'_>> = samples
        .iter()
        .map(|s| ChannelSample {
            inputs: vec![&s.f.values, &s.phi.values, &s.g.values],
            output: &s.target(predict_u).values,
            mask: &s.masks.s0,
        })
        .collect();
    fno::compute_channel_stats(&rows)
}

/// Network output and the reconstructed `u_θ`.
pub fn predict(params: &FnoParams, f: &FieldGrid, phi: &FieldGrid, g: &FieldGrid) -> Result<(FieldGrid, FieldGrid)> {
    let out = fno::fno_forward(params, f, phi, g)?;
    let u = if params.hyper.predict_u { out.clone() } else { reconstruct_u(phi, &out, g)? };
    Ok((out, u))
}

/// Loss value and flat parameter gradient for one sample.
pub fn sample_gradient(params: &FnoParams, sample: &TrainSample, mode: LossMode) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars = fno::record_params(&mut tape, params);
    let out = fno::fno_forward_tape(&mut tape, &vars, &params.hyper, &params.stats, [&sample.f, &sample.phi, &sample.g])?;
    let u = if params.hyper.predict_u {
        out
    } else {
        let scaled = tape.mul_field(out, grid_tensor(&sample.phi))?;
        tape.add_field(scaled, &grid_tensor(&sample.g))?
    };
    let l = sample_loss_tape(&mut tape, u, &sample.u, &sample.masks, mode)?;
    let value = tape.value(l).data()[0];
    let mut grads = tape.backward(l)?;
    let mut flat = Vec::with_capacity(fno::param_count(&params.hyper));
    for (v, t) in vars.0.iter().zip(params.tensors()) {
        flat.extend(grads.take(*v, t.len()));
    }
    Ok((value, flat))
}

/// Mean loss and mean flat gradient over a batch. Per-sample results are
/// summed in index order, so the result does not depend on `exec`.
pub fn batch_gradient(params: &FnoParams, batch: &[&TrainSample], mode: LossMode, exec: Execution) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let parts = exec.map_slice(batch, |s| sample_gradient(params, s, mode));
    let n = fno::param_count(&params.hyper);
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay `w₁`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-7, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// One ADAM update with decoupled decay applied to the pre-step parameters.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::ShapeMismatch("ADAM vectors differ in length".into()));
    }
    if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {k}")));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        let theta = params[k];
        params[k] = theta - lr / (v_hat.sqrt() + cfg.eps) * m_hat - cfg.weight_decay * theta;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Relative improvement required to reset the patience counter.
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self { factor: 0.5, patience: 40, min_lr: 1e-6, threshold: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub cfg: PlateauConfig,
    pub lr: f64,
    /// Best loss seen so far, `None` before the first step.
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, cfg: PlateauConfig) -> Result<Self> {
        if !(cfg.factor > 0.0 && cfg.factor < 1.0) || cfg.patience == 0 || !(cfg.min_lr >= 0.0) || !(cfg.threshold >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid scheduler settings {cfg:?}")));
        }
        Ok(Self { cfg, lr, best: None, bad_epochs: 0 })
    }

    /// Feeds one validation loss; returns the learning rate for the next epoch.
    pub fn step(&mut self, loss: f64) -> f64 {
        let improved = self.best.is_none_or(|b| loss < b * (1.0 - self.cfg.threshold));
        if improved {
            self.best = Some(loss);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.cfg.patience {
                self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    /// Coefficient of the `λ/(2·batch)·Σθ²` penalty.
    pub l2_lambda: f64,
    pub scheduler: PlateauConfig,
    pub loss_mode: LossMode,
    /// Size of the fixed training subset whose loss is logged.
    pub train_loss_subset: usize,
    /// Seeds initialization, the logged subset and batch shuffling.
    #[serde(skip)]
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 32,
            lr: 5e-4,
            adam: AdamConfig::default(),
            l2_lambda: 0.0,
            scheduler: PlateauConfig::default(),
            loss_mode: LossMode::FullH1,
            seed: 0,
            train_loss_subset: 300,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid ADAM settings {a:?}")));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(self.l2_lambda >= 0.0) || !(a.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("regularization weights must be non-negative".into()));
        }
        PlateauScheduler::new(self.lr, self.scheduler).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_e1_mean: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub is_best: bool,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,val_loss,val_E1_mean,lr,is_best";

pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(EPOCH_CSV_HEADER);
    s.push('\n');
    for r in log {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_e1_mean, r.lr, r.is_best as u8
        ));
    }
    s
}

pub fn write_epoch_log(log: &[EpochLog], path: &Path) -> Result<()> {
    std::fs::write(path, epoch_log_csv(log)).map_err(|e| Error::io(path, e))
}

/// Everything needed to continue a run after `next_epoch - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: FnoParams,
    pub best: FnoParams,
    pub best_val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub adam: AdamState,
    pub scheduler: PlateauScheduler,
    pub next_epoch: usize,
    pub log: Vec<EpochLog>,
}

#[derive(Serialize, Deserialize)]
struct StateHeader {
    format_version: u32,
    best_val_loss: Option<f64>,
    best_epoch: Option<usize>,
    adam_t: u64,
    scheduler: PlateauScheduler,
    next_epoch: usize,
    log: Vec<EpochLog>,
    param_count: usize,
    params_checkpoint_len: usize,
    best_checkpoint_len: usize,
}

const STATE_MAGIC: &[u8; 8] = b"PHIFNOTS";

impl TrainState {
    /// `magic ‖ header length ‖ JSON header ‖ params checkpoint ‖ best
    /// checkpoint ‖ m ‖ v`, all little-endian.
    pub fn save(&self, path: &Path) -> Result<()> {
        let params = fno::checkpoint_bytes(&self.params)?;
        let best = fno::checkpoint_bytes(&self.best)?;
        let header = StateHeader {
            format_version: 1,
            best_val_loss: self.best_val_loss,
            best_epoch: self.best_epoch,
            adam_t: self.adam.t,
            scheduler: self.scheduler.clone(),
            next_epoch: self.next_epoch,
            log: self.log.clone(),
            param_count: self.adam.m.len(),
            params_checkpoint_len: params.len(),
            best_checkpoint_len: best.len(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        put(STATE_MAGIC)?;
        put(&(json.len() as u64).to_le_bytes())?;
        put(&json)?;
        put(&params)?;
        put(&best)?;
        for v in self.adam.m.iter().chain(&self.adam.v) {
            put(&v.to_le_bytes())?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::format(path, msg);
        if bytes.len() < 16 || &bytes[..8] != STATE_MAGIC {
            return Err(bad("not a training state file"));
        }
        let hl = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header: StateHeader = serde_json::from_slice(bytes.get(16..16 + hl).ok_or_else(|| bad("truncated header"))?)
            .map_err(|e| Error::format(path, format!("header: {e}")))?;
        if header.format_version != 1 {
            return Err(bad("unsupported training state version"));
        }
        let mut at = 16 + hl;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(at..at + n).ok_or_else(|| bad("truncated training state"))?;
            at += n;
            Ok(s)
        };
        let params = fno::checkpoint_from_bytes(take(header.params_checkpoint_len)?, path)?;
        let best = fno::checkpoint_from_bytes(take(header.best_checkpoint_len)?, path)?;
        let n = header.param_count;
        let floats = take(16 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect::<Vec<_>>();
        if at != bytes.len() || n != fno::param_count(&params.hyper) {
            return Err(bad("training state length mismatch"));
        }
        Ok(Self {
            params,
            best,
            best_val_loss: header.best_val_loss,
            best_epoch: header.best_epoch,
            adam: AdamState { t: header.adam_t, m: floats[..n].to_vec(), v: floats[n..].to_vec() },
            scheduler: header.scheduler,
            next_epoch: header.next_epoch,
            log: header.log,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss (initial ones if no epoch ran).
    pub best: FnoParams,
    pub state: TrainState,
}

impl TrainOutcome {
    pub fn log(&self) -> &[EpochLog] {
        &self.state.log
    }
}

fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_INIT: u64 = 0;
const STREAM_SUBSET: u64 = 1;
const STREAM_EPOCH_BASE: u64 = 16;

/// Fresh initial state: stats from the training set, seeded parameters.
pub fn initial_state(train: &[TrainSample], hyper: &FnoHyperparams, cfg: &TrainConfig) -> Result<TrainState> {
    hyper.validate()?;
    cfg.validate()?;
    let stats = training_stats(train, hyper.predict_u)?;
    let params = fno::init_params(hyper, stats, &mut derived_rng(cfg.seed, STREAM_INIT))?;
    let n = fno::param_count(hyper);
    Ok(TrainState {
        best: params.clone(),
        params,
        best_val_loss: None,
        best_epoch: None,
        adam: AdamState::new(n),
        scheduler: PlateauScheduler::new(cfg.lr, cfg.scheduler)?,
        next_epoch: 0,
        log: Vec::new(),
    })
}

/// Mean loss and mean E₁ over `samples` without recording gradients.
pub fn evaluate_loss(params: &FnoParams, samples: &[&TrainSample], mode: LossMode, exec: Execution) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let parts = exec.map_slice(samples, |s| -> Result<(f64, f64)> {
        let (_, u) = predict(params, &s.f, &s.phi, &s.g)?;
        Ok((sample_loss(&s.u, &u, &s.masks, mode)?, metric_e1(&s.u, &u, &s.masks.s0)?))
    });
    let (mut l, mut e) = (0.0, 0.0);
    for p in parts {
        let (a, b) = p?;
        l += a;
        e += b;
    }
    let n = samples.len() as f64;
    Ok((l / n, e / n))
}

/// Runs epochs `state.next_epoch .. cfg.epochs`, calling `on_epoch` after each.
pub fn train_from(
    train: &[TrainSample],
    val: &[TrainSample],
    cfg: &TrainConfig,
    mut state: TrainState,
    on_epoch: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be nonempty".into()));
    }
    if cfg.batch_size > train.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {} exceeds {} training samples",
            cfg.batch_size,
            train.len()
        )));
    }
    let exec = cfg.execution;
    let mut subset: Vec<usize> = (0..train.len()).collect();
    subset.shuffle(&mut derived_rng(cfg.seed, STREAM_SUBSET));
    subset.truncate(cfg.train_loss_subset.min(train.len()).max(1));
    subset.sort_unstable();
    let subset: Vec<&TrainSample> = subset.iter().map(|&i| &train[i]).collect();
    let val_refs: Vec<&TrainSample> = val.iter().collect();

    while state.next_epoch < cfg.epochs {
        let epoch = state.next_epoch;
        let lr = state.scheduler.lr;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut derived_rng(cfg.seed, STREAM_EPOCH_BASE + epoch as u64));
        let mut flat = state.params.to_flat();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (batch_loss, mut grad) = batch_gradient(&state.params, &batch, cfg.loss_mode, exec)?;
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            if cfg.l2_lambda > 0.0 {
                let c = cfg.l2_lambda / batch.len() as f64;
                grad.iter_mut().zip(&flat).for_each(|(g, t)| *g += c * t);
            }
            adam_step(&mut flat, &grad, &mut state.adam, &cfg.adam, lr)?;
            state.params = FnoParams::from_flat(state.params.hyper, state.params.stats.clone(), &flat)?;
        }
        let (train_loss, _) = evaluate_loss(&state.params, &subset, cfg.loss_mode, exec)?;
        let (val_loss, val_e1_mean) = evaluate_loss(&state.params, &val_refs, cfg.loss_mode, exec)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        let is_best = state.best_val_loss.is_none_or(|b| val_loss < b);
        if is_best {
            state.best = state.params.clone();
            state.best_val_loss = Some(val_loss);
            state.best_epoch = Some(epoch);
        }
        state.log.push(EpochLog { epoch, train_loss, val_loss, val_e1_mean, lr, is_best });
        state.scheduler.step(val_loss);
        state.next_epoch += 1;
        on_epoch(&state)?;
    }
    Ok(TrainOutcome { best: state.best.clone(), state })
}

pub fn train(train_set: &[TrainSample], val_set: &[TrainSample], hyper: &FnoHyperparams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let state = initial_state(train_set, hyper, cfg)?;
    train_from(train_set, val_set, cfg, state, &mut |_| Ok(()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize an empty list".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("summary input".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    Ok(Summary {
        count: s.len(),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        min: s[0],
        q1: quantile(&s, 0.25),
        median: quantile(&s, 0.5),
        q3: quantile(&s, 0.75),
        max: s[s.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub e1: Vec<f64>,
    /// Wall time of one forward pass per sample.
    pub seconds: Vec<f64>,
    pub summary: Summary,
}

/// Per-sample E₁ of the surrogate against the stored ground truth.
pub fn evaluate(params: &FnoParams, samples: &[TrainSample], exec: Execution) -> Result<Evaluation> {
    let parts = exec.map_slice(samples, |s| -> Result<(f64, f64)> {
        let start = Instant::now();
        let (_, u) = predict(params, &s.f, &s.phi, &s.g)?;
        let secs = start.elapsed().as_secs_f64();
        Ok((metric_e1(&s.u, &u, &s.masks.s0)?, secs))
    });
    let mut e1 = Vec::with_capacity(samples.len());
    let mut seconds = Vec::with_capacity(samples.len());
    for p in parts {
        let (e, t) = p?;
        e1.push(e);
        seconds.push(t);
    }
    let summary = summarize(&e1)?;
    Ok(Evaluation { e1, seconds, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BackgroundMesh;
    use proptest::prelude::*;
    use rand::Rng;

    fn grid(nx: usize, ny: usize, f: impl Fn(f64, f64) -> f64) -> FieldGrid {
        let mesh = BackgroundMesh::new(nx, ny).unwrap();
        FieldGrid::new(nx, ny, mesh.vertices.iter().map(|p| f(p[0], p[1])).collect()).unwrap()
    }

    fn disk_sample(n: usize, seed: u64) -> TrainSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rng.random_range(0.25..0.35);
        let a = rng.random_range(-1.0..1.0);
        let phi = grid(n, n, |x, y| (x - 0.5).powi(2) + (y - 0.5).powi(2) - r * r);
        let f = grid(n, n, |x, y| 10.0 * (-(x - 0.5 - 0.1 * a).powi(2) / 0.05 - (y - 0.5).powi(2) / 0.05).exp());
        let g = grid(n, n, |x, y| a * (x * x - y * y));
        let w = crate::phifem::ground_truth(&f, &phi, &g, 1.0, Execution::Sequential).unwrap();
        TrainSample::new(f, phi, g, w).unwrap()
    }

    #[test]
    fn fd_examples() {
        let lin = grid(5, 5, |x, _| x);
        let (gx, gy) = fd_gradients(&lin, 0.25, 0.25).unwrap();
        for i in 1..4 {
            for j in 0..5 {
                assert!((gx.get(i, j) - 1.0).abs() < 1e-14);
            }
        }
        assert!(gy.values.iter().all(|v| v.abs() < 1e-15));
        let c = grid(4, 4, |_, _| 3.0);
        let (gx, gy) = fd_gradients(&c, 1.0 / 3.0, 1.0 / 3.0).unwrap();
        assert!(gx.values.iter().chain(&gy.values).all(|&v| v == 0.0));
        let q = grid(5, 5, |x, _| x * x);
        assert_eq!(fd_gradients(&q, 0.25, 0.25).unwrap().0.get(2, 2), 1.0);
        assert!(fd_gradients(&grid(2, 4, |x, _| x), 1.0, 1.0).is_err());
    }

    fn loop_loss(t: &FieldGrid, p: &FieldGrid, m: &PixelMasks, mode: LossMode) -> f64 {
        let (nx, ny) = (t.nx, t.ny);
        let (dx, dy) = (1.0 / (nx - 1) as f64, 1.0 / (ny - 1) as f64);
        let d = |i: usize, j: usize| p.get(i, j) - t.get(i, j);
        let mut e0 = 0.0;
        let mut e1 = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                let k = i * ny + j;
                if m.s0[k] {
                    e0 += d(i, j).powi(2);
                }
                if m.s1[k] {
                    let gx = (d(i + 1, j) - d(i - 1, j)) / (2.0 * dx);
                    let gy = (d(i, j + 1) - d(i, j - 1)) / (2.0 * dy);
                    e1 += gx * gx + gy * gy;
                }
            }
        }
        if mode == LossMode::FullH1 {
            e0 + e1
        } else {
            e1
        }
    }

    #[test]
    fn loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = FieldGrid::new(5, 5, (0..25).map(|k| if k == 0 { 1.0 } else { -1.0 }).collect()).unwrap();
        let masks = masks_for(&phi).unwrap();
        let t = FieldGrid::new(5, 5, (0..25).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let p = FieldGrid::new(5, 5, (0..25).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        for mode in [LossMode::FullH1, LossMode::SemiH1] {
            assert_eq!(sample_loss(&t, &t, &masks, mode).unwrap(), 0.0);
            let got = sample_loss(&t, &p, &masks, mode).unwrap();
            assert!((got - loop_loss(&t, &p, &masks, mode)).abs() <= 1e-13 * got.max(1.0));
        }
        let shifted = FieldGrid::new(5, 5, t.values.iter().map(|v| v + 0.75).collect()).unwrap();
        assert!(sample_loss(&t, &shifted, &masks, LossMode::SemiH1).unwrap() <= 1e-12);
        assert!(loss(&[], &[], &[], LossMode::FullH1).is_err());
        let batch = loss(&[t.clone(), t.clone()], &[t.clone(), p.clone()], &[masks.clone(), masks.clone()], LossMode::FullH1).unwrap();
        assert!((batch - 0.5 * sample_loss(&t, &p, &masks, LossMode::FullH1).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn metric_examples() {
        let s = disk_sample(12, 1);
        let zero = FieldGrid::zeros(12, 12);
        let twice = FieldGrid::new(12, 12, s.u.values.iter().map(|v| 2.0 * v).collect()).unwrap();
        assert_eq!(metric_e1(&s.u, &s.u, &s.masks.s0).unwrap(), 0.0);
        assert_eq!(metric_e1(&s.u, &zero, &s.masks.s0).unwrap(), 1.0);
        assert!((metric_e1(&s.u, &twice, &s.masks.s0).unwrap() - 1.0).abs() < 1e-15);
        assert!(metric_e1(&zero, &s.u, &s.masks.s0).is_err());
    }

    proptest! {
        #[test]
        fn metric_scale_invariant(c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0], seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mask: Vec<bool> = (0..16).map(|k| k % 5 != 0).collect();
            let g = |v: &[f64]| FieldGrid::new(4, 4, v.to_vec()).unwrap();
            let scale = |v: &[f64]| g(&v.iter().map(|x| c * x).collect::<Vec<_>>());
            let a = metric_e1(&g(&t), &g(&p), &mask).unwrap();
            let b = metric_e1(&scale(&t), &scale(&p), &mask).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }

        #[test]
        fn semi_h1_shift_invariant(shift in -100.0f64..100.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = FieldGrid::new(6, 6, (0..36).map(|_| rng.random_range(-1.0..0.2)).collect()).unwrap();
            let masks = masks_for(&phi).unwrap();
            let t = FieldGrid::new(6, 6, (0..36).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let p = FieldGrid::new(6, 6, (0..36).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let q = FieldGrid::new(6, 6, p.values.iter().map(|v| v + shift).collect()).unwrap();
            let a = sample_loss(&t, &p, &masks, LossMode::SemiH1).unwrap();
            let b = sample_loss(&t, &q, &masks, LossMode::SemiH1).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0) * (1.0 + shift.abs()));
        }
    }

    #[test]
    fn adam_examples() {
        let cfg = AdamConfig::default();
        let mut p = [0.3];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[2.0], &mut st, &cfg, 0.01).unwrap();
        assert!((p[0] - (0.3 - 0.01 * 2.0 / (2.0 + 1e-7))).abs() < 1e-16);

        let mut p = [1.0, -2.0];
        let mut st = AdamState::new(2);
        for _ in 0..3 {
            adam_step(&mut p, &[0.0, 0.0], &mut st, &cfg, 0.1).unwrap();
        }
        assert_eq!(p, [1.0, -2.0]);

        // Hand-rolled recurrence with decoupled decay.
        let cfg = AdamConfig { weight_decay: 1e-3, ..cfg };
        let (lr, g) = (5e-4, 0.37);
        let mut p = [0.8];
        let mut st = AdamState::new(1);
        let (mut th, mut m, mut v) = (0.8f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            adam_step(&mut p, &[g], &mut st, &cfg, lr).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            th = th - lr / (vh.sqrt() + 1e-7) * mh - 1e-3 * th;
        }
        assert!((p[0] - th).abs() <= 1e-14);
        assert!(adam_step(&mut p, &[f64::NAN], &mut st, &cfg, lr).is_err());
        assert!(adam_step(&mut p, &[1.0, 2.0], &mut st, &cfg, lr).is_err());
    }

    #[test]
    fn scheduler_examples() {
        let cfg = PlateauConfig { factor: 0.5, patience: 3, min_lr: 1e-6, threshold: 1e-4 };
        let mut s = PlateauScheduler::new(1.0, cfg).unwrap();
        let mut halvings = Vec::new();
        let mut lr = 1.0;
        for epoch in 0..12 {
            let next = s.step(5.0);
            if next < lr {
                halvings.push(epoch);
            }
            lr = next;
        }
        assert_eq!(halvings, [3, 6, 9]);
        assert_eq!(lr, 0.125);

        let mut s = PlateauScheduler::new(1.0, cfg).unwrap();
        for k in 0..50 {
            assert_eq!(s.step(100.0 / (k + 1) as f64), 1.0);
        }
        let mut s = PlateauScheduler::new(1e-5, PlateauConfig { patience: 1, ..cfg }).unwrap();
        for _ in 0..20 {
            assert!(s.step(1.0) >= 1e-6);
        }
        assert_eq!(s.lr, 1e-6);
        assert!(PlateauScheduler::new(1.0, PlateauConfig { factor: 1.0, ..cfg }).is_err());
        assert!(PlateauScheduler::new(1.0, PlateauConfig { patience: 0, ..cfg }).is_err());
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[0.3, 0.1, 0.2]).unwrap();
        assert_eq!(s.median, 0.2);
        assert!((s.mean - 0.2).abs() < 1e-16);
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.75, 2.5, 3.25));
        assert!(summarize(&[]).is_err());
    }

    fn tiny_hyper() -> FnoHyperparams {
        FnoHyperparams { n_d: 3, modes: 3, n_q: 4, pad: 2, ..Default::default() }
    }

    #[test]
    fn tape_loss_matches_pure_loss() {
        let s = disk_sample(10, 3);
        let cfg = TrainConfig { epochs: 1, batch_size: 1, ..Default::default() };
        let state = initial_state(std::slice::from_ref(&s), &tiny_hyper(), &cfg).unwrap();
        for mode in [LossMode::FullH1, LossMode::SemiH1] {
            let (l, g) = sample_gradient(&state.params, &s, mode).unwrap();
            let (_, u) = predict(&state.params, &s.f, &s.phi, &s.g).unwrap();
            assert_eq!(l, sample_loss(&s.u, &u, &s.masks, mode).unwrap());
            assert_eq!(g.len(), fno::param_count(&state.params.hyper));
        }
    }

    #[test]
    fn batch_gradient_modes_agree_bitwise() {
        let samples: Vec<TrainSample> = (0..4).map(|k| disk_sample(10, k)).collect();
        let cfg = TrainConfig { epochs: 1, batch_size: 2, ..Default::default() };
        let state = initial_state(&samples, &tiny_hyper(), &cfg).unwrap();
        let refs: Vec<&TrainSample> = samples.iter().collect();
        let a = batch_gradient(&state.params, &refs, LossMode::FullH1, Execution::Sequential).unwrap();
        let b = batch_gradient(&state.params, &refs, LossMode::FullH1, Execution::Parallel).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn training_loop_contracts() {
        let samples: Vec<TrainSample> = (0..8).map(|k| disk_sample(12, k)).collect();
        let (tr, va) = samples.split_at(6);
        let hyper = tiny_hyper();
        let cfg = TrainConfig { epochs: 0, batch_size: 4, lr: 5e-3, ..Default::default() };
        let out = train(tr, va, &hyper, &cfg).unwrap();
        assert!(out.log().is_empty());
        assert_eq!(out.best, initial_state(tr, &hyper, &cfg).unwrap().params);

        let cfg = TrainConfig { epochs: 6, execution: Execution::Sequential, ..cfg };
        let a = train(tr, va, &hyper, &cfg).unwrap();
        let b = train(tr, va, &hyper, &cfg).unwrap();
        assert_eq!(a.log(), b.log());
        assert_eq!(a.log().len(), 6);
        let best_val = a.state.best_val_loss.unwrap();
        assert!(a.log().iter().all(|r| best_val <= r.val_loss));
        let (best_loss, _) = evaluate_loss(&a.best, &va.iter().collect::<Vec<_>>(), cfg.loss_mode, Execution::Sequential).unwrap();
        assert_eq!(best_loss, best_val);

        // Resume from a saved state after three epochs.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        let mut saved = false;
        let mut hook = |s: &TrainState| -> Result<()> {
            if s.next_epoch == 3 {
                s.save(&path)?;
                saved = true;
            }
            Ok(())
        };
        let state = initial_state(tr, &hyper, &cfg).unwrap();
        train_from(tr, va, &cfg, state, &mut hook).unwrap();
        assert!(saved);
        let resumed = TrainState::load(&path).unwrap();
        assert_eq!(resumed.next_epoch, 3);
        let c = train_from(tr, va, &cfg, resumed, &mut |_| Ok(())).unwrap();
        assert_eq!(c.log(), a.log());

        assert!(train(tr, va, &hyper, &TrainConfig { batch_size: 7, ..cfg }).is_err());
        assert!(train(tr, &[], &hyper, &cfg).is_err());
    }

    #[test]
    fn epoch_csv_layout() {
        let log = [EpochLog { epoch: 0, train_loss: 1.5, val_loss: 2.0, val_e1_mean: 0.5, lr: 1e-3, is_best: true }];
        let csv = epoch_log_csv(&log);
        assert_eq!(csv, "epoch,train_loss,val_loss,val_E1_mean,lr,is_best\n0,1.5,2,0.5,0.001,1\n");
    }

    #[test]
    fn evaluation_baselines() {
        let samples: Vec<TrainSample> = (0..3).map(|k| disk_sample(12, k)).collect();
        for s in &samples {
            assert_eq!(metric_e1(&s.u, &s.u, &s.masks.s0).unwrap(), 0.0);
            assert_eq!(metric_e1(&s.u, &FieldGrid::zeros(12, 12), &s.masks.s0).unwrap(), 1.0);
        }
        let cfg = TrainConfig { epochs: 1, batch_size: 1, ..Default::default() };
        let state = initial_state(&samples, &tiny_hyper(), &cfg).unwrap();
        let ev = evaluate(&state.params, &samples, Execution::Parallel).unwrap();
        assert_eq!(ev.e1.len(), 3);
        assert!(ev.e1.iter().all(|e| e.is_finite()));
        assert_eq!(ev.summary.median, summarize(&ev.e1).unwrap().median);
    }
}
