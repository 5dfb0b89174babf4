//! Training: the split fluid/non-fluid loss with compartment balancing, Adam
//! with step decay, base and meta-learner training, and the two ensembles.

use std::collections::BTreeSet;
use std::io;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use thiserror::Error;

use crate::models::{
    base_forward, encode_params, meta_forward, upsample_lr_velocity, BaseModel, BaseModelSpec,
    BlockKind, MetaModel, ModelError,
};
use crate::patch::{epoch_batches, BatchComposition, PatchError, PatchPair, HR_VOXELS, LR_PATCH, LR_VOXELS};
use crate::seed;
use crate::tensor::{Params, Real, Tape, Tensor, TensorError, Var};
use crate::volume::Compartment;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("length mismatch: {0}")]
    Shape(String),
    #[error("compartment {0} has zero samples in the batch")]
    ZeroCount(Compartment),
    #[error("non-finite gradient for {0}")]
    NanGradient(String),
    #[error("training diverged in epoch {epoch}")]
    Diverged {
        epoch: usize,
        last_good: Box<Params<f32>>,
    },
    #[error("ensemble: {0}")]
    Ensemble(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Mean over `region` of the squared velocity error; 0 for an empty region.
/// Vectors are component-major `3 x N`.
pub fn loss_mse(pred: &[f32], target: &[f32], region: &[bool]) -> Result<f64, TrainError> {
    let n = region.len();
    if pred.len() != 3 * n || target.len() != 3 * n {
        return Err(TrainError::Shape(format!(
            "pred {} / target {} values for {n} voxels",
            pred.len(),
            target.len()
        )));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (i, _) in region.iter().enumerate().filter(|(_, r)| **r) {
        count += 1;
        for c in 0..3 {
            let d = pred[c * n + i] as f64 - target[c * n + i] as f64;
            sum += d * d;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Per-compartment weights `w_c = N_c / (S_c · Σ_i 1/S_i)`.
pub fn compartment_weights(batch: &BatchComposition) -> Result<Vec<(Compartment, f64)>, TrainError> {
    if let Some((c, _)) = batch.counts.iter().find(|(_, s)| *s == 0) {
        return Err(TrainError::ZeroCount(*c));
    }
    let n_c = batch.counts.len() as f64;
    // Written as K / Σ_i (S_c / S_i) so equal counts give exactly 1.
    Ok(batch
        .counts
        .iter()
        .map(|&(c, s)| {
            let ratio_sum: f64 = batch.counts.iter().map(|(_, si)| s as f64 / *si as f64).sum();
            (c, n_c / ratio_sum)
        })
        .collect())
}

fn weight_of(weights: &[(Compartment, f64)], c: Compartment) -> f64 {
    weights
        .iter()
        .find(|(k, _)| *k == c)
        .map_or(0.0, |(_, w)| *w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_fluid: f64,
    pub l_nonfluid: f64,
    pub w_c: f64,
    pub l2: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    /// One sample's terms; `pred` in cm/s.
    pub fn of(pred: &[f32], patch: &PatchPair, w_c: f64, l2: f64) -> Result<Self, TrainError> {
        let l_fluid = loss_mse(pred, &patch.hr_vel, &patch.hr_mask)?;
        let outside: Vec<bool> = patch.hr_mask.iter().map(|f| !f).collect();
        let l_nonfluid = loss_mse(pred, &patch.hr_vel, &outside)?;
        Ok(Self {
            l_fluid,
            l_nonfluid,
            w_c,
            l2,
            l_total: w_c * (l_fluid + l_nonfluid) + l2,
        })
    }
}

/// `λ Σ w²` over convolution weights (biases are not regularized).
pub fn l2_penalty(params: &Params<f32>, lambda: f64) -> f64 {
    let sum: f64 = params
        .iter()
        .filter(|(n, _)| is_weight(n))
        .flat_map(|(_, t)| t.data().iter().map(|&w| w as f64 * w as f64))
        .sum();
    lambda * sum
}

fn is_weight(name: &str) -> bool {
    name.ends_with(".w")
}

/// Batch loss: mean over samples of `w_c (l_fluid + l_nonfluid)` plus the L2
/// term once. `preds` are in cm/s.
pub fn total_loss(
    preds: &[Vec<f32>],
    patches: &[&PatchPair],
    params: &Params<f32>,
    lambda: f64,
) -> Result<f64, TrainError> {
    if preds.len() != patches.len() || preds.is_empty() {
        return Err(TrainError::Shape(format!(
            "{} predictions for {} patches",
            preds.len(),
            patches.len()
        )));
    }
    let weights = compartment_weights(&BatchComposition::from_labels(patches.iter().map(|p| p.compartment)))?;
    let mut data = 0.0;
    for (pred, p) in preds.iter().zip(patches) {
        data += LossBreakdown::of(pred, p, weight_of(&weights, p.compartment), 0.0)?.l_total;
    }
    Ok(data / preds.len() as f64 + l2_penalty(params, lambda))
}

/// Per-voxel weights and normalized targets that make
/// `Σ weight · (out − target)²` equal this sample's share of the batch loss
/// when `out` is the venc-normalized network output.
fn sample_objective(p: &PatchPair, w_c: f64, batch: usize) -> (Vec<f32>, Vec<f32>) {
    let n_fluid = p.hr_fluid_count();
    let n_non = HR_VOXELS - n_fluid;
    let venc = p.venc as f64;
    let scale = w_c * venc * venc / batch as f64;
    let wf = if n_fluid > 0 { scale / n_fluid as f64 } else { 0.0 };
    let wn = if n_non > 0 { scale / n_non as f64 } else { 0.0 };
    let mut weights = Vec::with_capacity(3 * HR_VOXELS);
    for _ in 0..3 {
        weights.extend(p.hr_mask.iter().map(|&f| if f { wf as f32 } else { wn as f32 }));
    }
    let target = p.hr_vel.iter().map(|v| v / p.venc).collect();
    (weights, target)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &Params<T>, cfg: AdamConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        Self {
            cfg,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut Params<T>, grads: &[Vec<T>], lr: f64) -> Result<(), TrainError> {
        if grads.len() != params.len() {
            return Err(TrainError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != params.get(i).len() {
                return Err(TrainError::Shape(format!("gradient for {}", params.name(i))));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NanGradient(params.name(i).to_string()));
            }
        }
        self.t += 1;
        let c = self.cfg;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let corr1 = T::from_f64_lossy(1.0 - c.beta1.powi(self.t as i32));
        let corr2 = T::from_f64_lossy(1.0 - c.beta2.powi(self.t as i32));
        let lr = T::from_f64_lossy(lr);
        let eps = T::from_f64_lossy(c.eps);
        for (i, g) in grads.iter().enumerate() {
            let p = params.get_mut(i).data_mut();
            for (((w, &gi), m), v) in p.iter_mut().zip(g).zip(&mut self.m[i]).zip(&mut self.v[i]) {
                *m = b1 * *m + (one - b1) * gi;
                *v = b2 * *v + (one - b2) * gi * gi;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Record elapsed seconds in the log (zero otherwise, keeping logs
    /// byte-reproducible).
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            decay_every: 10,
            epochs: 60,
            batch_size: 16,
            lambda: 5e-7,
            seed: 0,
            record_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn meta_default() -> Self {
        Self {
            epochs: 80,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(TrainError::BadConfig(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(TrainError::BadConfig(
                "epochs, batch_size and decay_every must be >= 1".into(),
            ));
        }
        if !(self.lambda >= 0.0) {
            return Err(TrainError::BadConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// `lr0 / √2^floor(epoch / decay_every)`, epochs counted from 0.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 / std::f64::consts::SQRT_2.powi((epoch / cfg.decay_every) as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> Result<String, TrainError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "lr", "train_loss", "val_loss", "wall_seconds"])?;
        for r in &self.rows {
            w.write_record([
                r.epoch.to_string(),
                format!("{:e}", r.lr),
                format!("{:e}", r.train_loss),
                format!("{:e}", r.val_loss),
                format!("{:.3}", r.wall_seconds),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| TrainError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write(&self, path: &Path) -> Result<(), TrainError> {
        crate::atomic_write(path, self.to_csv()?.as_bytes())?;
        Ok(())
    }
}

/// Something that maps a patch to normalized `3 x 24³` output on a tape whose
/// trainable parameters are `params`.
trait Forward {
    fn forward(&self, params: &Params<f32>, tape: &mut Tape<f32>, p: &PatchPair) -> Result<Var, TrainError>;
}

fn lr_inputs(tape: &mut Tape<f32>, p: &PatchPair) -> Result<(Var, Var), TrainError> {
    let n = LR_PATCH;
    let vel: Vec<f32> = p.lr_vel.iter().map(|v| v / p.venc).collect();
    let v = tape.constant(Tensor::new(vec![3, n, n, n], vel)?)?;
    let m = tape.constant(Tensor::new(vec![1, n, n, n], p.lr_mag.clone())?)?;
    Ok((v, m))
}

struct BaseForward(BaseModelSpec);

impl Forward for BaseForward {
    fn forward(&self, params: &Params<f32>, tape: &mut Tape<f32>, p: &PatchPair) -> Result<Var, TrainError> {
        let (v, m) = lr_inputs(tape, p)?;
        Ok(base_forward(&self.0, params, tape, v, m)?)
    }
}

/// Channel-stacked normalized base outputs (plus the upsampled input when
/// requested) for one patch.
fn meta_input(bases: &[BaseModel], append_lr: bool, p: &PatchPair) -> Result<Vec<f32>, TrainError> {
    let vel: Vec<f32> = p.lr_vel.iter().map(|v| v / p.venc).collect();
    let mut stacked = Vec::with_capacity((bases.len() + 1) * 3 * HR_VOXELS);
    for b in bases {
        stacked.extend(b.forward_normalized(&vel, &p.lr_mag, LR_PATCH)?);
    }
    if append_lr {
        stacked.extend(upsample_lr_velocity(&vel, LR_PATCH)?);
    }
    Ok(stacked)
}

struct MetaForward<'a> {
    meta: &'a MetaModel,
    bases: &'a [BaseModel],
}

impl Forward for MetaForward<'_> {
    fn forward(&self, params: &Params<f32>, tape: &mut Tape<f32>, p: &PatchPair) -> Result<Var, TrainError> {
        let stacked = meta_input(self.bases, self.meta.spec.append_lr, p)?;
        let c = self.meta.spec.input_channels();
        let n = 2 * LR_PATCH;
        let x = tape.constant(Tensor::new(vec![c, n, n, n], stacked)?)?;
        Ok(meta_forward(&self.meta.spec, params, tape, x)?)
    }
}

/// Loss and (optionally) summed gradients of one batch.
fn batch_pass(
    f: &dyn Forward,
    params: &Params<f32>,
    batch: &[&PatchPair],
    want_grads: bool,
) -> Result<(f64, Option<Vec<Vec<f32>>>), TrainError> {
    let weights = compartment_weights(&BatchComposition::from_labels(batch.iter().map(|p| p.compartment)))?;
    let mut loss = 0.0f64;
    let mut grads: Option<Vec<Vec<f32>>> =
        want_grads.then(|| params.tensors().iter().map(|t| vec![0.0; t.len()]).collect());
    for p in batch {
        let mut tape = Tape::new();
        let out = f.forward(params, &mut tape, p)?;
        let (w, t) = sample_objective(p, weight_of(&weights, p.compartment), batch.len());
        let l = tape.weighted_sq_error(out, t, w)?;
        loss += tape.value(l).data()[0] as f64;
        if let Some(acc) = grads.as_mut() {
            let g = tape.backward(l)?;
            for (i, a) in acc.iter_mut().enumerate() {
                if let Some(gi) = g.param(i) {
                    a.iter_mut().zip(&gi).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    Ok((loss, grads))
}

fn add_l2_grad(params: &Params<f32>, grads: &mut [Vec<f32>], lambda: f64) {
    let two_l = (2.0 * lambda) as f32;
    for (i, g) in grads.iter_mut().enumerate() {
        if is_weight(params.name(i)) {
            for (gi, &w) in g.iter_mut().zip(params.get(i).data()) {
                *gi += two_l * w;
            }
        }
    }
}

/// Mean batch loss over `patches` in their given order (no shuffling).
fn evaluate_loss(
    f: &dyn Forward,
    params: &Params<f32>,
    patches: &[&PatchPair],
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let l2 = l2_penalty(params, cfg.lambda);
    let mut total = 0.0;
    let mut n = 0;
    for chunk in patches.chunks(cfg.batch_size) {
        total += batch_pass(f, params, chunk, false)?.0 + l2;
        n += 1;
    }
    Ok(total / n as f64)
}

fn diverged(epoch: usize, best: &Params<f32>) -> impl FnOnce(TrainError) -> TrainError + '_ {
    move |e| match e {
        TrainError::Tensor(TensorError::NonFinite(_)) | TrainError::NanGradient(_) => TrainError::Diverged {
            epoch,
            last_good: Box::new(best.clone()),
        },
        other => other,
    }
}

fn train_loop(
    f: &dyn Forward,
    params: &mut Params<f32>,
    train: &[&PatchPair],
    val: &[&PatchPair],
    cfg: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let start = Instant::now();
    let mut adam = Adam::new(params, AdamConfig::default());
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        let mut rng = seed::rng(seed::derive_seed(cfg.seed, epoch as u64));
        let batches = epoch_batches(train.len(), cfg.batch_size, &mut rng)?;
        let mut train_loss = 0.0;
        for idx in &batches {
            let batch: Vec<&PatchPair> = idx.iter().map(|&i| train[i]).collect();
            let (loss, grads) = batch_pass(f, params, &batch, true).map_err(diverged(epoch + 1, &best))?;
            let mut grads = grads.expect("gradients requested");
            let loss = loss + l2_penalty(params, cfg.lambda);
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch: epoch + 1,
                    last_good: Box::new(best),
                });
            }
            train_loss += loss;
            add_l2_grad(params, &mut grads, cfg.lambda);
            adam.step(params, &grads, lr).map_err(diverged(epoch + 1, &best))?;
        }
        let val_loss = evaluate_loss(f, params, val, cfg).map_err(diverged(epoch + 1, &best))?;
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch: epoch + 1,
                last_good: Box::new(best),
            });
        }
        if val_loss < best_val {
            best_val = val_loss;
            best = params.clone();
            log.best_epoch = epoch + 1;
        }
        let row = LogRow {
            epoch: epoch + 1,
            lr,
            train_loss: train_loss / batches.len() as f64,
            val_loss,
            wall_seconds: if cfg.record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        log::info!(
            "epoch {}/{}: lr {:.3e} train {:.4e} val {:.4e}",
            row.epoch,
            cfg.epochs,
            lr,
            row.train_loss,
            row.val_loss
        );
        log.rows.push(row);
    }
    *params = best;
    Ok(log)
}

/// Trains a base model in place; on success the model holds the
/// best-validation parameters.
pub fn train_base(
    model: &mut BaseModel,
    train: &[&PatchPair],
    val: &[&PatchPair],
    cfg: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    let f = BaseForward(model.spec);
    train_loop(&f, &mut model.params, train, val, cfg)
}

/// Trains a meta-learner on top of frozen base models.
pub fn train_meta(
    meta: &mut MetaModel,
    bases: &[BaseModel],
    train: &[&PatchPair],
    val: &[&PatchPair],
    cfg: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    if bases.len() != meta.spec.n_base || bases.len() < 2 {
        return Err(TrainError::Ensemble(format!(
            "meta-learner expects {} base models, got {}",
            meta.spec.n_base,
            bases.len()
        )));
    }
    let snapshot = meta.clone();
    let f = MetaForward {
        meta: &snapshot,
        bases,
    };
    train_loop(&f, &mut meta.params, train, val, cfg)
}

/// Loss of a model over a patch list with the training formula.
pub fn base_loss(model: &BaseModel, patches: &[&PatchPair], cfg: &TrainConfig) -> Result<f64, TrainError> {
    evaluate_loss(&BaseForward(model.spec), &model.params, patches, cfg)
}

pub fn meta_loss(
    meta: &MetaModel,
    bases: &[BaseModel],
    patches: &[&PatchPair],
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    evaluate_loss(&MetaForward { meta, bases }, &meta.params, patches, cfg)
}

/// `indices.len()` draws with replacement from `indices`.
pub fn bootstrap_dataset(indices: &[usize], seed: u64) -> Result<Vec<usize>, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::EmptySplit("bootstrap source"));
    }
    let mut rng = seed::rng(seed);
    Ok((0..indices.len())
        .map(|_| indices[rng.gen_range(0..indices.len())])
        .collect())
}

/// Fraction of distinct entries in a resample.
pub fn distinct_fraction(sample: &[usize]) -> f64 {
    sample.iter().collect::<BTreeSet<_>>().len() as f64 / sample.len() as f64
}

/// Which training patches a base learner sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetSelector {
    Pooled,
    Compartment(Compartment),
}

impl DatasetSelector {
    pub fn select(&self, patches: &[PatchPair], indices: &[usize]) -> Vec<usize> {
        indices
            .iter()
            .copied()
            .filter(|&i| match self {
                DatasetSelector::Pooled => true,
                DatasetSelector::Compartment(c) => patches[i].compartment == *c,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleKind {
    Bagging,
    Stacking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseData {
    Pooled,
    Compartmentalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub n_base: usize,
    pub base_data: BaseData,
    /// Block kind per member; a single entry applies to all.
    pub block_kinds: Vec<BlockKind>,
}

impl EnsembleSpec {
    pub fn validate(&self, n_compartments: usize) -> Result<(), TrainError> {
        if !(2..=12).contains(&self.n_base) {
            return Err(TrainError::Ensemble(format!("n_base must be 2..=12, got {}", self.n_base)));
        }
        if self.base_data == BaseData::Compartmentalized && self.n_base != n_compartments {
            return Err(TrainError::Ensemble(format!(
                "compartmentalized ensemble needs one member per compartment ({n_compartments}), got {}",
                self.n_base
            )));
        }
        if !(self.block_kinds.len() == 1 || self.block_kinds.len() == self.n_base) {
            return Err(TrainError::Ensemble(format!(
                "{} block kinds for {} members",
                self.block_kinds.len(),
                self.n_base
            )));
        }
        Ok(())
    }

    pub fn block_kind(&self, member: usize) -> BlockKind {
        self.block_kinds[if self.block_kinds.len() == 1 { 0 } else { member }]
    }
}

/// Content hash of a model (FNV-1a over spec line and weights).
pub fn model_id(model: &BaseModel) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let spec = model.spec.to_string();
    for &b in spec.as_bytes().iter().chain(encode_params(&model.params).iter()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn check_patch_inputs(lr_vel: &[f32], lr_mag: &[f32]) -> Result<(), TrainError> {
    if lr_vel.len() != 3 * LR_VOXELS || lr_mag.len() != LR_VOXELS {
        return Err(TrainError::Shape(format!(
            "expected 3x{LR_VOXELS} velocity and {LR_VOXELS} magnitude values"
        )));
    }
    Ok(())
}

/// Soft-voting ensemble: the voxelwise mean of member outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Bagging {
    members: Vec<(u64, BaseModel)>,
}

impl Bagging {
    /// Members are kept sorted by content id so the mean is summed in an order
    /// independent of how they were listed.
    pub fn new(models: Vec<BaseModel>) -> Result<Self, TrainError> {
        if models.is_empty() {
            return Err(TrainError::Ensemble("bagging needs at least one model".into()));
        }
        let mut members: Vec<(u64, BaseModel)> = models.into_iter().map(|m| (model_id(&m), m)).collect();
        members.sort_by_key(|(id, _)| *id);
        Ok(Self { members })
    }

    pub fn members(&self) -> impl Iterator<Item = &BaseModel> {
        self.members.iter().map(|(_, m)| m)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn predict(&self, lr_vel: &[f32], lr_mag: &[f32], venc: f32) -> Result<Vec<f32>, TrainError> {
        check_patch_inputs(lr_vel, lr_mag)?;
        let mut acc = vec![0.0f64; 3 * HR_VOXELS];
        for (_, m) in &self.members {
            let out = m.forward_sr(lr_vel, lr_mag, venc)?;
            acc.iter_mut().zip(&out).for_each(|(a, &v)| *a += v as f64);
        }
        let n = self.members.len() as f64;
        Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
    }
}

/// Frozen base models fused by a meta-learner; member order is significant.
#[derive(Debug, Clone, PartialEq)]
pub struct Stacking {
    pub bases: Vec<BaseModel>,
    pub meta: MetaModel,
}

impl Stacking {
    pub fn new(bases: Vec<BaseModel>, meta: MetaModel) -> Result<Self, TrainError> {
        if bases.len() != meta.spec.n_base {
            return Err(TrainError::Ensemble(format!(
                "meta-learner expects {} base models, got {}",
                meta.spec.n_base,
                bases.len()
            )));
        }
        Ok(Self { bases, meta })
    }

    pub fn predict(&self, lr_vel: &[f32], lr_mag: &[f32], venc: f32) -> Result<Vec<f32>, TrainError> {
        check_patch_inputs(lr_vel, lr_mag)?;
        if !(venc.is_finite() && venc > 0.0) {
            return Err(TrainError::Model(ModelError::BadInput(format!("venc must be positive, got {venc}"))));
        }
        let patch = PatchPair {
            lr_mag: lr_mag.to_vec(),
            lr_vel: lr_vel.to_vec(),
            hr_vel: Vec::new(),
            hr_mask: Vec::new(),
            venc,
            compartment: Compartment::Aortic,
            source_model: 0,
        };
        let stacked = meta_input(&self.bases, self.meta.spec.append_lr, &patch)?;
        let mut out = self.meta.forward_normalized(&stacked, 2 * LR_PATCH)?;
        out.iter_mut().for_each(|v| *v *= venc);
        Ok(out)
    }
}

/// Seeds for ensemble member `k` under `root`: (bootstrap, init/shuffle).
pub fn member_seeds(root: u64, k: usize) -> (u64, u64) {
    (
        seed::derive_seed(root, 2 * k as u64),
        seed::derive_seed(root, 2 * k as u64 + 1),
    )
}

/// Trains `n` bootstrap members on `train` and returns the ensemble plus
/// each member's log.
pub fn train_bagging(
    patches: &[PatchPair],
    train: &[usize],
    val: &[usize],
    spec: &EnsembleSpec,
    template: BaseModelSpec,
    cfg: &TrainConfig,
) -> Result<(Bagging, Vec<TrainLog>), TrainError> {
    spec.validate(Compartment::ALL.len())?;
    let val_refs: Vec<&PatchPair> = val.iter().map(|&i| &patches[i]).collect();
    let mut models = Vec::with_capacity(spec.n_base);
    let mut logs = Vec::with_capacity(spec.n_base);
    for k in 0..spec.n_base {
        let (boot_seed, model_seed) = member_seeds(cfg.seed, k);
        let sample = bootstrap_dataset(train, boot_seed)?;
        let refs: Vec<&PatchPair> = sample.iter().map(|&i| &patches[i]).collect();
        let mut model = BaseModel::build(BaseModelSpec {
            block_kind: spec.block_kind(k),
            seed: model_seed,
            ..template
        })?;
        let member_cfg = TrainConfig {
            seed: model_seed,
            ..*cfg
        };
        log::info!("bagging member {}/{}", k + 1, spec.n_base);
        logs.push(train_base(&mut model, &refs, &val_refs, &member_cfg)?);
        models.push(model);
    }
    Ok((Bagging::new(models)?, logs))
}
