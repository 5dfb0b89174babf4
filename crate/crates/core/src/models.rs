//! Super-resolution networks.
//!
//! The base network maps a 12³ low-resolution patch (3 velocity channels plus
//! one magnitude channel) to a 24³ velocity patch. The meta-learner fuses the
//! 24³ outputs of several base networks. Parameters live in a [`Params`] list
//! whose order is the build order; forward passes consume it in that order.

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::fileio::{atomic_write, put_f32s, ByteReader};
use crate::patch::LR_PATCH;
use crate::tensor::{Params, Real, Tape, Tensor, TensorError, Var};

pub const F4DW_MAGIC: &[u8; 4] = b"F4DW";
pub const F4DW_VERSION: u32 = 1;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const META_LAYERS: usize = 8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("spec-mismatch: {0}")]
    SpecMismatch(String),
    #[error("bad-magic")]
    BadMagic,
    #[error("bad-version: {0}")]
    BadVersion(u32),
    #[error("truncated")]
    Truncated,
    #[error("malformed weights file: {0}")]
    Malformed(String),
    #[error("input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Residual,
    Dense,
    Csp,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Residual => "residual",
            BlockKind::Dense => "dense",
            BlockKind::Csp => "csp",
        }
    }
}

impl FromStr for BlockKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "residual" => Ok(BlockKind::Residual),
            "dense" => Ok(BlockKind::Dense),
            "csp" => Ok(BlockKind::Csp),
            _ => Err(ModelError::InvalidSpec(format!("unknown block kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    /// Leaky ReLU with slope [`LEAKY_SLOPE`].
    Leaky,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Leaky => "leaky",
        }
    }

    pub fn apply<T: Real>(self, tape: &mut Tape<T>, x: Var) -> Result<Var, TensorError> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Leaky => tape.leaky_relu(x, T::from_f64_lossy(LEAKY_SLOPE)),
        }
    }
}

impl FromStr for Activation {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "leaky" => Ok(Activation::Leaky),
            _ => Err(ModelError::InvalidSpec(format!("unknown activation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BaseModelSpec {
    pub channels: usize,
    pub n_blocks_low: usize,
    pub n_blocks_high: usize,
    pub block_kind: BlockKind,
    pub activation: Activation,
    /// Adds the trilinear upsampled input to the heads; the output convs
    /// then start at zero so an untrained model interpolates.
    pub global_skip: bool,
    pub seed: u64,
}

impl Default for BaseModelSpec {
    fn default() -> Self {
        Self {
            channels: 16,
            n_blocks_low: 4,
            n_blocks_high: 4,
            block_kind: BlockKind::Residual,
            activation: Activation::Leaky,
            global_skip: true,
            seed: 0,
        }
    }
}

impl BaseModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.channels < 4 {
            return Err(ModelError::InvalidSpec(format!(
                "channels must be >= 4, got {}",
                self.channels
            )));
        }
        if self.n_blocks_low == 0 || self.n_blocks_high == 0 {
            return Err(ModelError::InvalidSpec("block counts must be >= 1".into()));
        }
        Ok(())
    }

    /// `(name, c_in, c_out)` for every convolution, in build order.
    pub fn conv_layers(&self) -> Vec<(String, usize, usize)> {
        let c = self.channels;
        let mut layers = vec![("phase".to_string(), 3, c), ("mag".to_string(), 1, c)];
        let block = |layers: &mut Vec<(String, usize, usize)>, prefix: String| match self.block_kind {
            BlockKind::Residual => {
                layers.push((format!("{prefix}.conv1"), c, c));
                layers.push((format!("{prefix}.conv2"), c, c));
            }
            BlockKind::Dense => {
                layers.push((format!("{prefix}.conv1"), c, c));
                layers.push((format!("{prefix}.conv2"), 2 * c, c));
                layers.push((format!("{prefix}.proj"), 3 * c, c));
            }
            BlockKind::Csp => {
                let h = c - c / 2;
                layers.push((format!("{prefix}.conv1"), h, h));
                layers.push((format!("{prefix}.conv2"), h, h));
                layers.push((format!("{prefix}.proj"), c, c));
            }
        };
        for i in 0..self.n_blocks_low {
            block(&mut layers, format!("low.{i}"));
        }
        layers.push(("up".to_string(), c, c));
        for i in 0..self.n_blocks_high {
            block(&mut layers, format!("high.{i}"));
        }
        for axis in ["x", "y", "z"] {
            layers.push((format!("head.{axis}.conv1"), c, c));
            layers.push((format!("head.{axis}.out"), c, 1));
        }
        layers
    }
}

impl fmt::Display for BaseModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "base channels={} n_blocks_low={} n_blocks_high={} block_kind={} activation={} global_skip={} seed={}",
            self.channels,
            self.n_blocks_low,
            self.n_blocks_high,
            self.block_kind.name(),
            self.activation.name(),
            self.global_skip,
            self.seed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MetaModelSpec {
    pub n_base: usize,
    pub channels: usize,
    pub activation: Activation,
    /// Also feed the trilinear-upsampled low-resolution velocity.
    pub append_lr: bool,
    pub zero_init_final: bool,
    pub seed: u64,
}

impl Default for MetaModelSpec {
    fn default() -> Self {
        Self {
            n_base: 2,
            channels: 32,
            activation: Activation::Leaky,
            append_lr: false,
            zero_init_final: false,
            seed: 0,
        }
    }
}

impl MetaModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_base < 2 {
            return Err(ModelError::InvalidSpec(format!(
                "meta-learner needs >= 2 base models, got {}",
                self.n_base
            )));
        }
        if self.channels == 0 {
            return Err(ModelError::InvalidSpec("channels must be >= 1".into()));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        3 * self.n_base + if self.append_lr { 3 } else { 0 }
    }

    pub fn conv_layers(&self) -> Vec<(String, usize, usize)> {
        (0..META_LAYERS)
            .map(|i| {
                let cin = if i == 0 { self.input_channels() } else { self.channels };
                let cout = if i + 1 == META_LAYERS { 3 } else { self.channels };
                (format!("meta.{i}"), cin, cout)
            })
            .collect()
    }
}

impl fmt::Display for MetaModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "meta n_base={} channels={} layers={} activation={} append_lr={} zero_init_final={} seed={}",
            self.n_base,
            self.channels,
            META_LAYERS,
            self.activation.name(),
            self.append_lr,
            self.zero_init_final,
            self.seed
        )
    }
}

/// Either model spec; the text form is the weights sidecar line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelSpec {
    Base(BaseModelSpec),
    Meta(MetaModelSpec),
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Base(s) => s.fmt(f),
            ModelSpec::Meta(s) => s.fmt(f),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = ModelError;
    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let mut words = line.split_whitespace();
        let kind = words.next().unwrap_or_default();
        let mut fields = std::collections::BTreeMap::new();
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| ModelError::InvalidSpec(format!("expected key=value, got {w:?}")))?;
            fields.insert(k, v);
        }
        let mut take = |k: &str| {
            fields
                .remove(k)
                .ok_or_else(|| ModelError::InvalidSpec(format!("missing {k}")))
        };
        fn num<N: FromStr>(k: &str, v: &str) -> Result<N, ModelError> {
            v.parse()
                .map_err(|_| ModelError::InvalidSpec(format!("bad value for {k}: {v:?}")))
        }
        let spec = match kind {
            "base" => ModelSpec::Base(BaseModelSpec {
                channels: num("channels", take("channels")?)?,
                n_blocks_low: num("n_blocks_low", take("n_blocks_low")?)?,
                n_blocks_high: num("n_blocks_high", take("n_blocks_high")?)?,
                block_kind: take("block_kind")?.parse()?,
                activation: take("activation")?.parse()?,
                global_skip: num("global_skip", take("global_skip")?)?,
                seed: num("seed", take("seed")?)?,
            }),
            "meta" => {
                let layers: usize = num("layers", take("layers")?)?;
                if layers != META_LAYERS {
                    return Err(ModelError::InvalidSpec(format!("meta layers must be {META_LAYERS}")));
                }
                ModelSpec::Meta(MetaModelSpec {
                    n_base: num("n_base", take("n_base")?)?,
                    channels: num("channels", take("channels")?)?,
                    activation: take("activation")?.parse()?,
                    append_lr: num("append_lr", take("append_lr")?)?,
                    zero_init_final: num("zero_init_final", take("zero_init_final")?)?,
                    seed: num("seed", take("seed")?)?,
                })
            }
            other => return Err(ModelError::InvalidSpec(format!("unknown model kind {other:?}"))),
        };
        if let Some(k) = fields.keys().next() {
            return Err(ModelError::InvalidSpec(format!("unknown field {k}")));
        }
        Ok(spec)
    }
}

fn he_uniform(
    params: &mut Params<f32>,
    layers: &[(String, usize, usize)],
    seed: u64,
    zero: impl Fn(usize, &str) -> bool,
) {
    let mut rng = crate::seed::rng(seed);
    for (k, (name, cin, cout)) in layers.iter().enumerate() {
        let fan_in = (cin * 27) as f64;
        let bound = (6.0 / fan_in).sqrt() as f32;
        let n = cout * cin * 27;
        let w: Vec<f32> = if zero(k, name) {
            vec![0.0; n]
        } else {
            (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
        };
        params.push(
            format!("{name}.w"),
            Tensor::new(vec![*cout, *cin, 3, 3, 3], w).expect("conv weight shape"),
        );
        params.push(format!("{name}.b"), Tensor::zeros(vec![*cout]));
    }
}

/// Binds parameters to a tape in build order.
struct Binder<'a, T> {
    params: &'a Params<T>,
    next: usize,
}

impl<'a, T: Real> Binder<'a, T> {
    fn new(params: &'a Params<T>) -> Self {
        Self { params, next: 0 }
    }

    fn conv(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var, ModelError> {
        if self.next + 2 > self.params.len() {
            return Err(ModelError::SpecMismatch("parameter list too short".into()));
        }
        let w = tape.param(self.next, self.params.get(self.next))?;
        let b = tape.param(self.next + 1, self.params.get(self.next + 1))?;
        self.next += 2;
        Ok(tape.conv3d(x, w, b)?)
    }

    fn finish(self) -> Result<(), ModelError> {
        if self.next != self.params.len() {
            return Err(ModelError::SpecMismatch(format!(
                "{} parameter tensors unused",
                self.params.len() - self.next
            )));
        }
        Ok(())
    }
}

fn block<T: Real>(
    spec: &BaseModelSpec,
    tape: &mut Tape<T>,
    bind: &mut Binder<'_, T>,
    x: Var,
) -> Result<Var, ModelError> {
    let act = spec.activation;
    Ok(match spec.block_kind {
        BlockKind::Residual => {
            let h = bind.conv(tape, x)?;
            let h = act.apply(tape, h)?;
            let h = bind.conv(tape, h)?;
            tape.add(x, h)?
        }
        BlockKind::Dense => {
            let f1 = bind.conv(tape, x)?;
            let f1 = act.apply(tape, f1)?;
            let cat1 = tape.concat(&[x, f1])?;
            let f2 = bind.conv(tape, cat1)?;
            let f2 = act.apply(tape, f2)?;
            let cat2 = tape.concat(&[x, f1, f2])?;
            bind.conv(tape, cat2)?
        }
        BlockKind::Csp => {
            let c = spec.channels;
            let half = c / 2;
            let keep = tape.slice_channels(x, 0, half)?;
            let work = tape.slice_channels(x, half, c - half)?;
            let h = bind.conv(tape, work)?;
            let h = act.apply(tape, h)?;
            let h = bind.conv(tape, h)?;
            let work = tape.add(work, h)?;
            let cat = tape.concat(&[keep, work])?;
            bind.conv(tape, cat)?
        }
    })
}

/// Base network on a tape: `vel` is `[3,n,n,n]`, `mag` is `[1,n,n,n]`; the
/// result is `[3,2n,2n,2n]`.
pub fn base_forward<T: Real>(
    spec: &BaseModelSpec,
    params: &Params<T>,
    tape: &mut Tape<T>,
    vel: Var,
    mag: Var,
) -> Result<Var, ModelError> {
    let act = spec.activation;
    let mut bind = Binder::new(params);
    let p = bind.conv(tape, vel)?;
    let p = act.apply(tape, p)?;
    let m = bind.conv(tape, mag)?;
    let m = act.apply(tape, m)?;
    let mut h = tape.add(p, m)?;
    for _ in 0..spec.n_blocks_low {
        h = block(spec, tape, &mut bind, h)?;
    }
    h = tape.upsample2(h)?;
    h = bind.conv(tape, h)?;
    h = act.apply(tape, h)?;
    for _ in 0..spec.n_blocks_high {
        h = block(spec, tape, &mut bind, h)?;
    }
    let mut heads = Vec::with_capacity(3);
    for _ in 0..3 {
        let o = bind.conv(tape, h)?;
        let o = act.apply(tape, o)?;
        heads.push(bind.conv(tape, o)?);
    }
    bind.finish()?;
    let out = tape.concat(&heads)?;
    if spec.global_skip {
        let up = tape.upsample2_samples(vel)?;
        return Ok(tape.add(out, up)?);
    }
    Ok(out)
}

/// Meta network on a tape: `x` is `[input_channels, n, n, n]`.
pub fn meta_forward<T: Real>(
    spec: &MetaModelSpec,
    params: &Params<T>,
    tape: &mut Tape<T>,
    x: Var,
) -> Result<Var, ModelError> {
    let mut bind = Binder::new(params);
    let mut h = x;
    for i in 0..META_LAYERS {
        h = bind.conv(tape, h)?;
        if i + 1 < META_LAYERS {
            h = spec.activation.apply(tape, h)?;
        }
    }
    bind.finish()?;
    Ok(h)
}

fn check_finite(what: &str, v: &[f32]) -> Result<(), ModelError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(ModelError::BadInput(format!("non-finite {what} at index {i}"))),
        None => Ok(()),
    }
}

fn check_venc(venc: f32) -> Result<(), ModelError> {
    if !(venc.is_finite() && venc > 0.0) {
        return Err(ModelError::BadInput(format!("venc must be positive, got {venc}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseModel {
    pub spec: BaseModelSpec,
    pub params: Params<f32>,
}

impl BaseModel {
    pub fn build(spec: BaseModelSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut params = Params::new();
        let skip = spec.global_skip;
        he_uniform(&mut params, &spec.conv_layers(), spec.seed, |_, name| {
            skip && name.ends_with(".out")
        });
        Ok(Self { spec, params })
    }

    /// Network on venc-normalized input. `lr_vel` is `3·n³` component-major,
    /// `lr_mag` is `n³`; returns normalized `3·(2n)³` velocities.
    pub fn forward_normalized(&self, lr_vel: &[f32], lr_mag: &[f32], n: usize) -> Result<Vec<f32>, ModelError> {
        let mut tape = Tape::new();
        let vel = tape.constant(Tensor::new(vec![3, n, n, n], lr_vel.to_vec())?)?;
        let mag = tape.constant(Tensor::new(vec![1, n, n, n], lr_mag.to_vec())?)?;
        let out = base_forward(&self.spec, &self.params, &mut tape, vel, mag)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Super-resolves one 12³ patch: velocities are divided by `venc` on the
    /// way in and multiplied back on the way out.
    pub fn forward_sr(&self, lr_vel: &[f32], lr_mag: &[f32], venc: f32) -> Result<Vec<f32>, ModelError> {
        let n = LR_PATCH;
        if lr_vel.len() != 3 * n * n * n || lr_mag.len() != n * n * n {
            return Err(ModelError::BadInput(format!(
                "expected 3x{n}³ velocity and {n}³ magnitude, got {} and {}",
                lr_vel.len(),
                lr_mag.len()
            )));
        }
        check_venc(venc)?;
        check_finite("velocity", lr_vel)?;
        check_finite("magnitude", lr_mag)?;
        let norm: Vec<f32> = lr_vel.iter().map(|v| v / venc).collect();
        let mut out = self.forward_normalized(&norm, lr_mag, n)?;
        out.iter_mut().for_each(|v| *v *= venc);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaModel {
    pub spec: MetaModelSpec,
    pub params: Params<f32>,
}

impl MetaModel {
    pub fn build(spec: MetaModelSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut params = Params::new();
        let last = spec.conv_layers().len() - 1;
        let zero_final = spec.zero_init_final;
        he_uniform(&mut params, &spec.conv_layers(), spec.seed, |k, _| zero_final && k == last);
        Ok(Self { spec, params })
    }

    /// Fuses normalized base outputs (`input_channels · n³`, channel-stacked).
    pub fn forward_normalized(&self, stacked: &[f32], n: usize) -> Result<Vec<f32>, ModelError> {
        let c = self.spec.input_channels();
        if stacked.len() != c * n * n * n {
            return Err(ModelError::BadInput(format!(
                "meta-learner expects {c} channels of {n}³, got {} values",
                stacked.len()
            )));
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![c, n, n, n], stacked.to_vec())?)?;
        let out = meta_forward(&self.spec, &self.params, &mut tape, x)?;
        Ok(tape.value(out).data().to_vec())
    }
}

/// Either kind of network.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Base(BaseModel),
    Meta(MetaModel),
}

impl Model {
    pub fn build(spec: ModelSpec) -> Result<Self, ModelError> {
        Ok(match spec {
            ModelSpec::Base(s) => Model::Base(BaseModel::build(s)?),
            ModelSpec::Meta(s) => Model::Meta(MetaModel::build(s)?),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Base(m) => ModelSpec::Base(m.spec),
            Model::Meta(m) => ModelSpec::Meta(m.spec),
        }
    }

    pub fn params(&self) -> &Params<f32> {
        match self {
            Model::Base(m) => &m.params,
            Model::Meta(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut Params<f32> {
        match self {
            Model::Base(m) => &mut m.params,
            Model::Meta(m) => &mut m.params,
        }
    }
}

/// Trilinear refinement of a `3 x n³` LR velocity patch onto the `2n` grid,
/// with LR voxel `j` at HR voxel `2j`.
pub fn upsample_lr_velocity(lr_vel: &[f32], n: usize) -> Result<Vec<f32>, ModelError> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![3, n, n, n], lr_vel.to_vec())?)?;
    let y = tape.upsample2_samples(x)?;
    Ok(tape.value(y).data().to_vec())
}

pub fn encode_params(params: &Params<f32>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 4 * params.count() + 64 * params.len());
    buf.extend_from_slice(F4DW_MAGIC);
    buf.extend_from_slice(&F4DW_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.shape().len() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f32s(&mut buf, t.data());
    }
    buf
}

pub fn decode_params(bytes: &[u8]) -> Result<Params<f32>, ModelError> {
    let mut r = ByteReader::new(bytes);
    if r.take(4).ok_or(ModelError::Truncated)? != F4DW_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = r.u32().ok_or(ModelError::Truncated)?;
    if version != F4DW_VERSION {
        return Err(ModelError::BadVersion(version));
    }
    let count = r.u32().ok_or(ModelError::Truncated)?;
    let mut params = Params::new();
    for _ in 0..count {
        let len = r.u16().ok_or(ModelError::Truncated)? as usize;
        let name = std::str::from_utf8(r.take(len).ok_or(ModelError::Truncated)?)
            .map_err(|_| ModelError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        if params.index_of(&name).is_some() {
            return Err(ModelError::Malformed(format!("duplicate tensor {name}")));
        }
        let ndim = r.u8().ok_or(ModelError::Truncated)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32().ok_or(ModelError::Truncated)? as usize);
        }
        let n: usize = shape.iter().product();
        let data = r.f32_vec(n).ok_or(ModelError::Truncated)?;
        let t = Tensor::new(shape, data).map_err(|e| ModelError::Malformed(e.to_string()))?;
        params.push(name, t);
    }
    if r.remaining() != 0 {
        return Err(ModelError::Malformed("trailing bytes".into()));
    }
    Ok(params)
}

pub fn save_params(path: &Path, params: &Params<f32>) -> Result<(), ModelError> {
    atomic_write(path, &encode_params(params))?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<Params<f32>, ModelError> {
    decode_params(&std::fs::read(path)?)
}

/// Checks that `loaded` has exactly the names and shapes of `expected`.
pub fn check_layout(expected: &Params<f32>, loaded: &Params<f32>) -> Result<(), ModelError> {
    if expected.len() != loaded.len() {
        return Err(ModelError::SpecMismatch(format!(
            "expected {} tensors, file has {}",
            expected.len(),
            loaded.len()
        )));
    }
    for ((en, et), (ln, lt)) in expected.iter().zip(loaded.iter()) {
        if en != ln || et.shape() != lt.shape() {
            return Err(ModelError::SpecMismatch(format!(
                "expected {en} {:?}, found {ln} {:?}",
                et.shape(),
                lt.shape()
            )));
        }
    }
    Ok(())
}

pub fn spec_sidecar(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".spec");
    PathBuf::from(s)
}

/// Writes weights plus the `<weights>.spec` sidecar line.
pub fn save_model(path: &Path, model: &Model) -> Result<(), ModelError> {
    save_params(path, model.params())?;
    atomic_write(&spec_sidecar(path), format!("{}\n", model.spec()).as_bytes())?;
    Ok(())
}

/// Loads weights and validates them against `spec`.
pub fn load_model_with_spec(path: &Path, spec: ModelSpec) -> Result<Model, ModelError> {
    let mut model = Model::build(spec)?;
    let params = load_params(path)?;
    check_layout(model.params(), &params)?;
    *model.params_mut() = params;
    Ok(model)
}

/// Loads weights using the spec recorded in the sidecar.
pub fn load_model(path: &Path) -> Result<Model, ModelError> {
    let line = std::fs::read_to_string(spec_sidecar(path))?;
    load_model_with_spec(path, line.trim().parse()?)
}
