//! Training patches.
//!
//! A [`PatchPair`] pairs a 12³ low-resolution window (magnitude and velocity)
//! with the aligned 24³ high-resolution velocity and fluid mask. Arrays are
//! x-fastest; vector data is stored component-major (all vx, then vy, vz).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::fileio::ByteReader;
use crate::synth::{SynthPair, FACTOR};
use crate::volume::{Compartment, VolumeGrid};

pub const LR_PATCH: usize = 12;
pub const HR_PATCH: usize = LR_PATCH * FACTOR;
pub const LR_VOXELS: usize = LR_PATCH * LR_PATCH * LR_PATCH;
pub const HR_VOXELS: usize = HR_PATCH * HR_PATCH * HR_PATCH;

pub const F4DP_MAGIC: &[u8; 4] = b"F4DP";
pub const F4DP_VERSION: u32 = 1;
pub const F4DP_HEADER_BYTES: usize = 4 + 4 + 2 + 2 + 8;
pub const F4DP_RECORD_BYTES: usize =
    1 + 2 + 4 + 4 * LR_VOXELS + 4 * 3 * LR_VOXELS + 4 * 3 * HR_VOXELS + HR_VOXELS;

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("stride must be >= 1")]
    BadStride,
    #[error("patch of {patch} voxels larger than volume {dims:?}")]
    PatchTooLarge { patch: usize, dims: [usize; 3] },
    #[error("invalid rotation: axis {axis:?}, {turns} quarter turns")]
    BadRotation { axis: Axis, turns: u8 },
    #[error("need at least {needed} source models, found {found}")]
    TooFewModels { needed: usize, found: usize },
    #[error("split ratios must be positive")]
    BadRatios,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("batch size {batch} invalid for dataset of {len}")]
    BadBatchSize { batch: usize, len: usize },
    #[error("bad-magic")]
    BadMagic,
    #[error("bad-version: {0}")]
    BadVersion(u32),
    #[error("unsupported patch geometry lr={lr} factor={factor}")]
    BadGeometry { lr: u16, factor: u16 },
    #[error("truncated")]
    Truncated,
    #[error("trailing bytes after last record")]
    TrailingBytes,
    #[error("unknown compartment code {0}")]
    BadCompartment(u8),
    #[error("mask byte {0} is neither 0 nor 1")]
    BadMaskByte(u8),
    #[error("split manifest line {line}: {msg}")]
    SplitManifest { line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    /// 12³ low-resolution magnitude.
    pub lr_mag: Vec<f32>,
    /// 3 x 12³ low-resolution velocity (cm/s).
    pub lr_vel: Vec<f32>,
    /// 3 x 24³ high-resolution velocity (cm/s).
    pub hr_vel: Vec<f32>,
    /// 24³ high-resolution fluid mask.
    pub hr_mask: Vec<bool>,
    pub venc: f32,
    pub compartment: Compartment,
    pub source_model: u16,
}

impl PatchPair {
    pub fn hr_fluid_count(&self) -> usize {
        self.hr_mask.iter().filter(|f| **f).count()
    }
}

/// What counts as a "non-stationary" voxel for the fluid-fraction rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionCriterion {
    /// Low-resolution fluid mask.
    FluidMask,
    /// Low-resolution speed above the threshold (cm/s).
    SpeedAbove(f32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchConfig {
    pub stride: usize,
    pub min_fluid_frac: f64,
    pub criterion: MotionCriterion,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            stride: 6,
            min_fluid_frac: 0.05,
            criterion: MotionCriterion::FluidMask,
        }
    }
}

/// Minimum number of non-stationary voxels for a window to be kept.
pub fn min_fluid_voxels(min_fluid_frac: f64) -> usize {
    (min_fluid_frac * LR_VOXELS as f64).ceil() as usize
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub patches: Vec<PatchPair>,
    pub kept: usize,
    pub rejected: usize,
}

fn window_starts(n: usize, stride: usize) -> Vec<usize> {
    (0..)
        .map(|k| k * stride)
        .take_while(|s| s + LR_PATCH <= n)
        .collect()
}

fn crop(values: &[f32], grid: &VolumeGrid, origin: [usize; 3], size: usize, out: &mut Vec<f32>) {
    for z in 0..size {
        for y in 0..size {
            let start = grid.index(origin[0], origin[1] + y, origin[2] + z);
            out.extend_from_slice(&values[start..start + size]);
        }
    }
}

/// Slides a 12³ window over the low-resolution grid (origins ordered by
/// linear index) and keeps windows with enough non-stationary voxels.
pub fn extract_patches(
    pair: &SynthPair,
    source_model: u16,
    cfg: &PatchConfig,
) -> Result<Extraction, PatchError> {
    if cfg.stride == 0 {
        return Err(PatchError::BadStride);
    }
    let lr = &pair.lr;
    let hr = &pair.hr;
    let lg = *lr.grid();
    let hg = *hr.grid();
    let dims = lg.dims();
    if dims.iter().any(|&d| d < LR_PATCH) {
        return Err(PatchError::PatchTooLarge {
            patch: LR_PATCH,
            dims,
        });
    }
    let need = min_fluid_voxels(cfg.min_fluid_frac);
    let moving: Vec<bool> = match cfg.criterion {
        MotionCriterion::FluidMask => lr.mask.fluid().to_vec(),
        MotionCriterion::SpeedAbove(t) => (0..lg.len()).map(|i| lr.velocity.speed(i) > t).collect(),
    };

    let mut out = Extraction::default();
    for &z0 in &window_starts(dims[2], cfg.stride) {
        for &y0 in &window_starts(dims[1], cfg.stride) {
            for &x0 in &window_starts(dims[0], cfg.stride) {
                let mut count = 0;
                for z in 0..LR_PATCH {
                    for y in 0..LR_PATCH {
                        let s = lg.index(x0, y0 + y, z0 + z);
                        count += moving[s..s + LR_PATCH].iter().filter(|m| **m).count();
                    }
                }
                if count < need {
                    out.rejected += 1;
                    continue;
                }
                let lo = [x0, y0, z0];
                let hi = lo.map(|v| v * FACTOR);
                let mut lr_mag = Vec::with_capacity(LR_VOXELS);
                crop(lr.magnitude.values(), &lg, lo, LR_PATCH, &mut lr_mag);
                let mut lr_vel = Vec::with_capacity(3 * LR_VOXELS);
                for c in lr.velocity.components() {
                    crop(c, &lg, lo, LR_PATCH, &mut lr_vel);
                }
                let mut hr_vel = Vec::with_capacity(3 * HR_VOXELS);
                for c in hr.velocity.components() {
                    crop(c, &hg, hi, HR_PATCH, &mut hr_vel);
                }
                let mut hr_mask = Vec::with_capacity(HR_VOXELS);
                for z in 0..HR_PATCH {
                    for y in 0..HR_PATCH {
                        let s = hg.index(hi[0], hi[1] + y, hi[2] + z);
                        hr_mask.extend_from_slice(&hr.mask.fluid()[s..s + HR_PATCH]);
                    }
                }
                out.patches.push(PatchPair {
                    lr_mag,
                    lr_vel,
                    hr_vel,
                    hr_mask,
                    venc: hr.venc,
                    compartment: hr.compartment,
                    source_model,
                });
                out.kept += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];
}

/// One +90° turn of an n³ scalar lattice about `axis` (through the cube centre).
fn quarter_turn<T: Copy + Default>(src: &[T], n: usize, axis: Axis) -> Vec<T> {
    let mut dst = vec![T::default(); src.len()];
    let idx = |x: usize, y: usize, z: usize| x + n * (y + n * z);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let to = match axis {
                    Axis::X => idx(x, n - 1 - z, y),
                    Axis::Y => idx(z, y, n - 1 - x),
                    Axis::Z => idx(n - 1 - y, x, z),
                };
                dst[to] = src[idx(x, y, z)];
            }
        }
    }
    dst
}

/// Rotates lattice positions and vector components of a component-major
/// 3 x n³ array by one +90° turn: `v' = R v`.
fn quarter_turn_vectors(src: &[f32], n: usize, axis: Axis) -> Vec<f32> {
    let m = n * n * n;
    let c: Vec<Vec<f32>> = (0..3).map(|k| quarter_turn(&src[k * m..(k + 1) * m], n, axis)).collect();
    let neg = |v: &Vec<f32>| v.iter().map(|x| -x).collect::<Vec<f32>>();
    let [nx, ny, nz] = match axis {
        Axis::X => [c[0].clone(), neg(&c[2]), c[1].clone()],
        Axis::Y => [c[2].clone(), c[1].clone(), neg(&c[0])],
        Axis::Z => [neg(&c[1]), c[0].clone(), c[2].clone()],
    };
    [nx, ny, nz].concat()
}

/// Exact rigid rotation by `quarter_turns` x 90° about `axis`.
pub fn rotate_patch(p: &PatchPair, axis: Axis, quarter_turns: u8) -> Result<PatchPair, PatchError> {
    if !(1..=3).contains(&quarter_turns) {
        return Err(PatchError::BadRotation {
            axis,
            turns: quarter_turns,
        });
    }
    let mut out = p.clone();
    for _ in 0..quarter_turns {
        out.lr_mag = quarter_turn(&out.lr_mag, LR_PATCH, axis);
        out.lr_vel = quarter_turn_vectors(&out.lr_vel, LR_PATCH, axis);
        out.hr_vel = quarter_turn_vectors(&out.hr_vel, HR_PATCH, axis);
        out.hr_mask = quarter_turn(&out.hr_mask, HR_PATCH, axis);
    }
    Ok(out)
}

/// The nine non-identity rotations, indexed `axis * 3 + (turns - 1)`.
pub fn rotation_by_id(id: usize) -> (Axis, u8) {
    (Axis::ALL[id / 3], (id % 3 + 1) as u8)
}

/// Appends `copies` distinct random rotations after each patch. Output order:
/// original, then its rotations in the order drawn.
pub fn augment(patches: &[PatchPair], copies: usize, rng: &mut impl Rng) -> Vec<PatchPair> {
    let copies = copies.min(9);
    let mut out = Vec::with_capacity(patches.len() * (copies + 1));
    let mut ids: Vec<usize> = (0..9).collect();
    for p in patches {
        out.push(p.clone());
        let (chosen, _) = ids.partial_shuffle(rng, copies);
        for &id in chosen.iter() {
            let (axis, turns) = rotation_by_id(id);
            out.push(rotate_patch(p, axis, turns).expect("valid rotation id"));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Validation, SplitKind::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Validation => "validation",
            SplitKind::Test => "test",
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Indices into a patch list, partitioned by source model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub assignment: BTreeMap<u16, SplitKind>,
}

impl DatasetSplit {
    pub fn indices(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        }
    }

    pub fn models(&self, kind: SplitKind) -> Vec<u16> {
        self.assignment
            .iter()
            .filter(|(_, k)| **k == kind)
            .map(|(m, _)| *m)
            .collect()
    }

    /// Rebuilds index lists from a model assignment. Patches of unassigned
    /// models are left out.
    pub fn from_assignment(patches: &[PatchPair], assignment: BTreeMap<u16, SplitKind>) -> Self {
        let mut split = DatasetSplit {
            assignment,
            ..Default::default()
        };
        for (i, p) in patches.iter().enumerate() {
            match split.assignment.get(&p.source_model) {
                Some(SplitKind::Train) => split.train.push(i),
                Some(SplitKind::Validation) => split.validation.push(i),
                Some(SplitKind::Test) => split.test.push(i),
                None => {}
            }
        }
        split
    }

    /// `model,split` per line.
    pub fn to_manifest(&self) -> String {
        self.assignment
            .iter()
            .map(|(m, k)| format!("{m},{k}\n"))
            .collect()
    }

    pub fn parse_manifest(text: &str) -> Result<BTreeMap<u16, SplitKind>, PatchError> {
        let mut out = BTreeMap::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| PatchError::SplitManifest {
                line: k + 1,
                msg: msg.to_string(),
            };
            let (m, s) = line.split_once(',').ok_or_else(|| err("expected model,split"))?;
            let model: u16 = m.trim().parse().map_err(|_| err("bad model id"))?;
            let kind = SplitKind::ALL
                .into_iter()
                .find(|k| k.name() == s.trim())
                .ok_or_else(|| err("bad split name"))?;
            out.insert(model, kind);
        }
        Ok(out)
    }
}

/// Assigns whole source models to train/validation/test.
///
/// Models are shuffled with `seed`, then stably sorted by patch count
/// (largest first). The three largest seed one split each (train gets the
/// largest); every remaining model goes to the split furthest below its
/// target share of patches.
pub fn split_by_model(
    patches: &[PatchPair],
    ratios: [u32; 3],
    seed: u64,
) -> Result<DatasetSplit, PatchError> {
    if ratios.iter().any(|r| *r == 0) {
        return Err(PatchError::BadRatios);
    }
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    for p in patches {
        *counts.entry(p.source_model).or_default() += 1;
    }
    if counts.len() < 3 {
        return Err(PatchError::TooFewModels {
            needed: 3,
            found: counts.len(),
        });
    }
    let mut models: Vec<(u16, usize)> = counts.into_iter().collect();
    models.shuffle(&mut crate::seed::rng(seed));
    models.sort_by(|a, b| b.1.cmp(&a.1));

    let total: usize = models.iter().map(|m| m.1).sum();
    let ratio_sum: u32 = ratios.iter().sum();
    let targets: Vec<f64> = ratios
        .iter()
        .map(|r| total as f64 * *r as f64 / ratio_sum as f64)
        .collect();
    let mut filled = [0usize; 3];
    let mut assignment = BTreeMap::new();
    for (k, &(model, count)) in models.iter().enumerate() {
        let slot = if k < 3 {
            k
        } else {
            (0..3)
                .max_by(|&a, &b| {
                    let da = targets[a] - filled[a] as f64;
                    let db = targets[b] - filled[b] as f64;
                    da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                })
                .unwrap()
        };
        filled[slot] += count;
        assignment.insert(model, SplitKind::ALL[slot]);
    }
    Ok(DatasetSplit::from_assignment(patches, assignment))
}

/// Per-compartment sample counts of one batch, ordered by compartment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchComposition {
    pub counts: Vec<(Compartment, usize)>,
}

impl BatchComposition {
    pub fn from_labels(labels: impl IntoIterator<Item = Compartment>) -> Self {
        let mut map: BTreeMap<Compartment, usize> = BTreeMap::new();
        for c in labels {
            *map.entry(c).or_default() += 1;
        }
        Self {
            counts: map.into_iter().collect(),
        }
    }

    /// Number of distinct compartments present.
    pub fn n_compartments(&self) -> usize {
        self.counts.len()
    }

    pub fn count_of(&self, c: Compartment) -> usize {
        self.counts
            .iter()
            .find(|(k, _)| *k == c)
            .map_or(0, |(_, n)| *n)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|(_, n)| n).sum()
    }
}

/// One epoch pass: a seeded permutation of `0..len` cut into batches (the last
/// one may be short).
pub fn epoch_batches(
    len: usize,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>, PatchError> {
    if len == 0 {
        return Err(PatchError::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(PatchError::BadBatchSize {
            batch: batch_size,
            len,
        });
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Draws one batch without replacement and reports its composition.
pub fn compose_batch(
    dataset: &[PatchPair],
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<usize>, BatchComposition), PatchError> {
    if dataset.is_empty() {
        return Err(PatchError::EmptyDataset);
    }
    if batch_size == 0 || batch_size > dataset.len() {
        return Err(PatchError::BadBatchSize {
            batch: batch_size,
            len: dataset.len(),
        });
    }
    let batch = epoch_batches(dataset.len(), batch_size, rng)?.swap_remove(0);
    let comp = BatchComposition::from_labels(batch.iter().map(|&i| dataset[i].compartment));
    Ok((batch, comp))
}

fn put_f32s(w: &mut impl Write, values: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    crate::fileio::put_f32s(&mut buf, values);
    w.write_all(&buf)
}

pub fn write_dataset_to(w: &mut impl Write, patches: &[PatchPair]) -> io::Result<()> {
    w.write_all(F4DP_MAGIC)?;
    w.write_all(&F4DP_VERSION.to_le_bytes())?;
    w.write_all(&(LR_PATCH as u16).to_le_bytes())?;
    w.write_all(&(FACTOR as u16).to_le_bytes())?;
    w.write_all(&(patches.len() as u64).to_le_bytes())?;
    for p in patches {
        w.write_all(&[p.compartment.code()])?;
        w.write_all(&p.source_model.to_le_bytes())?;
        w.write_all(&p.venc.to_le_bytes())?;
        put_f32s(w, &p.lr_mag)?;
        put_f32s(w, &p.lr_vel)?;
        put_f32s(w, &p.hr_vel)?;
        let mask: Vec<u8> = p.hr_mask.iter().map(|&b| b as u8).collect();
        w.write_all(&mask)?;
    }
    Ok(())
}

/// Writes an F4DP file atomically.
pub fn write_dataset(path: &Path, patches: &[PatchPair]) -> Result<(), PatchError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write_dataset_to(&mut w, patches)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<PatchPair>, PatchError> {
    let mut r = ByteReader::new(bytes);
    if r.take(4).ok_or(PatchError::Truncated)? != F4DP_MAGIC {
        return Err(PatchError::BadMagic);
    }
    let version = r.u32().ok_or(PatchError::Truncated)?;
    if version != F4DP_VERSION {
        return Err(PatchError::BadVersion(version));
    }
    let lr = r.u16().ok_or(PatchError::Truncated)?;
    let factor = r.u16().ok_or(PatchError::Truncated)?;
    if lr as usize != LR_PATCH || factor as usize != FACTOR {
        return Err(PatchError::BadGeometry { lr, factor });
    }
    let count = r.u64().ok_or(PatchError::Truncated)?;
    if (r.remaining() as u64) < count.saturating_mul(F4DP_RECORD_BYTES as u64) {
        return Err(PatchError::Truncated);
    }
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let code = r.u8().ok_or(PatchError::Truncated)?;
        let compartment = Compartment::from_code(code).ok_or(PatchError::BadCompartment(code))?;
        let source_model = r.u16().ok_or(PatchError::Truncated)?;
        let venc = r.f32().ok_or(PatchError::Truncated)?;
        let lr_mag = r.f32_vec(LR_VOXELS).ok_or(PatchError::Truncated)?;
        let lr_vel = r.f32_vec(3 * LR_VOXELS).ok_or(PatchError::Truncated)?;
        let hr_vel = r.f32_vec(3 * HR_VOXELS).ok_or(PatchError::Truncated)?;
        let raw = r.take(HR_VOXELS).ok_or(PatchError::Truncated)?;
        let mut hr_mask = Vec::with_capacity(HR_VOXELS);
        for &b in raw {
            hr_mask.push(match b {
                0 => false,
                1 => true,
                other => return Err(PatchError::BadMaskByte(other)),
            });
        }
        out.push(PatchPair {
            lr_mag,
            lr_vel,
            hr_vel,
            hr_mask,
            venc,
            compartment,
            source_model,
        });
    }
    if r.remaining() != 0 {
        return Err(PatchError::TrailingBytes);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<PatchPair>, PatchError> {
    decode_dataset(&std::fs::read(path)?)
}
