//! Evaluation: relative speed error, regional RMSE, through-origin
//! regression, whole-volume stitching of patch predictions, and the
//! downsample-and-recover protocol.

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::models::{upsample_lr_velocity, BaseModel};
use crate::patch::{Axis, PatchPair, HR_PATCH, HR_VOXELS, LR_PATCH, LR_VOXELS};
use crate::synth::{synthesize_pair, NoiseSpec, SynthError, FACTOR};
use crate::train::{Bagging, Stacking};
use crate::volume::{FlowSample, FluidMask, ScalarField, VectorField, VolumeError, VolumeGrid};

/// Regularizer in the relative-error denominator (cm/s).
pub const RE_EPS: f64 = 1e-4;
/// Low-resolution stride between stitched tiles.
pub const TILE_STRIDE: usize = 8;
/// High-resolution voxels dropped on interior tile faces.
pub const TILE_RIM: usize = 4;

pub const REPORT_HEADER: [&str; 17] = [
    "model",
    "domain",
    "n_fluid",
    "n_nonfluid",
    "re",
    "rmse_x_fluid",
    "rmse_y_fluid",
    "rmse_z_fluid",
    "rmse_x_nonfluid",
    "rmse_y_nonfluid",
    "rmse_z_nonfluid",
    "k_x",
    "k_y",
    "k_z",
    "r2_x",
    "r2_y",
    "r2_z",
];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("region is empty")]
    EmptyRegion,
    #[error("degenerate-reference: component {0} has zero reference energy")]
    DegenerateReference(usize),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("volume {dims:?} smaller than one {LR_PATCH}³ patch")]
    TooSmall { dims: [usize; 3] },
    #[error("native dims {0:?} must be divisible by 4")]
    NotDivisible([usize; 3]),
    #[error("slice index {index} out of range for axis of length {len}")]
    BadSlice { index: usize, len: usize },
    #[error("prediction failed: {0}")]
    Predict(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn same_grid(a: &VolumeGrid, b: &VolumeGrid) -> Result<(), EvalError> {
    if a.dims() != b.dims() {
        return Err(EvalError::GridMismatch);
    }
    Ok(())
}

/// Mean over the region of `tanh(|V' − V| / (|V| + ε))`.
pub fn relative_error(pred: &VectorField, reference: &VectorField, region: &FluidMask) -> Result<f64, EvalError> {
    same_grid(pred.grid(), reference.grid())?;
    same_grid(pred.grid(), region.grid())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, _) in region.fluid().iter().enumerate().filter(|(_, f)| **f) {
        let p = pred.at(i);
        let r = reference.at(i);
        let mut diff = 0.0f64;
        let mut norm = 0.0f64;
        for c in 0..3 {
            let d = p[c] as f64 - r[c] as f64;
            diff += d * d;
            norm += r[c] as f64 * r[c] as f64;
        }
        sum += (diff.sqrt() / (norm.sqrt() + RE_EPS)).tanh();
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::EmptyRegion);
    }
    Ok(sum / n as f64)
}

/// Per-component RMSE inside and outside the fluid mask; `None` for an empty
/// region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionRmse {
    pub fluid: Option<[f64; 3]>,
    pub nonfluid: Option<[f64; 3]>,
}

pub fn rmse_regions(pred: &VectorField, reference: &VectorField, mask: &FluidMask) -> Result<RegionRmse, EvalError> {
    same_grid(pred.grid(), reference.grid())?;
    same_grid(pred.grid(), mask.grid())?;
    let mut sums = [[0.0f64; 3]; 2];
    let mut counts = [0usize; 2];
    for (i, &f) in mask.fluid().iter().enumerate() {
        let r = usize::from(!f);
        counts[r] += 1;
        let p = pred.at(i);
        let q = reference.at(i);
        for c in 0..3 {
            let d = p[c] as f64 - q[c] as f64;
            sums[r][c] += d * d;
        }
    }
    let finish = |r: usize| (counts[r] > 0).then(|| sums[r].map(|s| (s / counts[r] as f64).sqrt()));
    Ok(RegionRmse {
        fluid: finish(0),
        nonfluid: finish(1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regression {
    pub k: [f64; 3],
    pub r2: [f64; 3],
}

/// Least squares through the origin per component over the fluid region:
/// `k = Σ ref·pred / Σ ref²`, `R² = 1 − Σ(pred − k·ref)² / Σ(pred − mean)²`.
/// `R²` is reported as 0 when the prediction has no variance.
pub fn regression_stats(pred: &VectorField, reference: &VectorField, mask: &FluidMask) -> Result<Regression, EvalError> {
    same_grid(pred.grid(), reference.grid())?;
    same_grid(pred.grid(), mask.grid())?;
    let idx: Vec<usize> = (0..mask.fluid().len()).filter(|&i| mask.fluid()[i]).collect();
    if idx.len() < 2 {
        return Err(EvalError::EmptyRegion);
    }
    let mut out = Regression {
        k: [0.0; 3],
        r2: [0.0; 3],
    };
    for c in 0..3 {
        let p = pred.components()[c];
        let r = reference.components()[c];
        let (mut rp, mut rr, mut mean) = (0.0f64, 0.0f64, 0.0f64);
        for &i in &idx {
            rp += r[i] as f64 * p[i] as f64;
            rr += r[i] as f64 * r[i] as f64;
            mean += p[i] as f64;
        }
        if rr == 0.0 {
            return Err(EvalError::DegenerateReference(c));
        }
        mean /= idx.len() as f64;
        let k = rp / rr;
        let (mut res, mut tot) = (0.0f64, 0.0f64);
        for &i in &idx {
            let e = p[i] as f64 - k * r[i] as f64;
            res += e * e;
            let d = p[i] as f64 - mean;
            tot += d * d;
        }
        out.k[c] = k;
        out.r2[c] = if tot > 0.0 { 1.0 - res / tot } else { 0.0 };
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub domain: String,
    pub n_fluid: usize,
    pub n_nonfluid: usize,
    pub re: f64,
    pub rmse_fluid: Option<[f64; 3]>,
    pub rmse_nonfluid: Option<[f64; 3]>,
    pub k: [f64; 3],
    pub r2: [f64; 3],
}

/// All metrics of `pred` against a reference sample, over its fluid mask.
pub fn evaluate(pred: &VectorField, reference: &FlowSample, model: &str) -> Result<EvalReport, EvalError> {
    let mask = &reference.mask;
    let re = relative_error(pred, &reference.velocity, mask)?;
    let rmse = rmse_regions(pred, &reference.velocity, mask)?;
    let reg = regression_stats(pred, &reference.velocity, mask)?;
    let n_fluid = mask.count();
    Ok(EvalReport {
        model: model.to_string(),
        domain: reference.compartment.name().to_string(),
        n_fluid,
        n_nonfluid: mask.fluid().len() - n_fluid,
        re,
        rmse_fluid: rmse.fluid,
        rmse_nonfluid: rmse.nonfluid,
        k: reg.k,
        r2: reg.r2,
    })
}

/// Metrics pooled over every voxel of the selected patches, with each patch
/// predicted independently.
pub fn evaluate_patches(
    model: &dyn SuperResolver,
    patches: &[&PatchPair],
    domain: &str,
) -> Result<EvalReport, EvalError> {
    if patches.is_empty() {
        return Err(EvalError::EmptyRegion);
    }
    let n = patches.len() * HR_VOXELS;
    let mut pred = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut truth = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut mask = Vec::with_capacity(n);
    for p in patches {
        let out = model.predict(&SrInput {
            lr_vel: &p.lr_vel,
            lr_mag: &p.lr_mag,
            venc: p.venc,
            lr_origin: [0; 3],
            reference: Some(&p.hr_vel),
        })?;
        if out.len() != 3 * HR_VOXELS {
            return Err(EvalError::Predict(format!("tile has {} values", out.len())));
        }
        for c in 0..3 {
            pred[c].extend_from_slice(&out[c * HR_VOXELS..(c + 1) * HR_VOXELS]);
            truth[c].extend_from_slice(&p.hr_vel[c * HR_VOXELS..(c + 1) * HR_VOXELS]);
        }
        mask.extend_from_slice(&p.hr_mask);
    }
    // Stack patches along z so the pooled data forms one valid volume.
    let g = VolumeGrid::new(HR_PATCH, HR_PATCH, HR_PATCH * patches.len(), 1.0)?;
    let pred = VectorField::from_components(g, pred)?;
    let truth = VectorField::from_components(g, truth)?;
    let reference = FlowSample::new(
        ScalarField::filled(g, 1.0),
        truth,
        FluidMask::new(g, mask)?,
        patches[0].venc,
        patches[0].compartment,
        0,
    )?;
    let mut rep = evaluate(&pred, &reference, &model.name())?;
    rep.domain = domain.to_string();
    Ok(rep)
}

/// One low-resolution tile handed to a model.
#[derive(Debug, Clone, Copy)]
pub struct SrInput<'a> {
    /// `3 x 12³`, cm/s.
    pub lr_vel: &'a [f32],
    /// `12³`.
    pub lr_mag: &'a [f32],
    pub venc: f32,
    /// Tile origin on the low-resolution grid.
    pub lr_origin: [usize; 3],
    /// Ground-truth tile when the caller has one (patch evaluation).
    pub reference: Option<&'a [f32]>,
}

/// Anything that turns a 12³ low-resolution tile into a 24³ velocity tile
/// (component-major, cm/s).
pub trait SuperResolver {
    fn name(&self) -> String;
    fn predict(&self, input: &SrInput<'_>) -> Result<Vec<f32>, EvalError>;
}

fn predict_err(e: impl std::fmt::Display) -> EvalError {
    EvalError::Predict(e.to_string())
}

impl SuperResolver for BaseModel {
    fn name(&self) -> String {
        format!("base-{}", self.spec.block_kind.name())
    }
    fn predict(&self, input: &SrInput<'_>) -> Result<Vec<f32>, EvalError> {
        self.forward_sr(input.lr_vel, input.lr_mag, input.venc).map_err(predict_err)
    }
}

impl SuperResolver for Bagging {
    fn name(&self) -> String {
        format!("bagging-{}", self.len())
    }
    fn predict(&self, input: &SrInput<'_>) -> Result<Vec<f32>, EvalError> {
        Bagging::predict(self, input.lr_vel, input.lr_mag, input.venc).map_err(predict_err)
    }
}

impl SuperResolver for Stacking {
    fn name(&self) -> String {
        format!("stacking-{}", self.bases.len())
    }
    fn predict(&self, input: &SrInput<'_>) -> Result<Vec<f32>, EvalError> {
        Stacking::predict(self, input.lr_vel, input.lr_mag, input.venc).map_err(predict_err)
    }
}

/// Returns the ground-truth high-resolution tile under each input tile:
/// the caller's reference tile if given, else a crop of `truth`.
#[derive(Debug, Clone, Default)]
pub struct OracleStub {
    truth: Option<VectorField>,
}

impl OracleStub {
    pub fn new(truth: VectorField) -> Self {
        Self { truth: Some(truth) }
    }

    /// Oracle that only answers tiles carrying their own reference.
    pub fn for_patches() -> Self {
        Self { truth: None }
    }
}

impl SuperResolver for OracleStub {
    fn name(&self) -> String {
        "oracle".into()
    }
    fn predict(&self, input: &SrInput<'_>) -> Result<Vec<f32>, EvalError> {
        if let Some(r) = input.reference {
            return Ok(r.to_vec());
        }
        let truth = self
            .truth
            .as_ref()
            .ok_or_else(|| EvalError::Predict("oracle has no reference for this tile".into()))?;
        let g = *truth.grid();
        let o = input.lr_origin.map(|v| v * FACTOR);
        if (0..3).any(|a| o[a] + HR_PATCH > g.dims()[a]) {
            return Err(EvalError::Predict("tile outside the reference grid".into()));
        }
        let mut out = Vec::with_capacity(3 * HR_PATCH.pow(3));
        for comp in truth.components() {
            for z in 0..HR_PATCH {
                for y in 0..HR_PATCH {
                    let s = g.index(o[0], o[1] + y, o[2] + z);
                    out.extend_from_slice(&comp[s..s + HR_PATCH]);
                }
            }
        }
        Ok(out)
    }
}

/// Trilinear ×2 interpolation of the input tile (the interpolation baseline).
#[derive(Debug, Clone, Copy, Default)]
pub struct TrilinearStub;

impl SuperResolver for TrilinearStub {
    fn name(&self) -> String {
        "trilinear".into()
    }
    fn predict(&self, input: &SrInput<'_>) -> Result<Vec<f32>, EvalError> {
        upsample_lr_velocity(input.lr_vel, LR_PATCH).map_err(predict_err)
    }
}

/// Tile origins along one axis: every `TILE_STRIDE`, plus a final tile flush
/// with the far edge.
pub fn tile_starts(n: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..)
        .map(|k| k * TILE_STRIDE)
        .take_while(|s| s + LR_PATCH <= n)
        .collect();
    if let Some(&last) = starts.last() {
        if last + LR_PATCH < n {
            starts.push(n - LR_PATCH);
        }
    }
    starts
}

/// High-resolution range a tile at `s` contributes along an axis of LR
/// length `n` (rim dropped on interior faces only).
fn kept_range(s: usize, n: usize) -> (usize, usize) {
    let lo = if s > 0 { TILE_RIM } else { 0 };
    let hi = if s + LR_PATCH < n { HR_PATCH - TILE_RIM } else { HR_PATCH };
    (lo, hi)
}

/// Super-resolves a whole low-resolution volume tile by tile and averages
/// overlapping contributions.
pub fn stitch_sr(model: &dyn SuperResolver, lr: &FlowSample) -> Result<VectorField, EvalError> {
    let lg = *lr.grid();
    let dims = lg.dims();
    if dims.iter().any(|&d| d < LR_PATCH) {
        return Err(EvalError::TooSmall { dims });
    }
    let hg = VolumeGrid::new(dims[0] * FACTOR, dims[1] * FACTOR, dims[2] * FACTOR, lg.dx() / FACTOR as f32)?;
    let n_hr = hg.len();
    let mut sum = vec![0.0f64; 3 * n_hr];
    let mut count = vec![0u32; n_hr];
    let starts: Vec<Vec<usize>> = dims.iter().map(|&n| tile_starts(n)).collect();

    let mut lr_vel = Vec::with_capacity(3 * LR_VOXELS);
    let mut lr_mag = Vec::with_capacity(LR_VOXELS);
    for &z0 in &starts[2] {
        for &y0 in &starts[1] {
            for &x0 in &starts[0] {
                lr_vel.clear();
                lr_mag.clear();
                for comp in lr.velocity.components() {
                    crop_into(comp, &lg, [x0, y0, z0], &mut lr_vel);
                }
                crop_into(lr.magnitude.values(), &lg, [x0, y0, z0], &mut lr_mag);
                let tile = model.predict(&SrInput {
                    lr_vel: &lr_vel,
                    lr_mag: &lr_mag,
                    venc: lr.venc,
                    lr_origin: [x0, y0, z0],
                    reference: None,
                })?;
                if tile.len() != 3 * HR_PATCH.pow(3) {
                    return Err(EvalError::Predict(format!("tile has {} values", tile.len())));
                }
                let origin = [x0, y0, z0];
                let r: Vec<(usize, usize)> = (0..3).map(|a| kept_range(origin[a], dims[a])).collect();
                for z in r[2].0..r[2].1 {
                    for y in r[1].0..r[1].1 {
                        for x in r[0].0..r[0].1 {
                            let t = x + HR_PATCH * (y + HR_PATCH * z);
                            let h = hg.index(2 * x0 + x, 2 * y0 + y, 2 * z0 + z);
                            count[h] += 1;
                            for c in 0..3 {
                                sum[c * n_hr + h] += tile[c * HR_PATCH.pow(3) + t] as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    let mut comps: [Vec<f32>; 3] = Default::default();
    for (c, out) in comps.iter_mut().enumerate() {
        *out = (0..n_hr)
            .map(|h| (sum[c * n_hr + h] / count[h] as f64) as f32)
            .collect();
    }
    Ok(VectorField::from_components(hg, comps)?)
}

fn crop_into(values: &[f32], grid: &VolumeGrid, o: [usize; 3], out: &mut Vec<f32>) {
    for z in 0..LR_PATCH {
        for y in 0..LR_PATCH {
            let s = grid.index(o[0], o[1] + y, o[2] + z);
            out.extend_from_slice(&values[s..s + LR_PATCH]);
        }
    }
}

/// Halves the native resolution by k-space truncation, super-resolves it
/// back, and scores the result against the native data.
pub fn recover_native_eval(
    native: &FlowSample,
    model: &dyn SuperResolver,
    noise: &NoiseSpec,
) -> Result<EvalReport, EvalError> {
    let dims = native.grid().dims();
    if dims.iter().any(|d| d % 4 != 0) {
        return Err(EvalError::NotDivisible(dims));
    }
    let pair = synthesize_pair(native, noise)?;
    let sr = stitch_sr(model, &pair.lr)?;
    evaluate(&sr, native, &model.name())
}

fn fmt_opt(v: Option<[f64; 3]>) -> [String; 3] {
    match v {
        Some(a) => a.map(|x| format!("{x:e}")),
        None => Default::default(),
    }
}

pub fn reports_to_csv(reports: &[EvalReport]) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_HEADER)?;
    for r in reports {
        let mut row = vec![
            r.model.clone(),
            r.domain.clone(),
            r.n_fluid.to_string(),
            r.n_nonfluid.to_string(),
            format!("{:e}", r.re),
        ];
        row.extend(fmt_opt(r.rmse_fluid));
        row.extend(fmt_opt(r.rmse_nonfluid));
        row.extend(r.k.map(|x| format!("{x:e}")));
        row.extend(r.r2.map(|x| format!("{x:e}")));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn export_report(reports: &[EvalReport], path: &Path) -> Result<(), EvalError> {
    crate::atomic_write(path, reports_to_csv(reports)?.as_bytes())?;
    Ok(())
}

pub fn parse_reports(text: &str) -> Result<Vec<EvalReport>, EvalError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let bad = |m: &str| EvalError::Predict(format!("report csv: {m}"));
    if r.headers()?.iter().collect::<Vec<_>>() != REPORT_HEADER {
        return Err(bad("unexpected header"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64, EvalError> { rec[i].parse().map_err(|_| bad("bad number")) };
        let opt = |i: usize| -> Result<Option<[f64; 3]>, EvalError> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                Ok(Some([f(i)?, f(i + 1)?, f(i + 2)?]))
            }
        };
        out.push(EvalReport {
            model: rec[0].to_string(),
            domain: rec[1].to_string(),
            n_fluid: rec[2].parse().map_err(|_| bad("bad count"))?,
            n_nonfluid: rec[3].parse().map_err(|_| bad("bad count"))?,
            re: f(4)?,
            rmse_fluid: opt(5)?,
            rmse_nonfluid: opt(8)?,
            k: [f(11)?, f(12)?, f(13)?],
            r2: [f(14)?, f(15)?, f(16)?],
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceFormat {
    /// 8-bit plain PGM, min-max scaled; the scale goes to `<path>.scale`.
    Pgm,
    /// Raw values, one image row per line.
    Csv,
}

/// Rows of a 2D slice perpendicular to `axis`. For `Z` rows run along y and
/// columns along x; for `Y` rows are z, columns x; for `X` rows are z,
/// columns y.
pub fn slice_rows(field: &ScalarField, axis: Axis, index: usize) -> Result<Vec<Vec<f32>>, EvalError> {
    let g = *field.grid();
    let [nx, ny, nz] = g.dims();
    let v = field.values();
    let len = match axis {
        Axis::X => nx,
        Axis::Y => ny,
        Axis::Z => nz,
    };
    if index >= len {
        return Err(EvalError::BadSlice { index, len });
    }
    Ok(match axis {
        Axis::Z => (0..ny).map(|y| (0..nx).map(|x| v[g.index(x, y, index)]).collect()).collect(),
        Axis::Y => (0..nz).map(|z| (0..nx).map(|x| v[g.index(x, index, z)]).collect()).collect(),
        Axis::X => (0..nz).map(|z| (0..ny).map(|y| v[g.index(index, y, z)]).collect()).collect(),
    })
}

pub fn scale_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".scale");
    PathBuf::from(s)
}

pub fn export_slice(
    field: &ScalarField,
    axis: Axis,
    index: usize,
    path: &Path,
    format: SliceFormat,
) -> Result<(), EvalError> {
    let rows = slice_rows(field, axis, index)?;
    let mut text = String::new();
    match format {
        SliceFormat::Csv => {
            for row in &rows {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                text.push_str(&cells.join(","));
                text.push('\n');
            }
        }
        SliceFormat::Pgm => {
            let flat = rows.iter().flatten();
            let lo = flat.clone().copied().fold(f32::INFINITY, f32::min);
            let hi = flat.copied().fold(f32::NEG_INFINITY, f32::max);
            let gray = |v: f32| -> u8 {
                if hi > lo {
                    (((v - lo) / (hi - lo)) * 255.0).round() as u8
                } else {
                    128
                }
            };
            text.push_str(&format!("P2\n{} {}\n255\n", rows[0].len(), rows.len()));
            for row in &rows {
                let cells: Vec<String> = row.iter().map(|&v| gray(v).to_string()).collect();
                text.push_str(&cells.join(" "));
                text.push('\n');
            }
            crate::atomic_write(&scale_sidecar(path), format!("min={lo} max={hi}\n").as_bytes())?;
        }
    }
    crate::atomic_write(path, text.as_bytes())?;
    Ok(())
}
