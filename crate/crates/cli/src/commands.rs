//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use f4flow_core::atomic_write;
use f4flow_core::eval::{
    evaluate_patches, export_report, export_slice, recover_native_eval, stitch_sr, EvalReport, OracleStub,
    SliceFormat, SuperResolver, TrilinearStub,
};
use f4flow_core::models::{load_model, save_model, MetaModel, MetaModelSpec, Model, F4DW_VERSION};
use f4flow_core::patch::{Axis, MotionCriterion, PatchConfig, PatchPair, SplitKind, F4DP_VERSION, HR_PATCH};
use f4flow_core::phantom::{read_manifest, write_manifest, Family, ManifestEntry};
use f4flow_core::seed::derive_seed;
use f4flow_core::synth::{noise_sigma, synthesize_pair, NoiseSpec, SynthPair};
use f4flow_core::train::{member_seeds, train_base, train_meta, EnsembleKind, TrainConfig};
use f4flow_core::volume::{read_sample, write_sample, Compartment, FlowSample, ScalarField, VectorField, F4DV_VERSION};

use crate::config::{parse_criterion, ExperimentConfig, Protocol, SEED_ENV};
use crate::descriptor::{kind_name, load_ensemble, Descriptor, Ensemble};
use crate::pipeline::{
    base_spec, build_dataset, frame_noise, generate_model, model_key, sidecar, train_config, train_configured,
    training_indices, Dataset, Trained,
};
use crate::UsageError;

pub const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (formats: F4DV v1, F4DP v1, F4DW v1)"
);

/// Checked at startup so the banner cannot drift from the real constants.
pub fn format_versions() -> [u32; 3] {
    [F4DV_VERSION, F4DP_VERSION, F4DW_VERSION]
}

#[derive(Debug, Parser)]
#[command(name = "f4flow", version = VERSION, about = "Synthetic 4D flow MRI super-resolution pipeline")]
pub struct Cli {
    /// Worker threads (computation is single-threaded; kept for script compatibility).
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate phantom frames and a manifest.
    Phantom(PhantomArgs),
    /// Simulate low-resolution noisy acquisitions of manifest frames.
    Synth(SynthArgs),
    /// Cut patch pairs and split them model-wise.
    Patch(PatchArgs),
    /// Train one base model.
    Train(TrainArgs),
    /// Assemble (and optionally train) an ensemble descriptor.
    Ensemble(EnsembleArgs),
    /// Score a model on a patch dataset or on whole volumes.
    Eval(EvalArgs),
    /// Run the whole pipeline from one config file.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub family: Family,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub frames: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Edge length of the cubic grid in voxels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Number of independently randomized models.
    #[arg(long, default_value_t = 1)]
    pub models: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Manifest written by `phantom`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// SNR range `A:B`, drawn uniformly per frame.
    #[arg(long, default_value = "8:24")]
    pub snr: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "before-crop")]
    pub noise_order: String,
}

#[derive(Debug, Args)]
pub struct PatchArgs {
    /// Directory written by `synth`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub stride: usize,
    #[arg(long, default_value_t = 0.05)]
    pub min_fluid: f64,
    /// `mask` or `speed:<cm/s>`.
    #[arg(long, default_value = "mask")]
    pub criterion: String,
    /// Random rotated copies per patch.
    #[arg(long, default_value_t = 0)]
    pub augment: usize,
    #[arg(long, default_value = "6:2:2")]
    pub ratios: String,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Experiment config supplying the [model] and [train] sections.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Train on a bootstrap resample drawn with this seed.
    #[arg(long)]
    pub bootstrap: Option<u64>,
    /// Restrict training and validation to one compartment.
    #[arg(long)]
    pub compartment: Option<Compartment>,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub kind: String,
    /// Comma-separated member weights, in order.
    #[arg(long, value_delimiter = ',', required = true)]
    pub members: Vec<PathBuf>,
    /// Already trained meta-learner.
    #[arg(long, conflicts_with = "train_meta")]
    pub meta: Option<PathBuf>,
    /// Train a meta-learner on this patch dataset.
    #[arg(long)]
    pub train_meta: Option<PathBuf>,
    /// Config supplying [ensemble] and [train] settings for meta training.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Weights file, ensemble descriptor, `oracle` or `trilinear`.
    #[arg(long)]
    pub model: String,
    /// Patch dataset (test protocol) or phantom directory (recover-native).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub protocol: Protocol,
    #[arg(long)]
    pub report: PathBuf,
    /// Directory for mid-plane speed slices.
    #[arg(long)]
    pub slices: Option<PathBuf>,
    /// Noise level of the recover-native downsampling.
    #[arg(long, default_value_t = f64::INFINITY)]
    pub snr: f64,
    /// Training dataset the model saw; every eval patch must come from a
    /// compartment absent from its train and validation models.
    #[arg(long)]
    pub unseen_against: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    if cli.jobs > 1 {
        log::info!("--jobs {} requested; running single-threaded", cli.jobs);
    }
    match cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Synth(a) => synth(a),
        Command::Patch(a) => patch(a),
        Command::Train(a) => train(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
    }
}

/// Explicit flag, else `F4FLOW_SEED`, else 0.
fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| UsageError(format!("{SEED_ENV}={v:?} is not an unsigned integer")).into()),
        Err(_) => Ok(0),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn parent_dir(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.with_env_seed()
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    if a.frames == 0 || a.models == 0 {
        return Err(usage("--frames and --models must be at least 1"));
    }
    if a.size % 4 != 0 || a.size < 24 {
        return Err(usage(format!("--size {} must be a multiple of 4 and at least 24", a.size)));
    }
    ensure_dir(&a.out)?;
    let manifest_path = a.out.join("manifest.csv");
    let mut entries: Vec<ManifestEntry> = if manifest_path.exists() {
        read_manifest(&manifest_path)?
    } else {
        Vec::new()
    };
    let mut fresh = Vec::new();
    for m in 0..a.models {
        for s in generate_model(a.family, m, a.size, a.frames, seed)? {
            let name = format!("{}-f{}.f4dv", model_key(a.family, m), s.frame);
            write_sample(&a.out.join(&name), &s)?;
            fresh.push(ManifestEntry {
                path: name,
                compartment: s.compartment,
                frame: s.frame,
                venc: s.venc,
            });
        }
    }
    entries.retain(|e| !fresh.iter().any(|f| f.path == e.path));
    entries.extend(fresh);
    entries.sort_by(|x, y| x.path.cmp(&y.path));
    write_manifest(&manifest_path, &entries)?;
    let resolved = format!(
        "family = {}\nframes = {}\nseed = {seed}\nsize = {}\nmodels = {}\n",
        a.family.name(),
        a.frames,
        a.size,
        a.models
    );
    write_text(&a.out.join(format!("phantom-{}.ini", a.family.name())), &resolved)?;
    println!("wrote {} frames to {}", a.models * a.frames, a.out.display());
    Ok(())
}

fn parse_range(v: &str) -> Result<(f64, f64)> {
    let (lo, hi) = v.split_once(':').ok_or_else(|| usage(format!("--snr {v:?}: expected A:B")))?;
    let lo: f64 = lo.trim().parse().map_err(|_| usage(format!("--snr {v:?}: bad lower bound")))?;
    let hi: f64 = hi.trim().parse().map_err(|_| usage(format!("--snr {v:?}: bad upper bound")))?;
    if !(lo > 0.0 && lo <= hi) {
        return Err(usage(format!("--snr {v:?}: need 0 < A <= B")));
    }
    Ok((lo, hi))
}

/// Phantom model key of a frame file: its stem without the `-f<frame>` suffix.
pub fn key_of(path: &str) -> String {
    let stem = Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match stem.rsplit_once("-f") {
        Some((key, frame)) if !frame.is_empty() && frame.bytes().all(|b| b.is_ascii_digit()) => key.to_string(),
        _ => stem,
    }
}

const SYNTH_HEADER: &str = "hr,lr,model,compartment,frame,venc,snr,sigma";

#[derive(Debug, Clone)]
struct SynthRow {
    hr: String,
    lr: String,
    key: String,
    compartment: Compartment,
    frame: u32,
    venc: f32,
}

fn synth(a: SynthArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let (lo, hi) = parse_range(&a.snr)?;
    let order = match a.noise_order.as_str() {
        "before-crop" => f4flow_core::synth::NoiseOrder::BeforeCrop,
        "after-crop" => f4flow_core::synth::NoiseOrder::AfterCrop,
        other => return Err(usage(format!("--noise-order {other:?}: expected before-crop or after-crop"))),
    };
    let entries = read_manifest(&a.input).with_context(|| format!("reading manifest {}", a.input.display()))?;
    let base = parent_dir(&a.input);
    ensure_dir(&a.out)?;
    let mut csv = format!("{SYNTH_HEADER}\n");
    for (k, e) in entries.iter().enumerate() {
        let hr = read_sample(&base.join(&e.path), e.venc, e.compartment, e.frame)
            .with_context(|| format!("reading {}", e.path))?;
        let (snr, noise_seed) = frame_noise(seed, k, lo, hi);
        let noise = NoiseSpec {
            order,
            ..NoiseSpec::new(snr, noise_seed)
        };
        let pair = synthesize_pair(&hr, &noise)?;
        let stem = Path::new(&e.path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("frame{k}"));
        let (hr_name, lr_name) = (format!("{stem}.hr.f4dv"), format!("{stem}.lr.f4dv"));
        write_sample(&a.out.join(&hr_name), &pair.hr)?;
        write_sample(&a.out.join(&lr_name), &pair.lr)?;
        let _ = writeln!(
            csv,
            "{hr_name},{lr_name},{},{},{},{},{snr},{:e}",
            key_of(&e.path),
            e.compartment,
            e.frame,
            e.venc,
            noise_sigma(&hr, snr)?
        );
    }
    write_text(&a.out.join("synth.csv"), &csv)?;
    write_text(
        &a.out.join("synth.ini"),
        &format!(
            "in = {}\nsnr = {lo}:{hi}\nseed = {seed}\nnoise_order = {}\n",
            a.input.display(),
            a.noise_order
        ),
    )?;
    println!("wrote {} pairs to {}", entries.len(), a.out.display());
    Ok(())
}

fn read_synth_csv(path: &Path) -> Result<Vec<SynthRow>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(SYNTH_HEADER) {
        bail!("{}: unexpected header", path.display());
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let p: Vec<&str> = line.split(',').map(str::trim).collect();
        if p.len() != 8 {
            bail!("{} line {}: expected 8 columns", path.display(), n + 2);
        }
        let bad = || anyhow::anyhow!("{} line {}: bad value", path.display(), n + 2);
        rows.push(SynthRow {
            hr: p[0].into(),
            lr: p[1].into(),
            key: p[2].into(),
            compartment: p[3].parse().map_err(|_| bad())?,
            frame: p[4].parse().map_err(|_| bad())?,
            venc: p[5].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

fn parse_ratios(v: &str) -> Result<[u32; 3]> {
    let parts: Vec<u32> = v
        .split(':')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--ratios {v:?}: expected a:b:c")))?;
    let r: [u32; 3] = parts
        .try_into()
        .map_err(|_| usage(format!("--ratios {v:?}: expected a:b:c")))?;
    if r.contains(&0) {
        return Err(usage("--ratios entries must be positive"));
    }
    Ok(r)
}

fn patch(a: PatchArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    if a.stride == 0 {
        return Err(usage("--stride must be at least 1"));
    }
    let criterion: MotionCriterion = parse_criterion(&a.criterion).map_err(|e| usage(e.to_string()))?;
    let ratios = parse_ratios(&a.ratios)?;
    let rows = read_synth_csv(&a.input.join("synth.csv"))?;
    let mut frames: BTreeMap<String, Vec<SynthPair>> = BTreeMap::new();
    for r in &rows {
        let hr = read_sample(&a.input.join(&r.hr), r.venc, r.compartment, r.frame)?;
        let lr = read_sample(&a.input.join(&r.lr), r.venc, r.compartment, r.frame)?;
        frames.entry(r.key.clone()).or_default().push(SynthPair { hr, lr, sigma: 0.0 });
    }
    let cfg = PatchConfig {
        stride: a.stride,
        min_fluid_frac: a.min_fluid,
        criterion,
    };
    let data = Dataset::build(&frames, &cfg, a.augment, ratios, seed)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    data.write(&a.out)?;
    write_text(
        &sidecar(&a.out, "ini"),
        &format!(
            "in = {}\nstride = {}\nmin_fluid = {}\ncriterion = {}\naugment = {}\nratios = {}\nseed = {seed}\n",
            a.input.display(),
            a.stride,
            a.min_fluid,
            a.criterion,
            a.augment,
            a.ratios
        ),
    )?;
    println!("kept {} rejected {}", data.kept, data.rejected);
    if data.patches.is_empty() {
        eprintln!("warning: no window passed the fluid threshold; wrote an empty dataset");
    } else if data.split.is_none() {
        eprintln!("warning: fewer than three source models; no split manifest written");
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.spec.as_deref())?;
    if a.compartment.is_some() {
        cfg.train.compartment = a.compartment;
    }
    let data = Dataset::read(&a.data)?;
    let (train_idx, val_idx) = training_indices(&data, cfg.train.compartment, a.bootstrap)?;
    let (init_seed, shuffle_seed) = member_seeds(derive_seed(cfg.seed, 5), 0);
    let mut model = f4flow_core::models::BaseModel::build(base_spec(&cfg, init_seed))?;
    let log = train_base(
        &mut model,
        &data.refs(&train_idx),
        &data.refs(&val_idx),
        &train_config(&cfg, shuffle_seed),
    )?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_model(&a.out, &Model::Base(model))?;
    log.write(&sidecar(&a.out, "log.csv"))?;
    let mut resolved = cfg.to_ini_string();
    let _ = write!(
        resolved,
        "\n# train command\n# data = {}\n# bootstrap = {}\n",
        a.data.display(),
        a.bootstrap.map_or("none".to_string(), |s| s.to_string())
    );
    write_text(&sidecar(&a.out, "config.ini"), &resolved)?;
    println!(
        "trained on {} patches; best epoch {} of {}",
        train_idx.len(),
        log.best_epoch,
        log.rows.len()
    );
    Ok(())
}

/// Path as stored in a descriptor written into `dir`.
fn descriptor_path(p: &Path, dir: &Path) -> Result<PathBuf> {
    let abs = std::fs::canonicalize(p).with_context(|| format!("model {} not found", p.display()))?;
    let dir = std::fs::canonicalize(dir)?;
    Ok(abs.strip_prefix(&dir).map(Path::to_path_buf).unwrap_or(abs))
}

fn ensemble(a: EnsembleArgs) -> Result<()> {
    let kind = match a.kind.as_str() {
        "bagging" => EnsembleKind::Bagging,
        "stacking" => EnsembleKind::Stacking,
        other => return Err(usage(format!("--kind {other:?}: expected bagging or stacking"))),
    };
    match kind {
        EnsembleKind::Stacking if a.meta.is_none() && a.train_meta.is_none() => {
            return Err(usage("stacking needs --meta or --train-meta"));
        }
        EnsembleKind::Stacking if a.members.len() < 2 => {
            return Err(usage("stacking needs at least two members"));
        }
        EnsembleKind::Bagging if a.meta.is_some() || a.train_meta.is_some() => {
            return Err(usage("bagging takes no meta-learner"));
        }
        _ => {}
    }
    let dir = parent_dir(&a.out).to_path_buf();
    ensure_dir(&dir)?;
    let mut bases = Vec::with_capacity(a.members.len());
    for m in &a.members {
        match load_model(m).with_context(|| format!("loading member {}", m.display()))? {
            Model::Base(b) => bases.push(b),
            Model::Meta(_) => bail!("member {} is a meta-learner", m.display()),
        }
    }
    let meta = match (&a.meta, &a.train_meta) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(data_path)) => {
            let cfg = load_config(a.spec.as_deref())?;
            let data = Dataset::read(data_path)?;
            let split = data.split()?;
            let mut meta = MetaModel::build(MetaModelSpec {
                n_base: bases.len(),
                channels: cfg.ensemble.meta_channels,
                activation: cfg.model.activation,
                append_lr: cfg.ensemble.append_lr,
                seed: derive_seed(cfg.seed, 999),
                ..Default::default()
            })?;
            let mcfg = TrainConfig {
                epochs: cfg.ensemble.meta_epochs,
                ..train_config(&cfg, derive_seed(cfg.seed, 998))
            };
            let log = train_meta(
                &mut meta,
                &bases,
                &data.refs(split.indices(SplitKind::Train)),
                &data.refs(split.indices(SplitKind::Validation)),
                &mcfg,
            )?;
            let path = sidecar(&a.out, "meta.f4w");
            save_model(&path, &Model::Meta(meta))?;
            log.write(&sidecar(&path, "log.csv"))?;
            write_text(&sidecar(&a.out, "config.ini"), &cfg.to_ini_string())?;
            Some(path)
        }
        (None, None) => None,
    };
    let desc = Descriptor {
        kind,
        members: a
            .members
            .iter()
            .map(|m| descriptor_path(m, &dir))
            .collect::<Result<_>>()?,
        meta: meta.as_deref().map(|m| descriptor_path(m, &dir)).transpose()?,
    };
    write_text(&a.out, &desc.to_text())?;
    // Loading back validates member contracts and meta arity.
    load_ensemble(&a.out)?;
    println!("wrote {} ensemble of {} members to {}", kind_name(kind), a.members.len(), a.out.display());
    Ok(())
}

enum Predictor {
    Trained(Trained),
    Oracle,
    Trilinear,
}

fn load_predictor(spec: &str) -> Result<Predictor> {
    match spec {
        "oracle" => return Ok(Predictor::Oracle),
        "trilinear" => return Ok(Predictor::Trilinear),
        _ => {}
    }
    let path = Path::new(spec);
    if Descriptor::is_descriptor(path) {
        return Ok(Predictor::Trained(match load_ensemble(path)? {
            Ensemble::Bagging(b) => Trained::Bagging(b),
            Ensemble::Stacking(s) => Trained::Stacking(s),
        }));
    }
    match load_model(path).with_context(|| format!("loading model {spec}"))? {
        Model::Base(b) => Ok(Predictor::Trained(Trained::Base(b))),
        Model::Meta(_) => bail!("{spec} is a bare meta-learner; evaluate its ensemble descriptor instead"),
    }
}

/// Test-split (or whole-set for unseen-domain runs) rows: pooled first,
/// then one per compartment when several are present.
pub fn patch_reports(model: &dyn SuperResolver, patches: &[&PatchPair]) -> Result<Vec<EvalReport>> {
    let mut by: BTreeMap<Compartment, Vec<&PatchPair>> = BTreeMap::new();
    for p in patches {
        by.entry(p.compartment).or_default().push(p);
    }
    let mut out = Vec::new();
    if by.len() > 1 {
        out.push(evaluate_patches(model, patches, "pooled")?);
    }
    for (c, ps) in &by {
        out.push(evaluate_patches(model, ps, c.name())?);
    }
    Ok(out)
}

/// Fails unless every patch comes from a compartment absent from the
/// training dataset's train and validation models.
pub fn check_unseen(eval: &Dataset, train_path: &Path) -> Result<()> {
    let train = Dataset::read(train_path)?;
    if train.models.is_empty() {
        bail!("{} has no model table to cross-check", train_path.display());
    }
    let seen = train.training_compartments()?;
    let mut keys = Vec::new();
    for p in &eval.patches {
        if seen.contains(&p.compartment) {
            bail!(
                "unseen-domain check failed: {} appears in the training split of {}",
                p.compartment,
                train_path.display()
            );
        }
        if let Some(m) = eval.models.iter().find(|m| m.id == p.source_model) {
            keys.push(m.key.as_str());
        }
    }
    if let Some(k) = keys.iter().find(|k| train.models.iter().any(|m| m.key == **k)) {
        bail!("unseen-domain check failed: phantom model {k} is also in {}", train_path.display());
    }
    Ok(())
}

fn speed(field: &VectorField) -> ScalarField {
    let g = *field.grid();
    ScalarField::new(g, (0..g.len()).map(|i| field.speed(i)).collect()).expect("same grid")
}

fn write_slices(dir: &Path, name: &str, pred: &VectorField, truth: &VectorField) -> Result<()> {
    ensure_dir(dir)?;
    let mid = pred.grid().nz() / 2;
    for (tag, f) in [("pred", pred), ("truth", truth)] {
        let path = dir.join(format!("{name}-{tag}-z{mid}.pgm"));
        export_slice(&speed(f), Axis::Z, mid, &path, SliceFormat::Pgm)?;
    }
    Ok(())
}

fn patch_volume(p: &PatchPair, values: &[f32]) -> Result<VectorField> {
    let g = f4flow_core::volume::VolumeGrid::cubic(HR_PATCH, 1.0)?;
    let n = g.len();
    Ok(VectorField::from_components(
        g,
        [
            values[..n].to_vec(),
            values[n..2 * n].to_vec(),
            values[2 * n..3 * n].to_vec(),
        ],
    )
    .with_context(|| format!("patch from model {}", p.source_model))?)
}

fn eval(a: EvalArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    let predictor = load_predictor(&a.model)?;
    let is_dir = a.data.is_dir();
    let reports = match a.protocol {
        Protocol::Test => {
            if is_dir {
                return Err(usage("the test protocol expects a patch dataset file"));
            }
            let data = Dataset::read(&a.data)?;
            let patches: Vec<&PatchPair> = match &a.unseen_against {
                Some(train_path) => {
                    check_unseen(&data, train_path)?;
                    data.patches.iter().collect()
                }
                None => data.refs(data.split()?.indices(SplitKind::Test)),
            };
            if patches.is_empty() {
                bail!("no patches to evaluate in {}", a.data.display());
            }
            let oracle = OracleStub::for_patches();
            let model: &dyn SuperResolver = match &predictor {
                Predictor::Trained(t) => t.resolver(),
                Predictor::Oracle => &oracle,
                Predictor::Trilinear => &TrilinearStub,
            };
            if let Some(dir) = &a.slices {
                let p = patches[0];
                let pred = model.predict(&f4flow_core::eval::SrInput {
                    lr_vel: &p.lr_vel,
                    lr_mag: &p.lr_mag,
                    venc: p.venc,
                    lr_origin: [0; 3],
                    reference: Some(&p.hr_vel),
                })?;
                write_slices(dir, "patch0", &patch_volume(p, &pred)?, &patch_volume(p, &p.hr_vel)?)?;
            }
            patch_reports(model, &patches)?
        }
        Protocol::RecoverNative => {
            if !is_dir {
                return Err(usage("recover-native expects a phantom directory with manifest.csv"));
            }
            let entries = read_manifest(&a.data.join("manifest.csv"))?;
            let mut out = Vec::with_capacity(entries.len());
            for (k, e) in entries.iter().enumerate() {
                let native = read_sample(&a.data.join(&e.path), e.venc, e.compartment, e.frame)?;
                let noise = NoiseSpec::new(a.snr, derive_seed(seed, 3_000_000 + k as u64));
                let rep = recover_native_row(&predictor, &native, &noise, a.slices.as_deref(), k == 0)?;
                out.push(rep);
            }
            out
        }
    };
    if let Some(dir) = a.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    export_report(&reports, &a.report)?;
    for r in &reports {
        println!("{} {} RE {:.4}", r.model, r.domain, r.re);
    }
    Ok(())
}

fn recover_native_row(
    predictor: &Predictor,
    native: &FlowSample,
    noise: &NoiseSpec,
    slices: Option<&Path>,
    first: bool,
) -> Result<EvalReport> {
    let oracle;
    let model: &dyn SuperResolver = match predictor {
        Predictor::Trained(t) => t.resolver(),
        Predictor::Oracle => {
            oracle = OracleStub::new(native.velocity.clone());
            &oracle
        }
        Predictor::Trilinear => &TrilinearStub,
    };
    let rep = recover_native_eval(native, model, noise)?;
    if let (Some(dir), true) = (slices, first) {
        let pair = synthesize_pair(native, noise)?;
        let sr = stitch_sr(model, &pair.lr)?;
        write_slices(dir, "volume0", &sr, &native.velocity)?;
    }
    Ok(rep)
}

/// Everything `run` produces, for callers that want the numbers too.
pub struct RunOutput {
    pub reports: Vec<EvalReport>,
    pub out: PathBuf,
}

pub fn run_config(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutput> {
    ensure_dir(out)?;
    write_text(&out.join("config.ini"), &cfg.to_ini_string())?;
    let data = build_dataset(cfg, &cfg.phantom.families)?;
    log::info!("dataset: {} patches (kept {}, rejected {})", data.patches.len(), data.kept, data.rejected);
    data.write(&out.join("data.f4p"))?;
    let (trained, _) = train_configured(cfg, &data, out)?;
    let model = trained.resolver();
    let mut reports = Vec::new();
    match cfg.eval.protocol {
        Protocol::Test => {
            let test = data.refs(data.split()?.indices(SplitKind::Test));
            reports.extend(patch_reports(model, &test)?);
            reports.extend(patch_reports(&TrilinearStub, &test)?);
        }
        Protocol::RecoverNative => {
            let split = data.split()?;
            let test_models = split.models(SplitKind::Test);
            let mut k = 0;
            for info in data.models.iter().filter(|m| test_models.contains(&m.id)) {
                let (family, m) = parse_key(&info.key)?;
                for native in generate_model(family, m, cfg.phantom.size, cfg.phantom.frames, cfg.seed)? {
                    let noise = NoiseSpec::new(cfg.eval.snr, derive_seed(cfg.seed, 3_000_000 + k));
                    k += 1;
                    reports.push(recover_native_eval(&native, model, &noise)?);
                    reports.push(recover_native_eval(&native, &TrilinearStub, &noise)?);
                }
            }
        }
    }
    if let Some(family) = cfg.eval.unseen_family {
        if cfg.phantom.families.contains(&family) {
            bail!("[eval] unseen_family {} is also a training family", family.name());
        }
        let unseen = build_dataset(cfg, &[family])?;
        unseen.write(&out.join("unseen.f4p"))?;
        check_unseen(&unseen, &out.join("data.f4p"))?;
        let all: Vec<&PatchPair> = unseen.patches.iter().collect();
        if !all.is_empty() {
            reports.extend(patch_reports(model, &all)?);
            reports.extend(patch_reports(&TrilinearStub, &all)?);
        }
    }
    export_report(&reports, &out.join("report.csv"))?;
    Ok(RunOutput {
        reports,
        out: out.to_path_buf(),
    })
}

fn parse_key(key: &str) -> Result<(Family, usize)> {
    let (family, m) = key.rsplit_once("-m").context("malformed model key")?;
    Ok((family.parse()?, m.parse()?))
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?.with_env_seed()?;
    if let Some(out) = a.out {
        cfg.out = Some(out);
    }
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| usage("no output directory: set `out` in the config or pass --out"))?;
    let res = run_config(&cfg, &out)?;
    for r in &res.reports {
        println!("{} {} RE {:.4}", r.model, r.domain, r.re);
    }
    Ok(())
}
