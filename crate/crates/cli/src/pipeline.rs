//! Phantom → synthesis → patch → train plumbing shared by the subcommands
//! and the one-shot `run` command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::Rng;

use f4flow_core::eval::SuperResolver;
use f4flow_core::models::{save_model, BaseModel, BaseModelSpec, MetaModel, MetaModelSpec, Model};
use f4flow_core::patch::{
    augment, extract_patches, read_dataset, split_by_model, write_dataset, DatasetSplit, PatchConfig, PatchPair,
    SplitKind,
};
use f4flow_core::phantom::{generate_sequence, AmplitudeSchedule, Family, PhantomSpec, DEFAULT_VENC_CANDIDATES};
use f4flow_core::seed::{derive_seed, rng};
use f4flow_core::synth::{synthesize_pair, NoiseSpec, SynthPair};
use f4flow_core::train::{
    bootstrap_dataset, member_seeds, train_base, train_meta, Bagging, DatasetSelector, EnsembleKind, BaseData,
    EnsembleSpec, Stacking, TrainConfig, TrainLog,
};
use f4flow_core::volume::{Compartment, FlowSample, VolumeGrid};
use f4flow_core::atomic_write;

use crate::config::ExperimentConfig;

/// Seed of phantom model `m` of `family` under `root`.
pub fn phantom_seed(root: u64, family: Family, m: usize) -> u64 {
    derive_seed(derive_seed(root, 1000 + family.compartment().code() as u64), m as u64)
}

/// Name shared by every frame of one phantom model.
pub fn model_key(family: Family, m: usize) -> String {
    format!("{}-m{m}", family.name())
}

pub fn generate_model(family: Family, m: usize, size: usize, frames: usize, root: u64) -> Result<Vec<FlowSample>> {
    let grid = VolumeGrid::cubic(size, family.default_dx())?;
    let spec = PhantomSpec::default_for(family, grid, phantom_seed(root, family, m));
    Ok(generate_sequence(&spec, frames, &AmplitudeSchedule::Cardiac, &DEFAULT_VENC_CANDIDATES)?)
}

/// SNR and noise seed for the `k`-th synthesized frame.
pub fn frame_noise(root: u64, k: usize, snr_min: f64, snr_max: f64) -> (f64, u64) {
    let mut r = rng(derive_seed(root, 2_000_000 + k as u64));
    let snr = if snr_max > snr_min {
        r.gen_range(snr_min..=snr_max)
    } else {
        snr_min
    };
    (snr, r.gen())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInfo {
    pub id: u16,
    pub compartment: Compartment,
    pub key: String,
}

/// Patches plus their model-wise split and the id → phantom model table.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub patches: Vec<PatchPair>,
    pub split: Option<DatasetSplit>,
    pub models: Vec<ModelInfo>,
    pub kept: usize,
    pub rejected: usize,
}

pub fn split_path(data: &Path) -> PathBuf {
    sidecar(data, "split")
}

pub fn models_path(data: &Path) -> PathBuf {
    sidecar(data, "models")
}

pub fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

impl Dataset {
    /// Extracts, augments and splits patches from frames grouped by model
    /// key. Model ids follow the sorted key order.
    pub fn build(
        frames: &BTreeMap<String, Vec<SynthPair>>,
        cfg: &PatchConfig,
        augment_copies: usize,
        ratios: [u32; 3],
        seed: u64,
    ) -> Result<Self> {
        let mut out = Dataset::default();
        for (id, (key, pairs)) in frames.iter().enumerate() {
            let id = u16::try_from(id).context("more than 65535 phantom models")?;
            let Some(first) = pairs.first() else { continue };
            out.models.push(ModelInfo {
                id,
                compartment: first.hr.compartment,
                key: key.clone(),
            });
            for pair in pairs {
                let ex = extract_patches(pair, id, cfg)?;
                out.kept += ex.kept;
                out.rejected += ex.rejected;
                out.patches.extend(ex.patches);
            }
        }
        if augment_copies > 0 {
            out.patches = augment(&out.patches, augment_copies, &mut rng(derive_seed(seed, 3)));
        }
        let present: std::collections::BTreeSet<u16> = out.patches.iter().map(|p| p.source_model).collect();
        out.split = if present.len() >= 3 {
            Some(split_by_model(&out.patches, ratios, derive_seed(seed, 4))?)
        } else {
            None
        };
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_dataset(path, &self.patches)?;
        if let Some(split) = &self.split {
            atomic_write(&split_path(path), split.to_manifest().as_bytes())?;
        }
        let mut text = String::from("model,compartment,key\n");
        for m in &self.models {
            text.push_str(&format!("{},{},{}\n", m.id, m.compartment.name(), m.key));
        }
        atomic_write(&models_path(path), text.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let patches = read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))?;
        let split = match std::fs::read_to_string(split_path(path)) {
            Ok(text) => Some(DatasetSplit::from_assignment(&patches, DatasetSplit::parse_manifest(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let models = match std::fs::read_to_string(models_path(path)) {
            Ok(text) => parse_models(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self {
            kept: patches.len(),
            patches,
            split,
            models,
            rejected: 0,
        })
    }

    pub fn split(&self) -> Result<&DatasetSplit> {
        self.split
            .as_ref()
            .context("dataset has no split manifest (fewer than three source models)")
    }

    pub fn refs(&self, idx: &[usize]) -> Vec<&PatchPair> {
        idx.iter().map(|&i| &self.patches[i]).collect()
    }

    /// Compartments of the models assigned to train or validation.
    pub fn training_compartments(&self) -> Result<Vec<Compartment>> {
        let split = self.split()?;
        let mut out: Vec<Compartment> = split
            .assignment
            .iter()
            .filter(|(_, k)| **k != SplitKind::Test)
            .filter_map(|(id, _)| self.models.iter().find(|m| m.id == *id).map(|m| m.compartment))
            .collect();
        out.sort();
        out.dedup();
        Ok(out)
    }
}

fn parse_models(text: &str) -> Result<Vec<ModelInfo>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            bail!("models table line {}: expected model,compartment,key", n + 1);
        }
        out.push(ModelInfo {
            id: parts[0].parse().with_context(|| format!("models table line {}", n + 1))?,
            compartment: parts[1].parse()?,
            key: parts[2].to_string(),
        });
    }
    Ok(out)
}

/// Whole in-memory data generation for a configuration restricted to
/// `families`.
pub fn build_dataset(cfg: &ExperimentConfig, families: &[Family]) -> Result<Dataset> {
    let p = &cfg.phantom;
    let mut frames: BTreeMap<String, Vec<SynthPair>> = BTreeMap::new();
    let mut k = 0;
    for &family in families {
        for m in 0..p.models_per_family {
            let samples = generate_model(family, m, p.size, p.frames, cfg.seed)?;
            let mut pairs = Vec::with_capacity(samples.len());
            for s in &samples {
                let (snr, noise_seed) = frame_noise(cfg.seed, k, cfg.synth.snr_min, cfg.synth.snr_max);
                k += 1;
                let noise = NoiseSpec {
                    order: cfg.synth.noise_order,
                    ..NoiseSpec::new(snr, noise_seed)
                };
                pairs.push(synthesize_pair(s, &noise)?);
            }
            frames.insert(model_key(family, m), pairs);
        }
    }
    let pc = PatchConfig {
        stride: cfg.patch.stride,
        min_fluid_frac: cfg.patch.min_fluid,
        criterion: cfg.patch.criterion,
    };
    Dataset::build(&frames, &pc, cfg.patch.augment, cfg.patch.ratios, cfg.seed)
}

pub fn base_spec(cfg: &ExperimentConfig, seed: u64) -> BaseModelSpec {
    BaseModelSpec {
        channels: cfg.model.channels,
        n_blocks_low: cfg.model.n_blocks_low,
        n_blocks_high: cfg.model.n_blocks_high,
        block_kind: cfg.model.block_kind,
        activation: cfg.model.activation,
        global_skip: cfg.model.global_skip,
        seed,
    }
}

pub fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    let t = &cfg.train;
    TrainConfig {
        lr0: t.lr0,
        decay_every: t.decay_every,
        epochs: t.epochs,
        batch_size: t.batch_size,
        lambda: t.lambda,
        seed,
        record_wall_time: t.record_wall_time,
    }
}

/// Training indices after the optional compartment filter and bootstrap.
pub fn training_indices(
    data: &Dataset,
    compartment: Option<Compartment>,
    bootstrap: Option<u64>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let split = data.split()?;
    let selector = compartment.map_or(DatasetSelector::Pooled, DatasetSelector::Compartment);
    let mut train = selector.select(&data.patches, split.indices(SplitKind::Train));
    let val = selector.select(&data.patches, split.indices(SplitKind::Validation));
    if train.is_empty() || val.is_empty() {
        bail!("no training or validation patches left after filtering");
    }
    if let Some(seed) = bootstrap {
        train = bootstrap_dataset(&train, seed)?;
    }
    Ok((train, val))
}

/// A trained predictor and the files that describe it.
pub enum Trained {
    Base(BaseModel),
    Bagging(Bagging),
    Stacking(Stacking),
}

impl Trained {
    pub fn resolver(&self) -> &dyn SuperResolver {
        match self {
            Trained::Base(m) => m,
            Trained::Bagging(b) => b,
            Trained::Stacking(s) => s,
        }
    }
}

fn save_log(log: &TrainLog, weights: &Path) -> Result<()> {
    log.write(&sidecar(weights, "log.csv"))?;
    Ok(())
}

/// Trains whatever the configuration asks for and writes every artifact
/// into `out`. Returns the predictor and the path a report should refer to.
pub fn train_configured(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> Result<(Trained, PathBuf)> {
    let root = derive_seed(cfg.seed, 5);
    let split = data.split()?;
    let val = data.refs(split.indices(SplitKind::Validation));
    let Some(kind) = cfg.ensemble.kind else {
        let (train, val_idx) = training_indices(data, cfg.train.compartment, None)?;
        let (init_seed, shuffle_seed) = member_seeds(root, 0);
        let mut model = BaseModel::build(base_spec(cfg, init_seed))?;
        let log = train_base(&mut model, &data.refs(&train), &data.refs(&val_idx), &train_config(cfg, shuffle_seed))?;
        let path = out.join("model.f4w");
        save_model(&path, &Model::Base(model.clone()))?;
        save_log(&log, &path)?;
        return Ok((Trained::Base(model), path));
    };

    let e = &cfg.ensemble;
    let spec = EnsembleSpec {
        kind,
        n_base: e.n_base,
        base_data: e.base_data,
        block_kinds: e.block_kinds.clone(),
    };
    let compartments: Vec<Compartment> = {
        let mut c: Vec<Compartment> = data.refs(split.indices(SplitKind::Train)).iter().map(|p| p.compartment).collect();
        c.sort();
        c.dedup();
        c
    };
    spec.validate(compartments.len())?;
    let mut members = Vec::with_capacity(e.n_base);
    let mut paths = Vec::with_capacity(e.n_base);
    for k in 0..e.n_base {
        let (boot_seed, model_seed) = member_seeds(root, k);
        let (compartment, bootstrap) = match (kind, e.base_data) {
            (_, BaseData::Compartmentalized) => (Some(compartments[k % compartments.len()]), None),
            (EnsembleKind::Bagging, BaseData::Pooled) => (None, Some(boot_seed)),
            (EnsembleKind::Stacking, BaseData::Pooled) => (None, None),
        };
        let (train, val_idx) = training_indices(data, compartment, bootstrap)?;
        let mut model = BaseModel::build(BaseModelSpec {
            block_kind: spec.block_kind(k),
            ..base_spec(cfg, model_seed)
        })?;
        log::info!("ensemble member {}/{}", k + 1, e.n_base);
        let log = train_base(&mut model, &data.refs(&train), &data.refs(&val_idx), &train_config(cfg, model_seed))?;
        let path = out.join(format!("member{k}.f4w"));
        save_model(&path, &Model::Base(model.clone()))?;
        save_log(&log, &path)?;
        members.push(model);
        paths.push(path);
    }
    let descriptor_path = out.join("ensemble.txt");
    let (trained, meta_path) = match kind {
        EnsembleKind::Bagging => (Trained::Bagging(Bagging::new(members)?), None),
        EnsembleKind::Stacking => {
            let mut meta = MetaModel::build(MetaModelSpec {
                n_base: e.n_base,
                channels: e.meta_channels,
                activation: cfg.model.activation,
                append_lr: e.append_lr,
                seed: derive_seed(root, 999),
                ..Default::default()
            })?;
            let meta_cfg = TrainConfig {
                epochs: e.meta_epochs,
                ..train_config(cfg, derive_seed(root, 998))
            };
            let train = data.refs(split.indices(SplitKind::Train));
            let log = train_meta(&mut meta, &members, &train, &val, &meta_cfg)?;
            let path = out.join("meta.f4w");
            save_model(&path, &Model::Meta(meta.clone()))?;
            save_log(&log, &path)?;
            (Trained::Stacking(Stacking::new(members, meta)?), Some(path))
        }
    };
    let desc = crate::descriptor::Descriptor {
        kind,
        members: paths.iter().map(|p| file_name(p)).collect(),
        meta: meta_path.as_deref().map(file_name),
    };
    atomic_write(&descriptor_path, desc.to_text().as_bytes())?;
    Ok((trained, descriptor_path))
}

fn file_name(p: &Path) -> PathBuf {
    PathBuf::from(p.file_name().expect("artifact paths end in a file name"))
}
