//! INI-style experiment configuration. Top-level keys hold the root seed and
//! output directory; everything else lives in one of the known sections.
//! Unknown sections or keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use ini::Ini;

use f4flow_core::models::{Activation, BlockKind};
use f4flow_core::patch::MotionCriterion;
use f4flow_core::phantom::Family;
use f4flow_core::synth::NoiseOrder;
use f4flow_core::train::{BaseData, EnsembleKind};
use f4flow_core::volume::Compartment;

pub const SEED_ENV: &str = "F4FLOW_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSection {
    pub families: Vec<Family>,
    pub models_per_family: usize,
    pub size: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSection {
    pub snr_min: f64,
    pub snr_max: f64,
    pub noise_order: NoiseOrder,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSection {
    pub stride: usize,
    pub min_fluid: f64,
    pub criterion: MotionCriterion,
    pub augment: usize,
    pub ratios: [u32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSection {
    pub channels: usize,
    pub n_blocks_low: usize,
    pub n_blocks_high: usize,
    pub block_kind: BlockKind,
    pub activation: Activation,
    pub global_skip: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub lr0: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub record_wall_time: bool,
    pub compartment: Option<Compartment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSection {
    /// `None` trains a single base model.
    pub kind: Option<EnsembleKind>,
    pub n_base: usize,
    pub base_data: BaseData,
    pub block_kinds: Vec<BlockKind>,
    pub meta_channels: usize,
    pub meta_epochs: usize,
    pub append_lr: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub protocol: Protocol,
    pub snr: f64,
    pub unseen_family: Option<Family>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Test,
    RecoverNative,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Test => "test",
            Protocol::RecoverNative => "recover-native",
        }
    }
}

impl FromStr for Protocol {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(Protocol::Test),
            "recover-native" => Ok(Protocol::RecoverNative),
            _ => bail!("unknown protocol {s:?} (expected test or recover-native)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub phantom: PhantomSection,
    pub synth: SynthSection,
    pub patch: PatchSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub ensemble: EnsembleSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            phantom: PhantomSection {
                families: vec![Family::TubeJet, Family::BranchSlow, Family::CavityVortex],
                models_per_family: 4,
                size: 48,
                frames: 3,
            },
            synth: SynthSection {
                snr_min: 8.0,
                snr_max: 24.0,
                noise_order: NoiseOrder::BeforeCrop,
            },
            patch: PatchSection {
                stride: 6,
                min_fluid: 0.05,
                criterion: MotionCriterion::FluidMask,
                augment: 0,
                ratios: [6, 2, 2],
            },
            model: ModelSection {
                channels: 16,
                n_blocks_low: 4,
                n_blocks_high: 4,
                block_kind: BlockKind::Residual,
                activation: Activation::Leaky,
                global_skip: true,
            },
            train: TrainSection {
                lr0: 1e-4,
                decay_every: 10,
                epochs: 60,
                batch_size: 16,
                lambda: 5e-7,
                record_wall_time: true,
                compartment: None,
            },
            ensemble: EnsembleSection {
                kind: None,
                n_base: 2,
                base_data: BaseData::Pooled,
                block_kinds: vec![BlockKind::Residual],
                meta_channels: 32,
                meta_epochs: 80,
                append_lr: false,
            },
            eval: EvalSection {
                protocol: Protocol::Test,
                snr: f64::INFINITY,
                unseen_family: None,
            },
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.trim()
        .parse()
        .map_err(|e| anyhow!("[{section}] {key} = {v:?}: {e}"))
}

fn list<T: FromStr>(section: &str, key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(section, key, s))
        .collect()
}

fn parse_bool(section: &str, key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("[{section}] {key} = {v:?}: expected true or false"),
    }
}

pub fn parse_criterion(v: &str) -> Result<MotionCriterion> {
    let v = v.trim();
    if v == "mask" {
        return Ok(MotionCriterion::FluidMask);
    }
    if let Some(t) = v.strip_prefix("speed:") {
        return Ok(MotionCriterion::SpeedAbove(parse("patch", "criterion", t)?));
    }
    bail!("[patch] criterion = {v:?}: expected mask or speed:<cm/s>")
}

fn criterion_name(c: MotionCriterion) -> String {
    match c {
        MotionCriterion::FluidMask => "mask".into(),
        MotionCriterion::SpeedAbove(t) => format!("speed:{t}"),
    }
}

pub fn parse_ensemble_kind(v: &str) -> Result<Option<EnsembleKind>> {
    match v.trim() {
        "none" => Ok(None),
        "bagging" => Ok(Some(EnsembleKind::Bagging)),
        "stacking" => Ok(Some(EnsembleKind::Stacking)),
        _ => bail!("ensemble kind {v:?}: expected none, bagging or stacking"),
    }
}

fn ensemble_kind_name(k: Option<EnsembleKind>) -> &'static str {
    match k {
        None => "none",
        Some(EnsembleKind::Bagging) => "bagging",
        Some(EnsembleKind::Stacking) => "stacking",
    }
}

fn base_data_name(b: BaseData) -> &'static str {
    match b {
        BaseData::Pooled => "pooled",
        BaseData::Compartmentalized => "compartmentalized",
    }
}

fn snr_text(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        v.to_string()
    }
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).context("config is not valid INI")?;
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            let name = section.unwrap_or("");
            for (key, v) in props.iter() {
                cfg.set(name, key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_ini_str(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Applies `F4FLOW_SEED` when set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| anyhow!("{SEED_ENV}={v:?} is not an unsigned integer"))?;
        }
        Ok(self)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let s = section;
        match (section, key) {
            ("", "seed") => self.seed = parse(s, key, v)?,
            ("", "out") => self.out = Some(PathBuf::from(v.trim())),
            ("phantom", "families") => self.phantom.families = list(s, key, v)?,
            ("phantom", "models_per_family") => self.phantom.models_per_family = parse(s, key, v)?,
            ("phantom", "size") => self.phantom.size = parse(s, key, v)?,
            ("phantom", "frames") => self.phantom.frames = parse(s, key, v)?,
            ("synth", "snr_min") => self.synth.snr_min = parse(s, key, v)?,
            ("synth", "snr_max") => self.synth.snr_max = parse(s, key, v)?,
            ("synth", "noise_order") => {
                self.synth.noise_order = match v.trim() {
                    "before-crop" => NoiseOrder::BeforeCrop,
                    "after-crop" => NoiseOrder::AfterCrop,
                    _ => bail!("[synth] noise_order = {v:?}: expected before-crop or after-crop"),
                }
            }
            ("patch", "stride") => self.patch.stride = parse(s, key, v)?,
            ("patch", "min_fluid") => self.patch.min_fluid = parse(s, key, v)?,
            ("patch", "criterion") => self.patch.criterion = parse_criterion(v)?,
            ("patch", "augment") => self.patch.augment = parse(s, key, v)?,
            ("patch", "ratios") => {
                let r: Vec<u32> = v.split(':').map(|p| parse(s, key, p)).collect::<Result<_>>()?;
                self.patch.ratios = r
                    .try_into()
                    .map_err(|_| anyhow!("[patch] ratios = {v:?}: expected a:b:c"))?;
            }
            ("model", "channels") => self.model.channels = parse(s, key, v)?,
            ("model", "n_blocks_low") => self.model.n_blocks_low = parse(s, key, v)?,
            ("model", "n_blocks_high") => self.model.n_blocks_high = parse(s, key, v)?,
            ("model", "block_kind") => self.model.block_kind = parse(s, key, v)?,
            ("model", "activation") => self.model.activation = parse(s, key, v)?,
            ("model", "global_skip") => self.model.global_skip = parse_bool(s, key, v)?,
            ("train", "lr0") => self.train.lr0 = parse(s, key, v)?,
            ("train", "decay_every") => self.train.decay_every = parse(s, key, v)?,
            ("train", "epochs") => self.train.epochs = parse(s, key, v)?,
            ("train", "batch_size") => self.train.batch_size = parse(s, key, v)?,
            ("train", "lambda") => self.train.lambda = parse(s, key, v)?,
            ("train", "record_wall_time") => self.train.record_wall_time = parse_bool(s, key, v)?,
            ("train", "compartment") => {
                self.train.compartment = match v.trim() {
                    "all" | "" => None,
                    c => Some(parse(s, key, c)?),
                }
            }
            ("ensemble", "kind") => self.ensemble.kind = parse_ensemble_kind(v)?,
            ("ensemble", "n_base") => self.ensemble.n_base = parse(s, key, v)?,
            ("ensemble", "base_data") => {
                self.ensemble.base_data = match v.trim() {
                    "pooled" => BaseData::Pooled,
                    "compartmentalized" => BaseData::Compartmentalized,
                    _ => bail!("[ensemble] base_data = {v:?}: expected pooled or compartmentalized"),
                }
            }
            ("ensemble", "block_kinds") => self.ensemble.block_kinds = list(s, key, v)?,
            ("ensemble", "meta_channels") => self.ensemble.meta_channels = parse(s, key, v)?,
            ("ensemble", "meta_epochs") => self.ensemble.meta_epochs = parse(s, key, v)?,
            ("ensemble", "append_lr") => self.ensemble.append_lr = parse_bool(s, key, v)?,
            ("eval", "protocol") => self.eval.protocol = parse(s, key, v)?,
            ("eval", "snr") => self.eval.snr = parse(s, key, v)?,
            ("eval", "unseen_family") => {
                self.eval.unseen_family = match v.trim() {
                    "none" | "" => None,
                    f => Some(parse(s, key, f)?),
                }
            }
            ("" | "phantom" | "synth" | "patch" | "model" | "train" | "ensemble" | "eval", _) => {
                bail!("unknown key {key:?} in section [{section}]")
            }
            _ => bail!("unknown section [{section}]"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.phantom;
        if p.families.is_empty() || p.models_per_family == 0 || p.frames == 0 {
            bail!("[phantom] needs at least one family, model and frame");
        }
        if p.size % 4 != 0 || p.size < 2 * 12 {
            bail!("[phantom] size {} must be a multiple of 4 and at least 24", p.size);
        }
        let s = &self.synth;
        if !(s.snr_min > 0.0 && s.snr_min <= s.snr_max) {
            bail!("[synth] needs 0 < snr_min <= snr_max");
        }
        if self.patch.stride == 0 || self.patch.ratios.contains(&0) {
            bail!("[patch] stride and ratios must be positive");
        }
        if self.ensemble.block_kinds.is_empty() {
            bail!("[ensemble] block_kinds must not be empty");
        }
        if !(self.eval.snr > 0.0) {
            bail!("[eval] snr must be positive");
        }
        Ok(())
    }

    /// Fully resolved configuration; parsing it back yields `self`.
    pub fn to_ini_string(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "seed = {}", self.seed);
        if let Some(out) = &self.out {
            let _ = writeln!(o, "out = {}", out.display());
        }
        let p = &self.phantom;
        let _ = writeln!(o, "\n[phantom]");
        let _ = writeln!(o, "families = {}", join(&p.families, |f| f.name().to_string()));
        let _ = writeln!(o, "models_per_family = {}", p.models_per_family);
        let _ = writeln!(o, "size = {}", p.size);
        let _ = writeln!(o, "frames = {}", p.frames);
        let s = &self.synth;
        let _ = writeln!(o, "\n[synth]");
        let _ = writeln!(o, "snr_min = {}", s.snr_min);
        let _ = writeln!(o, "snr_max = {}", s.snr_max);
        let order = match s.noise_order {
            NoiseOrder::BeforeCrop => "before-crop",
            NoiseOrder::AfterCrop => "after-crop",
        };
        let _ = writeln!(o, "noise_order = {order}");
        let pa = &self.patch;
        let _ = writeln!(o, "\n[patch]");
        let _ = writeln!(o, "stride = {}", pa.stride);
        let _ = writeln!(o, "min_fluid = {}", pa.min_fluid);
        let _ = writeln!(o, "criterion = {}", criterion_name(pa.criterion));
        let _ = writeln!(o, "augment = {}", pa.augment);
        let _ = writeln!(o, "ratios = {}:{}:{}", pa.ratios[0], pa.ratios[1], pa.ratios[2]);
        let m = &self.model;
        let _ = writeln!(o, "\n[model]");
        let _ = writeln!(o, "channels = {}", m.channels);
        let _ = writeln!(o, "n_blocks_low = {}", m.n_blocks_low);
        let _ = writeln!(o, "n_blocks_high = {}", m.n_blocks_high);
        let _ = writeln!(o, "block_kind = {}", m.block_kind.name());
        let _ = writeln!(o, "activation = {}", m.activation.name());
        let _ = writeln!(o, "global_skip = {}", m.global_skip);
        let t = &self.train;
        let _ = writeln!(o, "\n[train]");
        let _ = writeln!(o, "lr0 = {:e}", t.lr0);
        let _ = writeln!(o, "decay_every = {}", t.decay_every);
        let _ = writeln!(o, "epochs = {}", t.epochs);
        let _ = writeln!(o, "batch_size = {}", t.batch_size);
        let _ = writeln!(o, "lambda = {:e}", t.lambda);
        let _ = writeln!(o, "record_wall_time = {}", t.record_wall_time);
        let _ = writeln!(o, "compartment = {}", t.compartment.map_or("all", |c| c.name()));
        let e = &self.ensemble;
        let _ = writeln!(o, "\n[ensemble]");
        let _ = writeln!(o, "kind = {}", ensemble_kind_name(e.kind));
        let _ = writeln!(o, "n_base = {}", e.n_base);
        let _ = writeln!(o, "base_data = {}", base_data_name(e.base_data));
        let _ = writeln!(o, "block_kinds = {}", join(&e.block_kinds, |b| b.name().to_string()));
        let _ = writeln!(o, "meta_channels = {}", e.meta_channels);
        let _ = writeln!(o, "meta_epochs = {}", e.meta_epochs);
        let _ = writeln!(o, "append_lr = {}", e.append_lr);
        let ev = &self.eval;
        let _ = writeln!(o, "\n[eval]");
        let _ = writeln!(o, "protocol = {}", ev.protocol.name());
        let _ = writeln!(o, "snr = {}", snr_text(ev.snr));
        let _ = writeln!(o, "unseen_family = {}", ev.unseen_family.map_or("none", |f| f.name()));
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 42;
        cfg.out = Some("runs/a".into());
        cfg.train.compartment = Some(Compartment::Cardiac);
        cfg.patch.criterion = MotionCriterion::SpeedAbove(2.5);
        cfg.ensemble.kind = Some(EnsembleKind::Stacking);
        cfg.ensemble.block_kinds = vec![BlockKind::Dense, BlockKind::Csp];
        cfg.eval.unseen_family = Some(Family::DualLumen);
        let text = cfg.to_ini_string();
        assert_eq!(ExperimentConfig::from_ini_str(&text).unwrap(), cfg);
        let default = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_ini_str(&default.to_ini_string()).unwrap(), default);
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        assert!(ExperimentConfig::from_ini_str("[train]\nepochz = 3\n").is_err());
        assert!(ExperimentConfig::from_ini_str("[trian]\nepochs = 3\n").is_err());
        assert!(ExperimentConfig::from_ini_str("colour = red\n").is_err());
        assert!(ExperimentConfig::from_ini_str("[model]\nblock_kind = fancy\n").is_err());
        let cfg = ExperimentConfig::from_ini_str("seed = 9\n[train]\nepochs = 3\n").unwrap();
        assert_eq!((cfg.seed, cfg.train.epochs), (9, 3));
    }
}
