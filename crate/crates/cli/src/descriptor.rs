//! Plain-text ensemble descriptor: one `kind=` line, one `member=` line per
//! base learner in order, and a `meta=` line for stacking. Paths are
//! relative to the descriptor's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use f4flow_core::models::{load_model, Model};
use f4flow_core::train::{Bagging, EnsembleKind, Stacking};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Descriptor {
    pub kind: EnsembleKind,
    pub members: Vec<PathBuf>,
    pub meta: Option<PathBuf>,
}

pub fn kind_name(kind: EnsembleKind) -> &'static str {
    match kind {
        EnsembleKind::Bagging => "bagging",
        EnsembleKind::Stacking => "stacking",
    }
}

impl Descriptor {
    pub fn to_text(&self) -> String {
        let mut s = format!("kind={}\n", kind_name(self.kind));
        for m in &self.members {
            s.push_str(&format!("member={}\n", m.display()));
        }
        if let Some(meta) = &self.meta {
            s.push_str(&format!("meta={}\n", meta.display()));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut members = Vec::new();
        let mut meta = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("descriptor line {}: expected key=value", n + 1);
            };
            match k.trim() {
                "kind" => {
                    kind = Some(match v.trim() {
                        "bagging" => EnsembleKind::Bagging,
                        "stacking" => EnsembleKind::Stacking,
                        other => bail!("descriptor line {}: unknown kind {other:?}", n + 1),
                    })
                }
                "member" => members.push(PathBuf::from(v.trim())),
                "meta" => meta = Some(PathBuf::from(v.trim())),
                other => bail!("descriptor line {}: unknown key {other:?}", n + 1),
            }
        }
        let kind = kind.context("descriptor has no kind= line")?;
        if members.is_empty() {
            bail!("descriptor lists no members");
        }
        match (kind, &meta) {
            (EnsembleKind::Stacking, None) => bail!("stacking descriptor needs a meta= line"),
            (EnsembleKind::Bagging, Some(_)) => bail!("bagging descriptor must not have a meta= line"),
            _ => {}
        }
        Ok(Self { kind, members, meta })
    }

    pub fn is_descriptor(path: &Path) -> bool {
        std::fs::read(path).is_ok_and(|b| b.starts_with(b"kind="))
    }
}

/// A loaded ensemble.
pub enum Ensemble {
    Bagging(Bagging),
    Stacking(Stacking),
}

pub fn load_ensemble(path: &Path) -> Result<Ensemble> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let desc = Descriptor::parse(&text).with_context(|| format!("in descriptor {}", path.display()))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut bases = Vec::with_capacity(desc.members.len());
    for m in &desc.members {
        let p = dir.join(m);
        match load_model(&p).with_context(|| format!("loading member {}", p.display()))? {
            Model::Base(b) => bases.push(b),
            Model::Meta(_) => bail!("member {} is a meta-learner", p.display()),
        }
    }
    Ok(match (desc.kind, desc.meta) {
        (EnsembleKind::Bagging, _) => Ensemble::Bagging(Bagging::new(bases)?),
        (EnsembleKind::Stacking, Some(meta)) => {
            let p = dir.join(meta);
            let Model::Meta(meta) = load_model(&p).with_context(|| format!("loading meta {}", p.display()))? else {
                bail!("{} is not a meta-learner", p.display());
            };
            Ensemble::Stacking(Stacking::new(bases, meta)?)
        }
        (EnsembleKind::Stacking, None) => unreachable!("parse rejects stacking without meta"),
    })
}
