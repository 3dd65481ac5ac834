//! Run configuration: an optional TOML file overlaid by command-line flags.
//!
//! ```toml
//! seed = 7
//! threads = 4
//! matcher = "ingest:matches.tsv"   # or "builtin"
//! final_ransac = 3.0
//! scene = "fundamental"            # or "homography"
//!
//! [pipeline]
//! t_perp = 15.0
//! max_block_pairs = 2000
//!
//! [pipeline.delaunay]
//! deviation_factor = 3.0
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::Deserialize;
use slime::SlimeConfig;
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    #[default]
    Homography,
    Fundamental,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatcherChoice {
    Builtin,
    Ingest(PathBuf),
}

impl MatcherChoice {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "builtin" {
            Ok(Self::Builtin)
        } else if let Some(p) = s.strip_prefix("ingest:") {
            if p.is_empty() {
                bail!("`ingest:` needs a match file path");
            }
            Ok(Self::Ingest(PathBuf::from(p)))
        } else {
            bail!("unknown matcher {s:?}; expected `builtin` or `ingest:<path>`")
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    threads: Option<usize>,
    matcher: Option<String>,
    final_ransac: Option<f64>,
    scene: Option<SceneKind>,
    pipeline: SlimeConfig,
}

/// Flag values; `None` leaves the file (or default) value in place.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub matcher: Option<String>,
    pub final_ransac: Option<f64>,
    pub scene: Option<SceneKind>,
    /// `key=value` assignments into the `[pipeline]` table.
    pub set: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: SlimeConfig,
    pub matcher: MatcherChoice,
    /// Zero lets the pool pick one worker per core.
    pub threads: usize,
    pub final_ransac: Option<f64>,
    pub scene: SceneKind,
}

fn merge(into: &mut Table, from: Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(Value::Table(a)), Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

/// Parses `key=value`; the value is read as TOML and falls back to a string.
fn assignment(s: &str) -> Result<Table> {
    let (k, v) = s
        .split_once('=')
        .with_context(|| format!("--set expects key=value, got {s:?}"))?;
    let (k, v) = (k.trim(), v.trim());
    if let Ok(t) = format!("{k} = {v}").parse::<Table>() {
        return Ok(t);
    }
    format!("{k} = {}", Value::String(v.to_string()))
        .parse::<Table>()
        .with_context(|| format!("bad --set key {k:?}"))
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let mut table = match file {
            Some(p) => std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?
                .parse::<Table>()
                .with_context(|| format!("parsing config {}", p.display()))?,
            None => Table::new(),
        };
        if !flags.set.is_empty() {
            let mut pipeline = match table.remove("pipeline") {
                Some(Value::Table(t)) => t,
                Some(_) => bail!("`pipeline` must be a table"),
                None => Table::new(),
            };
            for s in &flags.set {
                merge(&mut pipeline, assignment(s)?);
            }
            table.insert("pipeline".into(), Value::Table(pipeline));
        }
        let fc: FileConfig = Value::Table(table).try_into().context("invalid configuration")?;

        let mut pipeline = fc.pipeline;
        if let Some(seed) = flags.seed.or(fc.seed) {
            pipeline.ransac_seed = seed;
        }
        pipeline.validate().context("invalid pipeline configuration")?;
        let matcher = match flags.matcher.as_deref().or(fc.matcher.as_deref()) {
            Some(s) => MatcherChoice::parse(s)?,
            None => MatcherChoice::Builtin,
        };
        let final_ransac = flags.final_ransac.or(fc.final_ransac);
        if let Some(t) = final_ransac {
            if t.is_nan() || t <= 0.0 {
                bail!("final RANSAC threshold must be positive, got {t}");
            }
        }
        Ok(Self {
            pipeline,
            matcher,
            threads: flags.threads.or(fc.threads).unwrap_or(0),
            final_ransac,
            scene: flags.scene.or(fc.scene).unwrap_or_default(),
        })
    }
}
