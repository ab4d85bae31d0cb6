//! Plain `key = value` run descriptions for the editing harness.
//!
//! ```text
//! # timbre transfer dry run
//! steps = 8
//! lambda_max = 2.5
//! schedule = constant
//! layers = down
//! seed = 42
//! prior = prior.tns
//! mask_span = 2..4
//! mix = mixture.wav        # optional; synthetic latent when omitted
//! guidance_scale = 3.5     # optional
//! out = run_out            # optional
//! ```
//!
//! `mask_span` is an inclusive token range. `layers` is either `down` (the
//! model's default down-layer set) or a comma-separated id list. Relative
//! paths resolve against the config file's directory.

use crate::calibration::{LambdaSchedule, DEFAULT_GUIDANCE};
use crate::error::{PolyError, Result};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

/// Which layers receive calibration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSelection {
    /// The model's down-layer half.
    Down,
    /// Explicit layer ids.
    Ids(BTreeSet<usize>),
}

/// Parsed run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub steps: usize,
    pub lambda_max: f64,
    pub schedule: LambdaSchedule,
    pub layers: LayerSelection,
    pub seed: u64,
    pub prior: PathBuf,
    /// Inclusive token span of the target entity.
    pub mask_span: (usize, usize),
    pub mix: Option<PathBuf>,
    pub guidance_scale: f64,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Parse the key/value text. Paths are kept as written.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PolyError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if entries.contains_key(&key) {
                return Err(PolyError::Config(format!(
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
            entries.insert(key, value.trim().to_string());
        }

        let mut take = |k: &str| entries.remove(k);
        let require = |v: Option<String>, k: &str| {
            v.ok_or_else(|| PolyError::Config(format!("missing required key {k:?}")))
        };

        let steps: usize = parse_num(&require(take("steps"), "steps")?, "steps")?;
        if steps == 0 {
            return Err(PolyError::Config("steps must be >= 1".into()));
        }
        let lambda_max: f64 = parse_num(&require(take("lambda_max"), "lambda_max")?, "lambda_max")?;
        if lambda_max < 0.0 {
            return Err(PolyError::Config("lambda_max must be >= 0".into()));
        }
        let schedule = LambdaSchedule::parse(&require(take("schedule"), "schedule")?)?;
        let layers = parse_layers(&require(take("layers"), "layers")?)?;
        let seed: u64 = parse_num(&require(take("seed"), "seed")?, "seed")?;
        let prior = PathBuf::from(require(take("prior"), "prior")?);
        let mask_span = parse_span(&require(take("mask_span"), "mask_span")?)?;
        let mix = take("mix").map(PathBuf::from);
        let guidance_scale = match take("guidance_scale") {
            Some(v) => parse_num(&v, "guidance_scale")?,
            None => DEFAULT_GUIDANCE,
        };
        let out = take("out").map(PathBuf::from);

        if let Some(stray) = entries.keys().next() {
            return Err(PolyError::Config(format!("unknown key {stray:?}")));
        }

        Ok(Self {
            steps,
            lambda_max,
            schedule,
            layers,
            seed,
            prior,
            mask_span,
            mix,
            guidance_scale,
            out,
        })
    }

    /// Read a config file, resolving relative paths against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        fn resolve(base: &Path, p: &PathBuf) -> PathBuf {
            if p.is_relative() {
                base.join(p)
            } else {
                p.clone()
            }
        }
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.prior = resolve(base, &config.prior);
        config.mix = config.mix.as_ref().map(|p| resolve(base, p));
        config.out = config.out.as_ref().map(|p| resolve(base, p));
        Ok(config)
    }

    /// Flat key/value view for manifest echoing.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("steps".into(), self.steps.to_string());
        m.insert("lambda_max".into(), self.lambda_max.to_string());
        m.insert("schedule".into(), self.schedule.to_string());
        m.insert(
            "layers".into(),
            match &self.layers {
                LayerSelection::Down => "down".to_string(),
                LayerSelection::Ids(ids) => ids
                    .iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            },
        );
        m.insert("seed".into(), self.seed.to_string());
        m.insert("prior".into(), self.prior.display().to_string());
        m.insert(
            "mask_span".into(),
            format!("{}..{}", self.mask_span.0, self.mask_span.1),
        );
        if let Some(mix) = &self.mix {
            m.insert("mix".into(), mix.display().to_string());
        }
        m.insert("guidance_scale".into(), self.guidance_scale.to_string());
        m
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| PolyError::Config(format!("bad value {s:?} for key {key:?}")))
}

fn parse_span(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| PolyError::Config(format!("mask_span must be start..end, got {s:?}")))?;
    let start: usize = parse_num(a.trim(), "mask_span")?;
    let end: usize = parse_num(b.trim(), "mask_span")?;
    if start > end {
        return Err(PolyError::Config(format!(
            "mask_span start {start} exceeds end {end}"
        )));
    }
    Ok((start, end))
}

fn parse_layers(s: &str) -> Result<LayerSelection> {
    if s == "down" {
        return Ok(LayerSelection::Down);
    }
    let mut ids = BTreeSet::new();
    for part in s.split(',') {
        ids.insert(parse_num::<usize>(part.trim(), "layers")?);
    }
    if ids.is_empty() {
        return Err(PolyError::Config("layers list is empty".into()));
    }
    Ok(LayerSelection::Ids(ids))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "\
# comment line
steps = 8
lambda_max = 2.5
schedule = cosine_decay
layers = 0, 1
seed = 42
prior = p.tns
mask_span = 2..4   # target tokens
mix = m.wav
guidance_scale = 3.5
out = results
";

    #[test]
    fn parses_full_config() {
        let c = RunConfig::parse(FULL).unwrap();
        assert_eq!(c.steps, 8);
        assert_eq!(c.lambda_max, 2.5);
        assert_eq!(c.schedule, LambdaSchedule::CosineDecay);
        assert_eq!(c.layers, LayerSelection::Ids(BTreeSet::from([0, 1])));
        assert_eq!(c.mask_span, (2, 4));
        assert_eq!(c.mix.as_deref(), Some(Path::new("m.wav")));
        assert_eq!(c.out.as_deref(), Some(Path::new("results")));
    }

    #[test]
    fn defaults_and_down_layers() {
        let text = "steps=4\nlambda_max=0\nschedule=constant\nlayers=down\nseed=1\nprior=x.tns\nmask_span=0..0\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.layers, LayerSelection::Down);
        assert_eq!(c.guidance_scale, DEFAULT_GUIDANCE);
        assert!(c.mix.is_none());
        assert!(c.out.is_none());
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(RunConfig::parse("steps 8\n").is_err());
        assert!(RunConfig::parse("steps=0\nlambda_max=1\nschedule=constant\nlayers=down\nseed=1\nprior=p\nmask_span=0..0\n").is_err());
        assert!(RunConfig::parse("lambda_max=1\n").is_err()); // missing keys
        assert!(RunConfig::parse(&format!("{FULL}unknown_key = 3\n")).is_err());
        assert!(RunConfig::parse(&FULL.replace("2..4", "4..2")).is_err());
        assert!(RunConfig::parse(&FULL.replace("cosine_decay", "sigmoid")).is_err());
        assert!(RunConfig::parse(&format!("{FULL}steps = 9\n")).is_err()); // duplicate
    }

    #[test]
    fn from_file_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, FULL).unwrap();
        let c = RunConfig::from_file(&path).unwrap();
        assert_eq!(c.prior, dir.path().join("p.tns"));
        assert_eq!(c.mix.as_deref(), Some(dir.path().join("m.wav")).as_deref());
        let echo = c.echo();
        assert_eq!(echo["mask_span"], "2..4");
        assert_eq!(echo["layers"], "0,1");
    }
}
