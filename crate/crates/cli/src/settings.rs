//! Experiment settings read from a TOML file; command-line flags win.
//!
//! ```toml
//! data = "data/ml-1m/ratings.dat"
//! scale = "stars"
//! threshold = 3.0
//! min_ratings = 20
//! seed = 0
//! models = ["coffee", "puresvd", "popular", "random"]
//! scenarios = ["negative_1", "random_3", "all"]
//! rank = 10
//! mlrank = [13, 10, 2]
//! folds = 5
//! holdout = 10
//! topn_max = 100
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use coffee_core::ingest::{FileFormat, RatingScale, RawRating};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub format: Option<String>,
    pub scale: Option<String>,
    pub threshold: Option<f64>,
    pub min_ratings: Option<usize>,
    pub seed: Option<u64>,
    pub models: Option<Vec<String>>,
    pub scenarios: Option<Vec<String>>,
    pub rank: Option<usize>,
    pub mlrank: Option<[usize; 3]>,
    pub neighbors: Option<usize>,
    pub positive_levels: Option<String>,
    pub folds: Option<usize>,
    pub holdout: Option<usize>,
    pub topn_max: Option<usize>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // relative data paths are relative to the config file
        if let (Some(data), Some(dir)) = (&config.data, path.parent()) {
            if data.is_relative() {
                config.data = Some(dir.join(data));
            }
        }
        Ok(config)
    }
}

/// `"13,10,2"` as three positive ranks.
pub fn parse_mlrank(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated ranks r1,r2,r3, got `{s}`"));
    }
    let mut out = [0; 3];
    for (slot, p) in out.iter_mut().zip(&parts) {
        *slot = match p.parse::<usize>() {
            Ok(r) if r > 0 => r,
            _ => return Err(format!("rank `{p}` is not a positive integer")),
        };
    }
    Ok(out)
}

/// `"item:rating,item:rating"`.
pub fn parse_ratings(s: &str) -> Result<Vec<(u64, f64)>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let (item, rating) = t
                .split_once(':')
                .ok_or_else(|| format!("expected item:rating, got `{t}`"))?;
            let item = item.trim().parse().map_err(|_| format!("bad item id `{item}`"))?;
            let rating: f64 = rating.trim().parse().map_err(|_| format!("bad rating `{rating}`"))?;
            if !rating.is_finite() {
                return Err(format!("bad rating `{rating}`"));
            }
            Ok((item, rating))
        })
        .collect()
}

pub fn resolve_format(flag: Option<FileFormat>, config: Option<&str>, path: &Path) -> Result<FileFormat> {
    if let Some(f) = flag {
        return Ok(f);
    }
    if let Some(f) = config {
        return Ok(f.parse()?);
    }
    Ok(FileFormat::from_path(path).unwrap_or(FileFormat::Dat))
}

/// Scale by name; `auto` picks half stars when any rating is fractional.
pub fn resolve_scale(name: &str, threshold: Option<f64>, ratings: &[RawRating]) -> Result<RatingScale> {
    let scale = match name {
        "stars" => RatingScale::stars(),
        "half-stars" | "half_stars" => RatingScale::half_stars(),
        "auto" => {
            if ratings.iter().any(|r| r.rating.fract() != 0.0) {
                RatingScale::half_stars()
            } else {
                RatingScale::stars()
            }
        }
        other => bail!("unknown scale `{other}` (expected stars, half-stars or auto)"),
    };
    Ok(match threshold {
        Some(t) => scale.with_threshold(t)?,
        None => scale,
    })
}
