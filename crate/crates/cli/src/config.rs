//! Run configuration: flat `key=value` files overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fmm_core::kernels::KernelFamily;

use crate::CliError;

/// Effective settings for every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub track: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub workers: usize,
    pub knots: usize,
    pub iters: usize,
    pub keep: usize,
    pub kernels: Vec<KernelFamily>,
    pub warp_dir: Option<PathBuf>,
    pub per_combo: usize,
    pub max_attempts: usize,
    pub max_warps: Option<usize>,
    pub n_obs: usize,
    pub missing: f64,
    pub warped: bool,
    pub standardize: bool,
    pub bins: usize,
    pub max_lag: f64,
    pub query_points: usize,
    pub dump_basis: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            track: None,
            out: PathBuf::from("out"),
            seed: 1,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            knots: 400,
            iters: 10_000,
            keep: 1000,
            kernels: KernelFamily::ALL.to_vec(),
            warp_dir: None,
            per_combo: 40,
            max_attempts: 500,
            max_warps: None,
            n_obs: 300,
            missing: 0.0,
            warped: false,
            standardize: true,
            bins: 15,
            max_lag: 0.3,
            query_points: 201,
            dump_basis: false,
        }
    }
}

pub fn parse_kernels(s: &str) -> Result<Vec<KernelFamily>, String> {
    let list = s
        .split(',')
        .map(|k| k.trim())
        .filter(|k| !k.is_empty())
        .map(|k| KernelFamily::from_str(k).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    if list.is_empty() {
        return Err("kernel list is empty".into());
    }
    Ok(list)
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got {s:?}")),
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse::<T>()
        .map_err(|_| CliError::Config(format!("bad value {v:?} for {key}")))
}

impl RunConfig {
    /// Apply one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key.trim() {
            "track" => self.track = Some(PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "knots" => self.knots = parse(key, v)?,
            "iters" => self.iters = parse(key, v)?,
            "keep" => self.keep = parse(key, v)?,
            "kernels" => self.kernels = parse_kernels(v).map_err(CliError::Config)?,
            "warp_dir" => self.warp_dir = Some(PathBuf::from(v)),
            "per_combo" => self.per_combo = parse(key, v)?,
            "max_attempts" => self.max_attempts = parse(key, v)?,
            "max_warps" => self.max_warps = Some(parse(key, v)?),
            "n_obs" => self.n_obs = parse(key, v)?,
            "missing" => self.missing = parse(key, v)?,
            "warped" => self.warped = parse_bool(v).map_err(CliError::Config)?,
            "standardize" => self.standardize = parse_bool(v).map_err(CliError::Config)?,
            "bins" => self.bins = parse(key, v)?,
            "max_lag" => self.max_lag = parse(key, v)?,
            "query_points" => self.query_points = parse(key, v)?,
            "dump_basis" => self.dump_basis = parse_bool(v).map_err(CliError::Config)?,
            other => return Err(CliError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Apply a config file: one `key=value` per line, `#` comments allowed.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        if let Some(t) = &self.track {
            if !t.exists() {
                return Err(CliError::Config(format!("track file {} does not exist", t.display())));
            }
        }
        if let Some(d) = &self.warp_dir {
            if !d.join("index.csv").exists() {
                return Err(CliError::Config(format!("warp directory {} has no index.csv", d.display())));
            }
        }
        if !(0.0..1.0).contains(&self.missing) {
            return Err(CliError::Config(format!("missing must lie in [0, 1), got {}", self.missing)));
        }
        if self.iters < 1000 {
            return Err(CliError::Config(format!("iters must be at least 1000, got {}", self.iters)));
        }
        if self.keep == 0 || self.query_points < 2 {
            return Err(CliError::Config("keep must be ≥ 1 and query_points ≥ 2".into()));
        }
        Ok(())
    }

    /// Effective settings as ordered `key=value` pairs.
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let kernels: Vec<&str> = self.kernels.iter().map(|k| k.code()).collect();
        BTreeMap::from([
            ("track", opt(&self.track)),
            ("out", self.out.display().to_string()),
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
            ("knots", self.knots.to_string()),
            ("iters", self.iters.to_string()),
            ("keep", self.keep.to_string()),
            ("kernels", kernels.join(",")),
            ("warp_dir", opt(&self.warp_dir)),
            ("per_combo", self.per_combo.to_string()),
            ("max_attempts", self.max_attempts.to_string()),
            ("max_warps", self.max_warps.map(|m| m.to_string()).unwrap_or_default()),
            ("n_obs", self.n_obs.to_string()),
            ("missing", self.missing.to_string()),
            ("warped", self.warped.to_string()),
            ("standardize", self.standardize.to_string()),
            ("bins", self.bins.to_string()),
            ("max_lag", self.max_lag.to_string()),
            ("query_points", self.query_points.to_string()),
            ("dump_basis", self.dump_basis.to_string()),
            ("ig_convention", "shape-scale".to_string()),
            ("variogram_estimator", "classical".to_string()),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nseed = 42\nkernels=G,TU\niters=2000 # trailing\nstandardize=false\n").unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.kernels, vec![KernelFamily::Gaussian, KernelFamily::TailUp]);
        assert_eq!(cfg.iters, 2000);
        assert!(!cfg.standardize);
        cfg.set("seed", "7").unwrap();
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn bad_entries_are_config_errors() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("nonsense", "1").is_err());
        assert!(cfg.set("seed", "abc").is_err());
        assert!(cfg.set("kernels", "G,XX").is_err());
        cfg.workers = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn entries_round_trip_through_set() {
        let mut cfg = RunConfig::default();
        cfg.max_warps = Some(3);
        cfg.track = Some(PathBuf::from("a.csv"));
        let mut back = RunConfig::default();
        for (k, v) in cfg.entries() {
            if v.is_empty() || k == "ig_convention" || k == "variogram_estimator" {
                continue;
            }
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, cfg);
    }
}
