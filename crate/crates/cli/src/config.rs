//! Flat `key = value` experiment configuration.
//!
//! Keys use dotted sections (`coeffs.alpha_A`, `workload.mu_P`). Blank lines
//! and lines starting with `#` are ignored, as is anything after ` #`. List
//! values are comma separated. Every key can also be given on the command
//! line as `--key value`, which replaces the file value.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use afd_core::analytic::HorizonMode;
use afd_core::calibrate::HardwareParams;
use afd_core::experiment::{StopSpec, SweepGrid};
use afd_core::model::{termination_probability, LatencyCoefficients, PrefillDist};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("config key `{key}`: {reason}")]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub const COEFF_KEYS: [&str; 6] = [
    "coeffs.alpha_A",
    "coeffs.beta_A",
    "coeffs.alpha_F",
    "coeffs.beta_F",
    "coeffs.alpha_C",
    "coeffs.beta_C",
];

pub const EXPERIMENT_KEYS: &[&str] = &[
    "coeffs.alpha_A",
    "coeffs.beta_A",
    "coeffs.alpha_F",
    "coeffs.beta_F",
    "coeffs.alpha_C",
    "coeffs.beta_C",
    "coeffs.file",
    "coeffs.preset",
    "workload.mu_P",
    "workload.mu_D",
    "workload.p",
    "workload.N",
    "workload.prefill_dist",
    "bundle.r",
    "bundle.B",
    "sweep.r",
    "sweep.B",
    "sweep.mu_P",
    "sweep.mu_D",
    "analytic.mode",
    "optimize.r_max",
    "optimize.r_step",
    "seed",
    "seeds",
    "stop",
    "out",
];

pub const HARDWARE_KEYS: &[&str] = &[
    "hw.pi_peak",
    "hw.beta_HBM",
    "hw.eta_mem",
    "hw.eta_compute",
    "hw.beta_net",
    "hw.N_expert",
    "hw.N_expert_per_card",
    "hw.k_route",
    "hw.mtp_depth",
    "hw.H",
    "hw.d_expert",
    "hw.d_kv",
];

/// Keys without a section that may still be overridden from the command line.
pub const BARE_KEYS: [&str; 2] = ["seeds", "stop"];

/// Parsed key/value pairs, ordered by key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find(" #") {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::new(
                    format!("line {}", i + 1),
                    format!("expected `key = value`, got `{line}`"),
                ));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::new(format!("line {}", i + 1), "empty key"));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ConfigError::new(key, "given more than once"));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn serialize(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Rejects keys outside `known`, which catches typos early.
    pub fn check_known(&self, known: &[&str]) -> Result<(), ConfigError> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(ConfigError::new(k, "unknown key")),
            None => Ok(()),
        }
    }

    fn required(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::new(key, "missing"))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| ConfigError::new(key, format!("cannot parse `{v}`")))
            })
            .transpose()
    }

    fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.required(key)?;
        Ok(self.parsed(key)?.expect("checked above"))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        let Some(raw) = self.get(key) else {
            return Ok(None);
        };
        let items: Vec<&str> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err(ConfigError::new(key, "list is empty"));
        }
        items
            .into_iter()
            .map(|s| s.parse::<T>().map_err(|_| ConfigError::new(key, format!("cannot parse `{s}`"))))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// Makes a relative `coeffs.file` relative to `base` instead of the
    /// working directory.
    pub fn anchor_paths(&mut self, base: &Path) {
        if let Some(file) = self.entries.get_mut("coeffs.file") {
            let path = Path::new(file.as_str());
            if path.is_relative() {
                *file = base.join(path).to_string_lossy().into_owned();
            }
        }
    }
}

/// Typed view over a [`RawConfig`]; each accessor names the key it failed on.
pub struct ExperimentConfig {
    raw: RawConfig,
}

impl ExperimentConfig {
    pub fn new(raw: RawConfig) -> Result<Self, ConfigError> {
        raw.check_known(EXPERIMENT_KEYS)?;
        Ok(Self { raw })
    }

    /// Coefficients from `coeffs.preset`, then `coeffs.file`, then inline keys,
    /// later sources overriding earlier ones.
    pub fn coefficients(&self) -> Result<LatencyCoefficients, ConfigError> {
        let mut values: BTreeMap<&str, f64> = BTreeMap::new();
        if let Some(preset) = self.raw.get("coeffs.preset") {
            if preset != "baseline" {
                return Err(ConfigError::new("coeffs.preset", format!("unknown preset `{preset}`")));
            }
            for (key, (_, v)) in COEFF_KEYS.iter().zip(LatencyCoefficients::BASELINE.entries()) {
                values.insert(key, v);
            }
        }
        if let Some(path) = self.raw.get("coeffs.file") {
            let file = RawConfig::load(Path::new(path))
                .map_err(|e| ConfigError::new("coeffs.file", format!("{path}: {e}")))?;
            file.check_known(&COEFF_KEYS)
                .map_err(|e| ConfigError::new("coeffs.file", format!("{path}: {e}")))?;
            for key in COEFF_KEYS {
                if let Some(v) = file.parsed::<f64>(key)? {
                    values.insert(key, v);
                }
            }
        }
        for key in COEFF_KEYS {
            if let Some(v) = self.raw.parsed::<f64>(key)? {
                values.insert(key, v);
            }
        }
        let get = |key: &str| {
            values
                .get(key)
                .copied()
                .ok_or_else(|| ConfigError::new(key, "missing (set it, coeffs.file or coeffs.preset)"))
        };
        LatencyCoefficients::new(
            get("coeffs.alpha_A")?,
            get("coeffs.beta_A")?,
            get("coeffs.alpha_F")?,
            get("coeffs.beta_F")?,
            get("coeffs.alpha_C")?,
            get("coeffs.beta_C")?,
        )
        .map_err(|e| ConfigError::new("coeffs", e.to_string()))
    }

    pub fn mu_p(&self) -> Result<f64, ConfigError> {
        self.raw.require("workload.mu_P")
    }

    /// Mean decode length from `workload.mu_D` or `workload.p`.
    pub fn mu_d(&self) -> Result<f64, ConfigError> {
        match (self.raw.parsed::<f64>("workload.mu_D")?, self.raw.parsed::<f64>("workload.p")?) {
            (Some(_), Some(_)) => Err(ConfigError::new("workload.p", "give either workload.p or workload.mu_D, not both")),
            (Some(mu_d), None) => Ok(mu_d),
            (None, Some(p)) if p > 0.0 && p <= 1.0 => Ok((1.0 - p) / p),
            (None, Some(p)) => Err(ConfigError::new("workload.p", format!("must lie in (0, 1], got {p}"))),
            (None, None) => Err(ConfigError::new("workload.mu_D", "missing (or give workload.p)")),
        }
    }

    /// Termination probability, exact when `workload.p` was given.
    pub fn p(&self) -> Result<f64, ConfigError> {
        match self.raw.parsed::<f64>("workload.p")? {
            Some(p) if self.raw.get("workload.mu_D").is_none() => Ok(p),
            _ => Ok(termination_probability(self.mu_d()?)),
        }
    }

    pub fn n(&self) -> Result<u64, ConfigError> {
        self.raw.require("workload.N")
    }

    pub fn prefill_dist(&self) -> Result<PrefillDist, ConfigError> {
        Ok(self.raw.parsed("workload.prefill_dist")?.unwrap_or_default())
    }

    pub fn mode(&self) -> Result<HorizonMode, ConfigError> {
        Ok(self.raw.parsed("analytic.mode")?.unwrap_or_default())
    }

    pub fn ratio(&self) -> Result<u32, ConfigError> {
        self.raw.require("bundle.r")
    }

    pub fn batch(&self) -> Result<u32, ConfigError> {
        self.raw.require("bundle.B")
    }

    pub fn stop(&self) -> Result<StopSpec, ConfigError> {
        match self.raw.get("stop") {
            None => Ok(StopSpec::default()),
            Some(v) => v.parse().map_err(|e: String| ConfigError::new("stop", e)),
        }
    }

    /// `seed` when given, else the first of `seeds`, else 0.
    pub fn seed(&self) -> Result<u64, ConfigError> {
        if let Some(s) = self.raw.parsed("seed")? {
            return Ok(s);
        }
        Ok(self.seeds()?[0])
    }

    pub fn seeds(&self) -> Result<Vec<u64>, ConfigError> {
        if let Some(list) = self.raw.list("seeds")? {
            return Ok(list);
        }
        Ok(vec![self.raw.parsed("seed")?.unwrap_or(0)])
    }

    pub fn out(&self) -> Option<PathBuf> {
        self.raw.get("out").map(PathBuf::from)
    }

    pub fn r_grid(&self) -> Result<(f64, f64), ConfigError> {
        let r_max: f64 = self.raw.parsed("optimize.r_max")?.unwrap_or(64.0);
        let step: f64 = self.raw.parsed("optimize.r_step")?.unwrap_or(0.25);
        if !(step > 0.0 && step.is_finite()) {
            return Err(ConfigError::new("optimize.r_step", "must be positive"));
        }
        if !(r_max >= step && r_max.is_finite()) {
            return Err(ConfigError::new("optimize.r_max", "must be at least optimize.r_step"));
        }
        Ok((r_max, step))
    }

    /// Sweep axes; each falls back to the matching single-run key.
    pub fn grid(&self) -> Result<SweepGrid, ConfigError> {
        let r = match self.raw.list("sweep.r")? {
            Some(v) => v,
            None => vec![self.raw.require("bundle.r").map_err(|_| ConfigError::new("sweep.r", "missing (or give bundle.r)"))?],
        };
        let batch = match self.raw.list("sweep.B")? {
            Some(v) => v,
            None => vec![self.raw.require("bundle.B").map_err(|_| ConfigError::new("sweep.B", "missing (or give bundle.B)"))?],
        };
        let mu_p = match self.raw.list("sweep.mu_P")? {
            Some(v) => v,
            None => vec![self.mu_p().map_err(|_| ConfigError::new("sweep.mu_P", "missing (or give workload.mu_P)"))?],
        };
        let mu_d = match self.raw.list("sweep.mu_D")? {
            Some(v) => v,
            None => vec![self.mu_d().map_err(|e| ConfigError::new("sweep.mu_D", format!("missing ({e})")))?],
        };
        if r.contains(&0) {
            return Err(ConfigError::new("sweep.r", "ratios must be positive"));
        }
        if batch.contains(&0) {
            return Err(ConfigError::new("sweep.B", "batch sizes must be positive"));
        }
        Ok(SweepGrid {
            r,
            batch,
            mu_p,
            mu_d,
            seeds: self.seeds()?,
            n: self.n()?,
            prefill_dist: self.prefill_dist()?,
            mode: self.mode()?,
            stop: self.stop()?,
        })
    }
}

/// Hardware description for first-principles slopes, from `hw.*` keys.
pub fn hardware_params(raw: &RawConfig) -> Result<HardwareParams, ConfigError> {
    raw.check_known(HARDWARE_KEYS)?;
    Ok(HardwareParams {
        pi_peak: raw.require("hw.pi_peak")?,
        beta_hbm: raw.require("hw.beta_HBM")?,
        eta_mem: raw.parsed("hw.eta_mem")?.unwrap_or(1.0),
        eta_compute: raw.parsed("hw.eta_compute")?.unwrap_or(1.0),
        beta_net: raw.require("hw.beta_net")?,
        n_expert: raw.require("hw.N_expert")?,
        n_expert_per_card: raw.require("hw.N_expert_per_card")?,
        k_route: raw.require("hw.k_route")?,
        mtp_depth: raw.parsed("hw.mtp_depth")?.unwrap_or(0),
        hidden: raw.require("hw.H")?,
        d_expert: raw.require("hw.d_expert")?,
        d_kv: raw.require("hw.d_kv")?,
    })
}

/// Splits `--key value` and `--key=value` overrides for config keys out of
/// `args`, returning the remaining arguments and the overrides in order.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), ConfigError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        let is_config_key = key.contains('.') || BARE_KEYS.contains(&key.as_str());
        if !is_config_key {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => iter
                .next()
                .ok_or_else(|| ConfigError::new(key.clone(), "override is missing its value"))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASELINE: &str = "\
# baseline decode workload
coeffs.preset = baseline
workload.mu_P = 100
workload.mu_D = 500   # mean decode length
workload.N = 10000
bundle.B = 256
bundle.r = 8
sweep.r = 1, 2, 4, 8, 16, 24, 32
seeds = 0,1,2
";

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::new(RawConfig::parse(text).unwrap()).unwrap()
    }

    #[test]
    fn parse_and_round_trip() {
        let raw = RawConfig::parse(BASELINE).unwrap();
        assert_eq!(raw.get("workload.mu_D"), Some("500"));
        assert_eq!(raw.get("sweep.r"), Some("1, 2, 4, 8, 16, 24, 32"));
        let again = RawConfig::parse(&raw.serialize()).unwrap();
        assert_eq!(raw, again);
        assert_eq!(again.serialize(), raw.serialize());
    }

    #[test]
    fn parse_errors_name_the_problem() {
        let err = RawConfig::parse("a = 1\nnonsense\n").unwrap_err();
        assert_eq!(err.key, "line 2");
        let err = RawConfig::parse("a = 1\na = 2\n").unwrap_err();
        assert_eq!(err.key, "a");
        let err = ExperimentConfig::new(RawConfig::parse("workload.muP = 1").unwrap()).err().unwrap();
        assert_eq!(err.key, "workload.muP");
    }

    #[test]
    fn typed_accessors() {
        let c = cfg(BASELINE);
        assert_eq!(c.coefficients().unwrap(), LatencyCoefficients::BASELINE);
        assert_eq!(c.mu_d().unwrap(), 500.0);
        assert_eq!(c.p().unwrap(), 1.0 / 501.0);
        assert_eq!(c.seeds().unwrap(), vec![0, 1, 2]);
        assert_eq!(c.seed().unwrap(), 0);
        let grid = c.grid().unwrap();
        assert_eq!(grid.r, vec![1, 2, 4, 8, 16, 24, 32]);
        assert_eq!(grid.batch, vec![256]);
        assert_eq!(grid.mu_d, vec![500.0]);
        assert_eq!(grid.stop, StopSpec::Stable);
    }

    #[test]
    fn missing_coefficient_is_named() {
        let c = cfg("coeffs.alpha_A = 0.00165\ncoeffs.beta_A = 50\ncoeffs.alpha_F = 0.083\ncoeffs.beta_F = 100\ncoeffs.alpha_C = 0.022\n");
        assert_eq!(c.coefficients().unwrap_err().key, "coeffs.beta_C");
        let c = cfg("coeffs.preset = baseline\ncoeffs.beta_C = 0\n");
        assert_eq!(c.coefficients().unwrap().beta_c(), 0.0);
    }

    #[test]
    fn p_and_mu_d_are_exclusive() {
        let c = cfg("workload.p = 0.5\nworkload.mu_D = 1\n");
        assert_eq!(c.mu_d().unwrap_err().key, "workload.p");
        let c = cfg("workload.p = 0.25\n");
        assert_eq!(c.mu_d().unwrap(), 3.0);
        assert_eq!(c.p().unwrap(), 0.25);
        assert_eq!(cfg("").mu_d().unwrap_err().key, "workload.mu_D");
    }

    #[test]
    fn empty_seed_list_rejected() {
        assert_eq!(cfg("seeds = \n").seeds().unwrap_err().key, "seeds");
        assert_eq!(cfg("seeds = ,\n").seeds().unwrap_err().key, "seeds");
        assert_eq!(cfg("").seeds().unwrap(), vec![0]);
    }

    #[test]
    fn overrides_split_from_args() {
        let args: Vec<String> = ["sweep", "--config", "x.cfg", "--workload.mu_D", "100", "--bundle.r=4", "--stop", "drain", "--jobs", "2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (rest, overrides) = extract_overrides(args).unwrap();
        assert_eq!(rest, vec!["sweep", "--config", "x.cfg", "--jobs", "2"]);
        assert_eq!(
            overrides,
            vec![
                ("workload.mu_D".to_string(), "100".to_string()),
                ("bundle.r".to_string(), "4".to_string()),
                ("stop".to_string(), "drain".to_string()),
            ]
        );
        assert!(extract_overrides(vec!["--bundle.r".into()]).is_err());
    }

    #[test]
    fn hardware_keys() {
        let raw = RawConfig::parse(
            "hw.pi_peak = 1e6\nhw.beta_HBM = 1000\nhw.beta_net = 100\nhw.N_expert = 256\n\
             hw.N_expert_per_card = 8\nhw.k_route = 8\nhw.H = 7168\nhw.d_expert = 2048\nhw.d_kv = 576\n",
        )
        .unwrap();
        let hw = hardware_params(&raw).unwrap();
        assert_eq!(hw.mtp_depth, 0);
        assert_eq!(hw.eta_mem, 1.0);
        let mut bad = raw.clone();
        bad.set("hw.bogus", "1");
        assert_eq!(hardware_params(&bad).unwrap_err().key, "hw.bogus");
    }
}
