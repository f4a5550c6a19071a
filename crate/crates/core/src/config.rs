//! Run configuration read from a flat TOML file.
//!
//! Every key is optional; missing keys take the defaults below.
//!
//! ```toml
//! grid.count = 100
//! grid.centiles = [0.01, 0.99]
//! test.alpha_levels = [0.10, 0.05, 0.01]
//! npreg.method = "series"        # series | local-linear | cell-means
//! npreg.series_order = "auto"    # or an integer
//! npreg.bandwidth = "auto"       # or a positive real
//! npreg.bandwidth_scale = 1.0
//! npreg.kernel = "epanechnikov"  # or gaussian
//! sim.replications = 200
//! sim.multiplier_draws = 1000
//! rng.seed = 20240101
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npreg::{Bandwidth, Kernel, NpregMethod};

/// Documented configuration keys with a one-line description each.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("grid.count", "number of conditioning grid points (default 100)"),
    ("grid.centiles", "lower and upper centile of the grid range (default [0.01, 0.99])"),
    ("test.alpha_levels", "significance levels (default [0.10, 0.05, 0.01])"),
    ("npreg.method", "series | local-linear | cell-means (default series)"),
    ("npreg.series_order", "\"auto\" = ceil(2 n^(1/5)) capped at 12, or an integer"),
    ("npreg.bandwidth", "\"auto\" = 1.06 sd n^(-1/5) times bandwidth_scale, or a positive real"),
    ("npreg.bandwidth_scale", "multiplier on the rule-of-thumb bandwidth (default 1)"),
    ("npreg.kernel", "epanechnikov | gaussian (default epanechnikov)"),
    ("sim.replications", "Monte Carlo replications per cell (default 200)"),
    ("sim.multiplier_draws", "simulated draws for critical values, at least 200 (default 1000)"),
    ("rng.seed", "64-bit seed for every random draw (default 20240101)"),
];

pub const DEFAULT_SEED: u64 = 20240101;

/// `"auto"` or an explicit value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr<T> {
    Value(T),
    Named(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl<T> AutoOr<T> {
    pub fn value(self) -> Option<T> {
        match self {
            AutoOr::Value(v) => Some(v),
            AutoOr::Named(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub count: usize,
    pub centiles: [f64; 2],
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { count: 100, centiles: [0.01, 0.99] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSection {
    pub alpha_levels: Vec<f64>,
}

impl Default for TestSection {
    fn default() -> Self {
        Self { alpha_levels: vec![0.10, 0.05, 0.01] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Series,
    LocalLinear,
    CellMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NpregConfig {
    pub method: MethodName,
    pub series_order: AutoOr<usize>,
    pub bandwidth: AutoOr<f64>,
    pub bandwidth_scale: f64,
    pub kernel: Kernel,
}

impl Default for NpregConfig {
    fn default() -> Self {
        Self {
            method: MethodName::Series,
            series_order: AutoOr::Named(AutoTag::Auto),
            bandwidth: AutoOr::Named(AutoTag::Auto),
            bandwidth_scale: 1.0,
            kernel: Kernel::Epanechnikov,
        }
    }
}

impl NpregConfig {
    pub fn method(&self) -> NpregMethod {
        match self.method {
            MethodName::Series => NpregMethod::Series { order: self.series_order.value() },
            MethodName::LocalLinear => NpregMethod::LocalLinear {
                bandwidth: match self.bandwidth.value() {
                    Some(h) => Bandwidth::Fixed(h),
                    None => Bandwidth::Auto { scale: self.bandwidth_scale },
                },
                kernel: self.kernel,
            },
            MethodName::CellMeans => NpregMethod::CellMeans,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub replications: usize,
    pub multiplier_draws: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { replications: 200, multiplier_draws: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RngConfig {
    pub seed: u64,
}

impl Default for RngConfig {
    fn default() -> Self {
        Self { seed: DEFAULT_SEED }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub grid: GridConfig,
    pub test: TestSection,
    pub npreg: NpregConfig,
    pub sim: SimConfig,
    pub rng: RngConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.grid.centiles;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::InvalidConfig(format!("grid.centiles must satisfy 0 <= lo < hi <= 1, got [{lo}, {hi}]")));
        }
        if self.grid.count < 2 {
            return Err(Error::InvalidConfig("grid.count must be at least 2".into()));
        }
        if self.test.alpha_levels.is_empty() || self.test.alpha_levels.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::InvalidConfig("test.alpha_levels must be non-empty and inside (0, 1)".into()));
        }
        if matches!(self.npreg.series_order.value(), Some(0)) {
            return Err(Error::InvalidConfig("npreg.series_order must be at least 1".into()));
        }
        if let Some(h) = self.npreg.bandwidth.value() {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidConfig("npreg.bandwidth must be positive".into()));
            }
        }
        if !(self.npreg.bandwidth_scale > 0.0) {
            return Err(Error::InvalidConfig("npreg.bandwidth_scale must be positive".into()));
        }
        if self.sim.replications == 0 {
            return Err(Error::InvalidConfig("sim.replications must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml_str("").unwrap(), Config::default());
    }

    #[test]
    fn dotted_keys_parse() {
        let cfg = Config::from_toml_str(
            "grid.count = 50\nnpreg.method = \"local-linear\"\nnpreg.bandwidth = 0.4\nnpreg.series_order = 5\nrng.seed = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.grid.count, 50);
        assert_eq!(cfg.rng.seed, 7);
        assert_eq!(cfg.npreg.series_order.value(), Some(5));
        assert_eq!(
            cfg.npreg.method(),
            NpregMethod::LocalLinear { bandwidth: Bandwidth::Fixed(0.4), kernel: Kernel::Epanechnikov }
        );
    }

    #[test]
    fn auto_order_maps_to_none() {
        let cfg = Config::from_toml_str("npreg.series_order = \"auto\"").unwrap();
        assert_eq!(cfg.npreg.method(), NpregMethod::Series { order: None });
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(Config::from_toml_str("grid.size = 3"), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn bad_centiles_are_rejected() {
        assert!(Config::from_toml_str("grid.centiles = [0.9, 0.1]").is_err());
    }

    #[test]
    fn round_trips_through_text() {
        let mut cfg = Config::default();
        cfg.npreg.series_order = AutoOr::Value(4);
        cfg.test.alpha_levels = vec![0.05];
        assert_eq!(Config::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }
}
