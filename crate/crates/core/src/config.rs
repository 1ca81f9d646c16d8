//! Pipeline configuration loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{GenerateOptions, RemoteConfig};
use crate::clock::DayClock;
use crate::cohort::{CategoryFilter, TouristThresholds, DEFAULT_MIN_DISTINCT_LOCATIONS, DEFAULT_THRESHOLD_BLEND};
use crate::eval::DEFAULT_TOP_K;
use crate::routing::RoutingParams;
use crate::scope::TrainOptions;
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: Box<toml::de::Error> },
    #[error("config: {0}")]
    Invalid(String),
    #[error("config: {key} = {path} does not exist")]
    MissingFile { key: &'static str, path: PathBuf },
}

/// Input and output locations. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub staypoints: Option<PathBuf>,
    /// Raw pings, merged into staypoints before extraction when given.
    pub pings: Option<PathBuf>,
    pub poi: Option<PathBuf>,
    pub marginals: Option<PathBuf>,
    pub centroids: Option<PathBuf>,
    pub distance_matrix: Option<PathBuf>,
    /// Observed trip scopes for Stage 1 training (JSON-lines of training examples).
    pub training: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub space_eps_m: f64,
    pub time_eps_s: i64,
    /// Global dwell floor in seconds.
    pub dwell_floor_s: i64,
    /// Weight of survey-derived thresholds against the defaults.
    pub eta: f64,
    pub min_distinct_locations: usize,
    pub utc_offset_hours: i64,
    pub thresholds: TouristThresholds,
    /// POI categories that do not count as sightseeing.
    pub non_sightseeing: Vec<String>,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            space_eps_m: 100.0,
            time_eps_s: 600,
            dwell_floor_s: 900,
            eta: DEFAULT_THRESHOLD_BLEND,
            min_distinct_locations: DEFAULT_MIN_DISTINCT_LOCATIONS,
            utc_offset_hours: 9,
            thresholds: TouristThresholds::default(),
            non_sightseeing: CategoryFilter::default().non_sightseeing.into_iter().collect(),
        }
    }
}

impl ExtractConfig {
    pub fn clock(&self) -> DayClock {
        DayClock { utc_offset_s: self.utc_offset_hours * 3600 }
    }

    pub fn category_filter(&self) -> CategoryFilter {
        CategoryFilter { non_sightseeing: self.non_sightseeing.iter().cloned().collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub agents: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { agents: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Fallback,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainsConfig {
    pub backend: BackendKind,
    /// Remote attempts per chain before the offline generator takes over.
    pub budget: u32,
    pub concurrency: usize,
    pub remote: RemoteConfig,
}

impl Default for ChainsConfig {
    fn default() -> Self {
        let g = GenerateOptions::default();
        Self { backend: BackendKind::Fallback, budget: g.budget, concurrency: g.concurrency, remote: RemoteConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { top_k: DEFAULT_TOP_K }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub extract: ExtractConfig,
    pub synth: SynthConfig,
    pub scope: TrainOptions,
    pub route: RoutingParams,
    pub chains: ChainsConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    /// Parses TOML and resolves relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, toml::de::Error> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), source: Box::new(e) })
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for opt in
            [&mut p.staypoints, &mut p.pings, &mut p.poi, &mut p.marginals, &mut p.centroids, &mut p.distance_matrix, &mut p.training]
        {
            if let Some(path) = opt.as_mut() {
                fix(path);
            }
        }
        if p.output_dir.as_os_str().is_empty() {
            p.output_dir = PathBuf::from("out");
        }
        fix(&mut p.output_dir);
    }

    /// Seed for one stage, derived from the global seed by label.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    pub fn generate_options(&self) -> GenerateOptions {
        GenerateOptions { budget: self.chains.budget, concurrency: self.chains.concurrency, seed: self.stage_seed("chains") }
    }

    /// Checks parameter ranges. File existence is checked per stage.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.extract;
        if !(e.space_eps_m > 0.0) || e.time_eps_s < 0 || e.dwell_floor_s < 0 {
            return Err(ConfigError::Invalid("extract: eps and dwell floor must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&e.eta) {
            return Err(ConfigError::Invalid("extract.eta must lie in [0, 1]".into()));
        }
        if !(-12..=14).contains(&e.utc_offset_hours) {
            return Err(ConfigError::Invalid("extract.utc_offset_hours out of range".into()));
        }
        if !(0.0..=1.0).contains(&self.scope.alpha) {
            return Err(ConfigError::Invalid("scope.alpha must lie in [0, 1]".into()));
        }
        if self.scope.max_locations == 0 {
            return Err(ConfigError::Invalid("scope.max_locations must be positive".into()));
        }
        self.route.validate().map_err(|e| ConfigError::Invalid(format!("route: {e}")))?;
        if self.chains.concurrency == 0 {
            return Err(ConfigError::Invalid("chains.concurrency must be positive".into()));
        }
        if self.chains.backend == BackendKind::Remote && self.chains.remote.endpoint.is_empty() {
            return Err(ConfigError::Invalid("chains.remote.endpoint is required for the remote backend".into()));
        }
        if self.eval.top_k == 0 {
            return Err(ConfigError::Invalid("eval.top_k must be positive".into()));
        }
        Ok(())
    }

    /// The path under `key`, which must be configured and exist.
    pub fn require(&self, key: &'static str) -> Result<&Path, ConfigError> {
        let p = &self.paths;
        let v = match key {
            "staypoints" => p.staypoints.as_deref(),
            "pings" => p.pings.as_deref(),
            "poi" => p.poi.as_deref(),
            "marginals" => p.marginals.as_deref(),
            "centroids" => p.centroids.as_deref(),
            "distance_matrix" => p.distance_matrix.as_deref(),
            "training" => p.training.as_deref(),
            _ => None,
        };
        let v = v.ok_or_else(|| ConfigError::Invalid(format!("paths.{key} is not set")))?;
        if !v.exists() {
            return Err(ConfigError::MissingFile { key, path: v.to_path_buf() });
        }
        Ok(v)
    }
}

/// Commented template with every parameter at its default.
pub const TEMPLATE: &str = r#"seed = 7

[paths]
staypoints = "staypoints.csv"
# pings = "pings.csv"
poi = "poi.csv"
marginals = "marginals.json"
centroids = "centroids.csv"
# distance_matrix = "distances.csv"
training = "training.jsonl"
output_dir = "out"

[extract]
space_eps_m = 100.0
time_eps_s = 600
dwell_floor_s = 900            # global dwell floor
eta = 0.6                      # survey weight in threshold blending
min_distinct_locations = 8
utc_offset_hours = 9
non_sightseeing = ["airport", "business_district", "conference_center"]

[extract.thresholds]
e_min = 2                      # episode days
e_max = 14
c_min = 2                      # consecutive sightseeing days
u_min = 3                      # distinct POIs
s_min = 2                      # sightseeing days
h_min = 4.0                    # sightseeing hours
q_max = 25                     # active days

[synth]
agents = 100

[scope]
max_nights = 14
max_locations = 15
alpha = 0.7                    # model weight against the bucket prior

[scope.fit]
learning_rate = 0.5
max_iter = 400
l2 = 0.0001
tol = 1e-9

[route]
rho = 0.6                      # locations to unique wards
u_min = 1
u_max = 8
gamma = 0.3                    # pooled transition weight
lambda_t = 1.0
lambda_d = 1.0
lambda_p = 0.5
lambda_n = 0.5
tau_km = 5.0

[chains]
backend = "fallback"           # or "remote"
budget = 3
concurrency = 4

[chains.remote]
endpoint = ""
model = "gpt-4o-mini"
temperature = 0.8
max_tokens = 2048
api_key_env = "TOURGEN_API_KEY"
timeout_ms = 60000
max_retries = 4
backoff_base_ms = 500
backoff_max_ms = 8000

[eval]
top_k = 20
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_matches_defaults() {
        let cfg = PipelineConfig::from_toml(TEMPLATE, Path::new("/base")).unwrap();
        assert_eq!(cfg.extract, ExtractConfig::default());
        assert_eq!(cfg.scope, TrainOptions::default());
        assert_eq!(cfg.route, RoutingParams::default());
        assert_eq!(cfg.chains, ChainsConfig::default());
        assert_eq!(cfg.eval, EvalConfig::default());
        assert_eq!(cfg.paths.poi.as_deref(), Some(Path::new("/base/poi.csv")));
        assert_eq!(cfg.paths.output_dir, Path::new("/base/out"));
        cfg.validate().unwrap();
    }

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = PipelineConfig::from_toml("", Path::new("x")).unwrap();
        assert_eq!(cfg.route, RoutingParams::default());
        assert_eq!(cfg.paths.output_dir, Path::new("x/out"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_ranges() {
        assert!(PipelineConfig::from_toml("[route]\nrhoo = 1", Path::new(".")).is_err());
        let cfg = PipelineConfig::from_toml("[route]\ngamma = 1.5", Path::new(".")).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig::from_toml("[chains]\nbackend = \"remote\"", Path::new(".")).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stage_seeds_differ() {
        let cfg = PipelineConfig { seed: 1, ..Default::default() };
        assert_ne!(cfg.stage_seed("route"), cfg.stage_seed("chains"));
        assert_eq!(cfg.stage_seed("route"), PipelineConfig { seed: 1, ..Default::default() }.stage_seed("route"));
    }
}
