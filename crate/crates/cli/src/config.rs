//! Experiment configuration: one JSON document drives every subcommand.
//!
//! The schema is deliberately flat — instance knobs, denoiser choices, and
//! the handful of per-experiment extras all live in one struct with defaults,
//! so a config written for `run` can be pointed at `se-track` unchanged.
//! Unknown fields are rejected rather than silently ignored.

use std::fs;
use std::path::{Path, PathBuf};

use crpca_core::engine::{ItmpConfig, SparseDenoiserSpec};
use crpca_core::instances::InstanceRecipe;
use crpca_core::lowrank::SpectralShrinker;
use crpca_core::operators::{OperatorDescriptor, OperatorKind};
use crpca_core::sparse::SparsePrior;
use serde::{Deserialize, Serialize};

/// Which experiment a config was written for. Stored in the file so a config
/// can't be run under the wrong subcommand by accident.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Run,
    SeTrack,
    PhaseGrid,
    Qq,
    DivergenceCheck,
    TransferTable,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExperimentKind::Run => "run",
            ExperimentKind::SeTrack => "se-track",
            ExperimentKind::PhaseGrid => "phase-grid",
            ExperimentKind::Qq => "qq",
            ExperimentKind::DivergenceCheck => "divergence-check",
            ExperimentKind::TransferTable => "transfer-table",
        };
        f.write_str(s)
    }
}

/// Sparse-denoiser choice in config form. `mmse` derives its Bernoulli-Gauss
/// prior from the instance `rho` with unit power; `soft` is soft-thresholding
/// at `lambda·√v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SparseChoice {
    Mmse,
    Soft { lambda: f64 },
}

/// Spectral-shrinker choice in config form. `best-rank-r` takes its rank from
/// the instance `gamma`; `smoothed-hard` smooths that same rank's threshold
/// over a window of `epsilon_rel·σ*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShrinkerChoice {
    BestRankR,
    Svst { omega: f64 },
    SmoothedHard { epsilon_rel: f64 },
}

fn default_trials() -> usize {
    1
}

fn default_max_iters() -> usize {
    100
}

fn default_nmse_tol() -> f64 {
    1e-3
}

fn default_damping() -> f64 {
    1.0
}

fn default_capture_iteration() -> usize {
    2
}

fn default_se_steps() -> usize {
    50
}

fn default_table_v_max() -> f64 {
    4.0
}

fn default_table_points() -> usize {
    48
}

fn default_table_trials() -> usize {
    8
}

fn default_probe_epsilon() -> f64 {
    1e-4
}

fn default_probes() -> usize {
    20
}

fn default_operator() -> OperatorKind {
    OperatorKind::PartialDct
}

fn default_sparse() -> SparseChoice {
    SparseChoice::Mmse
}

fn default_shrinker() -> ShrinkerChoice {
    ShrinkerChoice::BestRankR
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,

    // Instance geometry and signal model.
    pub n1: usize,
    pub n2: usize,
    /// Sampling ratio m/(n1·n2).
    pub alpha: f64,
    /// Probability that an entry of S is nonzero.
    pub rho: f64,
    /// Relative rank r/n1; the realized rank is max(1, round(gamma·n1)).
    pub gamma: f64,
    #[serde(default)]
    pub sigma_n_sq: f64,
    #[serde(default = "default_operator")]
    pub operator: OperatorKind,

    // Denoiser choices.
    #[serde(default = "default_sparse")]
    pub sparse_denoiser: SparseChoice,
    #[serde(default = "default_shrinker")]
    pub shrinker: ShrinkerChoice,

    // Engine knobs.
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_nmse_tol")]
    pub nmse_tol: f64,
    #[serde(default = "default_damping")]
    pub damping: f64,

    // Experiment extras (each consumed by the subcommands that need it).
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Iteration whose module errors the `qq` command captures.
    #[serde(default = "default_capture_iteration")]
    pub capture_iteration: usize,
    /// State-evolution steps for `se-track`.
    #[serde(default = "default_se_steps")]
    pub se_steps: usize,
    /// ρ grid for `phase-grid` (falls back to the scalar `rho`).
    #[serde(default)]
    pub rho_grid: Option<Vec<f64>>,
    /// γ grid for `phase-grid` (falls back to the scalar `gamma`).
    #[serde(default)]
    pub gamma_grid: Option<Vec<f64>>,
    /// Upper edge of the transfer-table grid (`transfer-table`, `se-track`).
    #[serde(default = "default_table_v_max")]
    pub table_v_max: f64,
    #[serde(default = "default_table_points")]
    pub table_points: usize,
    /// Monte Carlo trials per grid point (`transfer-table` only).
    #[serde(default = "default_table_trials")]
    pub table_trials: usize,
    /// Probe step for the Monte Carlo divergence estimator.
    #[serde(default = "default_probe_epsilon")]
    pub probe_epsilon: f64,
    #[serde(default = "default_probes")]
    pub probes: usize,
}

/// A config problem: bad JSON, a bad field value, or a kind/subcommand
/// mismatch. All of these exit with code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let ratio = |name: &str, x: f64| -> Result<(), ConfigError> {
            if !(x > 0.0 && x <= 1.0) {
                return Err(ConfigError(format!("{name} must lie in (0, 1], got {x}")));
            }
            Ok(())
        };
        if self.n1 == 0 || self.n2 == 0 {
            return Err(ConfigError("n1 and n2 must be positive".into()));
        }
        ratio("alpha", self.alpha)?;
        ratio("rho", self.rho)?;
        ratio("gamma", self.gamma)?;
        for grid in [&self.rho_grid, &self.gamma_grid].into_iter().flatten() {
            if grid.is_empty() {
                return Err(ConfigError("grid lists must be nonempty when given".into()));
            }
            for &x in grid {
                ratio("grid entry", x)?;
            }
        }
        if !(self.sigma_n_sq >= 0.0) {
            return Err(ConfigError(format!(
                "sigma_n_sq must be nonnegative, got {}",
                self.sigma_n_sq
            )));
        }
        if self.trials == 0 || self.max_iters == 0 {
            return Err(ConfigError("trials and max_iters must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(ConfigError(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if let ShrinkerChoice::Svst { omega } = self.shrinker {
            if !(omega > 0.0) {
                return Err(ConfigError(format!("svst omega must be positive, got {omega}")));
            }
        }
        if let ShrinkerChoice::SmoothedHard { epsilon_rel } = self.shrinker {
            if !(epsilon_rel > 0.0 && epsilon_rel < 1.0) {
                return Err(ConfigError(format!(
                    "smoothed-hard epsilon_rel must lie in (0, 1), got {epsilon_rel}"
                )));
            }
        }
        if let SparseChoice::Soft { lambda } = self.sparse_denoiser {
            if !(lambda > 0.0) {
                return Err(ConfigError(format!("soft lambda must be positive, got {lambda}")));
            }
        }
        if self.table_points < 2 || self.table_trials == 0 {
            return Err(ConfigError("table grid needs ≥ 2 points and ≥ 1 trial".into()));
        }
        if !(self.table_v_max > 0.0) {
            return Err(ConfigError("table_v_max must be positive".into()));
        }
        if self.capture_iteration == 0 || self.se_steps == 0 {
            return Err(ConfigError("capture_iteration and se_steps must be positive".into()));
        }
        if !(self.probe_epsilon > 0.0) || self.probes == 0 {
            return Err(ConfigError("probe_epsilon and probes must be positive".into()));
        }
        Ok(())
    }

    /// Realized rank: `max(1, round(gamma·n1))`.
    pub fn rank(&self) -> usize {
        self.rank_for(self.gamma)
    }

    pub fn rank_for(&self, gamma: f64) -> usize {
        ((gamma * self.n1 as f64).round() as usize).max(1)
    }

    /// Measurement count: `round(alpha·n1·n2)`, clamped to [1, n].
    pub fn measurements(&self) -> usize {
        let n = self.n1 * self.n2;
        (((self.alpha * n as f64).round() as usize).max(1)).min(n)
    }

    /// The instance recipe for one trial, seeds mixed from the base seed.
    pub fn recipe(&self, rho: f64, rank: usize, operator_seed: u64, seed: u64) -> InstanceRecipe {
        InstanceRecipe {
            operator: OperatorDescriptor {
                kind: self.operator,
                n1: self.n1,
                n2: self.n2,
                m: self.measurements(),
                seed: operator_seed,
            },
            rank,
            rho,
            sigma_n_sq: self.sigma_n_sq,
            seed,
        }
    }

    /// The configured sparse denoiser for a given sparse fraction.
    pub fn sparse_spec(&self, rho: f64) -> Result<SparseDenoiserSpec<f64>, ConfigError> {
        match self.sparse_denoiser {
            SparseChoice::Mmse => {
                let prior = SparsePrior::unit_power(rho)
                    .map_err(|e| ConfigError(format!("sparse prior: {e}")))?;
                Ok(SparseDenoiserSpec::Mmse { prior })
            }
            SparseChoice::Soft { lambda } => Ok(SparseDenoiserSpec::Soft { lambda }),
        }
    }

    /// The configured spectral shrinker for a given rank.
    pub fn shrinker_spec(&self, rank: usize) -> SpectralShrinker<f64> {
        match self.shrinker {
            ShrinkerChoice::BestRankR => SpectralShrinker::BestRankR { r: rank },
            ShrinkerChoice::Svst { omega } => SpectralShrinker::Svst { omega },
            ShrinkerChoice::SmoothedHard { epsilon_rel } => {
                SpectralShrinker::SmoothedHard { rank, epsilon: epsilon_rel }
            }
        }
    }

    /// Assemble the engine config for one trial.
    pub fn itmp_config(
        &self,
        rho: f64,
        rank: usize,
        seed: u64,
    ) -> Result<ItmpConfig<f64>, ConfigError> {
        let mut config = ItmpConfig::new(self.sparse_spec(rho)?, self.shrinker_spec(rank));
        config.sigma_n_sq = self.sigma_n_sq;
        config.max_iters = self.max_iters;
        config.nmse_tol = self.nmse_tol;
        config.damping = self.damping;
        config.seed = seed;
        config
            .validate()
            .map_err(|e| ConfigError(format!("engine config: {e}")))?;
        Ok(config)
    }
}
