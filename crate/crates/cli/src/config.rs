//! Experiment configuration: one TOML file per experiment, with optional
//! command-line overrides for seeds and the output directory.

use std::path::{Path, PathBuf};

use gptrack::simulation::ReferenceSpec;
use gptrack::{DomainBox, KernelSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Tracking,
    DensitySweep,
    Episodic,
    ValidateBounds,
    ValidateLipschitz,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Tracking => "tracking",
            ExperimentKind::DensitySweep => "density_sweep",
            ExperimentKind::Episodic => "episodic",
            ExperimentKind::ValidateBounds => "validate_bounds",
            ExperimentKind::ValidateLipschitz => "validate_lipschitz",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Auto {
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Probabilistic {
    Probabilistic,
}

/// Grid constant: a number or `"auto"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSetting {
    Value(f64),
    Auto(Auto),
}

/// Lipschitz constant of the unknown function: a number or `"probabilistic"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LipschitzSetting {
    Value(f64),
    Probabilistic(Probabilistic),
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<PlantBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_sweep: Option<DensitySweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episodic: Option<EpisodicBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationBlock>,
}

fn d_noise() -> f64 {
    0.01
}
fn d_dt() -> f64 {
    1e-3
}
fn d_horizon() -> f64 {
    30.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantBlock {
    /// `[θ₁, θ₂]` of the benchmark feedback law; required for tracking.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<[f64; 2]>,
    #[serde(default = "d_noise")]
    pub noise_variance: f64,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_horizon")]
    pub horizon: f64,
}

fn d_tau() -> TauSetting {
    TauSetting::Value(0.01)
}
fn d_delta() -> f64 {
    0.01
}
fn d_lf() -> LipschitzSetting {
    LipschitzSetting::Value(2.0)
}
fn d_box_lo() -> Vec<f64> {
    vec![-5.0, -5.0]
}
fn d_box_hi() -> Vec<f64> {
    vec![5.0, 5.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundBlock {
    #[serde(default = "d_tau")]
    pub tau: TauSetting,
    #[serde(default = "d_delta")]
    pub delta: f64,
    #[serde(default = "d_lf")]
    pub f_lipschitz: LipschitzSetting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_lipschitz: Option<f64>,
    #[serde(default = "d_box_lo")]
    pub domain_lo: Vec<f64>,
    #[serde(default = "d_box_hi")]
    pub domain_hi: Vec<f64>,
}

impl BoundBlock {
    pub fn domain(&self) -> CliResult<DomainBox> {
        DomainBox::enclosing(&self.domain_lo, &self.domain_hi).map_err(|e| CliError::Config(format!("bound.domain: {e}")))
    }
}

fn d_train_lo() -> Vec<f64> {
    vec![0.0, -4.0]
}
fn d_train_hi() -> Vec<f64> {
    vec![3.0, 4.0]
}
fn d_train_counts() -> Vec<usize> {
    vec![5, 5]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingBlock {
    #[serde(default = "d_train_lo")]
    pub train_lo: Vec<f64>,
    #[serde(default = "d_train_hi")]
    pub train_hi: Vec<f64>,
    #[serde(default = "d_train_counts")]
    pub train_counts: Vec<usize>,
    /// Reference-time samples per period for suprema.
    #[serde(default = "d_probes")]
    pub probe_points: usize,
}

impl Default for TrackingBlock {
    fn default() -> Self {
        Self {
            train_lo: d_train_lo(),
            train_hi: d_train_hi(),
            train_counts: d_train_counts(),
            probe_points: d_probes(),
        }
    }
}

fn d_sweep_lo() -> Vec<f64> {
    vec![-4.0, -4.0]
}
fn d_sweep_hi() -> Vec<f64> {
    vec![4.0, 4.0]
}
fn d_sweep_counts() -> Vec<usize> {
    vec![6, 8, 11, 16, 23, 32]
}
fn d_kappa() -> f64 {
    10.0
}
fn d_probes() -> usize {
    629
}
fn d_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySweepBlock {
    #[serde(default = "d_sweep_lo")]
    pub lo: Vec<f64>,
    #[serde(default = "d_sweep_hi")]
    pub hi: Vec<f64>,
    /// Points per axis of each training grid in the sweep.
    #[serde(default = "d_sweep_counts")]
    pub counts: Vec<usize>,
    #[serde(default = "d_kappa")]
    pub kappa: f64,
    #[serde(default = "d_probes")]
    pub probe_points: usize,
    /// Run the closed loop for each grid to record the observed error.
    #[serde(default = "d_true")]
    pub simulate: bool,
}

impl Default for DensitySweepBlock {
    fn default() -> Self {
        Self {
            lo: d_sweep_lo(),
            hi: d_sweep_hi(),
            counts: d_sweep_counts(),
            kappa: d_kappa(),
            probe_points: d_probes(),
            simulate: true,
        }
    }
}

fn d_xi() -> f64 {
    0.95
}
fn d_fine_dt() -> f64 {
    3e-4
}
fn d_cap() -> usize {
    200
}
fn d_max_new() -> usize {
    4000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodicBlock {
    pub target_error: f64,
    #[serde(default = "d_xi")]
    pub xi: f64,
    /// Roll-out length per episode.
    #[serde(default = "d_horizon")]
    pub horizon: f64,
    #[serde(default = "d_fine_dt")]
    pub fine_dt: f64,
    #[serde(default = "d_cap")]
    pub episode_cap: usize,
    #[serde(default = "d_probes")]
    pub probe_points: usize,
    #[serde(default = "d_max_new")]
    pub max_new_samples: usize,
}

fn d_trials() -> usize {
    200
}
fn d_n_train() -> usize {
    25
}
fn d_grid() -> usize {
    41
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationBlock {
    #[serde(default = "d_trials")]
    pub trials: usize,
    /// Training points per trial (bounds validation).
    #[serde(default = "d_n_train")]
    pub n_train: usize,
    /// Grid points per axis of the evaluation grid.
    #[serde(default = "d_grid")]
    pub grid_points: usize,
    #[serde(default = "d_noise")]
    pub noise_variance: f64,
    /// Use each draw's finite-difference slope as the Lipschitz constant
    /// instead of `bound.f_lipschitz`.
    #[serde(default = "d_true")]
    pub empirical_lipschitz: bool,
}

impl Default for ValidationBlock {
    fn default() -> Self {
        Self {
            trials: d_trials(),
            n_train: d_n_train(),
            grid_points: d_grid(),
            noise_variance: d_noise(),
            empirical_lipschitz: true,
        }
    }
}

/// Command-line overrides applied after loading.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Accepts a TOML config, or a summary JSON whose `config` field holds a
    /// previously resolved configuration.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let mut value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
            serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        } else {
            Self::from_toml(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
                other => other,
            })
        }
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seeds = vec![seed];
        }
        if let Some(out) = &overrides.out {
            self.output = out.clone();
        }
    }

    pub fn kernel(&self) -> CliResult<&KernelSpec> {
        self.kernel.as_ref().ok_or_else(|| missing("kernel"))
    }

    pub fn plant(&self) -> CliResult<&PlantBlock> {
        self.plant.as_ref().ok_or_else(|| missing("plant"))
    }

    pub fn bound(&self) -> CliResult<&BoundBlock> {
        self.bound.as_ref().ok_or_else(|| missing("bound"))
    }

    pub fn episodic(&self) -> CliResult<&EpisodicBlock> {
        self.episodic.as_ref().ok_or_else(|| missing("episodic"))
    }

    /// Schema and cross-field checks; an empty list means the config is valid.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        let kind = self.experiment;
        if self.seeds.is_empty() {
            out.push("seeds: at least one seed is required".into());
        }
        let needs_plant = matches!(kind, ExperimentKind::Tracking | ExperimentKind::DensitySweep | ExperimentKind::Episodic);
        if self.kernel.is_none() {
            out.push(format!("kernel: block required for experiment '{}'", kind.name()));
        }
        if self.bound.is_none() {
            out.push(format!("bound: block required for experiment '{}'", kind.name()));
        }
        if needs_plant && self.plant.is_none() {
            out.push(format!("plant: block required for experiment '{}'", kind.name()));
        }
        if kind == ExperimentKind::Episodic && self.episodic.is_none() {
            out.push("episodic: block required for experiment 'episodic'".into());
        }

        let expected_dim = if kind == ExperimentKind::ValidateLipschitz { 1 } else { 2 };
        if let Some(k) = &self.kernel {
            if k.dim() != expected_dim {
                out.push(format!(
                    "kernel.lengthscales: experiment '{}' needs dimension {expected_dim}, got {}",
                    kind.name(),
                    k.dim()
                ));
            }
            if needs_plant && !k.is_stationary() {
                out.push("kernel.family: tracking experiments need a stationary kernel".into());
            }
        }

        if let Some(b) = &self.bound {
            if !(b.delta > 0.0 && b.delta < 1.0) {
                out.push(format!("bound.delta: must lie in (0, 1), got {}", b.delta));
            }
            if let Some(dl) = b.delta_lipschitz {
                if !(dl > 0.0 && dl < 1.0) {
                    out.push(format!("bound.delta_lipschitz: must lie in (0, 1), got {dl}"));
                }
            }
            match b.tau {
                TauSetting::Value(t) if !(t > 0.0 && t.is_finite()) => out.push(format!("bound.tau: must be positive, got {t}")),
                TauSetting::Auto(_) if kind != ExperimentKind::Tracking && kind != ExperimentKind::ValidateBounds => {
                    out.push(format!("bound.tau: \"auto\" is not used by experiment '{}'", kind.name()))
                }
                _ => {}
            }
            let probabilistic = matches!(b.f_lipschitz, LipschitzSetting::Probabilistic(_));
            match b.f_lipschitz {
                LipschitzSetting::Value(l) if !(l >= 0.0 && l.is_finite()) => {
                    out.push(format!("bound.f_lipschitz: must be nonnegative, got {l}"))
                }
                _ => {}
            }
            if (probabilistic || kind == ExperimentKind::ValidateLipschitz) && b.delta_lipschitz.is_none() {
                out.push("bound.delta_lipschitz: required for a probabilistic Lipschitz constant".into());
            }
            if probabilistic && kind == ExperimentKind::Episodic {
                out.push("bound.f_lipschitz: episodic learning needs a given Lipschitz constant".into());
            }
            if probabilistic || kind == ExperimentKind::ValidateLipschitz {
                if let Some(k) = &self.kernel {
                    if !k.family().is_four_times_differentiable() || !k.is_stationary() {
                        out.push(format!(
                            "bound.f_lipschitz: a probabilistic constant needs a stationary, four times differentiable kernel; '{}' is not",
                            k.family().name()
                        ));
                    }
                }
            }
            if b.domain_lo.len() != b.domain_hi.len() {
                out.push("bound.domain_lo/domain_hi: lengths differ".into());
            } else if let Err(e) = b.domain() {
                out.push(e.to_string());
            } else if b.domain_lo.len() != expected_dim {
                out.push(format!("bound.domain_lo: needs dimension {expected_dim}"));
            }
        }

        if let Some(p) = &self.plant {
            if !(p.noise_variance > 0.0) {
                out.push(format!("plant.noise_variance: must be positive, got {}", p.noise_variance));
            }
            if !(p.dt > 0.0 && p.horizon >= p.dt) {
                out.push(format!("plant.dt/horizon: need 0 < dt ≤ horizon, got {} and {}", p.dt, p.horizon));
            }
            if !(p.reference.amplitude.is_finite() && p.reference.frequency > 0.0) {
                out.push("plant.reference: frequency must be positive".into());
            }
            if kind == ExperimentKind::Tracking {
                match p.gains {
                    None => out.push("plant.gains: required for experiment 'tracking'".into()),
                    Some(g) if !(g[0] > 0.0 && g[1] > 0.0) => out.push("plant.gains: both gains must be positive".into()),
                    _ => {}
                }
            }
        }

        if let Some(t) = &self.tracking {
            if t.train_lo.len() != 2 || t.train_hi.len() != 2 || t.train_counts.len() != 2 {
                out.push("tracking.train_*: two entries each are required".into());
            }
            if t.probe_points < 2 {
                out.push("tracking.probe_points: at least 2".into());
            }
        }
        if let Some(s) = &self.density_sweep {
            if s.counts.len() < 2 || s.counts.iter().any(|&c| c < 2) {
                out.push("density_sweep.counts: at least two grids with ≥ 2 points per axis".into());
            }
            if !(s.kappa > 0.0) {
                out.push(format!("density_sweep.kappa: must be positive, got {}", s.kappa));
            }
            if s.lo.len() != 2 || s.hi.len() != 2 {
                out.push("density_sweep.lo/hi: two entries each are required".into());
            }
        }
        if let Some(e) = &self.episodic {
            if !(e.xi > 0.0 && e.xi < 1.0) {
                out.push(format!("episodic.xi: must lie in (0, 1), got {}", e.xi));
            }
            if !(e.target_error > 0.0) {
                out.push(format!("episodic.target_error: must be positive, got {}", e.target_error));
            }
            if !(e.fine_dt > 0.0 && e.fine_dt <= e.horizon) {
                out.push("episodic.fine_dt/horizon: need 0 < fine_dt ≤ horizon".into());
            }
            if e.episode_cap == 0 || e.probe_points < 2 || e.max_new_samples == 0 {
                out.push("episodic: episode_cap ≥ 1, probe_points ≥ 2, max_new_samples ≥ 1".into());
            }
        }
        if let Some(v) = &self.validation {
            if v.trials == 0 || v.grid_points < 2 {
                out.push("validation: trials ≥ 1 and grid_points ≥ 2".into());
            }
            if kind == ExperimentKind::ValidateBounds && (v.n_train == 0 || v.n_train > v.grid_points.pow(2)) {
                out.push("validation.n_train: between 1 and the number of grid nodes".into());
            }
        }
        out
    }

    pub fn validate(&self) -> CliResult<()> {
        let d = self.diagnostics();
        if d.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(d.join("; ")))
        }
    }
}

fn missing(block: &str) -> CliError {
    CliError::Config(format!("{block}: block missing"))
}
