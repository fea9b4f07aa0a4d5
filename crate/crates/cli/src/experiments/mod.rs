pub mod episodic;
pub mod sweep;
pub mod tracking;
pub mod validation;

use gptrack::error_bounds::{auto_tau, probabilistic_lipschitz, BoundParams, LipschitzSource};
use gptrack::simulation::ControlAffineSystem;
use gptrack::{DomainBox, GpModel, TrainingSet, UniformBound};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde_json::Value;

use crate::config::{BoundBlock, LipschitzSetting, TauSetting};
use crate::error::{CliError, CliResult, Context};

pub struct ExperimentReport {
    pub results: Value,
    pub violations: usize,
}

/// Runs `f` for every seed in parallel and returns the results in seed order.
pub fn per_seed<T: Send>(seeds: &[u64], f: impl Fn(u64) -> CliResult<T> + Sync) -> CliResult<Vec<T>> {
    seeds.par_iter().map(|&s| f(s)).collect::<Vec<_>>().into_iter().collect()
}

/// Noisy measurements `f(x) + ε` of the benchmark nonlinearity at `points`.
pub fn measure(
    system: &ControlAffineSystem,
    points: Vec<Vec<f64>>,
    noise_variance: f64,
    rng: &mut impl Rng,
) -> CliResult<TrainingSet> {
    let noise = Normal::new(0.0, noise_variance.sqrt()).map_err(|e| CliError::Config(format!("noise: {e}")))?;
    let targets = points.iter().map(|x| (system.nonlinearity)(x) + noise.sample(rng)).collect();
    TrainingSet::new(2, points, targets, noise_variance).context(|| "assembling training data".into())
}

/// Lipschitz constant of the unknown function as configured.
pub fn f_lipschitz(bound: &BoundBlock, model: &GpModel, domain: &DomainBox) -> CliResult<(f64, LipschitzSource)> {
    match bound.f_lipschitz {
        LipschitzSetting::Value(v) => Ok((v, LipschitzSource::Given)),
        LipschitzSetting::Probabilistic(_) => {
            let dl = bound
                .delta_lipschitz
                .ok_or_else(|| CliError::Config("bound.delta_lipschitz: missing".into()))?;
            let l = probabilistic_lipschitz(model.kernel(), domain, dl).context(|| "probabilistic Lipschitz constant".into())?;
            Ok((l, LipschitzSource::Probabilistic))
        }
    }
}

/// The configured uniform bound for `model`, with `f_lipschitz` overriding
/// the configured constant when given.
pub fn uniform_bound(bound: &BoundBlock, model: &GpModel, domain: &DomainBox, lf_override: Option<f64>) -> CliResult<UniformBound> {
    let (lf, source) = match lf_override {
        Some(v) => (v, LipschitzSource::Given),
        None => f_lipschitz(bound, model, domain)?,
    };
    let tau = match bound.tau {
        TauSetting::Value(t) => t,
        TauSetting::Auto(_) => auto_tau(model, domain, bound.delta, lf).context(|| "selecting tau".into())?,
    };
    let mut params = BoundParams::given(tau, bound.delta, lf).context(|| "bound parameters".into())?;
    if source == LipschitzSource::Probabilistic {
        params.source = source;
        params.delta_lipschitz = bound.delta_lipschitz;
    }
    UniformBound::new(model, &params, domain).context(|| "uniform bound".into())
}

/// Index of the half-period containing `t`, counted from `t = 0`.
pub fn half_period_index(t: f64, period: f64) -> usize {
    let phase = t.rem_euclid(period);
    usize::from(phase >= 0.5 * period)
}
