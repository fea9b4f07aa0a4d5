//! Episodic data collection that contracts the certified tracking bound by a
//! prescribed factor per episode.
//!
//! Each episode runs the current controller, picks the sparsest sampling of
//! the new data that still pushes the posterior variance along the reference
//! below the level the contraction needs, refits, and chooses new gains and a
//! new grid constant so that the next certified bound shrinks by `ξ`.

use std::time::Instant;

use nalgebra::{Complex, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::error_bounds::{beta, gamma, largest_feasible_tau, mean_lipschitz, stddev_modulus, DomainBox};
use crate::gp::{downsample, sample_stride, GpModel, TrainingSet};
use crate::kernels::KernelSpec;
use crate::simulation::{benchmark_gains, reference, run_closed_loop, ControlAffineSystem, ReferenceSpec};
use crate::tracking::{closed_loop, ClosedLoop, LinearPlant, SUP_SAFETY_FACTOR};

/// Relative margin by which chosen gains exceed the contraction requirement.
pub const GAIN_MARGIN: f64 = 1.05;

const GAIN_ROUNDS: usize = 20;

/// One-parameter gain families whose slowest eigenvalue scales with `θ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainFamily {
    /// `θ₁ = θ₂ = θ` on the double integrator, eigenvalues `θ(−1 ± i√3)/2`.
    EqualBenchmark,
    /// Poles at `θ · p_k` for a fixed pattern `p_k = re_k + i im_k`.
    ScaledPoles { re: Vec<f64>, im: Vec<f64> },
}

impl GainFamily {
    pub fn gains(&self, plant: &LinearPlant, theta: f64) -> Result<DVector<f64>> {
        match self {
            GainFamily::EqualBenchmark => {
                if plant.dim() != 2 {
                    return Err(Error::InvalidInput("equal benchmark gains need a two-state plant".into()));
                }
                Ok(benchmark_gains(theta, theta))
            }
            GainFamily::ScaledPoles { re, im } => {
                if re.len() != im.len() {
                    return Err(Error::InvalidInput("pole pattern needs matching re/im lists".into()));
                }
                let poles: Vec<Complex<f64>> = re.iter().zip(im).map(|(a, b)| Complex::new(a * theta, b * theta)).collect();
                plant.place_poles(&poles)
            }
        }
    }
}

/// Coefficient `c` in the contraction requirement `−λ_max ≥ c ζ`, namely
/// `(8√L_∂k + ξ L_σ) / ξ · √β`.
pub fn gain_coefficient(gradient_lipschitz: f64, xi: f64, stddev_lipschitz: f64, beta: f64) -> f64 {
    (8.0 * gradient_lipschitz.sqrt() + xi * stddev_lipschitz) / xi * beta.sqrt()
}

#[derive(Clone, Debug)]
pub struct SelectedGains {
    pub theta: f64,
    pub closed_loop: ClosedLoop,
    /// `c ζ` evaluated at the returned loop.
    pub requirement: f64,
}

/// Finds `θ` with `−λ_max(θ) = GAIN_MARGIN · c · ζ(θ)` by fixed-point
/// iteration on the loop's conditioning constant.
pub fn select_gains(plant: &LinearPlant, family: &GainFamily, coefficient: f64, initial_theta: f64) -> Result<SelectedGains> {
    if !(coefficient > 0.0 && coefficient.is_finite()) {
        return Err(Error::InvalidInput(format!("gain coefficient must be positive, got {coefficient}")));
    }
    let mut theta = initial_theta.max(1e-6);
    for _ in 0..GAIN_ROUNDS {
        let lp = closed_loop(plant, family.gains(plant, theta)?)?;
        let target = GAIN_MARGIN * coefficient * lp.zeta();
        let decay = -lp.lambda_max();
        if !(decay > 0.0) {
            return Err(Error::InvalidInput("gain family does not stabilize the plant".into()));
        }
        let next = theta * target / decay;
        if ((next - theta) / theta).abs() <= 1e-12 {
            let lp = closed_loop(plant, family.gains(plant, next)?)?;
            let requirement = coefficient * lp.zeta();
            if -lp.lambda_max() < requirement {
                break;
            }
            return Ok(SelectedGains {
                theta: next,
                closed_loop: lp,
                requirement,
            });
        }
        theta = next;
    }
    Err(Error::NonConvergence(format!(
        "gain/conditioning fixed point did not settle within {GAIN_ROUNDS} rounds (last θ = {theta:e})"
    )))
}

/// Sampling time below which the variance condition cannot hold at the
/// target accuracy: `16 L_∂k ē³ / (σ_on² max‖ẋ‖)`.
pub fn min_sampling_time(gradient_lipschitz: f64, target_error: f64, noise_variance: f64, max_speed: f64) -> f64 {
    16.0 * gradient_lipschitz * target_error.powi(3) / (noise_variance * max_speed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct EpisodeCount {
    pub bound: usize,
    /// The ceiling did not fit; `bound` holds the cap instead.
    pub overflow: bool,
}

/// Largest count reported before flagging overflow.
pub const EPISODE_COUNT_CAP: usize = 1_000_000_000;

/// Guaranteed episode count `⌈(ln(4ē√L_∂k) − ln √k₀) / ln ξ⌉`, clamped at zero.
pub fn episode_count_bound(target_error: f64, gradient_lipschitz: f64, prior_variance: f64, xi: f64) -> EpisodeCount {
    let numerator = (4.0 * target_error * gradient_lipschitz.sqrt()).ln() - prior_variance.sqrt().ln();
    if numerator >= 0.0 {
        return EpisodeCount { bound: 0, overflow: false };
    }
    let raw = if xi >= 1.0 { f64::INFINITY } else { (numerator / xi.ln()).ceil() };
    if raw <= 0.0 {
        EpisodeCount { bound: 0, overflow: false }
    } else if !(raw <= EPISODE_COUNT_CAP as f64) {
        EpisodeCount {
            bound: EPISODE_COUNT_CAP,
            overflow: true,
        }
    } else {
        EpisodeCount {
            bound: raw as usize,
            overflow: false,
        }
    }
}

/// Result of the sampling-time search.
#[derive(Clone, Debug)]
pub struct SampledModel {
    pub sampling_time: f64,
    pub rung: usize,
    pub model: GpModel,
    pub sup_stddev: f64,
}

/// Largest sampling time on the ladder `fine_dt · 2^j ≤ horizon` for which
/// the model built from the downsampled data keeps `max σ²` over `probes`
/// below `16 L_∂k ῡ_prev²`. The condition is monotone along the ladder since
/// coarser rungs keep subsets of the finer rungs' samples.
#[allow(clippy::too_many_arguments)]
pub fn select_sampling_time(
    raw: &TrainingSet,
    fine_dt: f64,
    horizon: f64,
    build: impl Fn(&TrainingSet) -> Result<GpModel>,
    probes: &[Vec<f64>],
    previous_bound: f64,
    gradient_lipschitz: f64,
    max_new_samples: usize,
) -> Result<SampledModel> {
    let threshold = 16.0 * gradient_lipschitz * previous_bound * previous_bound;
    let mut top = 0usize;
    while fine_dt * 2f64.powi(top as i32 + 1) <= horizon * (1.0 + 1e-12) {
        top += 1;
    }
    let eval = |rung: usize| -> Result<Option<SampledModel>> {
        let ts = fine_dt * 2f64.powi(rung as i32);
        let stride = sample_stride(fine_dt, ts)?;
        if raw.len().div_ceil(stride) > max_new_samples {
            return Ok(None);
        }
        let model = build(&downsample(raw, fine_dt, ts)?)?;
        let variances = model.predict_var_many(probes)?;
        let sup = variances.iter().copied().fold(0.0, f64::max);
        Ok((sup <= threshold).then(|| SampledModel {
            sampling_time: ts,
            rung,
            model,
            sup_stddev: sup.sqrt(),
        }))
    };
    if let Some(found) = eval(top)? {
        return Ok(found);
    }
    // Invariant: rung `hi` fails; search for the largest passing rung below.
    let mut floor = 0usize;
    while floor < top && raw.len().div_ceil(sample_stride(fine_dt, fine_dt * 2f64.powi(floor as i32))?) > max_new_samples {
        floor += 1;
    }
    let (mut lo, mut hi) = (floor, top);
    let mut best = match eval(floor)? {
        Some(m) => m,
        None => {
            return Err(Error::ConditionUnreachable(format!(
                "variance threshold {threshold:e} not met even at the recording step {fine_dt:e} \
                 (or the finest rung exceeds {max_new_samples} samples)"
            )))
        }
    };
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        match eval(mid)? {
            Some(m) => {
                lo = mid;
                best = m;
            }
            None => hi = mid,
        }
    }
    Ok(best)
}

/// Settings of the episodic learning loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub target_error: f64,
    pub xi: f64,
    pub horizon: f64,
    pub fine_dt: f64,
    pub delta: f64,
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub reference: ReferenceSpec,
    pub domain: DomainBox,
    pub f_lipschitz: f64,
    pub gain_family: GainFamily,
    pub episode_cap: usize,
    /// Reference-time grid size for suprema over one period.
    pub probe_points: usize,
    /// Largest number of new samples a single episode may contribute.
    pub max_new_samples: usize,
    pub seed: u64,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return bad(format!("xi must lie in (0, 1), got {}", self.xi));
        }
        if !(self.target_error > 0.0) {
            return bad(format!("target error must be positive, got {}", self.target_error));
        }
        if !(self.fine_dt > 0.0 && self.fine_dt <= self.horizon) {
            return bad(format!("need 0 < fine_dt ≤ horizon, got {} and {}", self.fine_dt, self.horizon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !self.kernel.is_stationary() {
            return bad("episodic learning needs a stationary kernel".into());
        }
        if self.kernel.dim() != 2 || self.domain.dim() != 2 {
            return bad("episodic learning runs on the two-state benchmark".into());
        }
        if self.probe_points < 2 || self.episode_cap == 0 || self.max_new_samples == 0 {
            return bad("probe_points ≥ 2, episode_cap ≥ 1 and max_new_samples ≥ 1 are required".into());
        }
        Ok(())
    }

    fn probes(&self) -> Vec<Vec<f64>> {
        let period = self.reference.period();
        (0..self.probe_points)
            .map(|i| reference(&self.reference, period * i as f64 / self.probe_points as f64).0.to_vec())
            .collect()
    }
}

/// Certificate attached to one model/gain pair.
#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub tau: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(rename = "L_mu")]
    pub l_mu: f64,
    pub sup_sigma: f64,
    pub sup_eta: f64,
    pub theta: f64,
    pub gains: Vec<f64>,
    pub lambda_max: f64,
    pub zeta: f64,
    pub kappa: f64,
    pub upsilon_bar: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EpisodeReport {
    pub episode: usize,
    pub sampling_time: f64,
    pub min_sampling_time: f64,
    pub data_size: usize,
    pub new_samples: usize,
    /// Bound certified for the roll-out of this episode.
    pub run_bound: f64,
    pub observed_max_error: f64,
    /// Certificate of the refitted model and the gains for the next episode.
    pub certificate: Certificate,
    pub ratio: f64,
    pub seed: u64,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EpisodicSummary {
    pub target_error: f64,
    pub xi: f64,
    pub episode_count_bound: usize,
    pub episode_count_overflow: bool,
    pub per_episode_delta: f64,
    pub total_confidence: f64,
    pub episodes_run: usize,
    pub initial_bound: f64,
    pub final_bound: f64,
    pub status: String,
    #[serde(rename = "L_dk")]
    pub l_dk: f64,
    #[serde(rename = "L_sigma")]
    pub l_sigma: f64,
    pub k0: f64,
    pub cumulative_data: bool,
}

#[derive(Clone, Debug)]
pub struct EpisodicOutcome {
    pub initial: Certificate,
    pub reports: Vec<EpisodeReport>,
    pub summary: EpisodicSummary,
    pub final_model: GpModel,
}

struct Constants {
    l_k: f64,
    l_sigma: f64,
    l_dk: f64,
}

/// Chooses `τ`, gains and the certified bound for a fitted model.
fn certify(
    config: &EpisodeConfig,
    consts: &Constants,
    plant: &LinearPlant,
    model: &GpModel,
    probes: &[Vec<f64>],
    theta_hint: f64,
) -> Result<(Certificate, ClosedLoop)> {
    let sup_sigma = model
        .predict_var_many(probes)?
        .into_iter()
        .fold(0.0, f64::max)
        .sqrt();
    let l_mu = mean_lipschitz(model, consts.l_k);
    let gamma_at = |tau: f64| {
        let b = beta(tau, config.delta, &config.domain);
        let g = gamma(tau, l_mu, config.f_lipschitz, b, stddev_modulus(tau, consts.l_k, Some(consts.l_sigma)));
        (b, g)
    };
    let tau = largest_feasible_tau(
        |tau| {
            let (b, g) = gamma_at(tau);
            g <= b.sqrt() * sup_sigma
        },
        1e-12,
        config.domain.edge(),
    )?;
    let (b, g) = gamma_at(tau);
    let coefficient = gain_coefficient(consts.l_dk, config.xi, consts.l_sigma, b);
    let selected = select_gains(plant, &config.gain_family, coefficient, theta_hint)?;
    let lp = selected.closed_loop;
    let sup_eta = b.sqrt() * sup_sigma + g;
    let rate = lp.comparison_rate(consts.l_sigma, b);
    let upsilon_bar = SUP_SAFETY_FACTOR * lp.zeta() * sup_eta / -rate;
    let certificate = Certificate {
        tau,
        beta: b,
        gamma: g,
        l_mu,
        sup_sigma,
        sup_eta,
        theta: selected.theta,
        gains: lp.gains().iter().copied().collect(),
        lambda_max: lp.lambda_max(),
        zeta: lp.zeta(),
        kappa: -2.0 * lp.zeta() * b.sqrt() / rate,
        upsilon_bar,
    };
    Ok((certificate, lp))
}

/// Runs episodes until the certified bound drops below the target.
/// `on_episode` sees each report as soon as it is final.
pub fn learn_control(
    config: &EpisodeConfig,
    system: &ControlAffineSystem,
    mut on_episode: impl FnMut(&EpisodeReport),
) -> Result<EpisodicOutcome> {
    config.validate()?;
    let kernel = &config.kernel;
    let consts = Constants {
        l_k: kernel.lipschitz(&config.domain),
        l_sigma: kernel.stddev_lipschitz()?,
        l_dk: kernel.gradient_lipschitz()?,
    };
    let k0 = kernel.signal_variance();
    let probes = config.probes();
    let plant = &system.plant;
    let count = episode_count_bound(config.target_error, consts.l_dk, k0, config.xi);
    let t_min = min_sampling_time(consts.l_dk, config.target_error, config.noise_variance, config.reference.max_speed());

    let mut model = GpModel::fit(kernel.clone(), TrainingSet::empty(2, config.noise_variance)?)?;
    let (initial, mut lp) = certify(config, &consts, plant, &model, &probes, 1.0)?;
    let mut current = initial.clone();
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let mut reports = Vec::new();

    while current.upsilon_bar > config.target_error {
        let episode = reports.len() + 1;
        if episode > config.episode_cap {
            return Err(Error::EpisodeCapExceeded {
                cap: config.episode_cap,
                last_bound: current.upsilon_bar,
            });
        }
        let started = Instant::now();
        let seed: u64 = seeds.random();
        let run = run_closed_loop(system, &lp, &model, &config.reference, config.horizon, config.fine_dt, seed)?;
        let previous = model.clone();
        let sampled = select_sampling_time(
            &run.measurements,
            config.fine_dt,
            config.horizon,
            |fresh| previous.add_samples(fresh),
            &probes,
            current.upsilon_bar,
            consts.l_dk,
            config.max_new_samples,
        )?;
        let new_samples = sampled.model.len() - previous.len();
        model = sampled.model;
        let (cert, next_lp) = certify(config, &consts, plant, &model, &probes, current.theta)?;
        let report = EpisodeReport {
            episode,
            sampling_time: sampled.sampling_time,
            min_sampling_time: t_min,
            data_size: model.len(),
            new_samples,
            run_bound: current.upsilon_bar,
            observed_max_error: run.max_error(),
            ratio: cert.upsilon_bar / current.upsilon_bar,
            certificate: cert.clone(),
            seed,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        on_episode(&report);
        reports.push(report);
        current = cert;
        lp = next_lp;
    }

    let status = if reports.is_empty() { "target_met_initially" } else { "target_reached" };
    let summary = EpisodicSummary {
        target_error: config.target_error,
        xi: config.xi,
        episode_count_bound: count.bound,
        episode_count_overflow: count.overflow,
        per_episode_delta: config.delta,
        total_confidence: 1.0 - count.bound as f64 * config.delta,
        episodes_run: reports.len(),
        initial_bound: initial.upsilon_bar,
        final_bound: current.upsilon_bar,
        status: status.into(),
        l_dk: consts.l_dk,
        l_sigma: consts.l_sigma,
        k0,
        cumulative_data: true,
    };
    Ok(EpisodicOutcome {
        initial,
        reports,
        summary,
        final_model: model,
    })
}

/// Probe points for suprema along the reference, one period at `count` times.
pub fn reference_probes(spec: &ReferenceSpec, count: usize) -> Vec<Vec<f64>> {
    let period = spec.period();
    (0..count)
        .into_par_iter()
        .map(|i| reference(spec, period * i as f64 / count as f64).0.to_vec())
        .collect()
}
