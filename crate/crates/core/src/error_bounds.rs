//! Uniform prediction-error bounds and the constants they are built from.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gp::GpModel;
use crate::kernels::KernelSpec;

/// Axis-aligned hypercube `center ± edge/2` overapproximating the state domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    center: Vec<f64>,
    edge: f64,
}

impl DomainBox {
    pub fn new(center: Vec<f64>, edge: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::InvalidInput("domain dimension must be positive".into()));
        }
        if !(edge > 0.0 && edge.is_finite()) {
            return Err(Error::InvalidInput(format!("edge length must be positive, got {edge}")));
        }
        Ok(Self { center, edge })
    }

    pub fn centered(edge: f64, dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], edge)
    }

    /// Smallest hypercube containing the rectangle `[lo_i, hi_i]`.
    pub fn enclosing(lo: &[f64], hi: &[f64]) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        let edge = lo.iter().zip(hi).map(|(a, b)| b - a).fold(0.0, f64::max);
        let center = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        Self::new(center, edge)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn edge(&self) -> f64 {
        self.edge
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let half = 0.5 * self.edge * (1.0 + 1e-12);
        x.len() == self.dim() && x.iter().zip(&self.center).all(|(a, c)| (a - c).abs() <= half)
    }

    /// The corner with the largest absolute coordinates.
    pub fn farthest_corner(&self) -> Vec<f64> {
        self.center.iter().map(|c| c.abs() + 0.5 * self.edge).collect()
    }
}

/// Natural log of `max(1, (r√d / 2τ)^d)`.
pub fn ln_covering_number_bound(tau: f64, domain: &DomainBox) -> f64 {
    let d = domain.dim() as f64;
    (d * (domain.edge() * d.sqrt() / (2.0 * tau)).ln()).max(0.0)
}

/// Upper bound on the number of radius-`τ` balls needed to cover the box.
pub fn covering_number_bound(tau: f64, domain: &DomainBox) -> f64 {
    ln_covering_number_bound(tau, domain).exp()
}

/// Confidence scaling `β = 2 ln(M(τ)/δ)`.
pub fn beta(tau: f64, delta: f64, domain: &DomainBox) -> f64 {
    2.0 * (ln_covering_number_bound(tau, domain) - delta.ln())
}

/// Lipschitz constant of the posterior mean, `L_k √N ‖α‖`.
pub fn mean_lipschitz(model: &GpModel, kernel_lipschitz: f64) -> f64 {
    kernel_lipschitz * (model.len() as f64).sqrt() * model.alpha().norm()
}

/// Modulus of continuity of the posterior standard deviation at `τ`. The
/// generic square-root modulus is always available; the linear one only with
/// a stationary constant.
pub fn stddev_modulus(tau: f64, kernel_lipschitz: f64, stddev_lipschitz: Option<f64>) -> f64 {
    let generic = (2.0 * kernel_lipschitz * tau).sqrt();
    match stddev_lipschitz {
        Some(l_sigma) => generic.min(l_sigma * tau),
        None => generic,
    }
}

/// Discretization correction `γ = (L_μ + L_f)τ + √β ω_σ`.
pub fn gamma(tau: f64, mean_lipschitz: f64, f_lipschitz: f64, beta: f64, modulus: f64) -> f64 {
    (mean_lipschitz + f_lipschitz) * tau + beta.sqrt() * modulus
}

/// High-probability bound on `‖ε‖²` for `N` i.i.d. noise samples.
pub fn noise_norm_bound(n: usize, delta: f64, noise_variance: f64) -> f64 {
    let n = n as f64;
    let l = (2.0 / delta).ln();
    (2.0 * (n * l).sqrt() + 2.0 * l + n) * noise_variance
}

fn expected_sup_from(max_stddev: f64, dim: usize, edge: f64, lipschitz: f64) -> f64 {
    12.0 * (6.0 * dim as f64).sqrt() * max_stddev.max((edge * lipschitz).sqrt())
}

fn sample_sup_from(max_stddev: f64, dim: usize, edge: f64, lipschitz: f64, delta: f64) -> f64 {
    (2.0 * (1.0 / delta).ln()).sqrt() * max_stddev + expected_sup_from(max_stddev, dim, edge, lipschitz)
}

/// Bound on the expected supremum of a prior sample over the box.
pub fn expected_sup_bound(kernel: &KernelSpec, domain: &DomainBox, kernel_lipschitz: f64) -> f64 {
    expected_sup_from(kernel.max_prior_stddev(domain), domain.dim(), domain.edge(), kernel_lipschitz)
}

/// Bound on the supremum of a prior sample holding with probability `1 − δ_L`.
pub fn sample_sup_bound(kernel: &KernelSpec, domain: &DomainBox, delta_l: f64, kernel_lipschitz: f64) -> f64 {
    sample_sup_from(
        kernel.max_prior_stddev(domain),
        domain.dim(),
        domain.edge(),
        kernel_lipschitz,
        delta_l,
    )
}

/// Lipschitz constant of a prior sample holding with probability `1 − δ_L`,
/// from per-axis supremum bounds on the partial derivatives.
pub fn probabilistic_lipschitz(kernel: &KernelSpec, domain: &DomainBox, delta_l: f64) -> Result<f64> {
    check_dim(kernel.dim(), domain.dim())?;
    check_probability(delta_l, "delta_L")?;
    let d = domain.dim();
    let per_axis = delta_l / (2.0 * d as f64);
    let mut sum = 0.0;
    for axis in 0..d {
        let s = sample_sup_from(
            kernel.derivative_max_stddev(axis)?,
            d,
            domain.edge(),
            kernel.derivative_lipschitz(axis)?,
            per_axis,
        );
        sum += s * s;
    }
    Ok(sum.sqrt())
}

fn check_probability(p: f64, name: &str) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must lie in (0, 1), got {p}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzSource {
    Given,
    Probabilistic,
}

/// Parameters of the uniform error bound.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundParams {
    pub tau: f64,
    pub delta: f64,
    pub f_lipschitz: f64,
    pub source: LipschitzSource,
    pub delta_lipschitz: Option<f64>,
}

impl BoundParams {
    pub fn given(tau: f64, delta: f64, f_lipschitz: f64) -> Result<Self> {
        check_tau(tau)?;
        check_probability(delta, "delta")?;
        if !(f_lipschitz >= 0.0 && f_lipschitz.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "Lipschitz constant must be nonnegative, got {f_lipschitz}"
            )));
        }
        Ok(Self {
            tau,
            delta,
            f_lipschitz,
            source: LipschitzSource::Given,
            delta_lipschitz: None,
        })
    }

    pub fn probabilistic(tau: f64, delta: f64, delta_l: f64, kernel: &KernelSpec, domain: &DomainBox) -> Result<Self> {
        let lf = probabilistic_lipschitz(kernel, domain, delta_l)?;
        Ok(Self {
            source: LipschitzSource::Probabilistic,
            delta_lipschitz: Some(delta_l),
            ..Self::given(tau, delta, lf)?
        })
    }

    /// Probability with which the bound may fail, summing both budgets.
    pub fn total_failure_probability(&self) -> f64 {
        self.delta + self.delta_lipschitz.unwrap_or(0.0)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("tau must be positive, got {tau}")))
    }
}

/// Serializable summary of the constants behind a uniform bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub tau: f64,
    pub delta: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(rename = "L_mu")]
    pub l_mu: f64,
    #[serde(rename = "L_f")]
    pub l_f: f64,
    #[serde(rename = "L_f_source")]
    pub l_f_source: LipschitzSource,
    pub coverage_number_bound: f64,
    #[serde(rename = "delta_L", skip_serializing_if = "Option::is_none", default)]
    pub delta_l: Option<f64>,
    #[serde(rename = "L_k")]
    pub l_k: f64,
    #[serde(rename = "L_sigma", skip_serializing_if = "Option::is_none", default)]
    pub l_sigma: Option<f64>,
    pub omega_sigma: f64,
}

/// The bound `η(x) = √β σ(x) + γ` for a fixed model, box and parameters.
#[derive(Clone, Debug)]
pub struct UniformBound {
    pub domain: DomainBox,
    pub params: BoundParams,
    pub beta: f64,
    pub gamma: f64,
    pub kernel_lipschitz: f64,
    pub mean_lipschitz: f64,
    pub stddev_lipschitz: Option<f64>,
    pub modulus: f64,
}

impl UniformBound {
    pub fn new(model: &GpModel, params: &BoundParams, domain: &DomainBox) -> Result<Self> {
        let kernel = model.kernel();
        check_dim(kernel.dim(), domain.dim())?;
        let l_k = kernel.lipschitz(domain);
        let l_sigma = kernel.stddev_lipschitz().ok();
        Ok(Self::with_constants(model, params, domain, l_k, l_sigma))
    }

    /// Like [`UniformBound::new`] with explicit kernel continuity constants.
    pub fn with_constants(
        model: &GpModel,
        params: &BoundParams,
        domain: &DomainBox,
        kernel_lipschitz: f64,
        stddev_lipschitz: Option<f64>,
    ) -> Self {
        let b = beta(params.tau, params.delta, domain);
        let l_mu = mean_lipschitz(model, kernel_lipschitz);
        let modulus = stddev_modulus(params.tau, kernel_lipschitz, stddev_lipschitz);
        Self {
            domain: domain.clone(),
            params: params.clone(),
            beta: b,
            gamma: gamma(params.tau, l_mu, params.f_lipschitz, b, modulus),
            kernel_lipschitz,
            mean_lipschitz: l_mu,
            stddev_lipschitz,
            modulus,
        }
    }

    pub fn eta_from_stddev(&self, stddev: f64) -> f64 {
        self.beta.sqrt() * stddev + self.gamma
    }

    pub fn eta(&self, model: &GpModel, x: &[f64]) -> Result<f64> {
        if !self.domain.contains(x) {
            return Err(Error::OutsideDomain);
        }
        Ok(self.eta_from_stddev(model.predict_stddev(x)?))
    }

    pub fn report(&self) -> BoundReport {
        BoundReport {
            tau: self.params.tau,
            delta: self.params.delta,
            beta: self.beta,
            gamma: self.gamma,
            l_mu: self.mean_lipschitz,
            l_f: self.params.f_lipschitz,
            l_f_source: self.params.source,
            coverage_number_bound: covering_number_bound(self.params.tau, &self.domain),
            delta_l: self.params.delta_lipschitz,
            l_k: self.kernel_lipschitz,
            l_sigma: self.stddev_lipschitz,
            omega_sigma: self.modulus,
        }
    }
}

/// `η(x)` for a single query; see [`UniformBound`] to amortize the constants.
pub fn uniform_error_bound(model: &GpModel, x: &[f64], params: &BoundParams, domain: &DomainBox) -> Result<f64> {
    UniformBound::new(model, params, domain)?.eta(model, x)
}

/// Largest `τ ∈ [lo, hi]` satisfying a predicate that holds for small `τ`
/// and fails beyond some threshold, by bisection in log space.
pub fn largest_feasible_tau(feasible: impl Fn(f64) -> bool, lo: f64, hi: f64) -> Result<f64> {
    if feasible(hi) {
        return Ok(hi);
    }
    if !feasible(lo) {
        return Err(Error::Infeasible(format!("no feasible tau in [{lo:e}, {hi:e}]")));
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if feasible(mid.exp()) {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-12 {
            break;
        }
    }
    Ok(a.exp())
}

/// Default `τ`: the largest value for which `γ(τ) ≤ 0.01 √β(τ) σ_f`.
pub fn auto_tau(model: &GpModel, domain: &DomainBox, delta: f64, f_lipschitz: f64) -> Result<f64> {
    let kernel = model.kernel();
    let l_k = kernel.lipschitz(domain);
    let l_sigma = kernel.stddev_lipschitz().ok();
    let l_mu = mean_lipschitz(model, l_k);
    let sigma_f = kernel.signal_variance().sqrt();
    largest_feasible_tau(
        |tau| {
            let b = beta(tau, delta, domain);
            gamma(tau, l_mu, f_lipschitz, b, stddev_modulus(tau, l_k, l_sigma)) <= 0.01 * b.sqrt() * sigma_f
        },
        1e-12,
        domain.edge(),
    )
}
