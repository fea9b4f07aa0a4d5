//! Covariance functions and the continuity constants derived from them.
//!
//! Every stationary family is written as `k(x, x') = σ_f² κ(ρ)` where
//! `ρ = ‖(x − x') / ℓ‖` is the lag scaled per dimension. The normalized
//! profile `κ` and its radial derivatives drive all constants below. With
//! anisotropic lengthscales the constants are evaluated with the smallest
//! lengthscale, which upper-bounds every direction.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::error_bounds::DomainBox;

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;

/// Radicands of the kernel metric down to this (relative) value are clamped to zero.
const METRIC_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[serde(alias = "se")]
    SquaredExponential,
    #[serde(alias = "matern_3_2")]
    Matern32,
    #[serde(alias = "matern_5_2")]
    Matern52,
    Linear,
}

impl KernelFamily {
    pub fn is_stationary(self) -> bool {
        !matches!(self, KernelFamily::Linear)
    }

    /// Whether the family has continuous partial derivatives up to fourth
    /// order, as required for derivative kernels.
    pub fn is_four_times_differentiable(self) -> bool {
        !matches!(self, KernelFamily::Matern32)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "squared_exponential",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Matern52 => "matern52",
            KernelFamily::Linear => "linear",
        }
    }
}

#[derive(Deserialize)]
struct RawKernelSpec {
    family: KernelFamily,
    signal_variance: f64,
    lengthscales: Vec<f64>,
}

impl TryFrom<RawKernelSpec> for KernelSpec {
    type Error = Error;

    fn try_from(raw: RawKernelSpec) -> Result<Self> {
        KernelSpec::new(raw.family, raw.signal_variance, raw.lengthscales)
    }
}

/// A kernel family together with its hyperparameters. Immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelSpec")]
pub struct KernelSpec {
    family: KernelFamily,
    signal_variance: f64,
    lengthscales: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, signal_variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "signal variance must be positive, got {signal_variance}"
            )));
        }
        if lengthscales.is_empty() {
            return Err(Error::InvalidInput("at least one lengthscale is required".into()));
        }
        if let Some(l) = lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidInput(format!("lengthscales must be positive, got {l}")));
        }
        Ok(Self {
            family,
            signal_variance,
            lengthscales,
        })
    }

    /// Isotropic kernel with a single lengthscale repeated over `dim` inputs.
    pub fn isotropic(family: KernelFamily, signal_variance: f64, lengthscale: f64, dim: usize) -> Result<Self> {
        Self::new(family, signal_variance, vec![lengthscale; dim])
    }

    pub fn squared_exponential(signal_variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential, signal_variance, lengthscales)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn is_stationary(&self) -> bool {
        self.family.is_stationary()
    }

    fn min_lengthscale(&self) -> f64 {
        self.lengthscales.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn check_points(&self, x: &[f64], xp: &[f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), xp.len())
    }

    fn scaled_lag(&self, x: &[f64], xp: &[f64]) -> f64 {
        x.iter()
            .zip(xp)
            .zip(&self.lengthscales)
            .map(|((a, b), l)| ((a - b) / l).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn weighted_dot(&self, x: &[f64], xp: &[f64]) -> f64 {
        x.iter()
            .zip(xp)
            .zip(&self.lengthscales)
            .map(|((a, b), l)| a * b / (l * l))
            .sum()
    }

    /// Evaluates `k(x, x')` without dimension checks. Callers in hot loops
    /// validate dimensions once up front.
    pub(crate) fn eval_unchecked(&self, x: &[f64], xp: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Linear => self.signal_variance * self.weighted_dot(x, xp),
            family => self.signal_variance * profile(family, self.scaled_lag(x, xp)),
        }
    }

    pub fn eval(&self, x: &[f64], xp: &[f64]) -> Result<f64> {
        self.check_points(x, xp)?;
        Ok(self.eval_unchecked(x, xp))
    }

    /// Gradient of `k(x, x')` with respect to its first argument.
    pub fn gradient(&self, x: &[f64], xp: &[f64]) -> Result<Vec<f64>> {
        self.check_points(x, xp)?;
        let s2 = self.signal_variance;
        let grad = match self.family {
            KernelFamily::Linear => xp
                .iter()
                .zip(&self.lengthscales)
                .map(|(b, l)| s2 * b / (l * l))
                .collect(),
            family => {
                let radial = radial_factor(family, self.scaled_lag(x, xp));
                x.iter()
                    .zip(xp)
                    .zip(&self.lengthscales)
                    .map(|((a, b), l)| s2 * radial * (a - b) / (l * l))
                    .collect()
            }
        };
        Ok(grad)
    }

    /// Kernel metric `d_k(x, x') = sqrt(k(x,x) + k(x',x') − 2k(x,x'))`.
    pub fn metric(&self, x: &[f64], xp: &[f64]) -> Result<f64> {
        self.check_points(x, xp)?;
        let kxx = self.eval_unchecked(x, x);
        let kpp = self.eval_unchecked(xp, xp);
        let radicand = kxx + kpp - 2.0 * self.eval_unchecked(x, xp);
        if radicand >= 0.0 {
            return Ok(radicand.sqrt());
        }
        let scale = 1.0f64.max(kxx.abs() + kpp.abs());
        if radicand >= -METRIC_CLAMP * scale {
            Ok(0.0)
        } else {
            Err(Error::NumericalDegeneracy(format!(
                "kernel metric radicand {radicand:e} is negative"
            )))
        }
    }

    /// Upper bound `L_k` on `‖∇ₓ k(x, x')‖` for `x, x'` in the box.
    pub fn lipschitz(&self, domain: &DomainBox) -> f64 {
        let s2 = self.signal_variance;
        match self.family {
            KernelFamily::Linear => {
                let l_min = self.min_lengthscale();
                let corner = domain.farthest_corner();
                s2 * corner.iter().map(|c| c * c).sum::<f64>().sqrt() / (l_min * l_min)
            }
            family => s2 * max_profile_slope(family) / self.min_lengthscale(),
        }
    }

    /// Largest prior standard deviation `max √k(x, x)` over the box.
    pub fn max_prior_stddev(&self, domain: &DomainBox) -> f64 {
        match self.family {
            KernelFamily::Linear => {
                let corner = domain.farthest_corner();
                (self.signal_variance * self.weighted_dot(&corner, &corner)).sqrt()
            }
            _ => self.signal_variance.sqrt(),
        }
    }

    /// Mixed partial `∂²k / ∂x_i ∂x'_i`, the covariance of `∂f/∂x_i`.
    pub fn derivative_eval(&self, axis: usize, x: &[f64], xp: &[f64]) -> Result<f64> {
        self.check_points(x, xp)?;
        self.require_smooth()?;
        if axis >= self.dim() {
            return Err(Error::InvalidInput(format!(
                "axis {axis} out of range for dimension {}",
                self.dim()
            )));
        }
        let li = self.lengthscales[axis];
        let scale = self.signal_variance / (li * li);
        let value = match self.family {
            KernelFamily::Linear => scale,
            KernelFamily::SquaredExponential | KernelFamily::Matern52 => {
                let u = (x[axis] - xp[axis]) / li;
                let rho = self.scaled_lag(x, xp);
                scale * derivative_profile(self.family, u, rho)
            }
            KernelFamily::Matern32 => unreachable!(),
        };
        Ok(value)
    }

    fn require_smooth(&self) -> Result<()> {
        if self.family.is_four_times_differentiable() {
            Ok(())
        } else {
            Err(Error::Unsupported(format!(
                "{} kernel lacks fourth-order derivatives",
                self.family.name()
            )))
        }
    }

    /// `max √k^∂i(x, x)` over the box for the derivative kernel along `axis`.
    pub fn derivative_max_stddev(&self, axis: usize) -> Result<f64> {
        self.require_smooth()?;
        let li = self.lengthscales[axis];
        let at_zero = match self.family {
            KernelFamily::SquaredExponential | KernelFamily::Linear => 1.0,
            KernelFamily::Matern52 => 5.0 / 3.0,
            KernelFamily::Matern32 => unreachable!(),
        };
        Ok((self.signal_variance * at_zero).sqrt() / li)
    }

    /// Lipschitz constant of the derivative kernel along `axis` with respect
    /// to its first argument, from a scalar search over the (axial, transverse)
    /// scaled-lag plane.
    pub fn derivative_lipschitz(&self, axis: usize) -> Result<f64> {
        self.require_smooth()?;
        if self.family == KernelFamily::Linear {
            return Ok(0.0);
        }
        let li = self.lengthscales[axis];
        let scale = self.signal_variance / (li * li) / self.min_lengthscale();
        let family = self.family;
        let peak = if self.dim() == 1 {
            maximize_1d(|u| derivative_profile_grad(family, u, 0.0).0.abs(), 0.0, 10.0)
        } else {
            maximize_2d(
                |u, w| {
                    let (gu, gw) = derivative_profile_grad(family, u, w);
                    gu.hypot(gw)
                },
                10.0,
            )
        };
        Ok(scale * peak)
    }

    /// Lipschitz constant `L_σ` of the posterior standard deviation for
    /// stationary kernels: `sup ‖∇k(r)‖ / sqrt(2k(0) − 2k(r))`.
    pub fn stddev_lipschitz(&self) -> Result<f64> {
        let family = self.family;
        if !family.is_stationary() {
            return Err(Error::Unsupported(
                "stddev Lipschitz constant requires a stationary kernel".into(),
            ));
        }
        let ratio_sup = match family {
            // The supremum is the zero-lag limit.
            KernelFamily::SquaredExponential => 1.0,
            _ => {
                let limit = zero_lag_ratio(family);
                let numeric = maximize_1d(
                    |rho| {
                        if rho < 1e-3 {
                            return limit;
                        }
                        profile_slope(family, rho).abs() / (2.0 * (1.0 - profile(family, rho))).sqrt()
                    },
                    0.0,
                    30.0,
                );
                limit.max(numeric)
            }
        };
        Ok(self.signal_variance.sqrt() * ratio_sup / self.min_lengthscale())
    }

    /// Lipschitz constant `L_∂k` of the kernel gradient, the largest Hessian
    /// magnitude of the radial profile.
    pub fn gradient_lipschitz(&self) -> Result<f64> {
        let family = self.family;
        if !family.is_stationary() {
            return Err(Error::Unsupported(
                "gradient Lipschitz constant is only defined for stationary kernels".into(),
            ));
        }
        let peak = maximize_1d(
            |rho| profile_curvature(family, rho).abs().max(radial_factor(family, rho).abs()),
            0.0,
            30.0,
        );
        let l_min = self.min_lengthscale();
        Ok(self.signal_variance * peak / (l_min * l_min))
    }

    /// Dense Gram matrix between two point lists.
    pub fn gram(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval_unchecked(&a[i], &b[j]))
    }
}

/// Normalized profile `κ(ρ)` with `κ(0) = 1`.
fn profile(family: KernelFamily, rho: f64) -> f64 {
    match family {
        KernelFamily::SquaredExponential => (-0.5 * rho * rho).exp(),
        KernelFamily::Matern32 => (1.0 + SQRT3 * rho) * (-SQRT3 * rho).exp(),
        KernelFamily::Matern52 => (1.0 + SQRT5 * rho + 5.0 * rho * rho / 3.0) * (-SQRT5 * rho).exp(),
        KernelFamily::Linear => unreachable!("linear kernel has no radial profile"),
    }
}

/// `κ'(ρ) / ρ`, finite at zero lag.
fn radial_factor(family: KernelFamily, rho: f64) -> f64 {
    match family {
        KernelFamily::SquaredExponential => -(-0.5 * rho * rho).exp(),
        KernelFamily::Matern32 => -3.0 * (-SQRT3 * rho).exp(),
        KernelFamily::Matern52 => -5.0 / 3.0 * (1.0 + SQRT5 * rho) * (-SQRT5 * rho).exp(),
        KernelFamily::Linear => unreachable!("linear kernel has no radial profile"),
    }
}

fn profile_slope(family: KernelFamily, rho: f64) -> f64 {
    rho * radial_factor(family, rho)
}

fn profile_curvature(family: KernelFamily, rho: f64) -> f64 {
    match family {
        KernelFamily::SquaredExponential => (rho * rho - 1.0) * (-0.5 * rho * rho).exp(),
        KernelFamily::Matern32 => -3.0 * (1.0 - SQRT3 * rho) * (-SQRT3 * rho).exp(),
        KernelFamily::Matern52 => {
            -5.0 / 3.0 * (1.0 + SQRT5 * rho - 5.0 * rho * rho) * (-SQRT5 * rho).exp()
        }
        KernelFamily::Linear => unreachable!("linear kernel has no radial profile"),
    }
}

/// `max_ρ |κ'(ρ)|` in closed form.
fn max_profile_slope(family: KernelFamily) -> f64 {
    match family {
        KernelFamily::SquaredExponential => (-0.5f64).exp(),
        KernelFamily::Matern32 => SQRT3 * (-1.0f64).exp(),
        KernelFamily::Matern52 => {
            let rho = (SQRT5 + 5.0) / 10.0;
            profile_slope(family, rho).abs()
        }
        KernelFamily::Linear => unreachable!("linear kernel has no radial profile"),
    }
}

/// `lim_{ρ→0} |κ'(ρ)| / sqrt(2(1 − κ(ρ)))`.
fn zero_lag_ratio(family: KernelFamily) -> f64 {
    match family {
        KernelFamily::SquaredExponential => 1.0,
        KernelFamily::Matern32 => SQRT3,
        KernelFamily::Matern52 => (5.0f64 / 3.0).sqrt(),
        KernelFamily::Linear => unreachable!("linear kernel has no radial profile"),
    }
}

/// Derivative-kernel profile `G(u, ρ)` with `k^∂i = σ_f²/ℓ_i² · G`, where `u`
/// is the scaled lag along the axis and `ρ` the full scaled lag.
fn derivative_profile(family: KernelFamily, u: f64, rho: f64) -> f64 {
    match family {
        KernelFamily::SquaredExponential => (1.0 - u * u) * (-0.5 * rho * rho).exp(),
        KernelFamily::Matern52 => {
            (-SQRT5 * rho).exp() * (5.0 / 3.0 * (1.0 + SQRT5 * rho) - 25.0 / 3.0 * u * u)
        }
        _ => unreachable!("derivative profile requires a smooth stationary family"),
    }
}

/// Partial derivatives `(∂G/∂u, ∂G/∂w)` of the derivative profile, where `w`
/// is the scaled lag transverse to the axis.
fn derivative_profile_grad(family: KernelFamily, u: f64, w: f64) -> (f64, f64) {
    let rho = u.hypot(w);
    match family {
        KernelFamily::SquaredExponential => {
            let e = (-0.5 * rho * rho).exp();
            ((u * u * u - 3.0 * u) * e, -w * (1.0 - u * u) * e)
        }
        KernelFamily::Matern52 => {
            let e = (-SQRT5 * rho).exp();
            if rho == 0.0 {
                return (0.0, 0.0);
            }
            let c = 25.0 * SQRT5 / 3.0;
            (
                e * (-25.0 * u + c * u * u * u / rho),
                e * (-25.0 / 3.0 * w + c * u * u * w / rho),
            )
        }
        _ => unreachable!("derivative profile requires a smooth stationary family"),
    }
}

/// Grid search followed by golden-section refinement around the best cell.
fn maximize_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const CELLS: usize = 4000;
    let h = (hi - lo) / CELLS as f64;
    let (best_i, mut best) = (0..=CELLS)
        .map(|i| (i, f(lo + i as f64 * h)))
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let mut a = (lo + (best_i as f64 - 1.0) * h).max(lo);
    let mut b = (lo + (best_i as f64 + 1.0) * h).min(hi);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best = best.max(f(0.5 * (a + b)));
    best
}

/// Maximizes over `u ∈ [0, span]`, `w ∈ [0, span]` by grid search and local
/// pattern refinement.
fn maximize_2d(f: impl Fn(f64, f64) -> f64, span: f64) -> f64 {
    const CELLS: usize = 400;
    let h = span / CELLS as f64;
    let mut best = (0.0, 0.0, f(0.0, 0.0));
    for i in 0..=CELLS {
        for j in 0..=CELLS {
            let (u, w) = (i as f64 * h, j as f64 * h);
            let v = f(u, w);
            if v > best.2 {
                best = (u, w, v);
            }
        }
    }
    let (mut u, mut w, mut v) = best;
    let mut step = h;
    while step > 1e-12 {
        let mut improved = false;
        for (du, dw) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let (nu, nw) = ((u + du).max(0.0), (w + dw).max(0.0));
            let nv = f(nu, nw);
            if nv > v {
                (u, w, v) = (nu, nw, nv);
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    v
}
