//! Closed-loop tracking-error certificates for feedback-linearized plants.
//!
//! With the GP mean compensating the unknown nonlinearity, the tracking error
//! obeys `ė = A_θ e + b (f − μ)`. Diagonalizing `A_θ = U Λ U⁻¹` turns the
//! uniform error bound into a scalar comparison system for `‖e‖`.

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::error_bounds::{
    beta, gamma, largest_feasible_tau, mean_lipschitz, stddev_modulus, DomainBox,
};
use crate::gp::GpModel;
use crate::simulation::integrate;

type C64 = Complex<f64>;

/// Relative tolerance for rank decisions and reconstruction checks.
const RANK_TOL: f64 = 1e-8;

/// Safety factor applied to suprema sampled on a time grid.
pub const SUP_SAFETY_FACTOR: f64 = 1.05;

/// Single-input linear plant `ẋ = A x + b u`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearPlant {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl LinearPlant {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidInput(format!(
                "system matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        check_dim(a.nrows(), b.len())?;
        let plant = Self { a, b };
        let rank = numerical_rank(&plant.controllability_matrix());
        if rank < plant.dim() {
            return Err(Error::InvalidInput(format!(
                "plant is not controllable (controllability rank {rank} < {})",
                plant.dim()
            )));
        }
        Ok(plant)
    }

    /// Double integrator `ẋ₁ = x₂, ẋ₂ = u`.
    pub fn double_integrator() -> Self {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DVector::from_column_slice(&[0.0, 1.0]),
        )
        .expect("double integrator is controllable")
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut c = DMatrix::zeros(n, n);
        let mut col = self.b.clone();
        for j in 0..n {
            c.set_column(j, &col);
            col = &self.a * col;
        }
        c
    }

    /// State-feedback gains placing the closed-loop eigenvalues of
    /// `A − bθᵀ` at `poles` (Ackermann's formula). Complex poles must come in
    /// conjugate pairs.
    pub fn place_poles(&self, poles: &[C64]) -> Result<DVector<f64>> {
        let n = self.dim();
        check_dim(n, poles.len())?;
        let mut coeffs = vec![C64::new(1.0, 0.0)];
        for p in poles {
            let mut next = vec![C64::new(0.0, 0.0); coeffs.len() + 1];
            for (i, c) in coeffs.iter().enumerate() {
                next[i] += *c;
                next[i + 1] -= *c * p;
            }
            coeffs = next;
        }
        let scale = poles.iter().map(|p| p.norm()).fold(1.0, f64::max).powi(n as i32);
        if coeffs.iter().any(|c| c.im.abs() > 1e-9 * scale) {
            return Err(Error::InvalidInput("complex poles must come in conjugate pairs".into()));
        }
        // p(A) = A^n + c₁A^{n−1} + … + c_n I by Horner's scheme.
        let mut poly = DMatrix::<f64>::identity(n, n);
        for c in coeffs.iter().skip(1) {
            poly = &self.a * poly + DMatrix::identity(n, n) * c.re;
        }
        let ctrb = self.controllability_matrix();
        let last_row = ctrb
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NumericalDegeneracy("controllability matrix is singular".into()))?
            .row(n - 1)
            .into_owned();
        Ok((last_row * poly).transpose())
    }
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|s| **s > RANK_TOL * top).count()
}

fn spectral_norm(m: &DMatrix<C64>) -> f64 {
    m.clone().svd(false, false).singular_values.iter().copied().fold(0.0, f64::max)
}

/// The closed loop `A_θ = A − bθᵀ` with its eigendecomposition constants.
#[derive(Clone, Debug)]
pub struct ClosedLoop {
    plant: LinearPlant,
    gains: DVector<f64>,
    a_theta: DMatrix<f64>,
    eigenvalues: Vec<C64>,
    eigenvectors: DMatrix<C64>,
    lambda_max: f64,
    zeta: f64,
    unstable: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClosedLoopSummary {
    pub gains: Vec<f64>,
    pub eigenvalues_re: Vec<f64>,
    pub eigenvalues_im: Vec<f64>,
    pub lambda_max: f64,
    pub zeta: f64,
    pub unstable: bool,
}

impl ClosedLoop {
    pub fn new(plant: &LinearPlant, gains: DVector<f64>) -> Result<Self> {
        check_dim(plant.dim(), gains.len())?;
        let a_theta = plant.a() - plant.b() * gains.transpose();
        Self::build(plant.clone(), gains, a_theta)
    }

    /// Analyzes a given closed-loop matrix directly, with zero gains and no
    /// controllability requirement on `(A_θ, b)`.
    pub fn from_matrix(a_theta: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a_theta.nrows() != a_theta.ncols() {
            return Err(Error::InvalidInput("closed-loop matrix must be square".into()));
        }
        check_dim(a_theta.nrows(), b.len())?;
        let n = b.len();
        let plant = LinearPlant { a: a_theta.clone(), b };
        Self::build(plant, DVector::zeros(n), a_theta)
    }

    fn build(plant: LinearPlant, gains: DVector<f64>, a_theta: DMatrix<f64>) -> Result<Self> {
        let n = plant.dim();
        let mut eigenvalues: Vec<C64> = a_theta.clone().complex_eigenvalues().iter().copied().collect();
        eigenvalues.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));

        let radius = eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
        let separation = RANK_TOL * radius.max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in i + 1..n {
                if (eigenvalues[i] - eigenvalues[j]).norm() <= separation {
                    return Err(Error::Unsupported(format!(
                        "repeated closed-loop eigenvalue {} (diagonalization required)",
                        eigenvalues[i]
                    )));
                }
            }
        }

        let a_c = a_theta.map(|v| C64::new(v, 0.0));
        let mut u = DMatrix::<C64>::zeros(n, n);
        for (j, lambda) in eigenvalues.iter().enumerate() {
            let shifted = &a_c - DMatrix::<C64>::identity(n, n) * *lambda;
            let svd = shifted.svd(false, true);
            let v_t = svd.v_t.expect("requested right singular vectors");
            let k = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k)
                .expect("nonempty spectrum");
            let v = v_t.row(k).adjoint();
            let v = &v / C64::new(v.norm(), 0.0);
            u.set_column(j, &v);
        }

        let u_inv = u
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NumericalDegeneracy("eigenvector matrix is singular".into()))?;
        let lambda_diag = DMatrix::from_diagonal(&DVector::from_column_slice(&eigenvalues));
        let rebuilt = &u * lambda_diag * &u_inv;
        let residual = (&rebuilt - &a_c).norm();
        if residual > RANK_TOL * a_c.norm().max(1.0) {
            return Err(Error::NumericalDegeneracy(format!(
                "eigendecomposition residual {residual:e} is too large"
            )));
        }

        let b_c = plant.b().map(|v| C64::new(v, 0.0));
        let zeta = spectral_norm(&u) * (&u_inv * b_c).norm();
        let lambda_max = eigenvalues.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            plant,
            gains,
            a_theta,
            eigenvalues,
            eigenvectors: u,
            lambda_max,
            zeta,
            unstable: lambda_max > 0.0,
        })
    }

    pub fn plant(&self) -> &LinearPlant {
        &self.plant
    }

    pub fn gains(&self) -> &DVector<f64> {
        &self.gains
    }

    pub fn a_theta(&self) -> &DMatrix<f64> {
        &self.a_theta
    }

    pub fn eigenvalues(&self) -> &[C64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<C64> {
        &self.eigenvectors
    }

    /// Largest real part of the closed-loop eigenvalues.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// `‖U‖ ‖U⁻¹b‖` with unit-norm eigenvector columns.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Whether some eigenvalue has a positive real part; bounds are then void.
    pub fn is_unstable(&self) -> bool {
        self.unstable
    }

    /// Initial value `‖U‖ ‖U⁻¹ e(0)‖` of the comparison system.
    pub fn initial_bound(&self, e0: &[f64]) -> Result<f64> {
        check_dim(self.plant.dim(), e0.len())?;
        let e = DVector::from_iterator(e0.len(), e0.iter().map(|v| C64::new(*v, 0.0)));
        let coords = self
            .eigenvectors
            .clone()
            .lu()
            .solve(&e)
            .ok_or_else(|| Error::NumericalDegeneracy("eigenvector matrix is singular".into()))?;
        Ok(spectral_norm(&self.eigenvectors) * coords.norm())
    }

    /// Growth rate `λ_max + L_σ ζ √β` of the comparison system.
    pub fn comparison_rate(&self, stddev_lipschitz: f64, beta: f64) -> f64 {
        self.lambda_max + stddev_lipschitz * self.zeta * beta.sqrt()
    }

    pub fn summary(&self) -> ClosedLoopSummary {
        ClosedLoopSummary {
            gains: self.gains.iter().copied().collect(),
            eigenvalues_re: self.eigenvalues.iter().map(|l| l.re).collect(),
            eigenvalues_im: self.eigenvalues.iter().map(|l| l.im).collect(),
            lambda_max: self.lambda_max,
            zeta: self.zeta,
            unstable: self.unstable,
        }
    }
}

/// Builds the closed loop for the given plant and gains.
pub fn closed_loop(plant: &LinearPlant, gains: DVector<f64>) -> Result<ClosedLoop> {
    ClosedLoop::new(plant, gains)
}

/// `λ_max + L_σ ζ √β < 0`: the comparison system is exponentially stable.
pub fn gain_condition(lp: &ClosedLoop, stddev_lipschitz: f64, beta: f64) -> bool {
    lp.comparison_rate(stddev_lipschitz, beta) < 0.0
}

/// Integrates `υ̇ = (λ_max + L_σζ√β) υ + ζ η_ref(t)` from `υ(0) = υ0` with
/// classical RK4, returning samples at multiples of `dt` up to `horizon`.
pub fn tracking_bound_ode(
    lp: &ClosedLoop,
    eta_ref: impl Fn(f64) -> f64,
    stddev_lipschitz: f64,
    beta: f64,
    upsilon0: f64,
    horizon: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    let rate = lp.comparison_rate(stddev_lipschitz, beta);
    let zeta = lp.zeta;
    let traj = integrate(
        |t, v: &[f64], dv: &mut [f64]| dv[0] = rate * v[0] + zeta * eta_ref(t),
        &[upsilon0],
        horizon,
        dt,
    )?;
    Ok(traj.states.into_iter().map(|s| s[0]).collect())
}

/// Supremum bound `−ζ sup η / (λ_max + L_σζ√β)` for a zero initial error.
pub fn max_tracking_bound(lp: &ClosedLoop, sup_eta: f64, stddev_lipschitz: f64, beta: f64) -> Result<f64> {
    let rate = lp.comparison_rate(stddev_lipschitz, beta);
    if rate >= 0.0 {
        return Err(Error::Infeasible(format!(
            "gain condition fails: λ_max + L_σζ√β = {rate:e} ≥ 0"
        )));
    }
    Ok(-lp.zeta * sup_eta / rate)
}

/// `κ = −2ζ√β / (λ_max + L_σζ√β)`.
pub fn kappa(lp: &ClosedLoop, stddev_lipschitz: f64, beta: f64) -> Result<f64> {
    kappa_from(lp.lambda_max, lp.zeta, stddev_lipschitz, beta)
}

pub fn kappa_from(lambda_max: f64, zeta: f64, stddev_lipschitz: f64, beta: f64) -> Result<f64> {
    let rate = lambda_max + stddev_lipschitz * zeta * beta.sqrt();
    if rate >= 0.0 {
        return Err(Error::Infeasible(format!(
            "gain condition fails: λ_max + L_σζ√β = {rate:e} ≥ 0"
        )));
    }
    Ok(-2.0 * zeta * beta.sqrt() / rate)
}

/// The `λ_max` that yields a prescribed `κ`.
pub fn lambda_max_for_kappa(target_kappa: f64, zeta: f64, stddev_lipschitz: f64, beta: f64) -> f64 {
    let sb = zeta * beta.sqrt();
    -2.0 * sb / target_kappa - stddev_lipschitz * sb
}

/// Largest `τ` with `β(τ) ≥ γ²(τ) ρ̲ k(0) / 2`, searched over `[1e−12, r]`.
pub fn tau_for_density(
    model: &GpModel,
    min_density: f64,
    domain: &DomainBox,
    delta: f64,
    f_lipschitz: f64,
    kernel_lipschitz: f64,
) -> Result<f64> {
    if !(min_density >= 0.0) {
        return Err(Error::InvalidInput(format!("density must be nonnegative, got {min_density}")));
    }
    let kernel = model.kernel();
    let k0 = kernel.signal_variance();
    let l_sigma = kernel.stddev_lipschitz().ok();
    let l_mu = mean_lipschitz(model, kernel_lipschitz);
    largest_feasible_tau(
        |tau| {
            let b = beta(tau, delta, domain);
            let g = gamma(tau, l_mu, f_lipschitz, b, stddev_modulus(tau, kernel_lipschitz, l_sigma));
            b >= g * g * min_density * k0 / 2.0
        },
        1e-12,
        domain.edge(),
    )
}

/// Required `−λ_max` for tracking within `ē` without compensation, given a
/// bound `f̄` on the nonlinearity.
pub fn baseline_gain(zeta: f64, f_bound: f64, target_error: f64) -> f64 {
    zeta * f_bound / target_error
}

/// Maximum of `f` on the grid `0, dt, 2dt, …, period`.
pub fn sup_on_grid(f: impl Fn(f64) -> f64, period: f64, dt: f64) -> f64 {
    let steps = (period / dt).round() as usize;
    (0..=steps).map(|i| f(i as f64 * dt)).fold(f64::NEG_INFINITY, f64::max)
}
