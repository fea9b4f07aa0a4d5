//! Kernel-based data density and the posterior-variance bounds it drives.
//!
//! A training input `x'` belongs to the neighbourhood of `x` at level `ρ'` when
//! `k²(x,x) ≤ k²(x',x') ≤ 1/ρ' + k²(x',x)`. The density `ρ(x)` is the largest
//! level whose neighbourhood still holds at least `ρ' σ_on² k(x,x)` points.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gp::GpModel;
use crate::kernels::{KernelFamily, KernelSpec};

/// Which constraint is active at the density optimum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    /// The neighbourhood size limits `ρ`.
    Cardinality,
    /// A point leaving the neighbourhood limits `ρ`.
    Threshold,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityResult {
    pub rho: f64,
    pub subset_indices: Vec<usize>,
    pub binding: Binding,
}

/// Per-point kernel values needed by the membership test.
struct Neighbourhood {
    prior_sq: f64,
    self_sq: Vec<f64>,
    cross_sq: Vec<f64>,
}

impl Neighbourhood {
    fn new(model: &GpModel, x: &[f64]) -> Result<Self> {
        let kernel = model.kernel();
        check_dim(kernel.dim(), x.len())?;
        let inputs = model.data().inputs();
        let prior = kernel.eval_unchecked(x, x);
        Ok(Self {
            prior_sq: prior * prior,
            self_sq: inputs.iter().map(|xn| kernel.eval_unchecked(xn, xn).powi(2)).collect(),
            cross_sq: inputs.iter().map(|xn| kernel.eval_unchecked(xn, x).powi(2)).collect(),
        })
    }

    fn eligible(&self, j: usize) -> bool {
        self.prior_sq <= self.self_sq[j]
    }

    fn member(&self, j: usize, level: f64) -> bool {
        self.eligible(j) && self.self_sq[j] <= 1.0 / level + self.cross_sq[j]
    }

    fn members(&self, level: f64) -> Vec<usize> {
        (0..self.self_sq.len()).filter(|&j| self.member(j, level)).collect()
    }

    /// Largest level at which point `j` stays in the neighbourhood.
    fn exit_level(&self, j: usize) -> f64 {
        let gap = self.self_sq[j] - self.cross_sq[j];
        if gap <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / gap
        }
    }
}

/// Indices of training inputs in the neighbourhood of `x` at level `ρ'`.
pub fn kernel_subset(model: &GpModel, x: &[f64], level: f64) -> Result<Vec<usize>> {
    if !(level > 0.0) {
        return Err(Error::InvalidInput(format!("density level must be positive, got {level}")));
    }
    Ok(Neighbourhood::new(model, x)?.members(level))
}

/// Data density `ρ(x)` from the exact breakpoints of the neighbourhood size.
pub fn data_density(model: &GpModel, x: &[f64]) -> Result<DensityResult> {
    let hood = Neighbourhood::new(model, x)?;
    let prior = model.kernel().eval_unchecked(x, x);
    if prior <= 0.0 {
        return Err(Error::NumericalDegeneracy(
            "density is undefined where the prior variance vanishes".into(),
        ));
    }
    let slope = model.noise_variance() * prior;

    let mut levels: Vec<f64> = (0..hood.self_sq.len())
        .filter(|&j| hood.eligible(j))
        .map(|j| hood.exit_level(j))
        .collect();
    levels.sort_by(|a, b| b.total_cmp(a));

    let mut rho = 0.0;
    let mut binding = Binding::Cardinality;
    for (i, &level) in levels.iter().enumerate() {
        let by_count = (i + 1) as f64 / slope;
        let (candidate, kind) = if by_count <= level {
            (by_count, Binding::Cardinality)
        } else {
            (level, Binding::Threshold)
        };
        if candidate > rho {
            rho = candidate;
            binding = kind;
        }
    }
    if rho == 0.0 {
        return Ok(DensityResult {
            rho,
            subset_indices: Vec::new(),
            binding,
        });
    }

    // Membership at a threshold level can flip under round-off; step down by
    // a few ulps until the verbatim test agrees with the breakpoint count.
    let mut subset = hood.members(rho);
    for _ in 0..64 {
        if subset.len() as f64 >= rho * slope * (1.0 - 1e-12) {
            break;
        }
        rho = rho * (1.0 - 4.0 * f64::EPSILON);
        subset = hood.members(rho);
    }
    Ok(DensityResult {
        rho,
        subset_indices: subset,
        binding,
    })
}

/// General posterior-variance bound evaluated on `subset` (all data when `None`).
pub fn variance_bound_general(model: &GpModel, x: &[f64], subset: Option<&[usize]>) -> Result<f64> {
    let kernel = model.kernel();
    check_dim(kernel.dim(), x.len())?;
    let inputs = model.data().inputs();
    let all: Vec<usize>;
    let indices = match subset {
        Some(s) => s,
        None => {
            all = (0..inputs.len()).collect();
            &all
        }
    };
    if let Some(&bad) = indices.iter().find(|&&i| i >= inputs.len()) {
        return Err(Error::InvalidInput(format!("subset index {bad} out of range")));
    }
    let prior = kernel.eval_unchecked(x, x);
    if indices.is_empty() {
        return Ok(prior);
    }
    let n = indices.len() as f64;
    let noise = model.noise_variance();
    let max_self = indices
        .iter()
        .map(|&i| kernel.eval_unchecked(&inputs[i], &inputs[i]))
        .fold(f64::NEG_INFINITY, f64::max);
    let min_cross_sq = indices
        .iter()
        .map(|&i| kernel.eval_unchecked(&inputs[i], x).powi(2))
        .fold(f64::INFINITY, f64::min);
    let spread = prior * max_self - min_cross_sq;
    Ok((noise * prior + n * spread) / (n * max_self + noise))
}

/// Variance bound for stationary kernels over the full data set.
pub fn variance_bound_stationary(model: &GpModel, x: &[f64]) -> Result<f64> {
    let kernel = model.kernel();
    check_dim(kernel.dim(), x.len())?;
    if !kernel.is_stationary() {
        return Err(Error::Unsupported("stationary variance bound needs a stationary kernel".into()));
    }
    let k0 = kernel.signal_variance();
    let inputs = model.data().inputs();
    if inputs.is_empty() {
        return Ok(k0);
    }
    let min_sq = inputs
        .iter()
        .map(|xn| kernel.eval_unchecked(x, xn).powi(2))
        .fold(f64::INFINITY, f64::min);
    Ok(k0 - min_sq / (k0 + model.noise_variance() / inputs.len() as f64))
}

/// Density-driven bound on the posterior standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityStddevBound {
    pub rho: f64,
    /// `sqrt(2 / (ρ k(x,x)))`, or `+∞` when the density is zero.
    pub stddev_bound: f64,
    pub unbounded: bool,
}

/// `σ(x) ≤ sqrt(2 / (ρ(x) k(x,x)))`, verified against the exact posterior.
pub fn density_variance_bound(model: &GpModel, x: &[f64]) -> Result<DensityStddevBound> {
    let density = data_density(model, x)?;
    let prior = model.kernel().eval_unchecked(x, x);
    if density.rho <= 0.0 {
        return Ok(DensityStddevBound {
            rho: 0.0,
            stddev_bound: f64::INFINITY,
            unbounded: true,
        });
    }
    let bound = (2.0 / (density.rho * prior)).sqrt();
    let exact = model.predict_stddev(x)?;
    if exact > bound + 1e-9 {
        return Err(Error::BoundViolated(format!(
            "posterior stddev {exact:e} exceeds density bound {bound:e}"
        )));
    }
    Ok(DensityStddevBound {
        rho: density.rho,
        stddev_bound: bound,
        unbounded: false,
    })
}

/// Radius of a Euclidean ball around `x` whose training inputs all lie in
/// the neighbourhood at level `ρ'`.
pub fn geometric_ball_radius(kernel: &KernelSpec, level: f64) -> Result<f64> {
    if !matches!(
        kernel.family(),
        KernelFamily::SquaredExponential | KernelFamily::Matern32 | KernelFamily::Matern52
    ) {
        return Err(Error::Unsupported(format!(
            "ball inner set is not available for the {} kernel",
            kernel.family().name()
        )));
    }
    if !(level > 0.0) {
        return Err(Error::InvalidInput(format!("density level must be positive, got {level}")));
    }
    let l_dk = kernel.gradient_lipschitz()?;
    Ok((1.0 / (2.0 * l_dk * kernel.signal_variance() * level)).sqrt())
}

/// Inner set of the neighbourhood for the unit linear kernel `k(x,x') = xᵀx'`:
/// aligned inputs at least as long as `x` whose squared length is not too
/// large. The alignment factor enters squared in the length condition.
pub fn geometric_subset_linear(x: &[f64], data: &[Vec<f64>], level: f64, alignment: f64) -> Result<Vec<usize>> {
    if !(alignment > 0.0 && alignment < 1.0) {
        return Err(Error::InvalidInput(format!("alignment must lie in (0, 1), got {alignment}")));
    }
    if !(level > 0.0) {
        return Err(Error::InvalidInput(format!("density level must be positive, got {level}")));
    }
    let norm_sq = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    let nx2 = norm_sq(x);
    let mut out = Vec::new();
    for (j, xp) in data.iter().enumerate() {
        check_dim(x.len(), xp.len())?;
        let np2 = norm_sq(xp);
        let dot: f64 = x.iter().zip(xp).map(|(a, b)| a * b).sum();
        let length_ok = np2 * (np2 - alignment * alignment * nx2) <= 1.0 / level;
        let longer = nx2 <= np2;
        let aligned = dot.abs() >= alignment * (nx2 * np2).sqrt();
        if length_ok && longer && aligned {
            out.push(j);
        }
    }
    Ok(out)
}
