//! Fixed-step simulation of the feedback-linearized benchmark, reference
//! generation and prior sampling.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gp::{GpModel, TrainingSet};
use crate::kernels::KernelSpec;
use crate::tracking::{ClosedLoop, LinearPlant};

/// Jitter added to prior Gram matrices before factorization.
pub const PRIOR_JITTER: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("step size must be positive, got {dt}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!("horizon must be nonnegative, got {horizon}")));
    }
    Ok((horizon / dt + 1e-9).floor() as usize)
}

/// One classical Runge–Kutta step.
pub fn rk4_step(f: &mut impl FnMut(f64, &[f64], &mut [f64]), t: f64, x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    f(t, x, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    f(t + 0.5 * dt, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    f(t + 0.5 * dt, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    f(t + dt, &tmp, &mut k4);
    (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Integrates `ẋ = f(t, x)` with fixed-step RK4 on `0, dt, …, ⌊T/dt⌋dt`.
pub fn integrate(
    mut f: impl FnMut(f64, &[f64], &mut [f64]),
    x0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    let steps = step_count(horizon, dt)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x0.to_vec());
    for k in 0..steps {
        let t = k as f64 * dt;
        let next = rk4_step(&mut f, t, &states[k], dt);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t + dt });
        }
        times.push((k + 1) as f64 * dt);
        states.push(next);
    }
    Ok(Trajectory { times, states })
}

pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `ẋ = A x + b (f(x) + g(x) u)` with unknown `f` and known `g`.
#[derive(Clone)]
pub struct ControlAffineSystem {
    pub plant: LinearPlant,
    pub nonlinearity: ScalarField,
    pub input_gain: ScalarField,
}

impl std::fmt::Debug for ControlAffineSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlAffineSystem").field("plant", &self.plant).finish_non_exhaustive()
    }
}

pub fn benchmark_nonlinearity(x: &[f64]) -> f64 {
    1.0 - (2.0 * x[0]).sin() + 1.0 / (1.0 + (-x[1]).exp())
}

pub fn benchmark_input_gain(x: &[f64]) -> f64 {
    1.0 + 0.5 * (0.5 * x[1]).sin()
}

/// The two-state benchmark: a double integrator whose acceleration channel
/// carries `f(x) = 1 − sin 2x₁ + 1/(1 + e^{−x₂})` and input gain
/// `g(x) = 1 + ½ sin(x₂/2)`.
pub fn benchmark_system() -> ControlAffineSystem {
    ControlAffineSystem {
        plant: LinearPlant::double_integrator(),
        nonlinearity: Arc::new(benchmark_nonlinearity),
        input_gain: Arc::new(benchmark_input_gain),
    }
}

/// Gains of the benchmark controller `u_lin = −θ₁θ₂x₁ − θ₂x₂`.
pub fn benchmark_gains(theta1: f64, theta2: f64) -> DVector<f64> {
    DVector::from_column_slice(&[theta1 * theta2, theta2])
}

/// Sinusoidal reference for the double integrator:
/// `x_ref = [a sin ωt, aω cos ωt]`, `r_ref = −aω² sin ωt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub amplitude: f64,
    /// Angular frequency in rad/s.
    pub frequency: f64,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self {
            amplitude: 2.0,
            frequency: 1.0,
        }
    }
}

impl ReferenceSpec {
    pub fn period(&self) -> f64 {
        2.0 * PI / self.frequency
    }

    pub fn max_speed(&self) -> f64 {
        let (a, w) = (self.amplitude.abs(), self.frequency.abs());
        a * w * 1f64.max(w)
    }
}

pub fn reference(spec: &ReferenceSpec, t: f64) -> ([f64; 2], f64) {
    let (a, w) = (spec.amplitude, spec.frequency);
    let (s, c) = (w * t).sin_cos();
    ([a * s, a * w * c], -a * w * w * s)
}

/// Outcome of one closed-loop roll-out at the recording step.
#[derive(Clone, Debug)]
pub struct SimRun {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub references: Vec<Vec<f64>>,
    pub controls: Vec<f64>,
    pub error_norms: Vec<f64>,
    pub measurements: TrainingSet,
    pub seed: u64,
}

impl SimRun {
    pub fn max_error(&self) -> f64 {
        self.error_norms.iter().copied().fold(0.0, f64::max)
    }

    /// CSV with columns `t, x_1..x_d, xref_1..xref_d, u, e_norm`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let d = self.states.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        header.extend((1..=d).map(|i| format!("xref_{i}")));
        header.push("u".into());
        header.push("e_norm".into());
        w.write_record(&header)?;
        for k in 0..self.times.len() {
            let mut row = vec![self.times[k].to_string()];
            row.extend(self.states[k].iter().map(f64::to_string));
            row.extend(self.references[k].iter().map(f64::to_string));
            row.push(self.controls[k].to_string());
            row.push(self.error_norms[k].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Applied input `(−θᵀ(x − x_ref) + r_ref − μ(x)) / g(x)`.
fn control(system: &ControlAffineSystem, lp: &ClosedLoop, model: &GpModel, x: &[f64], x_ref: &[f64], r_ref: f64) -> Result<f64> {
    let feedback: f64 = lp.gains().iter().zip(x.iter().zip(x_ref)).map(|(g, (a, b))| g * (a - b)).sum();
    let g = (system.input_gain)(x);
    debug_assert!(g.abs() > 1e-12, "input gain vanished");
    Ok((-feedback + r_ref - model.predict_mean(x)?) / g)
}

/// Simulates the compensated loop from `x(0) = x_ref(0)` for `horizon`
/// seconds at `fine_dt`, recording noisy measurements of the nonlinearity at
/// every grid time. The noise level is the model's.
pub fn run_closed_loop(
    system: &ControlAffineSystem,
    lp: &ClosedLoop,
    model: &GpModel,
    spec: &ReferenceSpec,
    horizon: f64,
    fine_dt: f64,
    seed: u64,
) -> Result<SimRun> {
    let d = system.plant.dim();
    check_dim(2, d)?;
    check_dim(d, model.kernel().dim())?;
    let a = system.plant.a().clone();
    let b = system.plant.b().clone();
    let mut failure: Option<Error> = None;
    let field = |t: f64, x: &[f64], dx: &mut [f64]| {
        let (xr, rr) = reference(spec, t);
        let u = match control(system, lp, model, x, &xr, rr) {
            Ok(u) => u,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        };
        let drive = (system.nonlinearity)(x) + (system.input_gain)(x) * u;
        for i in 0..d {
            dx[i] = (0..d).map(|j| a[(i, j)] * x[j]).sum::<f64>() + b[i] * drive;
        }
    };
    let (x0, _) = reference(spec, 0.0);
    let traj = integrate(field, &x0, horizon, fine_dt)?;
    if let Some(e) = failure {
        return Err(e);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, model.noise_variance().sqrt())
        .map_err(|e| Error::InvalidInput(format!("noise distribution: {e}")))?;
    let mut measurements = TrainingSet::empty(d, model.noise_variance())?;
    let mut references = Vec::with_capacity(traj.times.len());
    let mut controls = Vec::with_capacity(traj.times.len());
    let mut error_norms = Vec::with_capacity(traj.times.len());
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let (xr, rr) = reference(spec, *t);
        controls.push(control(system, lp, model, x, &xr, rr)?);
        error_norms.push(x.iter().zip(&xr).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
        references.push(xr.to_vec());
        measurements.push(x.clone(), (system.nonlinearity)(x) + noise.sample(&mut rng))?;
    }
    Ok(SimRun {
        times: traj.times,
        states: traj.states,
        references,
        controls,
        error_norms,
        measurements,
        seed,
    })
}

/// Draws joint Gaussian samples of the prior on a fixed grid.
pub struct PriorSampler {
    factor: DMatrix<f64>,
}

impl PriorSampler {
    pub fn new(kernel: &KernelSpec, grid: &[Vec<f64>]) -> Result<Self> {
        for p in grid {
            check_dim(kernel.dim(), p.len())?;
        }
        let mut gram = kernel.gram(grid, grid);
        for i in 0..grid.len() {
            gram[(i, i)] += PRIOR_JITTER;
        }
        let chol = Cholesky::new(gram).ok_or_else(|| {
            Error::NumericalDegeneracy("prior Gram matrix is not positive definite after jitter".into())
        })?;
        Ok(Self { factor: chol.unpack() })
    }

    pub fn len(&self) -> usize {
        self.factor.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn draw(&self, rng: &mut impl rand::Rng) -> Vec<f64> {
        let z = DVector::from_fn(self.len(), |_, _| StandardNormal.sample(rng));
        (&self.factor * z).iter().copied().collect()
    }
}

/// One prior draw on `grid` from a generator seeded with `seed`.
pub fn sample_prior_function(kernel: &KernelSpec, grid: &[Vec<f64>], seed: u64) -> Result<Vec<f64>> {
    let sampler = PriorSampler::new(kernel, grid)?;
    Ok(sampler.draw(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Regular grid with `counts[i]` points over `[lo_i, hi_i]`, first axis
/// varying slowest.
pub fn regular_grid(lo: &[f64], hi: &[f64], counts: &[usize]) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = lo
        .iter()
        .zip(hi)
        .zip(counts)
        .map(|((a, b), &n)| {
            if n == 1 {
                vec![0.5 * (a + b)]
            } else {
                (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
            }
        })
        .collect();
    let mut points = vec![Vec::new()];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    points
}
