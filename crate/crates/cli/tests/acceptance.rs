//! Acceptance checks for the library and the experiment runner. Prints one
//! PASS/FAIL line per criterion and exits nonzero when a criterion fails
//! that is not listed in `KNOWN_UNATTAINABLE`.
//!
//! Every check recomputes its reference values independently of the library:
//! kernels from their closed forms, the posterior from a dense Cholesky
//! solve, constants from their formulas and the density by brute force.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gptrack::density::{data_density, variance_bound_general, variance_bound_stationary};
use gptrack::episodic::{episode_count_bound, min_sampling_time};
use gptrack::error_bounds::{
    beta, covering_number_bound, expected_sup_bound, gamma, mean_lipschitz, sample_sup_bound, stddev_modulus,
};
use gptrack::simulation::{benchmark_gains, integrate, PriorSampler};
use gptrack::tracking::{closed_loop, kappa_from, max_tracking_bound, tracking_bound_ode, ClosedLoop, LinearPlant};
use gptrack::{BoundParams, DomainBox, GpModel, KernelFamily, KernelSpec, TrainingSet, UniformBound};
use gptrack_cli::{run, ExperimentConfig};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

/// Criteria expected to fail, with the reason printed next to the FAIL line.
const KNOWN_UNATTAINABLE: &[(u8, &str)] = &[(
    8,
    "six quoted example values carry arithmetic slips (beta, metric, two-point mean Lipschitz, \
     gamma and the two eta compositions); the library matches the closed forms instead",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn pass_if(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let workspace = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let scratch = tempfile::tempdir().expect("scratch directory");
    let ctx = Ctx {
        configs: workspace.join("configs"),
        scratch: scratch.path().to_path_buf(),
    };

    let criteria: [(u8, &str, fn(&Ctx) -> Outcome); 9] = [
        (1, "uniform bound coverage", crit_coverage),
        (2, "probabilistic Lipschitz constant", crit_lipschitz),
        (3, "variance bound dominance", crit_variance_bounds),
        (4, "density against brute force", crit_density),
        (5, "tracking certificate", crit_tracking),
        (6, "bound slope against density", crit_slope),
        (7, "episodic decay", crit_episodic),
        (8, "closed-form examples", crit_closed_forms),
        (9, "determinism", crit_determinism),
    ];

    let mut unexpected = Vec::new();
    for (id, name, check) in criteria {
        let start = Instant::now();
        let outcome = check(&ctx);
        let secs = start.elapsed().as_secs_f64();
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id}: {name} ({secs:.1}s) {}", outcome.detail);
        if !outcome.pass {
            match KNOWN_UNATTAINABLE.iter().find(|(k, _)| *k == id) {
                Some((_, why)) => println!("       known unattainable: {why}"),
                None => unexpected.push(id),
            }
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: no unexpected failures");
    } else {
        println!("acceptance: unexpected failures in criteria {unexpected:?}");
        std::process::exit(1);
    }
}

struct Ctx {
    configs: PathBuf,
    scratch: PathBuf,
}

impl Ctx {
    fn config(&self, name: &str, out: &str) -> ExperimentConfig {
        let mut c = ExperimentConfig::load(&self.configs.join(name)).expect("shipped config loads");
        c.output = self.scratch.join(out);
        c
    }
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut reader = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("missing column {name}"))
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = x.iter().zip(y).map(|(a, b)| (a.ln(), b.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

// ---------------------------------------------------------------- oracles

#[derive(Clone, Debug)]
struct Kern {
    family: KernelFamily,
    s2: f64,
    ls: Vec<f64>,
}

impl Kern {
    fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        if self.family == KernelFamily::Linear {
            return self.s2 * a.iter().zip(b).zip(&self.ls).map(|((p, q), l)| p * q / (l * l)).sum::<f64>();
        }
        let r = a
            .iter()
            .zip(b)
            .zip(&self.ls)
            .map(|((p, q), l)| ((p - q) / l).powi(2))
            .sum::<f64>()
            .sqrt();
        let s3 = 3f64.sqrt() * r;
        let s5 = 5f64.sqrt() * r;
        self.s2
            * match self.family {
                KernelFamily::SquaredExponential => (-0.5 * r * r).exp(),
                KernelFamily::Matern32 => (1.0 + s3) * (-s3).exp(),
                KernelFamily::Matern52 => (1.0 + s5 + 5.0 * r * r / 3.0) * (-s5).exp(),
                KernelFamily::Linear => unreachable!(),
            }
    }

    fn spec(&self) -> KernelSpec {
        KernelSpec::new(self.family, self.s2, self.ls.clone()).unwrap()
    }
}

/// Dense posterior from a hand-rolled Cholesky factor of `K + σ²I`.
struct NaiveGp {
    kern: Kern,
    xs: Vec<Vec<f64>>,
    chol: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

impl NaiveGp {
    fn new(kern: Kern, xs: Vec<Vec<f64>>, ys: &[f64], noise: f64) -> Self {
        let n = xs.len();
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = kern.k(&xs[i], &xs[j]) + if i == j { noise } else { 0.0 };
                for m in 0..j {
                    s -= l[i][m] * l[j][m];
                }
                l[i][j] = if i == j { s.sqrt() } else { s / l[j][j] };
            }
        }
        let mut gp = Self {
            kern,
            xs,
            chol: l,
            alpha: Vec::new(),
        };
        let z = gp.forward(ys);
        gp.alpha = gp.backward(&z);
        gp
    }

    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut z = vec![0.0; n];
        for i in 0..n {
            let s: f64 = (0..i).map(|m| self.chol[i][m] * z[m]).sum();
            z[i] = (b[i] - s) / self.chol[i][i];
        }
        z
    }

    fn backward(&self, z: &[f64]) -> Vec<f64> {
        let n = z.len();
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|m| self.chol[m][i] * x[m]).sum();
            x[i] = (z[i] - s) / self.chol[i][i];
        }
        x
    }

    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let kx: Vec<f64> = self.xs.iter().map(|p| self.kern.k(p, x)).collect();
        let mean = kx.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = self.forward(&kx);
        let var = self.kern.k(x, x) - v.iter().map(|a| a * a).sum::<f64>();
        (mean, var)
    }
}

fn grid_2d(lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
    let h = (hi - lo) / (n - 1) as f64;
    let mut g = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            g.push(vec![lo + i as f64 * h, lo + j as f64 * h]);
        }
    }
    g
}

/// Largest finite-difference slope on an `n × n` row-major grid, the two
/// axis maxima combined in the Euclidean norm.
fn slope_2d(values: &[f64], n: usize, h: f64) -> f64 {
    let mut ax = [0.0f64; 2];
    for i in 0..n {
        for j in 0..n {
            let v = values[i * n + j];
            if i + 1 < n {
                ax[0] = ax[0].max((values[(i + 1) * n + j] - v).abs() / h);
            }
            if j + 1 < n {
                ax[1] = ax[1].max((values[i * n + j + 1] - v).abs() / h);
            }
        }
    }
    (ax[0] * ax[0] + ax[1] * ax[1]).sqrt()
}

// ------------------------------------------------------------- criterion 1

fn crit_coverage(ctx: &Ctx) -> Outcome {
    let config = ctx.config("validate_bounds.toml", "validate_bounds");
    let start = Instant::now();
    let outcome = run(&config).expect("validate_bounds runs");
    let runtime = start.elapsed().as_secs_f64();
    let r = &outcome.summary["results"];
    let lib_cov = r["coverage"].as_f64().unwrap();
    let trials = r["trials"].as_u64().unwrap();

    // Independent replication: same prior draws, own posterior and constants.
    let (n_grid, n_train, noise, tau, delta, edge, d): (usize, usize, f64, f64, f64, f64, f64) = (41, 25, 0.01, 0.01, 0.01, 10.0, 2.0);
    let kern = Kern {
        family: KernelFamily::SquaredExponential,
        s2: 1.0,
        ls: vec![2.0, 2.0],
    };
    let grid = grid_2d(-5.0, 5.0, n_grid);
    let h = 10.0 / (n_grid - 1) as f64;
    let sampler = PriorSampler::new(&kern.spec(), &grid).unwrap();
    let l_k = kern.s2 * (-0.5f64).exp() / 2.0;
    let l_sigma = kern.s2.sqrt() / 2.0;
    let m = (edge * d.sqrt() / (2.0 * tau)).powf(d);
    let b = 2.0 * (m.ln() - delta.ln());
    let omega = (2.0 * l_k * tau).sqrt().min(l_sigma * tau);
    let normal = Normal::new(0.0, noise.sqrt()).unwrap();
    let oracle_trials = 200;
    let mut covered = 0;
    let mut worst = 0.0f64;
    for trial in 0..oracle_trials {
        let mut rng = ChaCha8Rng::seed_from_u64(9_000 + trial);
        let f = sampler.draw(&mut rng);
        let picks = sample(&mut rng, grid.len(), n_train).into_vec();
        let xs: Vec<Vec<f64>> = picks.iter().map(|&i| grid[i].clone()).collect();
        let ys: Vec<f64> = picks.iter().map(|&i| f[i] + normal.sample(&mut rng)).collect();
        let gp = NaiveGp::new(kern.clone(), xs, &ys, noise);
        let l_f = slope_2d(&f, n_grid, h);
        let l_mu = l_k * (n_train as f64).sqrt() * gp.alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
        let g = (l_mu + l_f) * tau + b.sqrt() * omega;
        let mut ok = true;
        for (x, &truth) in grid.iter().zip(&f) {
            let (mean, var) = gp.predict(x);
            let eta = b.sqrt() * var.max(0.0).sqrt() + g;
            let ratio = (truth - mean).abs() / eta;
            worst = worst.max(ratio);
            ok &= ratio <= 1.0;
        }
        covered += usize::from(ok);
    }
    let oracle_cov = covered as f64 / oracle_trials as f64;
    pass_if(
        trials == 200 && lib_cov >= 0.99 && oracle_cov >= 0.99 && runtime <= 300.0,
        format!(
            "runner coverage {lib_cov:.3} over {trials} draws in {runtime:.1}s; independent replication \
             {oracle_cov:.3} (max |f-mu|/eta {worst:.3}); required >= 0.99"
        ),
    )
}

// ------------------------------------------------------------- criterion 2

fn crit_lipschitz(ctx: &Ctx) -> Outcome {
    let config = ctx.config("validate_lipschitz.toml", "validate_lipschitz");
    let start = Instant::now();
    let outcome = run(&config).expect("validate_lipschitz runs");
    let runtime = start.elapsed().as_secs_f64();
    let r = &outcome.summary["results"];
    let lib_lhat = r["L_hat"].as_f64().unwrap();
    let lib_frac = r["fraction_within"].as_f64().unwrap();

    // SE unit kernel on [-5, 5]: derivative stddev 1, derivative-kernel
    // Lipschitz constant max |u^3 - 3u| e^{-u^2/2} attained at u^2 = 3 - sqrt 6.
    let (edge, delta_l, d): (f64, f64, f64) = (10.0, 0.01, 1.0);
    let u = (3.0 - 6f64.sqrt()).sqrt();
    let l_dk = (u.powi(3) - 3.0 * u).abs() * (-0.5 * u * u).exp();
    let per_axis = delta_l / (2.0 * d);
    let sup = (2.0 * (1.0 / per_axis).ln()).sqrt() + 12.0 * (6.0 * d).sqrt() * 1f64.max((edge * l_dk).sqrt());
    let oracle_lhat = sup;

    let n = 501;
    let h = 10.0 / (n - 1) as f64;
    let grid: Vec<Vec<f64>> = (0..n).map(|i| vec![-5.0 + i as f64 * h]).collect();
    let sampler = PriorSampler::new(&KernelSpec::squared_exponential(1.0, vec![1.0]).unwrap(), &grid).unwrap();
    let draws = 500;
    let mut within = 0;
    let mut max_slope = 0.0f64;
    for trial in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(7_000 + trial);
        let f = sampler.draw(&mut rng);
        let s = f.windows(2).map(|w| (w[1] - w[0]).abs() / h).fold(0.0, f64::max);
        max_slope = max_slope.max(s);
        within += usize::from(s <= oracle_lhat);
    }
    let frac = within as f64 / draws as f64;
    let lhat_ok = ((lib_lhat - oracle_lhat) / oracle_lhat).abs() <= 1e-6;
    pass_if(
        lhat_ok && lib_frac >= 0.99 && frac >= 0.99 && runtime <= 120.0,
        format!(
            "L_hat {lib_lhat:.6} (closed form {oracle_lhat:.6}); runner fraction {lib_frac:.3}, independent \
             draws {frac:.3} (max slope {max_slope:.3}) in {runtime:.1}s; required >= 0.99"
        ),
    )
}

// --------------------------------------------------------- criteria 3 and 4

struct Instance {
    kern: Kern,
    noise: f64,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    x: Vec<f64>,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let families = [
        KernelFamily::SquaredExponential,
        KernelFamily::Matern32,
        KernelFamily::Matern52,
        KernelFamily::Linear,
    ];
    let family = families[rng.random_range(0..4)];
    let dim = rng.random_range(1..=3);
    let kern = Kern {
        family,
        s2: rng.random_range(0.5..2.0),
        ls: (0..dim).map(|_| rng.random_range(0.3..2.0)).collect(),
    };
    let noise = 10f64.powf(rng.random_range(-3.0..-0.3));
    let x: Vec<f64> = loop {
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if p.iter().map(|v| v * v).sum::<f64>() >= 0.04 {
            break p;
        }
    };
    let n = rng.random_range(1..=20);
    let spread = 10f64.powf(rng.random_range(-2.0..0.0));
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            if rng.random_bool(0.6) {
                x.iter().map(|v| v + spread * rng.random_range(-1.0..1.0)).collect()
            } else {
                (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()
            }
        })
        .collect();
    let ys = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Instance { kern, noise, xs, ys, x }
}

fn library_model(inst: &Instance) -> GpModel {
    let data = TrainingSet::new(inst.x.len(), inst.xs.clone(), inst.ys.clone(), inst.noise).unwrap();
    GpModel::fit(inst.kern.spec(), data).unwrap()
}

fn crit_variance_bounds(_: &Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let slack = 1e-9;
    let (mut general, mut subset, mut stationary, mut density) = (0, 0, 0, 0);
    let (mut n_stationary, mut n_density) = (0, 0);
    for _ in 0..1000 {
        let inst = random_instance(&mut rng);
        let gp = NaiveGp::new(inst.kern.clone(), inst.xs.clone(), &inst.ys, inst.noise);
        let var = gp.predict(&inst.x).1.max(0.0);
        let model = library_model(&inst);
        general += usize::from(var > variance_bound_general(&model, &inst.x, None).unwrap() + slack);
        if inst.kern.family.is_stationary() {
            n_stationary += 1;
            stationary += usize::from(var > variance_bound_stationary(&model, &inst.x).unwrap() + slack);
        }
        let dens = data_density(&model, &inst.x).unwrap();
        if dens.rho > 0.0 {
            n_density += 1;
            subset += usize::from(var > variance_bound_general(&model, &inst.x, Some(&dens.subset_indices)).unwrap() + slack);
            let prior = inst.kern.k(&inst.x, &inst.x);
            density += usize::from(var.sqrt() > (2.0 / (dens.rho * prior)).sqrt() + slack);
        }
    }
    let total = general + subset + stationary + density;
    pass_if(
        total == 0,
        format!(
            "1000 instances: general bound {general} violations, on density subset {subset}/{n_density}, \
             stationary {stationary}/{n_stationary}, density stddev {density}/{n_density}; slack 1e-9"
        ),
    )
}

/// Largest feasible level on a geometric grid, refined on a linear grid
/// between the last feasible node and its successor.
fn brute_force_density(inst: &Instance) -> f64 {
    let k = &inst.kern;
    let prior = k.k(&inst.x, &inst.x);
    let prior_sq = prior * prior;
    let self_sq: Vec<f64> = inst.xs.iter().map(|p| k.k(p, p).powi(2)).collect();
    let cross_sq: Vec<f64> = inst.xs.iter().map(|p| k.k(p, &inst.x).powi(2)).collect();
    let c = inst.noise * prior;
    let feasible = |level: f64| {
        let count = (0..self_sq.len())
            .filter(|&j| prior_sq <= self_sq[j] && self_sq[j] <= 1.0 / level + cross_sq[j])
            .count();
        count as f64 >= level * c
    };
    let nodes = 1_000_000;
    let (lo, hi) = (1e-8, (inst.xs.len() + 1) as f64 / c);
    let ratio = (hi / lo).ln() / (nodes - 1) as f64;
    let node = |i: usize| lo * (ratio * i as f64).exp();
    let Some(best) = (0..nodes).rev().find(|&i| feasible(node(i))) else {
        return 0.0;
    };
    let (a, b) = (node(best), node((best + 1).min(nodes - 1)));
    (0..nodes)
        .rev()
        .map(|i| a + (b - a) * i as f64 / (nodes - 1) as f64)
        .find(|&level| feasible(level))
        .unwrap_or(a)
}

fn crit_density(_: &Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    let mut zero = 0;
    for _ in 0..200 {
        let inst = random_instance(&mut rng);
        let lib = data_density(&library_model(&inst), &inst.x).unwrap().rho;
        let oracle = brute_force_density(&inst);
        if oracle == 0.0 {
            zero += 1;
            mismatches += usize::from(lib != 0.0);
            continue;
        }
        let rel = (lib - oracle).abs() / oracle;
        worst = worst.max(rel);
        mismatches += usize::from(rel > 1e-6);
    }
    pass_if(
        mismatches == 0,
        format!("200 instances ({zero} with zero density): {mismatches} mismatches, worst relative gap {worst:.2e}; tolerance 1e-6"),
    )
}

// ------------------------------------------------------------- criterion 5

fn half_of(t: f64, period: f64) -> usize {
    ((t.rem_euclid(period)) / (0.5 * period)).floor() as usize
}

fn crit_tracking(ctx: &Ctx) -> Outcome {
    let config = ctx.config("tracking.toml", "tracking");
    let outcome = run(&config).expect("tracking runs");
    let seeds = config.seeds.clone();
    let period = 2.0 * PI;
    let mut clean = 0;
    let mut matches = 0;
    let mut max_margin = f64::INFINITY;
    for seed in &seeds {
        let (header, rows) = read_csv(&config.output.join(format!("tracking_seed{seed}.csv")));
        let (ct, ce, cu, cs) = (
            column(&header, "t"),
            column(&header, "e_norm"),
            column(&header, "upsilon"),
            column(&header, "sigma_ref"),
        );
        let violations = rows.iter().filter(|r| r[ce] > r[cu]).count();
        clean += usize::from(violations == 0 && rows.len() as f64 >= 30.0 / 1e-3);
        max_margin = max_margin.min(rows.iter().map(|r| r[cu] - r[ce]).fold(f64::INFINITY, f64::min));
        let argmax = |c: usize| rows.iter().fold(&rows[0], |a, r| if r[c] > a[c] { r } else { a })[ct];
        matches += usize::from(half_of(argmax(ce), period) == half_of(argmax(cs), period));
    }
    let n = seeds.len();
    pass_if(
        n == 10 && clean == n && matches == n && outcome.violations == 0,
        format!(
            "{clean}/{n} runs with e <= upsilon at every sample (smallest gap {max_margin:.3e}); \
             peak error in the half-period of peak sigma in {matches}/{n}"
        ),
    )
}

// ------------------------------------------------------------- criterion 6

fn crit_slope(ctx: &Ctx) -> Outcome {
    let config = ctx.config("density_sweep.toml", "density_sweep");
    let start = Instant::now();
    run(&config).expect("density sweep runs");
    let runtime = start.elapsed().as_secs_f64();
    let (header, rows) = read_csv(&config.output.join("sweep_seed1.csv"));
    let get = |name: &str| -> Vec<f64> { rows.iter().map(|r| r[column(&header, name)]).collect() };
    let rho = get("rho_min");
    let kappas = get("kappa");
    let s_ups = slope(&rho, &get("upsilon_bar"));
    let s_err = slope(&rho, &get("e_max"));
    let kappa_ok = kappas.iter().all(|k| (k - 10.0).abs() <= 1e-6);
    pass_if(
        (-0.6..=-0.4).contains(&s_ups) && s_err < 0.0 && kappa_ok && runtime <= 600.0,
        format!(
            "{} grids, slope of log upsilon_bar vs log rho_min {s_ups:.3} (required [-0.6, -0.4]), \
             observed-error slope {s_err:.3}, kappa held at 10: {kappa_ok}, {runtime:.1}s",
            rho.len()
        ),
    )
}

// ------------------------------------------------------------- criterion 7

fn crit_episodic(ctx: &Ctx) -> Outcome {
    let config = ctx.config("episodic.toml", "episodic");
    let start = Instant::now();
    let outcome = run(&config).expect("episodic runs");
    let runtime = start.elapsed().as_secs_f64();
    let r = &outcome.summary["results"]["runs"][0];
    let target: f64 = 0.005;
    let (noise, max_speed, xi): (f64, f64, f64) = (0.01, 2.0, 0.95);
    // SE with unit signal variance and shortest lengthscale 1.
    let (l_dk, k0): (f64, f64) = (1.0, 1.0);
    let n_e = ((4.0 * target * l_dk.sqrt() / k0.sqrt()).ln() / xi.ln()).ceil() as usize;
    let ts_min = 16.0 * l_dk * target.powi(3) / (noise * max_speed);

    let text = std::fs::read_to_string(config.output.join("episodes_seed1.jsonl")).unwrap();
    let episodes: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let mut bounds = vec![r["initial"]["upsilon_bar"].as_f64().unwrap()];
    bounds.extend(episodes.iter().map(|e| e["certificate"]["upsilon_bar"].as_f64().unwrap()));
    let late: Vec<f64> = (10..bounds.len().saturating_sub(1)).map(|i| bounds[i + 1] / bounds[i]).collect();
    let worst_late = late.iter().copied().fold(0.0, f64::max);
    let ts_ok = episodes.iter().all(|e| e["sampling_time"].as_f64().unwrap() >= ts_min);
    let lib_ok = r["summary"]["episode_count_bound"].as_u64() == Some(n_e as u64)
        && (r["summary"]["L_dk"].as_f64().unwrap() - l_dk).abs() <= 1e-9;
    let reached = *bounds.last().unwrap() <= target;
    let ran = episodes.len();
    pass_if(
        !late.is_empty() && worst_late <= 0.96 && ran <= n_e && reached && ts_ok && lib_ok,
        format!(
            "{ran} episodes (count bound {n_e}) in {runtime:.1}s, final bound {:.3e} <= {target}: {reached}; \
             {} late ratios, worst {worst_late:.4} (required <= 0.96); T_s >= {ts_min:.1e} every episode: {ts_ok}",
            bounds.last().unwrap(),
            late.len()
        ),
    )
}

// ------------------------------------------------------------- criterion 8

struct Example {
    what: &'static str,
    quoted: &'static str,
    oracle: f64,
    library: f64,
}

/// Half a unit in the last quoted decimal place.
fn quoted_tolerance(quoted: &str) -> f64 {
    let decimals = quoted.split('.').nth(1).map_or(0, str::len);
    0.5 * 10f64.powi(-(decimals as i32)) * (1.0 + 1e-9)
}

fn crit_closed_forms(_: &Ctx) -> Outcome {
    let se1 = KernelSpec::squared_exponential(1.0, vec![1.0]).unwrap();
    let se1_2d = KernelSpec::squared_exponential(1.0, vec![1.0, 1.0]).unwrap();
    let lin2 = KernelSpec::new(KernelFamily::Linear, 1.0, vec![1.0, 1.0]).unwrap();
    let box1 = DomainBox::centered(10.0, 1).unwrap();
    let box2 = DomainBox::centered(10.0, 2).unwrap();
    let e_half = (-0.5f64).exp();
    let fit = |n: usize, x: f64| {
        let data = TrainingSet::new(1, vec![vec![x]; n], vec![1.0; n], 0.01).unwrap();
        GpModel::fit(se1.clone(), data).unwrap()
    };
    let one = fit(1, 0.0);
    let two = fit(2, 0.0);
    let many = fit(25, 0.0);
    let lag = fit(1, 1.0);
    let beta_true = 2.0 * (5e7f64).ln();
    let empty = GpModel::fit(se1_2d.clone(), TrainingSet::empty(2, 0.01).unwrap()).unwrap();
    let params = BoundParams::given(0.01, 0.01, 2.0).unwrap();
    let ub = UniformBound::with_constants(&empty, &params, &box2, 1.0, None);
    let gamma_true = 0.02 + beta_true.sqrt() * 0.02f64.sqrt();
    let sigma_many = (0.01f64 / 25.01).sqrt();

    let scalar = ClosedLoop::from_matrix(DMatrix::from_element(1, 1, -1.0), DVector::from_element(1, 1.0)).unwrap();
    let ode = tracking_bound_ode(&scalar, |_| 1.0, 0.0, 1.0, 0.0, 1.0, 1e-3).unwrap();
    let diag = ClosedLoop::from_matrix(
        DMatrix::from_row_slice(2, 2, &[-10.0, 0.0, 0.0, -20.0]),
        DVector::from_column_slice(&[2.0, 0.0]),
    )
    .unwrap();
    let decay = integrate(|_, x, dx| dx[0] = -x[0], &[1.0], 1.0, 1e-3).unwrap();

    // Benchmark gains theta = (10, 20): A - b theta^T = [[0, 1], [-200, -20]].
    let bench = closed_loop(&LinearPlant::double_integrator(), benchmark_gains(10.0, 20.0)).unwrap();
    let (re, im) = (-10.0f64, 10.0f64);
    let s2 = 1.0 + re * re + im * im;
    // Unit eigenvectors (1, λ)/s and their conjugates.
    let cross = ((1.0 + re * re - im * im).powi(2) + (2.0 * re * im).powi(2)).sqrt() / s2;
    let zeta = (1.0 + cross).sqrt() * 2f64.sqrt() * s2.sqrt() / (2.0 * im);
    let mut eig: Vec<(f64, f64)> = bench.eigenvalues().iter().map(|z| (z.re, z.im)).collect();
    eig.sort_by(|a, b| a.1.total_cmp(&b.1));

    let examples = vec![
        Example { what: "SE kernel at unit lag", quoted: "0.606531", oracle: e_half, library: se1.eval(&[0.0], &[1.0]).unwrap() },
        Example { what: "SE gradient at unit lag", quoted: "-0.606531", oracle: -e_half, library: se1.gradient(&[1.0], &[0.0]).unwrap()[0] },
        Example { what: "SE metric at unit lag", quoted: "0.887166", oracle: (2.0 - 2.0 * e_half).sqrt(), library: se1.metric(&[0.0], &[1.0]).unwrap() },
        Example { what: "linear metric, orthogonal units", quoted: "1.414214", oracle: 2f64.sqrt(), library: lin2.metric(&[1.0, 0.0], &[0.0, 1.0]).unwrap() },
        Example { what: "SE unit Lipschitz", quoted: "0.606531", oracle: e_half, library: se1.lipschitz(&box1) },
        Example { what: "SE var 4, lengthscale 2 Lipschitz", quoted: "1.213061", oracle: 2.0 * e_half, library: KernelSpec::squared_exponential(4.0, vec![2.0]).unwrap().lipschitz(&box1) },
        Example { what: "linear Lipschitz on [-5,5]^2", quoted: "7.071068", oracle: 50f64.sqrt(), library: lin2.lipschitz(&box2) },
        Example { what: "one-point mean", quoted: "0.990099", oracle: 1.0 / 1.01, library: one.predict_mean(&[0.0]).unwrap() },
        Example { what: "one-point variance", quoted: "0.009901", oracle: 1.0 - 1.0 / 1.01, library: one.predict_var(&[0.0]).unwrap() },
        Example { what: "25 coincident points variance", quoted: "0.0003998", oracle: 0.01 / 25.01, library: many.predict_var(&[0.0]).unwrap() },
        Example { what: "covering number", quoted: "500000", oracle: 5e5, library: covering_number_bound(0.01, &box2) },
        Example { what: "beta for M = 500000, delta = 0.01", quoted: "35.4572", oracle: beta_true, library: beta(0.01, 0.01, &box2) },
        Example { what: "mean Lipschitz, one point", quoted: "0.600525", oracle: e_half / 1.01, library: mean_lipschitz(&one, e_half) },
        Example { what: "mean Lipschitz, two coincident", quoted: "0.603514", oracle: e_half * 2.0 / 2.01, library: mean_lipschitz(&two, e_half) },
        Example { what: "stddev modulus, general", quoted: "0.141421", oracle: 0.02f64.sqrt(), library: stddev_modulus(0.01, 1.0, None) },
        Example { what: "stddev modulus, stationary", quoted: "0.01", oracle: 0.01, library: stddev_modulus(0.01, 1.0, Some(1.0)) },
        Example { what: "gamma", quoted: "0.862124", oracle: gamma_true, library: gamma(0.01, 0.0, 2.0, beta_true, 0.02f64.sqrt()) },
        Example { what: "eta, empty model", quoted: "6.81673", oracle: beta_true.sqrt() + gamma_true, library: ub.eta_from_stddev(1.0) },
        Example { what: "eta, 25 coincident points", quoted: "0.981189", oracle: beta_true.sqrt() * sigma_many + gamma_true, library: ub.eta_from_stddev(many.predict_stddev(&[0.0]).unwrap()) },
        Example { what: "expected sup, d = 2, r = 10", quoted: "131.453", oracle: 12.0 * 12f64.sqrt() * 10f64.sqrt(), library: expected_sup_bound(&se1_2d, &box2, 1.0) },
        Example { what: "expected sup, d = 1, r = 1", quoted: "29.3939", oracle: 12.0 * 6f64.sqrt(), library: expected_sup_bound(&se1, &DomainBox::centered(1.0, 1).unwrap(), 1.0) },
        Example { what: "sample sup, d = 2", quoted: "134.488", oracle: (2.0 * 100f64.ln()).sqrt() + 12.0 * 120f64.sqrt(), library: sample_sup_bound(&se1_2d, &box2, 0.01, 1.0) },
        Example { what: "sample sup, d = 1", quoted: "31.3939", oracle: 2.0 + 12.0 * 6f64.sqrt(), library: sample_sup_bound(&se1, &DomainBox::centered(1.0, 1).unwrap(), (-2.0f64).exp(), 1.0) },
        Example { what: "general variance bound, one point at x", quoted: "0.009901", oracle: 0.01 / 1.01, library: variance_bound_general(&one, &[0.0], None).unwrap() },
        Example { what: "general variance bound, unit lag", quoted: "0.635763", oracle: (0.01 + 1.0 - (-1.0f64).exp()) / 1.01, library: variance_bound_general(&lag, &[0.0], None).unwrap() },
        Example { what: "stationary variance bound, one point", quoted: "0.009901", oracle: 1.0 - 1.0 / 1.01, library: variance_bound_stationary(&one, &[0.0]).unwrap() },
        Example { what: "density of 25 coincident points", quoted: "2500", oracle: 2500.0, library: data_density(&many, &[0.0]).unwrap().rho },
        Example { what: "density stddev bound", quoted: "0.028284", oracle: (2.0f64 / 2500.0).sqrt(), library: (2.0 / data_density(&many, &[0.0]).unwrap().rho).sqrt() },
        Example { what: "bound ODE at t = 1", quoted: "0.632121", oracle: 1.0 - (-1.0f64).exp(), library: *ode.last().unwrap() },
        Example { what: "max tracking bound", quoted: "0.227273", oracle: 2.0 / 8.8, library: max_tracking_bound(&diag, 1.0, 0.1, 36.0).unwrap() },
        Example { what: "kappa", quoted: "2.727273", oracle: 24.0 / 8.8, library: kappa_from(-10.0, 2.0, 0.1, 36.0).unwrap() },
        Example { what: "benchmark eigenvalue real part", quoted: "-10", oracle: re, library: eig[0].0 },
        Example { what: "benchmark eigenvalue imaginary part", quoted: "10", oracle: im, library: eig[1].1 },
        Example { what: "benchmark lambda_max", quoted: "-10", oracle: re, library: bench.lambda_max() },
        Example { what: "benchmark zeta (unit eigenvectors)", quoted: "1.415985", oracle: zeta, library: bench.zeta() },
        Example { what: "min sampling time", quoted: "0.16", oracle: 0.16, library: min_sampling_time(1.0, 0.1, 0.01, 10.0) },
        Example { what: "episode count bound", quoted: "45", oracle: 45.0, library: episode_count_bound(0.025, 1.0, 1.0, 0.95).bound as f64 },
        Example { what: "RK4 decay at t = 1", quoted: "0.367879", oracle: (-1.0f64).exp(), library: decay.states.last().unwrap()[0] },
    ];

    let mut library_misses = Vec::new();
    let mut quote_misses = Vec::new();
    for ex in &examples {
        let quoted: f64 = ex.quoted.parse().unwrap();
        if (ex.library - ex.oracle).abs() > 1e-6 * ex.oracle.abs().max(1.0) {
            library_misses.push(format!("{}: library {:.9} vs closed form {:.9}", ex.what, ex.library, ex.oracle));
        }
        if (ex.library - quoted).abs() > quoted_tolerance(ex.quoted) {
            quote_misses.push(format!("{} (quoted {}, computed {:.7})", ex.what, ex.quoted, ex.library));
        }
    }
    for line in library_misses.iter().chain(&quote_misses) {
        println!("       {line}");
    }
    let steady = max_tracking_bound(&diag, 1.0, 0.1, 36.0).unwrap();
    pass_if(
        library_misses.is_empty() && quote_misses.is_empty() && steady > 0.0,
        format!(
            "{} examples: {} differ from their closed forms by > 1e-6, {} differ from the quoted value at its precision",
            examples.len(),
            library_misses.len(),
            quote_misses.len()
        ),
    )
}

// ------------------------------------------------------------- criterion 9

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn crit_determinism(ctx: &Ctx) -> Outcome {
    let runs = [
        ("validate_bounds.toml", "validate_bounds"),
        ("validate_lipschitz.toml", "validate_lipschitz"),
        ("tracking.toml", "tracking"),
        ("density_sweep.toml", "density_sweep"),
        ("episodic.toml", "episodic"),
    ];
    let mut differing = Vec::new();
    let mut files = 0;
    for (name, out) in runs {
        let config = ctx.config(name, out);
        if !config.output.join("summary.json").exists() {
            run(&config).expect("first run");
        }
        let first = snapshot(&config.output);
        std::fs::remove_dir_all(&config.output).unwrap();
        run(&config).expect("second run");
        let second = snapshot(&config.output);
        files += first.len();
        if first != second {
            differing.push(out);
        }
    }
    pass_if(
        differing.is_empty(),
        format!("5 experiments rerun with identical config and seed, {files} files compared byte for byte, differing: {differing:?}"),
    )
}
