//! Exact Gaussian-process posterior inference.

use std::io::{Read, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::kernels::KernelSpec;

/// Noisy observations `y = f(x) + ε` with `ε ~ N(0, σ_on²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    dim: usize,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    noise_variance: f64,
}

impl TrainingSet {
    pub fn empty(dim: usize, noise_variance: f64) -> Result<Self> {
        Self::new(dim, Vec::new(), Vec::new(), noise_variance)
    }

    pub fn new(dim: usize, inputs: Vec<Vec<f64>>, targets: Vec<f64>, noise_variance: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("input dimension must be positive".into()));
        }
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        check_dim(inputs.len(), targets.len())?;
        for x in &inputs {
            check_dim(dim, x.len())?;
        }
        Ok(Self {
            dim,
            inputs,
            targets,
            noise_variance,
        })
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        check_dim(self.dim, x.len())?;
        self.inputs.push(x);
        self.targets.push(y);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Appends another set with the same dimension and noise level.
    pub fn extend(&mut self, other: &TrainingSet) -> Result<()> {
        check_dim(self.dim, other.dim)?;
        if self.noise_variance != other.noise_variance {
            return Err(Error::InvalidInput(format!(
                "noise variance mismatch: {} vs {}",
                self.noise_variance, other.noise_variance
            )));
        }
        self.inputs.extend(other.inputs.iter().cloned());
        self.targets.extend_from_slice(&other.targets);
        Ok(())
    }

    /// Writes the set as CSV with header `x_1..x_d,y`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim).map(|i| format!("x_{i}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let row: Vec<String> = x.iter().chain(std::iter::once(y)).map(|v| v.to_string()).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`TrainingSet::write_csv`]. The header is
    /// required; the last column holds targets.
    pub fn read_csv<R: Read>(reader: R, noise_variance: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let width = headers.len();
        if width < 2 || headers.get(width - 1) != Some("y") {
            return Err(Error::InvalidInput(
                "training CSV needs columns x_1..x_d,y with a header row".into(),
            ));
        }
        for (i, h) in headers.iter().take(width - 1).enumerate() {
            if h != format!("x_{}", i + 1) {
                return Err(Error::InvalidInput(format!("unexpected column '{h}' at position {}", i + 1)));
            }
        }
        let mut set = Self::empty(width - 1, noise_variance)?;
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let values = record
                .iter()
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidInput(format!("row {}: {e}", line + 2)))?;
            let (x, y) = values.split_at(width - 1);
            set.push(x.to_vec(), y[0])?;
        }
        Ok(set)
    }
}

/// Keeps every `⌊target_ts / fine_dt⌋`-th sample starting at index 0.
pub fn downsample(raw: &TrainingSet, fine_dt: f64, target_ts: f64) -> Result<TrainingSet> {
    if !(fine_dt > 0.0) {
        return Err(Error::InvalidInput(format!("fine_dt must be positive, got {fine_dt}")));
    }
    let stride = sample_stride(fine_dt, target_ts)?;
    let inputs = raw.inputs.iter().step_by(stride).cloned().collect();
    let targets = raw.targets.iter().step_by(stride).copied().collect();
    TrainingSet::new(raw.dim, inputs, targets, raw.noise_variance)
}

/// Index stride for downsampling, tolerant to round-off in the ratio.
pub fn sample_stride(fine_dt: f64, target_ts: f64) -> Result<usize> {
    let ratio = target_ts / fine_dt;
    if !(ratio >= 1.0 - 1e-9) {
        return Err(Error::InvalidInput(format!(
            "target sampling time {target_ts} is below the recording step {fine_dt}"
        )));
    }
    Ok(((ratio + 1e-9).floor() as usize).max(1))
}

/// Posterior of a zero-mean GP conditioned on a training set.
#[derive(Clone, Debug)]
pub struct GpModel {
    kernel: KernelSpec,
    data: TrainingSet,
    factor: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

impl GpModel {
    pub fn fit(kernel: KernelSpec, data: TrainingSet) -> Result<Self> {
        check_dim(kernel.dim(), data.dim())?;
        if data.is_empty() {
            return Ok(Self {
                kernel,
                data,
                factor: None,
                alpha: DVector::zeros(0),
            });
        }
        let n = data.len();
        let mut gram = kernel.gram(&data.inputs, &data.inputs);
        for i in 0..n {
            gram[(i, i)] += data.noise_variance;
        }
        let factor = match Cholesky::new(gram.clone()) {
            Some(f) => f,
            None => {
                let (index, value) = first_bad_pivot(&gram);
                return Err(Error::IllConditioned { index, value });
            }
        };
        let y = DVector::from_column_slice(&data.targets);
        let alpha = factor.solve(&y);
        Ok(Self {
            kernel,
            data,
            factor: Some(factor),
            alpha,
        })
    }

    /// Refits on the union of the current data and `new`.
    pub fn add_samples(&self, new: &TrainingSet) -> Result<Self> {
        if new.is_empty() {
            check_dim(self.data.dim, new.dim)?;
            return Ok(self.clone());
        }
        let mut data = self.data.clone();
        data.extend(new)?;
        Self::fit(self.kernel.clone(), data)
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn data(&self) -> &TrainingSet {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn noise_variance(&self) -> f64 {
        self.data.noise_variance
    }

    /// Weight vector `(K + σ_on² I)⁻¹ y`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    fn cross_covariance(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.data.len(),
            self.data.inputs.iter().map(|xn| self.kernel.eval_unchecked(x, xn)),
        )
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.kernel.dim(), x.len())?;
        if self.is_empty() {
            return Ok(0.0);
        }
        Ok(self.cross_covariance(x).dot(&self.alpha))
    }

    pub fn predict_var(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict(x)?.1)
    }

    pub fn predict_stddev(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_var(x)?.sqrt())
    }

    /// Posterior mean and variance at `x`; the variance is clamped at zero.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.kernel.dim(), x.len())?;
        let prior = self.kernel.eval_unchecked(x, x);
        let Some(factor) = &self.factor else {
            return Ok((0.0, prior));
        };
        let kx = self.cross_covariance(x);
        let mean = kx.dot(&self.alpha);
        let v = factor
            .l_dirty()
            .solve_lower_triangular(&kx)
            .expect("Cholesky factor has a positive diagonal");
        Ok((mean, (prior - v.norm_squared()).max(0.0)))
    }

    /// Posterior variances at many points, evaluated in parallel.
    pub fn predict_var_many(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        points.par_iter().map(|x| self.predict_var(x)).collect()
    }

    /// Posterior means and variances at many points, evaluated in parallel.
    pub fn predict_many(&self, points: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
        points.par_iter().map(|x| self.predict(x)).collect()
    }
}

/// Locates the first pivot at which an unpivoted Cholesky sweep stops being
/// positive. Only used to describe a factorization that already failed.
fn first_bad_pivot(matrix: &DMatrix<f64>) -> (usize, f64) {
    let n = matrix.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let pivot = matrix[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if !(pivot > 0.0) {
            return (j, pivot);
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let s = matrix[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = s / d;
        }
    }
    (n.saturating_sub(1), f64::NAN)
}
