//! Zero-mean Gaussian-process regression with a squared-exponential (RBF)
//! kernel, hyperparameters chosen by maximizing the log marginal likelihood.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const JITTER: f64 = 1e-10;
pub const DEFAULT_RESTARTS: usize = 8;

/// Box constraints on the hyperparameters, in natural units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub lengthscale: (f64, f64),
    pub signal_variance: (f64, f64),
    pub noise_variance: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        HyperBounds {
            lengthscale: (1e-1, 1e2),
            signal_variance: (1e-2, 1e2),
            noise_variance: (1e-8, 1.0),
        }
    }
}

impl HyperBounds {
    fn log_box(&self) -> [(f64, f64); 3] {
        let l = |(a, b): (f64, f64)| (a.ln(), b.ln());
        [l(self.lengthscale), l(self.signal_variance), l(self.noise_variance)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Hyperparameters {
    fn from_log(u: &[f64; 3]) -> Self {
        Hyperparameters {
            lengthscale: u[0].exp(),
            signal_variance: u[1].exp(),
            noise_variance: u[2].exp(),
        }
    }

    fn to_log(self) -> [f64; 3] {
        [self.lengthscale.ln(), self.signal_variance.ln(), self.noise_variance.ln()]
    }

    pub fn kernel(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        self.signal_variance * (-d * d / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpModel {
    pub hyper: Hyperparameters,
    pub train_inputs: Vec<f64>,
    pub train_targets: Vec<f64>,
    /// Lower Cholesky factor of `K + σ_n² I`.
    #[serde(skip)]
    factor: DMatrix<f64>,
    #[serde(skip)]
    weights: DVector<f64>,
    pub log_marginal_likelihood: f64,
    /// Start and end LML of each optimizer restart (`None` where the start
    /// was not evaluable).
    #[serde(default)]
    pub restarts: Vec<RestartOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub start: Hyperparameters,
    pub start_lml: Option<f64>,
    pub final_lml: Option<f64>,
}

fn kernel_matrix(inputs: &[f64], hyper: &Hyperparameters) -> DMatrix<f64> {
    let n = inputs.len();
    let noise = hyper.noise_variance.max(JITTER);
    DMatrix::from_fn(n, n, |i, j| {
        hyper.kernel(inputs[i], inputs[j]) + if i == j { noise } else { 0.0 }
    })
}

fn factorize(inputs: &[f64], hyper: &Hyperparameters) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(kernel_matrix(inputs, hyper))
        .ok_or_else(|| Error::Numerical("kernel matrix is not positive definite".into()))
}

fn lml_from_factor(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>, weights: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    -0.5 * y.dot(weights) - log_det_half - 0.5 * n * (2.0 * PI).ln()
}

/// Log marginal likelihood of `targets` under the given hyperparameters.
pub fn log_marginal_likelihood(inputs: &[f64], targets: &[f64], hyper: &Hyperparameters) -> Result<f64> {
    let chol = factorize(inputs, hyper)?;
    let y = DVector::from_column_slice(targets);
    let w = chol.solve(&y);
    Ok(lml_from_factor(&chol, &y, &w))
}

/// LML and its gradient with respect to the log hyperparameters.
fn lml_and_log_grad(inputs: &[f64], y: &DVector<f64>, hyper: &Hyperparameters) -> Option<(f64, [f64; 3])> {
    let chol = factorize(inputs, hyper).ok()?;
    let w = chol.solve(y);
    let lml = lml_from_factor(&chol, y, &w);
    let k_inv = chol.inverse();
    let n = inputs.len();
    // ∂LML/∂u = ½ tr((w wᵀ - K⁻¹) ∂K/∂u)
    let mut g = [0.0; 3];
    let l2 = hyper.lengthscale * hyper.lengthscale;
    for i in 0..n {
        for j in 0..n {
            let a = w[i] * w[j] - k_inv[(i, j)];
            let d = inputs[i] - inputs[j];
            let kf = hyper.kernel(inputs[i], inputs[j]);
            g[0] += a * kf * d * d / l2;
            g[1] += a * kf;
            if i == j {
                g[2] += a * hyper.noise_variance;
            }
        }
    }
    g.iter_mut().for_each(|v| *v *= 0.5);
    if lml.is_finite() && g.iter().all(|v| v.is_finite()) {
        Some((lml, g))
    } else {
        None
    }
}

fn project(u: &mut [f64; 3], bounds: &[(f64, f64); 3]) {
    for (v, (lo, hi)) in u.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Projected gradient ascent with backtracking. Never returns a point worse
/// than its start.
fn ascend(inputs: &[f64], y: &DVector<f64>, start: [f64; 3], bounds: &[(f64, f64); 3]) -> Option<([f64; 3], f64)> {
    let mut u = start;
    project(&mut u, bounds);
    let (mut lml, mut g) = lml_and_log_grad(inputs, y, &Hyperparameters::from_log(&u))?;
    let mut step = 1.0;
    for _ in 0..200 {
        let mut improved = false;
        while step > 1e-10 {
            let mut cand = [u[0] + step * g[0], u[1] + step * g[1], u[2] + step * g[2]];
            project(&mut cand, bounds);
            if let Some((l, gc)) = lml_and_log_grad(inputs, y, &Hyperparameters::from_log(&cand)) {
                if l > lml {
                    let gain = l - lml;
                    u = cand;
                    lml = l;
                    g = gc;
                    step *= 2.0;
                    improved = gain > 1e-12 * (1.0 + lml.abs());
                    break;
                }
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Some((u, lml))
}

/// Merges repeated inputs by averaging their targets.
fn merge_duplicates(inputs: &[f64], targets: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut pairs: Vec<(f64, f64)> = inputs.iter().copied().zip(targets.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut xs: Vec<f64> = Vec::with_capacity(pairs.len());
    let mut sums: Vec<(f64, usize)> = Vec::with_capacity(pairs.len());
    for (x, y) in pairs {
        if xs.last() == Some(&x) {
            let s = sums.last_mut().expect("parallel vectors");
            s.0 += y;
            s.1 += 1;
        } else {
            xs.push(x);
            sums.push((y, 1));
        }
    }
    let ys = sums.into_iter().map(|(s, c)| s / c as f64).collect();
    (xs, ys)
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters on the data.
    pub fn with_hyperparameters(inputs: &[f64], targets: &[f64], hyper: Hyperparameters) -> Result<Self> {
        check_data(inputs, targets)?;
        let (xs, ys) = merge_duplicates(inputs, targets);
        let chol = factorize(&xs, &hyper)?;
        let y = DVector::from_vec(ys.clone());
        let weights = chol.solve(&y);
        let lml = lml_from_factor(&chol, &y, &weights);
        Ok(GpModel {
            hyper,
            train_inputs: xs,
            train_targets: ys,
            factor: chol.unpack(),
            weights,
            log_marginal_likelihood: lml,
            restarts: Vec::new(),
        })
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Posterior mean at each query input.
    pub fn predict_mean(&self, query: &[f64]) -> Vec<f64> {
        query
            .iter()
            .map(|&q| {
                self.train_inputs
                    .iter()
                    .zip(self.weights.iter())
                    .map(|(&x, w)| self.hyper.kernel(q, x) * w)
                    .sum()
            })
            .collect()
    }
}

fn check_data(inputs: &[f64], targets: &[f64]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Empty("GP training set"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "GP training set",
            expected: inputs.len(),
            actual: targets.len(),
        });
    }
    if inputs.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::invalid("GP training data must be finite"));
    }
    Ok(())
}

/// ML-II fit with `restarts` starting points, the first at a fixed default
/// and the rest drawn log-uniformly inside `bounds`.
pub fn gp_fit_bounded(
    inputs: &[f64],
    targets: &[f64],
    restarts: usize,
    seed: u64,
    bounds: &HyperBounds,
) -> Result<GpModel> {
    check_data(inputs, targets)?;
    let (xs, ys) = merge_duplicates(inputs, targets);
    let y = DVector::from_vec(ys);
    let lb = bounds.log_box();
    let mut rng = seed::rng_for(seed, &[seed::stream::GP]);
    let mut starts = vec![Hyperparameters {
        lengthscale: 1.0,
        signal_variance: 1.0,
        noise_variance: 1e-4,
    }
    .to_log()];
    for _ in 1..restarts.max(1) {
        starts.push([
            rng.gen_range(lb[0].0..=lb[0].1),
            rng.gen_range(lb[1].0..=lb[1].1),
            rng.gen_range(lb[2].0..=lb[2].1),
        ]);
    }
    let mut best: Option<([f64; 3], f64)> = None;
    let mut outcomes = Vec::with_capacity(starts.len());
    for mut s in starts {
        project(&mut s, &lb);
        let start = Hyperparameters::from_log(&s);
        let start_lml = lml_and_log_grad(&xs, &y, &start).map(|(l, _)| l);
        let result = ascend(&xs, &y, s, &lb);
        outcomes.push(RestartOutcome {
            start,
            start_lml,
            final_lml: result.map(|(_, l)| l),
        });
        let Some((u, lml)) = result else {
            continue;
        };
        let better = match best {
            None => true,
            Some((bu, bl)) => {
                let tol = 1e-9 * (1.0 + bl.abs());
                lml > bl + tol || ((lml - bl).abs() <= tol && u[0] > bu[0])
            }
        };
        if better {
            best = Some((u, lml));
        }
    }
    let (u, _) = best.ok_or_else(|| Error::Numerical("GP likelihood non-finite at every restart".into()))?;
    let mut model = GpModel::with_hyperparameters(inputs, targets, Hyperparameters::from_log(&u))?;
    model.restarts = outcomes;
    Ok(model)
}

pub fn gp_fit(inputs: &[f64], targets: &[f64], restarts: usize, seed: u64) -> Result<GpModel> {
    gp_fit_bounded(inputs, targets, restarts, seed, &HyperBounds::default())
}

pub fn gp_predict_mean(model: &GpModel, query: &[f64]) -> Vec<f64> {
    model.predict_mean(query)
}

/// One independent GP per output dimension. Every dimension uses the same
/// restart seed, so dimension `d` fits exactly as a scalar fit would.
pub fn gp_fit_multi(inputs: &[f64], targets: &[Vec<f64>], restarts: usize, seed: u64) -> Result<Vec<GpModel>> {
    let dim = targets.first().ok_or(Error::Empty("GP training set"))?.len();
    if let Some(t) = targets.iter().find(|t| t.len() != dim) {
        return Err(Error::DimensionMismatch {
            context: "GP target vectors",
            expected: dim,
            actual: t.len(),
        });
    }
    (0..dim)
        .map(|d| {
            let col: Vec<f64> = targets.iter().map(|t| t[d]).collect();
            gp_fit(inputs, &col, restarts, seed)
        })
        .collect()
}
