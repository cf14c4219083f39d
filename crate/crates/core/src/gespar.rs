//! Greedy sparse recovery from quadratic measurements `y_i = |a_i . s|^2`.
//!
//! The objective `f(s) = sum_i (y_i - |a_i . s|^2)^2` is minimized under
//! `|supp(s)| <= k` by a 2-opt local search over supports: a damped
//! Gauss-Newton solve on the current support, then swaps of one support
//! index for one off-support index, guided by coefficient magnitudes and by
//! the gradient. When no swap improves the objective the search restarts
//! from a fresh random support, until the objective drops below the
//! threshold or the swap budget runs out. The threshold is relative:
//! `f(s) <= tau * sum_i y_i^2`, so the outcome does not depend on the scale
//! of the measurements.
//!
//! Coefficients are real. [`objective_complex`] and [`gradient_complex`]
//! cover complex coefficients for callers that need them.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::primitives::{rng_from_seed, Dictionary, Signal};
use crate::stft::MeasurementOperator;

/// Quadratic measurements together with their linear functionals.
///
/// Rows are stored split into real and imaginary parts, column-major, so a
/// support's columns can be read contiguously.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    p: usize,
    d: usize,
    re: Vec<f64>,
    im: Vec<f64>,
    pub y: Vec<f64>,
}

impl QuadraticProblem {
    pub fn new(operator: &MeasurementOperator, y: Vec<f64>) -> Result<Self> {
        let (p, d) = (operator.count(), operator.dim());
        if y.len() != p {
            return Err(Error::Geometry(format!("operator has {p} rows, got {} measurements", y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("measurements must be finite".into()));
        }
        let mut re = vec![0.0; p * d];
        let mut im = vec![0.0; p * d];
        for c in 0..d {
            for i in 0..p {
                let a = operator.rows[(i, c)];
                re[c * p + i] = a.re;
                im[c * p + i] = a.im;
            }
        }
        Ok(QuadraticProblem { p, d, re, im, y })
    }

    pub fn measurement_count(&self) -> usize {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn col(&self, c: usize) -> (&[f64], &[f64]) {
        (&self.re[c * self.p..(c + 1) * self.p], &self.im[c * self.p..(c + 1) * self.p])
    }

    /// Real and imaginary parts of `a_i . s` for every row.
    fn products(&self, s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut cr = vec![0.0; self.p];
        let mut ci = vec![0.0; self.p];
        for (c, &v) in s.iter().enumerate() {
            if v != 0.0 {
                let (r, i) = self.col(c);
                axpy(v, r, &mut cr);
                axpy(v, i, &mut ci);
            }
        }
        (cr, ci)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.d {
            return Err(Error::Geometry(format!("expected {} coefficients, got {len}", self.d)));
        }
        Ok(())
    }

    pub fn sum_y_sq(&self) -> f64 {
        self.y.iter().map(|v| v * v).sum()
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn objective_from(y: &[f64], cr: &[f64], ci: &[f64]) -> f64 {
    y.iter()
        .zip(cr.iter().zip(ci))
        .map(|(yi, (r, i))| {
            let e = yi - (r * r + i * i);
            e * e
        })
        .sum()
}

/// `sum_i (y_i - |a_i . s|^2)^2`.
pub fn objective(s: &[f64], problem: &QuadraticProblem) -> Result<f64> {
    problem.check_dim(s.len())?;
    let (cr, ci) = problem.products(s);
    Ok(objective_from(&problem.y, &cr, &ci))
}

/// `grad f(s) = -4 sum_i (y_i - |a_i . s|^2) Re(conj(a_i . s) a_i)`.
pub fn gradient(s: &[f64], problem: &QuadraticProblem) -> Result<Vec<f64>> {
    problem.check_dim(s.len())?;
    let (cr, ci) = problem.products(s);
    Ok(gradient_from(problem, &cr, &ci))
}

fn gradient_from(problem: &QuadraticProblem, cr: &[f64], ci: &[f64]) -> Vec<f64> {
    let wr: Vec<f64> = (0..problem.p)
        .map(|i| -4.0 * (problem.y[i] - (cr[i] * cr[i] + ci[i] * ci[i])) * cr[i])
        .collect();
    let wi: Vec<f64> = (0..problem.p)
        .map(|i| -4.0 * (problem.y[i] - (cr[i] * cr[i] + ci[i] * ci[i])) * ci[i])
        .collect();
    (0..problem.d)
        .map(|c| {
            let (r, i) = problem.col(c);
            dot(r, &wr) + dot(i, &wi)
        })
        .collect()
}

fn complex_products(s: &[Complex64], problem: &QuadraticProblem) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); problem.p];
    for (c, v) in s.iter().enumerate() {
        let (r, i) = problem.col(c);
        for (o, (ar, ai)) in out.iter_mut().zip(r.iter().zip(i)) {
            *o += Complex64::new(*ar, *ai) * v;
        }
    }
    out
}

/// Objective for complex coefficients.
pub fn objective_complex(s: &[Complex64], problem: &QuadraticProblem) -> Result<f64> {
    problem.check_dim(s.len())?;
    Ok(complex_products(s, problem)
        .iter()
        .zip(&problem.y)
        .map(|(c, y)| (y - c.norm_sqr()).powi(2))
        .sum())
}

/// Gradient for complex coefficients in Wirtinger form: twice the derivative
/// with respect to `conj(s)`, i.e. `d f / d Re(s) + j d f / d Im(s)`.
pub fn gradient_complex(s: &[Complex64], problem: &QuadraticProblem) -> Result<Vec<Complex64>> {
    problem.check_dim(s.len())?;
    let prod = complex_products(s, problem);
    let weights: Vec<Complex64> = prod
        .iter()
        .zip(&problem.y)
        .map(|(c, y)| -4.0 * (y - c.norm_sqr()) * c)
        .collect();
    Ok((0..problem.d)
        .map(|c| {
            let (r, i) = problem.col(c);
            weights
                .iter()
                .zip(r.iter().zip(i))
                .map(|(w, (ar, ai))| Complex64::new(*ar, -*ai) * w)
                .sum()
        })
        .collect())
}

/// Stopping rules of the damped Gauss-Newton solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgnOptions {
    pub max_iterations: usize,
    /// Stop when the accepted step is shorter than this times `1 + |s|`.
    pub step_tol: f64,
    /// Stop when one iteration lowers the objective by less than this fraction.
    pub rel_decrease_tol: f64,
    pub max_halvings: usize,
}

impl Default for DgnOptions {
    fn default() -> Self {
        DgnOptions {
            max_iterations: 100,
            step_tol: 1e-10,
            rel_decrease_tol: 1e-9,
            max_halvings: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgnOutcome {
    /// Coefficients in the order of the given support.
    pub coefficients: Vec<f64>,
    pub objective: f64,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
}

/// Minimizes the objective over the coordinates in `support`, starting from
/// `init` (one value per support index). Only steps that lower the objective
/// are accepted.
pub fn damped_gauss_newton(
    support: &[usize],
    init: &[f64],
    problem: &QuadraticProblem,
    options: &DgnOptions,
) -> Result<DgnOutcome> {
    if support.is_empty() {
        return Err(Error::Validation("support must not be empty".into()));
    }
    if init.len() != support.len() {
        return Err(Error::Geometry("init must have one value per support index".into()));
    }
    if let Some(&bad) = support.iter().find(|&&c| c >= problem.d) {
        return Err(Error::Geometry(format!("support index {bad} out of range")));
    }
    Ok(dgn(support, init.to_vec(), problem, options))
}

fn dgn(support: &[usize], mut s: Vec<f64>, problem: &QuadraticProblem, options: &DgnOptions) -> DgnOutcome {
    let p = problem.p;
    let k = support.len();
    let y = &problem.y;
    let cols: Vec<(&[f64], &[f64])> = support.iter().map(|&c| problem.col(c)).collect();
    let mut cr = vec![0.0; p];
    let mut ci = vec![0.0; p];
    for (j, &v) in s.iter().enumerate() {
        axpy(v, cols[j].0, &mut cr);
        axpy(v, cols[j].1, &mut ci);
    }
    let mut f = objective_from(y, &cr, &ci);
    let floor = f64::EPSILON * f64::EPSILON * problem.sum_y_sq();
    let mut trace = vec![f];
    let mut jac = vec![0.0; p * k];
    let mut resid = vec![0.0; p];
    let mut dr = vec![0.0; p];
    let mut di = vec![0.0; p];
    let mut tr = vec![0.0; p];
    let mut ti = vec![0.0; p];
    for _ in 0..options.max_iterations {
        if f <= floor {
            break;
        }
        for i in 0..p {
            resid[i] = y[i] - (cr[i] * cr[i] + ci[i] * ci[i]);
        }
        // Jacobian of |a_i . s|^2 restricted to the support, column-major.
        for (j, (ar, ai)) in cols.iter().enumerate() {
            let col = &mut jac[j * p..(j + 1) * p];
            for i in 0..p {
                col[i] = 2.0 * (cr[i] * ar[i] + ci[i] * ai[i]);
            }
        }
        let mut h = DMatrix::<f64>::zeros(k, k);
        let mut g = DVector::<f64>::zeros(k);
        for a in 0..k {
            let ja = &jac[a * p..(a + 1) * p];
            g[a] = dot(ja, &resid);
            for b in a..k {
                let v = dot(ja, &jac[b * p..(b + 1) * p]);
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        let Some(step) = solve_regularized(h, &g) else { break };
        dr.fill(0.0);
        di.fill(0.0);
        for (j, &v) in step.iter().enumerate() {
            axpy(v, cols[j].0, &mut dr);
            axpy(v, cols[j].1, &mut di);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            for i in 0..p {
                tr[i] = cr[i] + t * dr[i];
                ti[i] = ci[i] + t * di[i];
            }
            let ft = objective_from(y, &tr, &ti);
            if ft < f {
                accepted = Some(ft);
                break;
            }
            t *= 0.5;
        }
        let Some(fnew) = accepted else { break };
        let mut step_norm = 0.0;
        for (sj, dj) in s.iter_mut().zip(step.iter()) {
            *sj += t * dj;
            step_norm += (t * dj) * (t * dj);
        }
        std::mem::swap(&mut cr, &mut tr);
        std::mem::swap(&mut ci, &mut ti);
        let decrease = f - fnew;
        f = fnew;
        trace.push(f);
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        if step_norm.sqrt() < options.step_tol * (1.0 + s_norm) || decrease <= options.rel_decrease_tol * (f + decrease) {
            break;
        }
    }
    DgnOutcome {
        coefficients: s,
        objective: f,
        trace,
    }
}

/// Cholesky solve of `h d = g`; on failure the diagonal is loaded with
/// `1e-12 trace / k`, growing tenfold until the factorization succeeds.
fn solve_regularized(h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let k = h.nrows();
    let tr = h.trace();
    if !(tr > 0.0) || !tr.is_finite() {
        return None;
    }
    if let Some(ch) = Cholesky::new(h.clone()) {
        return Some(ch.solve(g));
    }
    let mut lambda = 1e-12 * tr / k as f64;
    for _ in 0..12 {
        let mut hr = h.clone();
        for i in 0..k {
            hr[(i, i)] += lambda;
        }
        if let Some(ch) = Cholesky::new(hr) {
            return Some(ch.solve(g));
        }
        lambda *= 10.0;
    }
    None
}

/// Order in which 2-opt swap candidates are tried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SwapStrategy {
    /// Remove the smallest `|s_j|` first, insert the largest `|grad_j|` first;
    /// accept the first strictly improving pair.
    #[default]
    Greedy,
    /// Evaluate every pair and accept the best improving one.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GesparConfig {
    pub sparsity_k: usize,
    /// Convergence threshold on the objective, relative to `sum y^2`.
    pub tau: f64,
    /// Budget on evaluated swap candidates, rejected ones included.
    pub max_total_swaps: usize,
    pub max_dgn_iterations: usize,
    pub rng_seed: u64,
    pub strategy: SwapStrategy,
    /// Absolute allowance added to the threshold; lets noisy problems stop at
    /// the expected noise energy instead of exhausting the budget.
    pub noise_floor: f64,
}

impl GesparConfig {
    pub fn new(sparsity_k: usize, rng_seed: u64) -> Self {
        GesparConfig {
            sparsity_k,
            tau: 1e-4,
            max_total_swaps: 50_000,
            max_dgn_iterations: 100,
            rng_seed,
            strategy: SwapStrategy::Greedy,
            noise_floor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if self.max_total_swaps == 0 || self.max_dgn_iterations == 0 {
            return Err(Error::Config("max_total_swaps and max_dgn_iterations must be >= 1".into()));
        }
        if !(self.noise_floor >= 0.0) {
            return Err(Error::Config("noise_floor must be >= 0".into()));
        }
        Ok(())
    }

    fn threshold(&self, problem: &QuadraticProblem) -> f64 {
        self.tau * problem.sum_y_sq() + self.noise_floor
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GesparResult {
    /// Full-length coefficient vector, zero off the support.
    pub coefficients: Vec<f64>,
    /// Sorted support.
    pub support: Vec<usize>,
    pub objective_value: f64,
    pub swaps_used: usize,
    pub restarts: usize,
    pub converged: bool,
}

struct Candidate {
    support: Vec<usize>,
    values: Vec<f64>,
    objective: f64,
}

impl Candidate {
    fn dense(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        for (&c, &v) in self.support.iter().zip(&self.values) {
            out[c] = v;
        }
        out
    }
}

/// Multi-restart 2-opt local search for a `k`-sparse minimizer.
pub fn gespar_solve(problem: &QuadraticProblem, config: &GesparConfig) -> Result<GesparResult> {
    config.validate()?;
    let (d, k) = (problem.d, config.sparsity_k);
    if k > d {
        return Err(Error::Validation(format!("sparsity k={k} exceeds dimension {d}")));
    }
    let threshold = config.threshold(problem);
    if k == 0 {
        let f = problem.sum_y_sq();
        return Ok(GesparResult {
            coefficients: vec![0.0; d],
            support: vec![],
            objective_value: f,
            swaps_used: 0,
            restarts: 0,
            converged: f <= threshold,
        });
    }
    let opts = DgnOptions {
        max_iterations: config.max_dgn_iterations,
        ..DgnOptions::default()
    };
    let mut rng = rng_from_seed(config.rng_seed);
    let total_y: f64 = problem.y.iter().sum();
    let mut swaps = 0usize;
    let mut restarts = 0usize;
    let mut best: Option<Candidate> = None;

    'search: while swaps < config.max_total_swaps {
        restarts += 1;
        let mut support = sample(&mut rng, d, k).into_vec();
        support.sort_unstable();
        let mut init: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        scale_to_energy(&support, &mut init, problem, total_y);
        let out = dgn(&support, init, problem, &opts);
        let mut current = Candidate {
            support,
            values: out.coefficients,
            objective: out.objective,
        };
        let mut attempted = false;
        loop {
            if best.as_ref().is_none_or(|b| current.objective < b.objective) {
                best = Some(Candidate {
                    support: current.support.clone(),
                    values: current.values.clone(),
                    objective: current.objective,
                });
            }
            if current.objective <= threshold {
                break 'search;
            }
            if swaps >= config.max_total_swaps {
                break 'search;
            }
            let dense = current.dense(d);
            let (cr, ci) = problem.products(&dense);
            let grad = gradient_from(problem, &cr, &ci);
            let mut removal: Vec<usize> = (0..k).collect();
            removal.sort_by(|&a, &b| current.values[a].abs().total_cmp(&current.values[b].abs()));
            let mut insertion: Vec<usize> = (0..d).filter(|c| current.support.binary_search(c).is_err()).collect();
            insertion.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
            if insertion.is_empty() {
                break;
            }
            let mut improved: Option<Candidate> = None;
            'pairs: for &slot in &removal {
                for &q in &insertion {
                    if swaps >= config.max_total_swaps {
                        break 'pairs;
                    }
                    swaps += 1;
                    attempted = true;
                    let mut trial_support = current.support.clone();
                    trial_support[slot] = q;
                    let mut warm = current.values.clone();
                    warm[slot] = 0.0;
                    let out = dgn(&trial_support, warm, problem, &opts);
                    let target = improved.as_ref().map_or(current.objective, |c| c.objective);
                    if out.objective < target {
                        improved = Some(Candidate {
                            support: trial_support,
                            values: out.coefficients,
                            objective: out.objective,
                        });
                        if config.strategy == SwapStrategy::Greedy {
                            break 'pairs;
                        }
                    }
                }
            }
            match improved {
                Some(mut c) => {
                    sort_support(&mut c);
                    current = c;
                }
                None => break,
            }
        }
        if !attempted {
            // Nothing to swap (k = D); charge the restart so the loop terminates.
            swaps += 1;
        }
    }

    let best = best.expect("at least one restart");
    let coefficients = best.dense(d);
    let mut support = best.support.clone();
    support.sort_unstable();
    Ok(GesparResult {
        coefficients,
        support,
        objective_value: best.objective,
        swaps_used: swaps,
        restarts,
        converged: best.objective <= threshold,
    })
}

fn sort_support(c: &mut Candidate) {
    let mut pairs: Vec<(usize, f64)> = c.support.iter().cloned().zip(c.values.iter().cloned()).collect();
    pairs.sort_by_key(|p| p.0);
    c.support = pairs.iter().map(|p| p.0).collect();
    c.values = pairs.iter().map(|p| p.1).collect();
}

/// Rescales `values` so that `sum_i |a_i . s|^2` matches `sum_i y_i`.
fn scale_to_energy(support: &[usize], values: &mut [f64], problem: &QuadraticProblem, total_y: f64) {
    let mut cr = vec![0.0; problem.p];
    let mut ci = vec![0.0; problem.p];
    for (&c, &v) in support.iter().zip(values.iter()) {
        let (r, i) = problem.col(c);
        axpy(v, r, &mut cr);
        axpy(v, i, &mut ci);
    }
    let have: f64 = cr.iter().zip(&ci).map(|(r, i)| r * r + i * i).sum();
    if have > 0.0 && total_y > 0.0 {
        let s = (total_y / have).sqrt();
        values.iter_mut().for_each(|v| *v *= s);
    }
}

/// Linear functionals of the `P`-point DFT of the zero-padded signal `D s`.
pub fn power_spectrum_operator(dictionary: &Dictionary, p: usize) -> Result<MeasurementOperator> {
    let n = dictionary.rows();
    if p < n {
        return Err(Error::Geometry(format!("power spectrum length P={p} must be >= N={n}")));
    }
    let twiddle: Vec<Complex64> = (0..p)
        .map(|t| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * t as f64 / p as f64))
        .collect();
    let dm = dictionary.matrix();
    let mut rows = DMatrix::<Complex64>::zeros(p, dictionary.cols());
    for k in 0..p {
        for i in 0..n {
            let w = twiddle[(k * i) % p];
            for c in 0..dictionary.cols() {
                rows[(k, c)] += w * dm[(i, c)];
            }
        }
    }
    Ok(MeasurementOperator { rows })
}

/// Squared magnitude of the `P`-point DFT of `x` zero-padded to length `P`.
pub fn ps_measure(x: &Signal, p: usize) -> Result<Vec<f64>> {
    if p < x.len() {
        return Err(Error::Geometry(format!("power spectrum length P={p} must be >= N={}", x.len())));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); p];
    buf[..x.len()].copy_from_slice(x.values());
    FftPlanner::new().plan_fft_forward(p).process(&mut buf);
    Ok(buf.iter().map(|v| v.norm_sqr()).collect())
}
