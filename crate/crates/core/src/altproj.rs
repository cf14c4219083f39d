//! Alternating projections between the set of grids with the measured
//! magnitudes and the range of the STFT.
//!
//! [`gla_run`] is Griffin-Lim: keep the current phase, impose the measured
//! magnitude, return to the signal domain by overlap-add least squares.
//! [`pcgp_run`] replaces the overlap-add step by a rank-one projection of the
//! aligned time-domain matrix `T(t, n) = g_t x[n]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::primitives::{derive_seed, rng_from_seed, Signal, Window};
use crate::stft::{MeasurementSet, StftPlan};

/// Magnitudes below this are treated as phase-less; the phase factor is taken as 1.
pub const ZERO_MAGNITUDE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AltProjMethod {
    Gla,
    Pcgp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AltProjConfig {
    pub max_iterations: usize,
    pub restarts: usize,
    pub rng_seed: u64,
    /// Stop once the relative change in residual falls below this.
    pub halt_tolerance: f64,
    pub method: AltProjMethod,
    /// Skip the remaining restarts once a restart's residual, relative to
    /// `sum y`, is below this value. `None` always runs every restart.
    pub early_accept: Option<f64>,
}

impl Default for AltProjConfig {
    fn default() -> Self {
        AltProjConfig {
            max_iterations: 1000,
            restarts: 50,
            rng_seed: 0,
            halt_tolerance: 1e-8,
            method: AltProjMethod::Gla,
            early_accept: None,
        }
    }
}

impl AltProjConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.restarts == 0 {
            return Err(Error::Config("max_iterations and restarts must be >= 1".into()));
        }
        if !(self.halt_tolerance >= 0.0) {
            return Err(Error::Config("halt_tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AltProjResult {
    pub estimate: Signal,
    /// Residual `sum (sqrt(y) - |X|)^2` of the starting point followed by one
    /// entry per completed iteration.
    pub residual_trace: Vec<f64>,
    pub best_restart: usize,
}

impl AltProjResult {
    pub fn final_residual(&self) -> f64 {
        *self.residual_trace.last().unwrap_or(&f64::INFINITY)
    }
}

fn validate_inputs(y: &MeasurementSet, window: &Window) -> Result<StftPlan> {
    if y.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("measurements must be finite".into()));
    }
    let g = y.geometry;
    if window.period() != g.n || window.support_length() != g.w || window.support_start() != g.a {
        return Err(Error::Geometry("window does not match the measurement geometry".into()));
    }
    if g.bins < g.w {
        return Err(Error::Geometry(format!(
            "alternating projections need K >= W (K={}, W={})",
            g.bins, g.w
        )));
    }
    let plan = StftPlan::new(window, g.hop, g.bins)?;
    let uncovered = plan.uncovered();
    if !uncovered.is_empty() {
        return Err(Error::Inversion { uncovered });
    }
    Ok(plan)
}

/// Rotates `x` so its largest-modulus entry is real and positive.
pub fn canonicalize(x: &mut [Complex64]) {
    let (mut best, mut idx) = (0.0, 0);
    for (i, v) in x.iter().enumerate() {
        if v.norm() > best {
            best = v.norm();
            idx = i;
        }
    }
    if best > 0.0 {
        let rot = x[idx].conj() / best;
        x.iter_mut().for_each(|v| *v *= rot);
    }
}

fn random_start(plan: &StftPlan, amplitudes: &[f64], seed: u64) -> Vec<Complex64> {
    let n = plan.geometry().n;
    let mut rng = rng_from_seed(seed);
    let mut x: Vec<Complex64> = (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im)
        })
        .collect();
    let mut grid = vec![Complex64::new(0.0, 0.0); plan.geometry().measurement_count()];
    plan.forward_into(&x, &mut grid);
    let have: f64 = grid.iter().map(|v| v.norm_sqr()).sum();
    let want: f64 = amplitudes.iter().map(|a| a * a).sum();
    if have > 0.0 {
        let s = (want / have).sqrt();
        x.iter_mut().for_each(|v| *v *= s);
    }
    x
}

/// Imposes `target` magnitudes on `values` in place, keeping phases.
/// Returns the residual `sum (target - |values|)^2` before the update.
fn impose_magnitudes(values: &mut [Complex64], target: &[f64]) -> f64 {
    let mut residual = 0.0;
    for (v, &t) in values.iter_mut().zip(target) {
        let mag = v.norm();
        residual += (t - mag) * (t - mag);
        *v = if mag < ZERO_MAGNITUDE {
            Complex64::new(t, 0.0)
        } else {
            *v * (t / mag)
        };
    }
    residual
}

fn residual_of(values: &[Complex64], target: &[f64]) -> f64 {
    values
        .iter()
        .zip(target)
        .map(|(v, t)| (t - v.norm()) * (t - v.norm()))
        .sum()
}

fn halted(trace: &[f64], tol: f64) -> bool {
    match trace {
        [.., prev, last] => *last == 0.0 || (prev - last).abs() <= tol * prev.abs(),
        [last] => *last == 0.0,
        [] => false,
    }
}

/// One Griffin-Lim run from `init`.
pub fn gla_from(y: &MeasurementSet, window: &Window, init: &Signal, config: &AltProjConfig) -> Result<AltProjResult> {
    let plan = validate_inputs(y, window)?;
    let amplitudes: Vec<f64> = y.y.iter().map(|v| v.max(0.0).sqrt()).collect();
    gla_single(&plan, &amplitudes, init.values().to_vec(), config)
}

fn gla_single(plan: &StftPlan, amplitudes: &[f64], mut x: Vec<Complex64>, config: &AltProjConfig) -> Result<AltProjResult> {
    let mut grid = vec![Complex64::new(0.0, 0.0); plan.geometry().measurement_count()];
    let mut trace = Vec::with_capacity(config.max_iterations + 1);
    for _ in 0..config.max_iterations {
        plan.forward_into(&x, &mut grid);
        trace.push(impose_magnitudes(&mut grid, amplitudes));
        if halted(&trace, config.halt_tolerance) {
            break;
        }
        plan.inverse_into(&grid, &mut x)?;
    }
    plan.forward_into(&x, &mut grid);
    trace.push(residual_of(&grid, amplitudes));
    canonicalize(&mut x);
    Ok(AltProjResult {
        estimate: Signal::new(x)?,
        residual_trace: trace,
        best_restart: 0,
    })
}

/// Scratch state for PCGP on the stride-1 grid.
struct PcgpState {
    full: StftPlan,
    hop: usize,
}

impl PcgpState {
    fn new(window: &Window, hop: usize, bins: usize) -> Result<Self> {
        Ok(PcgpState {
            full: StftPlan::new(window, 1, bins)?,
            hop,
        })
    }

    /// Residual of `grid` (stride-1 rows) against the measured rows.
    fn measured_residual(&self, grid: &[Complex64], amplitudes: &[f64]) -> f64 {
        let k = self.full.geometry().bins;
        (0..amplitudes.len() / k)
            .map(|r| {
                let m = r * self.hop;
                residual_of(&grid[m * k..(m + 1) * k], &amplitudes[r * k..(r + 1) * k])
            })
            .sum()
    }

    fn impose(&self, grid: &mut [Complex64], amplitudes: &[f64]) -> f64 {
        let k = self.full.geometry().bins;
        (0..amplitudes.len() / k)
            .map(|r| {
                let m = r * self.hop;
                impose_magnitudes(&mut grid[m * k..(m + 1) * k], &amplitudes[r * k..(r + 1) * k])
            })
            .sum()
    }

    /// Rank-one signal update from the aligned matrix of inverse-DFT segments.
    fn update(&self, grid: &[Complex64], x: &mut [Complex64], warm: &mut Option<DVector<Complex64>>) {
        let g = self.full.geometry();
        let (n, w, k) = (g.n, g.w, g.bins);
        let taps = self.full.segment_taps();
        let mut buf = vec![Complex64::new(0.0, 0.0); g.dft_len()];
        let mut seg = vec![Complex64::new(0.0, 0.0); w];
        // aligned[(j, n)] = segment j of the window position whose j-th sample is n.
        let mut aligned = DMatrix::<Complex64>::zeros(w, n);
        for m in 0..n {
            self.full.inverse_segment(&grid[m * k..(m + 1) * k], &mut buf, &mut seg);
            for j in 0..w {
                aligned[(j, g.sample_index(m, j))] = seg[j];
            }
        }
        let gram = &aligned * aligned.adjoint();
        if gram.iter().all(|v| v.norm() == 0.0) {
            x.fill(Complex64::new(0.0, 0.0));
            return;
        }
        let u = dominant_eigenvector(&gram, warm);
        let tap_norm: f64 = taps.iter().map(|t| t.norm_sqr()).sum();
        let proj: Complex64 = taps.iter().zip(u.iter()).map(|(t, v)| t.conj() * v).sum::<Complex64>() / tap_norm;
        for (col, out) in x.iter_mut().enumerate() {
            let c: Complex64 = (0..w).map(|j| u[j].conj() * aligned[(j, col)]).sum();
            *out = proj * c;
        }
    }
}

/// Dominant eigenvector of a Hermitian PSD matrix. Power iteration from the
/// previous iterate is tried first; it is accepted once the eigen-residual is
/// at rounding level and the Rayleigh quotient exceeds half the trace, which
/// rules out every other eigenvalue. Otherwise a full decomposition is used.
fn dominant_eigenvector(gram: &DMatrix<Complex64>, warm: &mut Option<DVector<Complex64>>) -> DVector<Complex64> {
    let trace = gram.trace().re;
    if let Some(start) = warm.as_ref() {
        let mut u = start.clone();
        for _ in 0..40 {
            let v = gram * &u;
            let lambda = u.dotc(&v).re;
            let resid = (&v - &u * Complex64::new(lambda, 0.0)).norm();
            let norm = v.norm();
            if norm == 0.0 {
                break;
            }
            if resid <= 1e-13 * lambda && lambda >= 0.5 * trace {
                *warm = Some(u.clone());
                return u;
            }
            u = v / Complex64::new(norm, 0.0);
        }
    }
    let eig = SymmetricEigen::new(gram.clone());
    let top = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
        .0;
    // The eigensolver's vector is only accurate to about sqrt(eps); polish it.
    let mut u = eig.eigenvectors.column(top).into_owned();
    for _ in 0..2 {
        let next = gram * &u;
        let norm = next.norm();
        if norm == 0.0 {
            break;
        }
        u = next / Complex64::new(norm, 0.0);
    }
    *warm = Some(u.clone());
    u
}

fn pcgp_single(
    state: &PcgpState,
    amplitudes: &[f64],
    mut x: Vec<Complex64>,
    config: &AltProjConfig,
) -> Result<AltProjResult> {
    let mut grid = vec![Complex64::new(0.0, 0.0); state.full.geometry().measurement_count()];
    let mut trace = Vec::with_capacity(config.max_iterations + 1);
    let mut warm = None;
    for _ in 0..config.max_iterations {
        state.full.forward_into(&x, &mut grid);
        trace.push(state.impose(&mut grid, amplitudes));
        if halted(&trace, config.halt_tolerance) {
            break;
        }
        state.update(&grid, &mut x, &mut warm);
    }
    state.full.forward_into(&x, &mut grid);
    trace.push(state.measured_residual(&grid, amplitudes));
    canonicalize(&mut x);
    Ok(AltProjResult {
        estimate: Signal::new(x)?,
        residual_trace: trace,
        best_restart: 0,
    })
}

/// One PCGP run from `init`.
pub fn pcgp_from(y: &MeasurementSet, window: &Window, init: &Signal, config: &AltProjConfig) -> Result<AltProjResult> {
    validate_inputs(y, window)?;
    let state = PcgpState::new(window, y.geometry.hop, y.geometry.bins)?;
    let amplitudes: Vec<f64> = y.y.iter().map(|v| v.max(0.0).sqrt()).collect();
    pcgp_single(&state, &amplitudes, init.values().to_vec(), config)
}

fn multistart<F>(plan: &StftPlan, amplitudes: &[f64], config: &AltProjConfig, mut single: F) -> Result<AltProjResult>
where
    F: FnMut(Vec<Complex64>) -> Result<AltProjResult>,
{
    config.validate()?;
    let total: f64 = amplitudes.iter().map(|a| a * a).sum();
    let mut best: Option<AltProjResult> = None;
    for r in 0..config.restarts {
        let init = random_start(plan, amplitudes, derive_seed(config.rng_seed, &[r as u64]));
        let mut res = single(init)?;
        res.best_restart = r;
        let better = best
            .as_ref()
            .is_none_or(|b| res.final_residual() < b.final_residual());
        if better {
            best = Some(res);
        }
        let b = best.as_ref().unwrap().final_residual();
        if let Some(th) = config.early_accept {
            if b <= th * total {
                break;
            }
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Griffin-Lim with random restarts; the restart with the smallest final residual wins.
pub fn gla_run(y: &MeasurementSet, window: &Window, config: &AltProjConfig) -> Result<AltProjResult> {
    let plan = validate_inputs(y, window)?;
    let amplitudes: Vec<f64> = y.y.iter().map(|v| v.max(0.0).sqrt()).collect();
    multistart(&plan, &amplitudes, config, |init| gla_single(&plan, &amplitudes, init, config))
}

/// PCGP with random restarts.
pub fn pcgp_run(y: &MeasurementSet, window: &Window, config: &AltProjConfig) -> Result<AltProjResult> {
    let plan = validate_inputs(y, window)?;
    let state = PcgpState::new(window, y.geometry.hop, y.geometry.bins)?;
    let amplitudes: Vec<f64> = y.y.iter().map(|v| v.max(0.0).sqrt()).collect();
    multistart(&plan, &amplitudes, config, |init| pcgp_single(&state, &amplitudes, init, config))
}

/// Dispatches on `config.method`.
pub fn run(y: &MeasurementSet, window: &Window, config: &AltProjConfig) -> Result<AltProjResult> {
    match config.method {
        AltProjMethod::Gla => gla_run(y, window, config),
        AltProjMethod::Pcgp => pcgp_run(y, window, config),
    }
}

/// The aligned matrix `T(j, n)` for a grid on the stride-1 positions; exposed for rank checks.
pub fn aligned_matrix(x: &Signal, window: &Window, bins: usize) -> Result<DMatrix<Complex64>> {
    let plan = StftPlan::new(window, 1, bins)?;
    let g = *plan.geometry();
    if g.bins < g.w {
        return Err(Error::Geometry("need K >= W".into()));
    }
    let grid = plan.forward(x)?;
    let mut buf = vec![Complex64::new(0.0, 0.0); g.dft_len()];
    let mut seg = vec![Complex64::new(0.0, 0.0); g.w];
    let mut aligned = DMatrix::<Complex64>::zeros(g.w, g.n);
    for m in 0..g.n {
        plan.inverse_segment(grid.row(m), &mut buf, &mut seg);
        for j in 0..g.w {
            aligned[(j, g.sample_index(m, j))] = seg[j];
        }
    }
    Ok(aligned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::nmse;
    use crate::primitives::{make_window, WindowKind};
    use crate::stft::measure;
    use rand::Rng;

    fn random_signal(n: usize, seed: u64) -> Signal {
        let mut rng = rng_from_seed(seed);
        Signal::new(
            (0..n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    fn cfg(method: AltProjMethod, iters: usize, restarts: usize, seed: u64) -> AltProjConfig {
        AltProjConfig {
            max_iterations: iters,
            restarts,
            rng_seed: seed,
            halt_tolerance: 0.0,
            method,
            early_accept: None,
        }
    }

    #[test]
    fn gla_fixed_point_at_truth() {
        let g = make_window(WindowKind::Square, 5, 16, 0).unwrap();
        let x = random_signal(16, 1);
        let y = measure(&x, &g, 1, 16).unwrap();
        let r = gla_from(&y, &g, &x, &cfg(AltProjMethod::Gla, 5, 1, 0)).unwrap();
        assert!(r.residual_trace[0] < 1e-20);
        assert!(nmse(&r.estimate, &x).unwrap() < 1e-20);
    }

    #[test]
    fn zero_measurements_give_zero_estimate() {
        let g = make_window(WindowKind::Square, 5, 16, 0).unwrap();
        let y = measure(&Signal::zeros(16), &g, 2, 16).unwrap();
        for method in [AltProjMethod::Gla, AltProjMethod::Pcgp] {
            let r = run(&y, &g, &cfg(method, 10, 2, 3)).unwrap();
            assert!(r.estimate.energy() < 1e-30, "{method:?}");
        }
    }

    #[test]
    fn gla_residual_is_monotone() {
        let g = make_window(WindowKind::Square, 5, 16, 0).unwrap();
        let y = measure(&random_signal(16, 7), &g, 1, 16).unwrap();
        let r = gla_run(&y, &g, &cfg(AltProjMethod::Gla, 200, 3, 4)).unwrap();
        for w in r.residual_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn pcgp_consistent_matrix_is_rank_one() {
        let g = make_window(WindowKind::Square, 5, 16, 0).unwrap();
        let x = random_signal(16, 2);
        let t = aligned_matrix(&x, &g, 16).unwrap();
        let sv = t.singular_values();
        let mut s: Vec<f64> = sv.iter().cloned().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(s[1] < 1e-10 * s[0]);

        let y = measure(&x, &g, 1, 16).unwrap();
        let r = pcgp_from(&y, &g, &x, &cfg(AltProjMethod::Pcgp, 3, 1, 0)).unwrap();
        let e = nmse(&r.estimate, &x).unwrap();
        assert!(r.final_residual() < 1e-10, "residual {} nmse {e}", r.final_residual());
        assert!(e < 1e-20, "nmse {e}");
    }

    #[test]
    fn pcgp_does_not_end_above_its_start() {
        let g = make_window(WindowKind::Square, 5, 16, 0).unwrap();
        let y = measure(&random_signal(16, 5), &g, 1, 16).unwrap();
        for seed in 0..5 {
            let r = pcgp_run(&y, &g, &cfg(AltProjMethod::Pcgp, 100, 1, seed)).unwrap();
            assert!(r.final_residual() <= r.residual_trace[0]);
        }
    }

    #[test]
    fn restarts_are_order_independent() {
        let g = make_window(WindowKind::Square, 4, 12, 0).unwrap();
        let y = measure(&random_signal(12, 9), &g, 2, 12).unwrap();
        let a = gla_run(&y, &g, &cfg(AltProjMethod::Gla, 30, 4, 11)).unwrap();
        let b = gla_run(&y, &g, &cfg(AltProjMethod::Gla, 30, 4, 11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = make_window(WindowKind::Square, 2, 8, 0).unwrap();
        let y = measure(&random_signal(8, 1), &g, 4, 8).unwrap();
        assert!(matches!(gla_run(&y, &g, &cfg(AltProjMethod::Gla, 5, 1, 0)), Err(Error::Inversion { .. })));
        let g = make_window(WindowKind::Square, 3, 8, 0).unwrap();
        let mut y = measure(&random_signal(8, 1), &g, 1, 8).unwrap();
        y.y[3] = f64::NAN;
        assert!(matches!(gla_run(&y, &g, &cfg(AltProjMethod::Gla, 5, 1, 0)), Err(Error::Validation(_))));
    }
}
