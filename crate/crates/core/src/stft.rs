//! Periodic short-time Fourier transform on a length-`N` circle.
//!
//! Window position `m` covers the samples `n` with `g[mL - n] != 0`. Each
//! windowed segment is laid out in a DFT buffer of length
//! `max(K, W)` at position `(n - mL) mod max(K, W)`, so that sample `mL`
//! lands on buffer index 0. When `K = N` this equals the textbook transform
//! `sum_n x[n] g[mL-n] exp(-j 2 pi k n / N)` times `exp(j 2 pi k mL / N)`;
//! magnitudes are identical. For `K < W` the `W`-point DFT is computed and
//! only bins `0..K` are kept.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::primitives::{Dictionary, Signal, Window};

/// Window geometry of a transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    /// Signal length.
    pub n: usize,
    /// Window support length.
    pub w: usize,
    /// Window support start `a`.
    pub a: usize,
    /// Hop between window positions.
    pub hop: usize,
    /// Number of retained frequency bins per window position.
    pub bins: usize,
}

impl Geometry {
    pub fn new(window: &Window, hop: usize, bins: usize) -> Result<Self> {
        let n = window.period();
        if hop == 0 || hop > n {
            return Err(Error::Geometry(format!("stride L={hop} must satisfy 1 <= L <= N={n}")));
        }
        if bins == 0 {
            return Err(Error::Geometry("DFT length K must be at least 1".into()));
        }
        Ok(Geometry {
            n,
            w: window.support_length(),
            a: window.support_start(),
            hop,
            bins,
        })
    }

    /// Number of window positions, `ceil(N / L)`.
    pub fn positions(&self) -> usize {
        self.n.div_ceil(self.hop)
    }

    /// Length of the DFT actually evaluated per position.
    pub fn dft_len(&self) -> usize {
        self.bins.max(self.w)
    }

    /// Total number of scalar measurements `P = M K`.
    pub fn measurement_count(&self) -> usize {
        self.positions() * self.bins
    }

    /// Offsets `d = n - mL` of the segment samples, in segment order `j = 0..W`.
    /// The tap multiplying segment index `j` is `g[a + W - 1 - j]`.
    pub(crate) fn offset(&self, j: usize) -> isize {
        j as isize - (self.a + self.w - 1) as isize
    }

    pub(crate) fn sample_index(&self, m: usize, j: usize) -> usize {
        ((m * self.hop) as isize + self.offset(j)).rem_euclid(self.n as isize) as usize
    }

    pub(crate) fn buffer_index(&self, j: usize) -> usize {
        self.offset(j).rem_euclid(self.dft_len() as isize) as usize
    }

    /// Linear phase `exp(-j 2 pi k mL / N)` mapping this layout onto the
    /// textbook kernel; only meaningful when `K = N`.
    pub fn textbook_phase(&self, m: usize, k: usize) -> Complex64 {
        let arg = -2.0 * std::f64::consts::PI * ((k * m * self.hop) % self.n) as f64 / self.n as f64;
        Complex64::from_polar(1.0, arg)
    }
}

/// Complex STFT values `X(m, k)`, stored row-major with `M` rows of `K` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct StftGrid {
    pub values: Vec<Complex64>,
    pub geometry: Geometry,
}

impl StftGrid {
    pub fn rows(&self) -> usize {
        self.geometry.positions()
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        let k = self.geometry.bins;
        &self.values[m * k..(m + 1) * k]
    }

    pub fn get(&self, m: usize, k: usize) -> Complex64 {
        self.values[m * self.geometry.bins + k]
    }
}

/// Squared STFT magnitudes `y(m, k) = |X(m, k)|^2`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub y: Vec<f64>,
    pub geometry: Geometry,
    pub noise_snr_db: Option<f64>,
}

impl MeasurementSet {
    pub fn new(y: Vec<f64>, geometry: Geometry) -> Result<Self> {
        if y.len() != geometry.measurement_count() {
            return Err(Error::Geometry(format!(
                "expected {} measurements, got {}",
                geometry.measurement_count(),
                y.len()
            )));
        }
        Ok(MeasurementSet {
            y,
            geometry,
            noise_snr_db: None,
        })
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let k = self.geometry.bins;
        &self.y[m * k..(m + 1) * k]
    }

    pub fn get(&self, m: usize, k: usize) -> f64 {
        self.y[m * self.geometry.bins + k]
    }
}

/// Precomputed FFT plans and tap layout for one window geometry.
#[derive(Clone)]
pub struct StftPlan {
    geometry: Geometry,
    /// Segment taps `g[a + W - 1 - j]` for `j = 0..W`.
    seg_taps: Vec<Complex64>,
    /// Buffer positions of the segment samples.
    buf_pos: Vec<usize>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `sum_m |g[mL - n]|^2` for each `n`.
    coverage: Vec<f64>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan").field("geometry", &self.geometry).finish()
    }
}

impl StftPlan {
    pub fn new(window: &Window, hop: usize, bins: usize) -> Result<Self> {
        let geometry = Geometry::new(window, hop, bins)?;
        let w = geometry.w;
        let seg_taps: Vec<Complex64> = (0..w)
            .map(|j| window.tap((geometry.a + w - 1 - j) as isize))
            .collect();
        let buf_pos = (0..w).map(|j| geometry.buffer_index(j)).collect();
        let mut planner = FftPlanner::new();
        let len = geometry.dft_len();
        let mut coverage = vec![0.0; geometry.n];
        for m in 0..geometry.positions() {
            for (j, t) in seg_taps.iter().enumerate() {
                coverage[geometry.sample_index(m, j)] += t.norm_sqr();
            }
        }
        Ok(StftPlan {
            geometry,
            seg_taps,
            buf_pos,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            coverage,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn segment_taps(&self) -> &[Complex64] {
        &self.seg_taps
    }

    /// Indices never touched by any window position.
    pub fn uncovered(&self) -> Vec<usize> {
        (0..self.geometry.n).filter(|&i| self.coverage[i] <= 0.0).collect()
    }

    /// Full-length DFT buffer for window position `m` (before truncation to `K` bins).
    pub(crate) fn spectrum_row(&self, x: &[Complex64], m: usize, buf: &mut [Complex64]) {
        buf.fill(Complex64::new(0.0, 0.0));
        for j in 0..self.geometry.w {
            buf[self.buf_pos[j]] = x[self.geometry.sample_index(m, j)] * self.seg_taps[j];
        }
        self.forward.process(buf);
    }

    /// Forward transform into a caller-provided row-major buffer of `M K` values.
    pub fn forward_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        let g = &self.geometry;
        let mut buf = vec![Complex64::new(0.0, 0.0); g.dft_len()];
        for m in 0..g.positions() {
            self.spectrum_row(x, m, &mut buf);
            out[m * g.bins..(m + 1) * g.bins].copy_from_slice(&buf[..g.bins]);
        }
    }

    pub fn forward(&self, x: &Signal) -> Result<StftGrid> {
        if x.len() != self.geometry.n {
            return Err(Error::Geometry(format!(
                "signal length {} does not match window period {}",
                x.len(),
                self.geometry.n
            )));
        }
        let mut values = vec![Complex64::new(0.0, 0.0); self.geometry.measurement_count()];
        self.forward_into(x.values(), &mut values);
        Ok(StftGrid {
            values,
            geometry: self.geometry,
        })
    }

    /// Time-domain segment of row `m`: inverse DFT of `row`, read at the `W`
    /// segment positions. Requires `K >= W`.
    pub(crate) fn inverse_segment(&self, row: &[Complex64], buf: &mut [Complex64], seg: &mut [Complex64]) {
        let len = self.geometry.dft_len();
        buf.copy_from_slice(row);
        self.inverse.process(buf);
        let scale = 1.0 / len as f64;
        for j in 0..self.geometry.w {
            seg[j] = buf[self.buf_pos[j]] * scale;
        }
    }

    /// Overlap-add least-squares inversion of a full grid into `out`.
    pub fn inverse_into(&self, values: &[Complex64], out: &mut [Complex64]) -> Result<()> {
        let g = &self.geometry;
        if g.bins < g.w {
            return Err(Error::Geometry(format!(
                "inversion needs K >= W (K={}, W={})",
                g.bins, g.w
            )));
        }
        let uncovered = self.uncovered();
        if !uncovered.is_empty() {
            return Err(Error::Inversion { uncovered });
        }
        out.fill(Complex64::new(0.0, 0.0));
        let mut buf = vec![Complex64::new(0.0, 0.0); g.dft_len()];
        let mut seg = vec![Complex64::new(0.0, 0.0); g.w];
        for m in 0..g.positions() {
            self.inverse_segment(&values[m * g.bins..(m + 1) * g.bins], &mut buf, &mut seg);
            for j in 0..g.w {
                out[g.sample_index(m, j)] += seg[j] * self.seg_taps[j].conj();
            }
        }
        for (o, c) in out.iter_mut().zip(&self.coverage) {
            *o /= *c;
        }
        Ok(())
    }
}

/// Forward STFT of `x` with hop `hop` and `bins` retained bins per position.
pub fn stft_forward(x: &Signal, window: &Window, hop: usize, bins: usize) -> Result<StftGrid> {
    StftPlan::new(window, hop, bins)?.forward(x)
}

pub fn magnitude_sq(grid: &StftGrid) -> MeasurementSet {
    MeasurementSet {
        y: grid.values.iter().map(|v| v.norm_sqr()).collect(),
        geometry: grid.geometry,
        noise_snr_db: None,
    }
}

/// Spectrogram `|STFT(x)|^2`.
pub fn measure(x: &Signal, window: &Window, hop: usize, bins: usize) -> Result<MeasurementSet> {
    Ok(magnitude_sq(&stft_forward(x, window, hop, bins)?))
}

/// Inverse DFT per window position followed by the normalized overlap-add
/// `x[n] = sum_m x_g(m,n) conj(g[mL-n]) / sum_m |g[mL-n]|^2`.
pub fn istft(grid: &StftGrid, window: &Window, hop: usize) -> Result<Signal> {
    if hop != grid.geometry.hop || window.period() != grid.geometry.n {
        return Err(Error::Geometry("window or stride does not match the grid".into()));
    }
    let plan = StftPlan::new(window, hop, grid.geometry.bins)?;
    let mut out = vec![Complex64::new(0.0, 0.0); grid.geometry.n];
    plan.inverse_into(&grid.values, &mut out)?;
    Signal::new(out)
}

/// Dense linear functionals `a_{m,k}` with `y(m,k) = |a_{m,k} . s|^2` for `x = D s`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementOperator {
    /// `P x D` matrix; row `m K + k` corresponds to measurement `(m, k)`.
    pub rows: DMatrix<Complex64>,
}

impl MeasurementOperator {
    pub fn count(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// `|a_i . s|^2` for every row.
    pub fn evaluate(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.dim() {
            return Err(Error::Geometry(format!(
                "operator acts on {} coefficients, got {}",
                self.dim(),
                s.len()
            )));
        }
        Ok((0..self.count())
            .map(|i| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, &c) in s.iter().enumerate() {
                    acc += self.rows[(i, j)] * c;
                }
                acc.norm_sqr()
            })
            .collect())
    }
}

/// Composes the per-position DFT, the diagonal window and the dictionary into
/// one row per measurement.
pub fn build_measurement_operator(
    window: &Window,
    hop: usize,
    bins: usize,
    dictionary: &Dictionary,
) -> Result<MeasurementOperator> {
    let geometry = Geometry::new(window, hop, bins)?;
    if dictionary.rows() != geometry.n {
        return Err(Error::Geometry(format!(
            "dictionary has {} rows, expected N={}",
            dictionary.rows(),
            geometry.n
        )));
    }
    let len = geometry.dft_len();
    let d = dictionary.matrix();
    let mut rows = DMatrix::<Complex64>::zeros(geometry.measurement_count(), dictionary.cols());
    let twiddle: Vec<Complex64> = (0..len)
        .map(|t| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * t as f64 / len as f64))
        .collect();
    for m in 0..geometry.positions() {
        for j in 0..geometry.w {
            let n = geometry.sample_index(m, j);
            let tap = window.tap((geometry.a + geometry.w - 1 - j) as isize);
            if tap == Complex64::new(0.0, 0.0) {
                continue;
            }
            let pos = geometry.buffer_index(j);
            for k in 0..bins {
                let coef = twiddle[(k * pos) % len] * tap;
                let r = m * bins + k;
                for c in 0..dictionary.cols() {
                    rows[(r, c)] += coef * d[(n, c)];
                }
            }
        }
    }
    Ok(MeasurementOperator { rows })
}
