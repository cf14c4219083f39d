//! Value types shared by every solver: signals, periodic windows, synthesis
//! dictionaries, random sparse instances, and the checker for the three
//! sufficient conditions under which an `L = 1` spectrogram determines a
//! nonvanishing signal.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Default relative tolerance for declaring a DFT bin of `|g|^2` to be zero.
pub const NONVANISHING_TOL: f64 = 1e-10;

/// A complex length-`N` signal. Indices are always taken modulo `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal(Vec<Complex64>);

impl Signal {
    pub fn new(values: Vec<Complex64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("signal must have at least one sample".into()));
        }
        Ok(Signal(values))
    }

    pub fn zeros(n: usize) -> Self {
        Signal(vec![Complex64::new(0.0, 0.0); n.max(1)])
    }

    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.0
    }

    /// Sample at `index mod N`.
    pub fn at(&self, index: isize) -> Complex64 {
        self.0[index.rem_euclid(self.0.len() as isize) as usize]
    }

    pub fn energy(&self) -> f64 {
        self.0.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn scaled(&self, factor: Complex64) -> Signal {
        Signal(self.0.iter().map(|v| v * factor).collect())
    }
}

/// How [`make_window`] builds the taps.
#[derive(Debug, Clone, PartialEq)]
pub enum WindowKind {
    /// `g[n] = 1` on the support.
    Square,
    /// Explicit taps for the `W` support positions `a, a+1, ..., a+W-1`.
    Custom(Vec<Complex64>),
}

/// An `N`-periodic window whose support lies in the circular interval
/// `[support_start, support_start + W - 1]`, with both end taps nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    taps: Vec<Complex64>,
    support_start: usize,
    support_length: usize,
}

impl Window {
    /// Builds a window from a full length-`N` tap vector, finding the tightest
    /// circular interval containing its support.
    pub fn from_periodic_taps(taps: Vec<Complex64>) -> Result<Self> {
        let n = taps.len();
        if n == 0 {
            return Err(Error::Geometry("window period must be at least 1".into()));
        }
        let nonzero: Vec<usize> = (0..n).filter(|&i| taps[i] != Complex64::new(0.0, 0.0)).collect();
        if nonzero.is_empty() {
            return Err(Error::Validation("window has no nonzero taps".into()));
        }
        // The support interval is the complement of the longest circular run of zeros.
        let mut best_gap = 0;
        let mut start = nonzero[0];
        for (idx, &i) in nonzero.iter().enumerate() {
            let next = nonzero[(idx + 1) % nonzero.len()];
            let gap = (next + n - i - 1) % n;
            let gap = if nonzero.len() == 1 { n - 1 } else { gap };
            if gap > best_gap {
                best_gap = gap;
                start = next;
            }
        }
        Ok(Window {
            taps,
            support_start: start,
            support_length: n - best_gap,
        })
    }

    pub fn period(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    /// `g[index mod N]`.
    pub fn tap(&self, index: isize) -> Complex64 {
        self.taps[index.rem_euclid(self.taps.len() as isize) as usize]
    }

    pub fn support_start(&self) -> usize {
        self.support_start
    }

    pub fn support_length(&self) -> usize {
        self.support_length
    }

    /// Taps on the support, in order `g[a], ..., g[a+W-1]`.
    pub fn support_taps(&self) -> Vec<Complex64> {
        (0..self.support_length)
            .map(|j| self.tap((self.support_start + j) as isize))
            .collect()
    }

    pub fn is_square(&self) -> bool {
        let one = Complex64::new(1.0, 0.0);
        self.support_taps().iter().all(|&t| t == one)
    }
}

/// Builds a window of support length `w` starting at `support_start`, periodic with period `n`.
pub fn make_window(kind: WindowKind, w: usize, n: usize, support_start: usize) -> Result<Window> {
    if w == 0 || w > n {
        return Err(Error::Geometry(format!("window length W={w} must satisfy 1 <= W <= N={n}")));
    }
    let support = match kind {
        WindowKind::Square => vec![Complex64::new(1.0, 0.0); w],
        WindowKind::Custom(t) => {
            if t.len() != w {
                return Err(Error::Validation(format!(
                    "expected {w} support taps, got {}",
                    t.len()
                )));
            }
            if t.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::Validation("window taps must be finite".into()));
            }
            let zero = Complex64::new(0.0, 0.0);
            if t[0] == zero || t[w - 1] == zero {
                return Err(Error::Validation(
                    "first and last support taps must be nonzero".into(),
                ));
            }
            t
        }
    };
    let mut taps = vec![Complex64::new(0.0, 0.0); n];
    for (j, v) in support.into_iter().enumerate() {
        taps[(support_start + j) % n] = v;
    }
    Ok(Window {
        taps,
        support_start: support_start % n,
        support_length: w,
    })
}

pub fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Outcome of checking the uniqueness conditions for an `L = 1` spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    /// The length-`N` DFT of `|g|^2` has no zero bin.
    pub cond_i: bool,
    /// `N >= 2W - 1`.
    pub cond_ii: bool,
    /// `gcd(N, W - 1) = 1`.
    pub cond_iii: bool,
    pub min_abs_dft_of_v: f64,
    /// Index of the smallest-modulus bin.
    pub argmin_bin: usize,
    /// For square windows, the closed-form test `gcd(N, W) = 1` for condition (i).
    pub square_shortcut: Option<bool>,
}

impl ConditionReport {
    pub fn all_hold(&self) -> bool {
        self.cond_i && self.cond_ii && self.cond_iii
    }
}

/// Length-`N` DFT of `v[n] = |g[n]|^2`.
pub(crate) fn dft_of_window_energy(window: &Window) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = window
        .taps()
        .iter()
        .map(|t| Complex64::new(t.norm_sqr(), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Evaluates the three sufficient conditions for unique recovery at `L = 1`.
///
/// Condition (i) compares the smallest DFT modulus of `|g|^2` against
/// [`NONVANISHING_TOL`] times the largest one.
pub fn check_uniqueness_conditions(window: &Window, n: usize) -> Result<ConditionReport> {
    if window.period() != n {
        return Err(Error::Geometry(format!(
            "window period {} does not match N={n}",
            window.period()
        )));
    }
    let w = window.support_length();
    let spectrum = dft_of_window_energy(window);
    let max = spectrum.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let (argmin_bin, min) = spectrum
        .iter()
        .map(|c| c.norm())
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, m)| if m < acc.1 { (k, m) } else { acc });
    Ok(ConditionReport {
        cond_i: min > NONVANISHING_TOL * max,
        cond_ii: n + 1 >= 2 * w,
        cond_iii: gcd(n, w - 1) == 1,
        min_abs_dft_of_v: min,
        argmin_bin,
        square_shortcut: window.is_square().then(|| gcd(n, w) == 1),
    })
}

/// A synthesis operator `x = D s` with `N` rows and `D` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    columns: DMatrix<Complex64>,
    normalized: bool,
}

impl Dictionary {
    pub fn identity(n: usize) -> Self {
        Dictionary {
            columns: DMatrix::identity(n, n),
            normalized: true,
        }
    }

    pub fn from_matrix(columns: DMatrix<Complex64>) -> Self {
        let normalized = columns
            .column_iter()
            .all(|c| (c.norm() - 1.0).abs() <= 1e-12);
        Dictionary { columns, normalized }
    }

    /// iid standard normal entries, each column scaled to unit Euclidean norm.
    pub fn gaussian<R: rand::Rng>(n: usize, d: usize, rng: &mut R) -> Self {
        let mut m = DMatrix::<Complex64>::zeros(n, d);
        for j in 0..d {
            for i in 0..n {
                let v: f64 = StandardNormal.sample(rng);
                m[(i, j)] = Complex64::new(v, 0.0);
            }
            let norm = m.column(j).norm();
            if norm > 0.0 {
                m.column_mut(j).unscale_mut(norm);
            }
        }
        Dictionary {
            columns: m,
            normalized: true,
        }
    }

    pub fn rows(&self) -> usize {
        self.columns.nrows()
    }

    pub fn cols(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.columns
    }

    pub fn synthesize(&self, coefficients: &[f64]) -> Result<Signal> {
        if coefficients.len() != self.cols() {
            return Err(Error::Geometry(format!(
                "dictionary has {} columns but {} coefficients were given",
                self.cols(),
                coefficients.len()
            )));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows()];
        for (j, &c) in coefficients.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.columns[(i, j)] * c;
            }
        }
        Signal::new(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictionaryKind {
    Identity,
    Gaussian,
}

/// A planted `k`-sparse coefficient vector and the signal it synthesizes.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseInstance {
    pub coefficients: Vec<f64>,
    /// Sorted support indices.
    pub support: Vec<usize>,
    pub signal: Signal,
}

/// Seeded RNG used throughout the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a master seed with a sequence of counters into a child seed (SplitMix64 finalizer).
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    let mut h = mix(master.wrapping_add(0x9e37_79b9_7f4a_7c15));
    for &p in parts {
        h = mix(h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6));
    }
    h
}

/// Draws a dictionary and a `k`-sparse instance with real standard-normal
/// coefficients on a uniformly random support.
pub fn sample_sparse_instance(
    n: usize,
    d_cols: usize,
    k: usize,
    kind: DictionaryKind,
    seed: u64,
) -> Result<(Dictionary, SparseInstance)> {
    if k > d_cols {
        return Err(Error::Instance(format!("sparsity k={k} exceeds {d_cols} columns")));
    }
    if n == 0 {
        return Err(Error::Instance("signal length must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let dictionary = match kind {
        DictionaryKind::Identity => {
            if d_cols != n {
                return Err(Error::Instance("identity dictionary must be square".into()));
            }
            Dictionary::identity(n)
        }
        DictionaryKind::Gaussian => Dictionary::gaussian(n, d_cols, &mut rng),
    };
    let mut support = sample(&mut rng, d_cols, k).into_vec();
    support.sort_unstable();
    let mut coefficients = vec![0.0; d_cols];
    for &j in &support {
        coefficients[j] = StandardNormal.sample(&mut rng);
    }
    let signal = dictionary.synthesize(&coefficients)?;
    Ok((
        dictionary,
        SparseInstance {
            coefficients,
            support,
            signal,
        },
    ))
}
