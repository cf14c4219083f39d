//! Exact recovery of nonvanishing signals from a stride-1, full-band
//! spectrogram, and explicit pairs of distinct signals sharing a spectrogram.
//!
//! Recovery runs in two stages. The row sums of the spectrogram equal `N`
//! times the circular convolution of `|g|^2` with `|x|^2`, which is inverted
//! in the DFT domain. Then lag `W - 1` of each row's circular autocorrelation
//! isolates one product `x[m-a] conj(x[m-a-W+1])`, and these phase
//! differences are chained in steps of `W - 1` starting from `x[0] > 0`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::primitives::{
    check_uniqueness_conditions, dft_of_window_energy, gcd, make_window, rng_from_seed, Signal, Window,
    WindowKind, NONVANISHING_TOL,
};
use crate::stft::{measure, Geometry, MeasurementSet};

/// Relative threshold below which recovered squared magnitudes are clamped to zero.
pub const CLAMP_TOL: f64 = 1e-12;

/// Recovered squared moduli `z[n] = |x[n]|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeProfile {
    pub z: Vec<f64>,
}

/// Unit phasors `exp(j (arg x[i] - arg x[i-W+1]))`, indexed by `i = m - a`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseChain {
    pub deltas: Vec<Complex64>,
    pub step: usize,
    pub anchor: usize,
}

impl PhaseChain {
    /// Residues reachable from the anchor by repeated steps.
    pub fn reachable(&self) -> Vec<bool> {
        let n = self.deltas.len();
        let mut seen = vec![false; n];
        let mut i = self.anchor;
        while !seen[i] {
            seen[i] = true;
            i = (i + self.step) % n;
        }
        seen
    }

    /// Unit phasors for every sample, with the anchor set to phase zero.
    pub fn propagate(&self) -> Result<Vec<Complex64>> {
        let n = self.deltas.len();
        let unreached: Vec<usize> = self
            .reachable()
            .iter()
            .enumerate()
            .filter(|(_, &r)| !r)
            .map(|(i, _)| i)
            .collect();
        if !unreached.is_empty() {
            return Err(Error::PropagationIncomplete {
                gcd: gcd(n, self.step),
                unreached,
            });
        }
        let mut phase = vec![Complex64::new(0.0, 0.0); n];
        phase[self.anchor] = Complex64::new(1.0, 0.0);
        let mut i = self.anchor;
        loop {
            let next = (i + self.step) % n;
            if next == self.anchor {
                break;
            }
            phase[next] = phase[i] * self.deltas[next];
            i = next;
        }
        Ok(phase)
    }
}

fn require_full_band(y: &MeasurementSet, window: &Window) -> Result<Geometry> {
    let g = y.geometry;
    if g.hop != 1 {
        return Err(Error::UnsupportedGeometry(format!(
            "direct recovery needs stride L=1, got L={}",
            g.hop
        )));
    }
    if g.bins != g.n {
        return Err(Error::UnsupportedGeometry(format!(
            "direct recovery needs K=N, got K={} N={}",
            g.bins, g.n
        )));
    }
    if window.period() != g.n
        || window.support_length() != g.w
        || window.support_start() != g.a
    {
        return Err(Error::Geometry("window does not match the measurement geometry".into()));
    }
    Ok(g)
}

/// Solves the circulant system relating spectrogram row sums to `|x|^2`.
pub fn recover_magnitudes(y: &MeasurementSet, window: &Window) -> Result<MagnitudeProfile> {
    let g = require_full_band(y, window)?;
    let n = g.n;
    let spectrum = dft_of_window_energy(window);
    let max = spectrum.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if let Some((bin, c)) = spectrum
        .iter()
        .enumerate()
        .find(|(_, c)| c.norm() <= NONVANISHING_TOL * max)
    {
        return Err(Error::IllPosed {
            bin,
            modulus: c.norm(),
        });
    }
    let mut sums: Vec<Complex64> = (0..n)
        .map(|m| Complex64::new(y.row(m).iter().sum::<f64>(), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut sums);
    for (s, v) in sums.iter_mut().zip(&spectrum) {
        *s /= v * n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut sums);
    let mut z: Vec<f64> = sums.iter().map(|c| c.re / n as f64).collect();
    let top = z.iter().cloned().fold(0.0, f64::max);
    for v in &mut z {
        if *v < CLAMP_TOL * top {
            *v = 0.0;
        }
    }
    Ok(MagnitudeProfile { z })
}

/// Extracts lag-`(W-1)` autocorrelation phases from every spectrogram row.
pub fn phase_differences(y: &MeasurementSet, window: &Window) -> Result<PhaseChain> {
    let g = require_full_band(y, window)?;
    let (n, w, a) = (g.n, g.w, g.a);
    if n + 1 < 2 * w {
        return Err(Error::UnsupportedGeometry(format!(
            "lag W-1 autocorrelation aliases unless N >= 2W-1 (N={n}, W={w})"
        )));
    }
    let lag = w - 1;
    let ends = window.tap(a as isize) * window.tap((a + w - 1) as isize).conj();
    let kernel: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * ((k * lag) % n) as f64 / n as f64))
        .collect();
    let mut deltas = vec![Complex64::new(1.0, 0.0); n];
    for m in 0..n {
        let r: Complex64 = y
            .row(m)
            .iter()
            .zip(&kernel)
            .map(|(v, e)| e * *v)
            .sum::<Complex64>()
            / n as f64;
        let u = r / ends;
        let norm = u.norm();
        // deltas is indexed by i = m - a, the later of the two samples.
        let i = (m + n - a % n) % n;
        deltas[i] = if norm > 0.0 { u / norm } else { Complex64::new(1.0, 0.0) };
    }
    Ok(PhaseChain {
        deltas,
        step: lag % n,
        anchor: 0,
    })
}

/// Assigns phases to the recovered moduli, anchoring `x[0]` real positive.
pub fn recover_phases(y: &MeasurementSet, window: &Window, z: &MagnitudeProfile) -> Result<Signal> {
    let chain = phase_differences(y, window)?;
    let n = chain.deltas.len();
    if z.z.len() != n {
        return Err(Error::Geometry("magnitude profile length does not match N".into()));
    }
    // Reachability is reported before the nonvanishing check so that a
    // condition (iii) failure is always named as such.
    let phases = chain.propagate()?;
    let top = z.z.iter().cloned().fold(0.0, f64::max);
    let vanishing: Vec<usize> = (0..n).filter(|&i| z.z[i] <= CLAMP_TOL * top).collect();
    if !vanishing.is_empty() {
        return Err(Error::NonvanishingViolated { indices: vanishing });
    }
    Signal::new(
        z.z.iter()
            .zip(phases)
            .map(|(m, p)| p * m.sqrt())
            .collect(),
    )
}

/// Magnitude stage followed by phase stage.
pub fn direct_recover(y: &MeasurementSet, window: &Window) -> Result<Signal> {
    let z = recover_magnitudes(y, window)?;
    recover_phases(y, window, &z)
}

/// Circular interval `[start, end]` of a length-`N` index set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Self {
        Interval { start, end }
    }

    pub fn len(&self, n: usize) -> usize {
        (self.end + n - self.start % n) % n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize, n: usize) -> bool {
        (i + n - self.start % n) % n < self.len(n)
    }
}

/// Strides for which an ambiguity pair is guaranteed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrideFamily {
    Any,
    MultiplesOf(usize),
}

/// Geometry under which `u` and `v` provably share a spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityCertificate {
    pub n: usize,
    pub window: Window,
    pub supports: Vec<Interval>,
    pub strides: StrideFamily,
}

impl AmbiguityCertificate {
    pub fn admissible_strides(&self) -> Vec<usize> {
        match self.strides {
            StrideFamily::Any => (1..=self.n).collect(),
            StrideFamily::MultiplesOf(l) => (1..=self.n / l).map(|q| q * l).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityPair {
    pub u: Signal,
    pub v: Signal,
    pub certificate: AmbiguityCertificate,
}

impl AmbiguityPair {
    /// Largest entrywise spectrogram difference, relative to the largest measurement.
    pub fn spectrogram_gap(&self, hop: usize, bins: usize) -> Result<f64> {
        let w = &self.certificate.window;
        let yu = measure(&self.u, w, hop, bins)?;
        let yv = measure(&self.v, w, hop, bins)?;
        let scale = yu.y.iter().chain(&yv.y).cloned().fold(0.0, f64::max);
        let diff = yu
            .y
            .iter()
            .zip(&yv.y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok(if scale > 0.0 { diff / scale } else { 0.0 })
    }
}

/// Relative tolerance used when certifying ambiguity pairs.
pub const AMBIGUITY_TOL: f64 = 1e-12;

fn check_supported(s: &Signal, iv: Interval, name: &str) -> Result<()> {
    let n = s.len();
    if let Some(i) = (0..n).find(|&i| s.values()[i].norm() != 0.0 && !iv.contains(i, n)) {
        return Err(Error::ConstructionInvalid(format!(
            "{name} is nonzero at {i}, outside [{}, {}]",
            iv.start, iv.end
        )));
    }
    Ok(())
}

/// `u = x + y`, `v = x - y` for `x`, `y` on supports separated by circular gaps of at least `W`.
pub fn construct_separated_ambiguity(
    x: &Signal,
    y: &Signal,
    support1: Interval,
    support2: Interval,
    window: &Window,
    hop: usize,
) -> Result<AmbiguityPair> {
    let n = window.period();
    let w = window.support_length();
    if x.len() != n || y.len() != n {
        return Err(Error::Geometry("signal lengths must equal the window period".into()));
    }
    if support1.start >= n || support1.end >= n || support2.start >= n || support2.end >= n {
        return Err(Error::ConstructionInvalid("interval endpoints must be < N".into()));
    }
    let gap12 = (support2.start + n - support1.end) % n;
    let gap21 = (support1.start + n - support2.end) % n;
    if gap12 < w || gap21 < w {
        return Err(Error::ConstructionInvalid(format!(
            "circular gaps {gap12} and {gap21} must both be >= W={w}"
        )));
    }
    if support1.len(n) + support2.len(n) + gap12 + gap21 - 2 != n {
        return Err(Error::ConstructionInvalid("supports overlap".into()));
    }
    check_supported(x, support1, "x")?;
    check_supported(y, support2, "y")?;
    let u = Signal::new(x.values().iter().zip(y.values()).map(|(a, b)| a + b).collect())?;
    let v = Signal::new(x.values().iter().zip(y.values()).map(|(a, b)| a - b).collect())?;
    let pair = AmbiguityPair {
        u,
        v,
        certificate: AmbiguityCertificate {
            n,
            window: window.clone(),
            supports: vec![support1, support2],
            strides: StrideFamily::Any,
        },
    };
    verify(&pair, hop)?;
    Ok(pair)
}

fn verify(pair: &AmbiguityPair, hop: usize) -> Result<()> {
    let gap = pair.spectrogram_gap(hop, pair.certificate.n)?;
    if gap > AMBIGUITY_TOL {
        return Err(Error::ConstructionInvalid(format!(
            "spectrograms differ by {gap:e} (relative) at L={hop}"
        )));
    }
    Ok(())
}

/// Separated ambiguity for a square window with random complex pieces on
/// `[0, a-1]` and `[a-1+W, N-1-W]`, where `a = (N - 2W) / 2`.
pub fn random_separated_ambiguity(n: usize, w: usize, hop: usize, seed: u64) -> Result<AmbiguityPair> {
    if w == 0 || n < 2 * w + 2 {
        return Err(Error::ConstructionInvalid(format!("need N >= 2W + 2 (N={n}, W={w})")));
    }
    let window = make_window(WindowKind::Square, w, n, 0)?;
    let a = (n - 2 * w) / 2;
    let s1 = Interval::new(0, a - 1);
    let s2 = Interval::new(a - 1 + w, n - 1 - w);
    let mut rng = rng_from_seed(seed);
    let mut piece = |iv: Interval| {
        Signal::new(
            (0..n)
                .map(|i| {
                    if iv.contains(i, n) {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        Complex64::new(re, im)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect(),
        )
    };
    let x = piece(s1)?;
    let y = piece(s2)?;
    construct_separated_ambiguity(&x, &y, s1, s2, &window, hop)
}

/// Parameters of a block-aligned segment ambiguity for a square window.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftAmbiguitySpec {
    pub n: usize,
    pub w: usize,
    pub hop: usize,
    /// Nonzero segment length `L - r`.
    pub segment_length: usize,
    /// First sample of the segment in the original signal.
    pub segment_position: usize,
    /// Displacement of the segment in the variant; must keep it inside its block.
    pub shift: isize,
    /// Unit-modulus factor applied to the displaced segment.
    pub phase: Complex64,
    pub seed: u64,
}

/// Builds a signal whose segment sits inside a block `[(q-1)L+1, qL]` guarded
/// by `W - L` zeros on each side, and a variant with the segment displaced
/// within the block and rotated by a unit phase.
pub fn construct_shift_ambiguity(spec: &ShiftAmbiguitySpec) -> Result<AmbiguityPair> {
    let ShiftAmbiguitySpec {
        n,
        w,
        hop,
        segment_length,
        segment_position,
        shift,
        phase,
        seed,
    } = *spec;
    let invalid = |msg: String| Err(Error::ConstructionInvalid(msg));
    if hop < 2 || n == 0 || w == 0 || w > n {
        return invalid(format!("need L >= 2 and 1 <= W <= N (N={n}, W={w}, L={hop})"));
    }
    if n % hop != 0 || w % hop != 0 {
        return invalid(format!("N={n} and W={w} must both be multiples of L={hop}"));
    }
    if segment_length == 0 || segment_length >= hop {
        return invalid(format!(
            "segment length {segment_length} must be L - r with 1 <= r <= L-1 (L={hop})"
        ));
    }
    if (phase.norm() - 1.0).abs() > 1e-12 {
        return invalid("phase factor must have unit modulus".into());
    }
    let pos = segment_position % n;
    // Block containing pos: starts at q L + 1 (mod N).
    let block_start = (((pos + n - 1) % n) / hop * hop + 1) % n;
    let within = (pos + n - block_start) % n;
    if within + segment_length > hop {
        return invalid(format!("segment at {pos} crosses the block starting at {block_start}"));
    }
    let moved = within as isize + shift;
    if moved < 0 || moved as usize + segment_length > hop {
        return invalid(format!("shift {shift} moves the segment out of its block"));
    }
    let mut rng = rng_from_seed(seed);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re, im)
    };
    let guard = w - hop;
    let block_end = (block_start + hop - 1) % n;
    let zone = Interval::new((block_start + n - guard % n) % n, (block_end + guard) % n);
    let zone_covers_all = hop + 2 * guard >= n;
    let mut base = vec![Complex64::new(0.0, 0.0); n];
    for (i, b) in base.iter_mut().enumerate() {
        if !zone_covers_all && !zone.contains(i, n) && rng.gen_bool(0.5) {
            *b = draw(&mut rng);
        }
    }
    let segment: Vec<Complex64> = (0..segment_length).map(|_| draw(&mut rng)).collect();
    let mut u = base.clone();
    let mut v = base;
    for (j, s) in segment.iter().enumerate() {
        u[(pos + j) % n] = *s;
        v[(block_start + moved as usize + j) % n] = s * phase;
    }
    let window = make_window(WindowKind::Square, w, n, 0)?;
    let pair = AmbiguityPair {
        u: Signal::new(u)?,
        v: Signal::new(v)?,
        certificate: AmbiguityCertificate {
            n,
            window,
            supports: vec![Interval::new(block_start, block_end)],
            strides: StrideFamily::MultiplesOf(hop),
        },
    };
    verify(&pair, hop)?;
    Ok(pair)
}

/// Sanity helper used by the CLI: reports whether direct recovery is applicable.
pub fn direct_applicable(window: &Window) -> Result<bool> {
    Ok(check_uniqueness_conditions(window, window.period())?.all_hold())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::measure;

    fn random_nonvanishing(n: usize, seed: u64) -> Signal {
        let mut rng = rng_from_seed(seed);
        Signal::new(
            (0..n)
                .map(|_| {
                    let r: f64 = rng.gen_range(0.3..1.5);
                    Complex64::from_polar(r, rng.gen_range(0.0..std::f64::consts::TAU))
                })
                .collect(),
        )
        .unwrap()
    }

    /// Error after removing the best global phase (least squares).
    fn aligned_error(est: &Signal, truth: &Signal) -> f64 {
        let inner: Complex64 = est
            .values()
            .iter()
            .zip(truth.values())
            .map(|(e, t)| e.conj() * t)
            .sum();
        let rot = if inner.norm() > 0.0 { inner / inner.norm() } else { Complex64::new(1.0, 0.0) };
        est.values()
            .iter()
            .zip(truth.values())
            .map(|(e, t)| (e * rot - t).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_modulus_gives_constant_profile() {
        let n = 7;
        let g = make_window(WindowKind::Square, 3, n, 0).unwrap();
        let c = 1.7;
        let x = Signal::new((0..n).map(|i| Complex64::from_polar(c, i as f64)).collect()).unwrap();
        let y = measure(&x, &g, 1, n).unwrap();
        for m in 0..n {
            let s: f64 = y.row(m).iter().sum();
            assert!((s - (n * 3) as f64 * c * c).abs() < 1e-10);
        }
        let z = recover_magnitudes(&y, &g).unwrap();
        assert!(z.z.iter().all(|v| (v - c * c).abs() < 1e-12));
    }

    #[test]
    fn magnitudes_match_planted_signal() {
        let n = 7;
        let g = make_window(WindowKind::Square, 3, n, 0).unwrap();
        let mut x = random_nonvanishing(n, 3).into_values();
        let y = measure(&Signal::new(x.clone()).unwrap(), &g, 1, n).unwrap();
        let z = recover_magnitudes(&y, &g).unwrap();
        for (a, b) in z.z.iter().zip(&x) {
            assert!((a - b.norm_sqr()).abs() < 1e-10);
        }
        x[4] = Complex64::new(0.0, 0.0);
        let y = measure(&Signal::new(x.clone()).unwrap(), &g, 1, n).unwrap();
        let z = recover_magnitudes(&y, &g).unwrap();
        assert_eq!(z.z[4], 0.0);
        for (a, b) in z.z.iter().zip(&x) {
            assert!((a - b.norm_sqr()).abs() < 1e-10);
        }
        assert!(matches!(
            recover_phases(&y, &g, &z),
            Err(Error::NonvanishingViolated { ref indices }) if indices == &vec![4]
        ));
    }

    #[test]
    fn magnitude_stage_rejects_bad_geometry() {
        let g = make_window(WindowKind::Square, 4, 8, 0).unwrap();
        let x = random_nonvanishing(8, 1);
        let y = measure(&x, &g, 1, 8).unwrap();
        assert!(matches!(recover_magnitudes(&y, &g), Err(Error::IllPosed { .. })));
        let y2 = measure(&x, &g, 2, 8).unwrap();
        assert!(matches!(recover_magnitudes(&y2, &g), Err(Error::UnsupportedGeometry(_))));
    }

    #[test]
    fn positive_signal_recovered_exactly() {
        let n = 7;
        let g = make_window(WindowKind::Square, 3, n, 0).unwrap();
        let x = Signal::from_real(&[0.5, 1.0, 2.0, 0.7, 1.1, 0.9, 1.3]).unwrap();
        let est = direct_recover(&measure(&x, &g, 1, n).unwrap(), &g).unwrap();
        for (e, t) in est.values().iter().zip(x.values()) {
            assert!(e.im.abs() < 1e-10 && (e.re - t.re).abs() < 1e-10);
        }
        let ones = Signal::from_real(&[1.0; 7]).unwrap();
        let est = direct_recover(&measure(&ones, &g, 1, n).unwrap(), &g).unwrap();
        assert!(est.values().iter().all(|v| (v - 1.0).norm() < 1e-10));
    }

    #[test]
    fn complex_signal_recovered_up_to_global_phase() {
        let n = 7;
        let g = make_window(WindowKind::Square, 3, n, 0).unwrap();
        let x = random_nonvanishing(n, 5);
        let y = measure(&x, &g, 1, n).unwrap();
        let est = direct_recover(&y, &g).unwrap();
        assert!(aligned_error(&est, &x) < 1e-8);
        let rotated = x.scaled(Complex64::from_polar(1.0, 0.77));
        let est2 = direct_recover(&measure(&rotated, &g, 1, n).unwrap(), &g).unwrap();
        for (a, b) in est.values().iter().zip(est2.values()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn shifted_window_support_is_handled() {
        let n = 11;
        let g = make_window(
            WindowKind::Custom(vec![
                Complex64::new(1.0, 0.5),
                Complex64::new(0.3, 0.0),
                Complex64::new(0.0, -0.8),
                Complex64::new(0.6, 0.2),
            ]),
            4,
            n,
            9,
        )
        .unwrap();
        assert!(direct_applicable(&g).unwrap());
        let x = random_nonvanishing(n, 8);
        let est = direct_recover(&measure(&x, &g, 1, n).unwrap(), &g).unwrap();
        assert!(aligned_error(&est, &x) < 1e-8);
    }

    #[test]
    fn incomplete_propagation_lists_unreachable_residues() {
        let n = 15;
        let g = make_window(WindowKind::Square, 4, n, 0).unwrap();
        let x = random_nonvanishing(n, 2);
        match direct_recover(&measure(&x, &g, 1, n).unwrap(), &g) {
            Err(Error::PropagationIncomplete { gcd, unreached }) => {
                assert_eq!(gcd, 3);
                let expected: Vec<usize> = (0..n).filter(|i| i % 3 != 0).collect();
                assert_eq!(unreached, expected);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn magnitude_stage_is_linear() {
        let n = 9;
        let g = make_window(WindowKind::Square, 4, n, 0).unwrap();
        let y = measure(&random_nonvanishing(n, 4), &g, 1, n).unwrap();
        let z = recover_magnitudes(&y, &g).unwrap();
        let mut y3 = y.clone();
        y3.y.iter_mut().for_each(|v| *v *= 3.5);
        let z3 = recover_magnitudes(&y3, &g).unwrap();
        for (a, b) in z.z.iter().zip(&z3.z) {
            assert!((3.5 * a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
    }

    fn sparse_on(n: usize, iv: Interval, seed: u64) -> Signal {
        let mut rng = rng_from_seed(seed);
        Signal::new(
            (0..n)
                .map(|i| {
                    if iv.contains(i, n) {
                        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn separated_supports_share_spectrogram() {
        let n = 16;
        let g = make_window(WindowKind::Square, 3, n, 0).unwrap();
        let (s1, s2) = (Interval::new(0, 2), Interval::new(6, 8));
        let x = sparse_on(n, s1, 1);
        let y = sparse_on(n, s2, 2);
        for hop in [1, 2, 4] {
            let pair = construct_separated_ambiguity(&x, &y, s1, s2, &g, hop).unwrap();
            assert!(pair.spectrogram_gap(hop, n).unwrap() <= AMBIGUITY_TOL);
            assert_ne!(pair.u, pair.v);
        }
        let pair = construct_separated_ambiguity(&x, &Signal::zeros(n), s1, s2, &g, 1).unwrap();
        assert_eq!(pair.u, x);
        assert_eq!(pair.v, x);
        assert!(matches!(
            construct_separated_ambiguity(&x, &y, s1, Interval::new(4, 6), &g, 1),
            Err(Error::ConstructionInvalid(_))
        ));
    }

    #[test]
    fn block_segment_shift_shares_spectrogram() {
        let spec = ShiftAmbiguitySpec {
            n: 64,
            w: 16,
            hop: 4,
            segment_length: 3,
            segment_position: 17,
            shift: 1,
            phase: Complex64::new(-1.0, 0.0),
            seed: 9,
        };
        let pair = construct_shift_ambiguity(&spec).unwrap();
        assert_ne!(pair.u, pair.v);
        for hop in pair.certificate.admissible_strides() {
            assert!(pair.spectrogram_gap(hop, 64).unwrap() <= AMBIGUITY_TOL);
        }
        // A unit stride breaks the block alignment.
        assert!(pair.spectrogram_gap(1, 64).unwrap() > 1e-6);

        let same = construct_shift_ambiguity(&ShiftAmbiguitySpec {
            shift: 0,
            phase: Complex64::new(1.0, 0.0),
            ..spec.clone()
        })
        .unwrap();
        assert_eq!(same.u, same.v);

        assert!(matches!(
            construct_shift_ambiguity(&ShiftAmbiguitySpec { segment_length: 0, ..spec.clone() }),
            Err(Error::ConstructionInvalid(_))
        ));
        assert!(matches!(
            construct_shift_ambiguity(&ShiftAmbiguitySpec { shift: 2, ..spec.clone() }),
            Err(Error::ConstructionInvalid(_))
        ));
        assert!(matches!(
            construct_shift_ambiguity(&ShiftAmbiguitySpec { segment_position: 16, ..spec }),
            Err(Error::ConstructionInvalid(_))
        ));
    }
}
