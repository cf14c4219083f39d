//! Monte Carlo sweeps: sample sparse instances, measure, recover with each
//! method, score by NMSE, aggregate per cell, and export CSV or SVG.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Deserialize;

use crate::altproj::{self, AltProjConfig, AltProjMethod};
use crate::direct::direct_recover;
use crate::error::{Error, Result};
use crate::gespar::{gespar_solve, power_spectrum_operator, ps_measure, GesparConfig, QuadraticProblem, SwapStrategy};
use crate::primitives::{derive_seed, make_window, rng_from_seed, sample_sparse_instance, DictionaryKind, Signal, Window, WindowKind};
use crate::stft::{build_measurement_operator, measure, Geometry, MeasurementSet};

/// `min_theta |e^{j theta} estimate - truth|^2 / |truth|^2`.
pub fn nmse(estimate: &Signal, truth: &Signal) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Geometry(format!(
            "estimate has length {}, truth has length {}",
            estimate.len(),
            truth.len()
        )));
    }
    let t2 = truth.energy();
    if t2 == 0.0 {
        return Err(Error::UndefinedMetric("truth is the zero signal".into()));
    }
    let inner: Complex64 = estimate
        .values()
        .iter()
        .zip(truth.values())
        .map(|(e, t)| e.conj() * t)
        .sum();
    // Same value as (|e|^2 + |t|^2 - 2|<e, t>|) / |t|^2, without its cancellation floor.
    let rot = if inner.norm() > 0.0 { inner / inner.norm() } else { Complex64::new(1.0, 0.0) };
    let err: f64 = estimate
        .values()
        .iter()
        .zip(truth.values())
        .map(|(e, t)| (e * rot - t).norm_sqr())
        .sum();
    Ok(err / t2)
}

/// Where measurement noise enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// Gaussian noise on the squared magnitudes `y`.
    #[default]
    Squared,
    /// Gaussian noise on `sqrt(y)`, squared afterwards.
    Magnitude,
}

fn perturb(y: &[f64], snr_db: f64, seed: u64, model: NoiseModel) -> (Vec<f64>, f64) {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return (y.to_vec(), 0.0);
    }
    let p = y.len() as f64;
    let base: Vec<f64> = match model {
        NoiseModel::Squared => y.to_vec(),
        NoiseModel::Magnitude => y.iter().map(|v| v.max(0.0).sqrt()).collect(),
    };
    let energy: f64 = base.iter().map(|v| v * v).sum();
    let variance = energy / (p * 10f64.powf(snr_db / 10.0));
    if variance == 0.0 {
        return (y.to_vec(), 0.0);
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
    let mut rng = rng_from_seed(seed);
    let noisy = base
        .iter()
        .map(|v| {
            let z = v + normal.sample(&mut rng);
            match model {
                NoiseModel::Squared => z,
                NoiseModel::Magnitude => z * z,
            }
        })
        .collect();
    (noisy, variance)
}

/// Adds white Gaussian noise to the squared magnitudes at the given SNR.
/// `snr_db = +inf` returns the set unchanged.
pub fn add_noise(y: &MeasurementSet, snr_db: f64, rng_seed: u64) -> MeasurementSet {
    add_noise_with(y, snr_db, rng_seed, NoiseModel::Squared)
}

pub fn add_noise_with(y: &MeasurementSet, snr_db: f64, rng_seed: u64, model: NoiseModel) -> MeasurementSet {
    let (noisy, _) = perturb(&y.y, snr_db, rng_seed, model);
    MeasurementSet {
        y: noisy,
        geometry: y.geometry,
        noise_snr_db: if snr_db.is_infinite() { y.noise_snr_db } else { Some(snr_db) },
    }
}

/// Expected `sum (noisy - clean)^2` padded by three standard deviations.
fn noise_objective_floor(clean: &[f64], variance: f64, model: NoiseModel) -> f64 {
    if variance == 0.0 {
        return 0.0;
    }
    let p = clean.len() as f64;
    let expected = match model {
        NoiseModel::Squared => p * variance,
        NoiseModel::Magnitude => clean.iter().map(|y| 4.0 * y.max(0.0) * variance + 3.0 * variance * variance).sum(),
    };
    expected * (1.0 + 3.0 * (2.0 / p).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
pub enum Method {
    #[serde(rename = "stft-gespar")]
    StftGespar,
    #[serde(rename = "ps-gespar")]
    PsGespar,
    #[serde(rename = "gla")]
    Gla,
    #[serde(rename = "pcgp")]
    Pcgp,
    #[serde(rename = "direct")]
    Direct,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::StftGespar => "stft-gespar",
            Method::PsGespar => "ps-gespar",
            Method::Gla => "gla",
            Method::Pcgp => "pcgp",
            Method::Direct => "direct",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Method::StftGespar, Method::PsGespar, Method::Gla, Method::Pcgp, Method::Direct]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }

    fn id(self) -> u64 {
        self as u64
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowChoice {
    #[default]
    Square,
}

fn default_threshold() -> f64 {
    1e-2
}
fn default_tau() -> f64 {
    1e-4
}
fn default_swaps() -> usize {
    50_000
}
fn default_dgn() -> usize {
    100
}
fn default_restarts() -> usize {
    50
}
fn default_iterations() -> usize {
    1000
}
fn default_halt() -> f64 {
    1e-8
}
fn default_true() -> bool {
    true
}
fn default_dictionary() -> String {
    "gaussian".into()
}

/// Sweep description, read from a flat TOML document.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(default)]
    pub window: WindowChoice,
    #[serde(rename = "L_values")]
    pub l_values: Vec<usize>,
    #[serde(rename = "K_values")]
    pub k_values: Vec<usize>,
    /// Sparsity levels.
    pub k_range: Vec<usize>,
    /// Empty means noiseless.
    #[serde(default)]
    pub snr_db_values: Vec<f64>,
    pub trials_per_cell: usize,
    pub methods: Vec<Method>,
    pub rng_seed: u64,
    #[serde(default = "default_threshold")]
    pub success_nmse_threshold: f64,
    #[serde(default = "default_dictionary")]
    pub dictionary: String,
    #[serde(default)]
    pub noise_model: NoiseModel,
    /// Fill the `mean_wall_ms` column. Off by default so CSV output is reproducible.
    #[serde(default)]
    pub record_timing: bool,

    #[serde(default = "default_tau")]
    pub gespar_tau: f64,
    #[serde(default = "default_swaps")]
    pub gespar_max_swaps: usize,
    #[serde(default = "default_dgn")]
    pub gespar_max_dgn_iterations: usize,
    #[serde(default)]
    pub gespar_exhaustive_swaps: bool,
    /// On noisy cells, also stop once the objective reaches the expected noise energy.
    #[serde(default = "default_true")]
    pub gespar_noise_stopping: bool,

    #[serde(default = "default_restarts")]
    pub altproj_restarts: usize,
    #[serde(default = "default_iterations")]
    pub altproj_max_iterations: usize,
    #[serde(default = "default_halt")]
    pub altproj_halt_tolerance: f64,
    #[serde(default)]
    pub altproj_early_accept: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn dictionary_kind(&self) -> Result<DictionaryKind> {
        match self.dictionary.as_str() {
            "gaussian" => Ok(DictionaryKind::Gaussian),
            "identity" => Ok(DictionaryKind::Identity),
            other => Err(Error::Config(format!("unknown dictionary '{other}'"))),
        }
    }

    pub fn window(&self) -> Result<Window> {
        match self.window {
            WindowChoice::Square => make_window(WindowKind::Square, self.w, self.n, 0),
        }
    }

    pub fn gespar_config(&self, k: usize, seed: u64) -> GesparConfig {
        GesparConfig {
            sparsity_k: k,
            tau: self.gespar_tau,
            max_total_swaps: self.gespar_max_swaps,
            max_dgn_iterations: self.gespar_max_dgn_iterations,
            rng_seed: seed,
            strategy: if self.gespar_exhaustive_swaps {
                SwapStrategy::Exhaustive
            } else {
                SwapStrategy::Greedy
            },
            noise_floor: 0.0,
        }
    }

    pub fn altproj_config(&self, method: AltProjMethod, seed: u64) -> AltProjConfig {
        AltProjConfig {
            max_iterations: self.altproj_max_iterations,
            restarts: self.altproj_restarts,
            rng_seed: seed,
            halt_tolerance: self.altproj_halt_tolerance,
            method,
            early_accept: self.altproj_early_accept,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials_per_cell == 0 {
            return bad("trials_per_cell must be >= 1".into());
        }
        if self.l_values.is_empty() || self.k_values.is_empty() || self.k_range.is_empty() || self.methods.is_empty() {
            return bad("L_values, K_values, k_range and methods must be non-empty".into());
        }
        if self.snr_db_values.iter().any(|s| s.is_nan()) {
            return bad("snr_db_values must not contain NaN".into());
        }
        if !(self.success_nmse_threshold > 0.0) {
            return bad("success_nmse_threshold must be positive".into());
        }
        let kind = self.dictionary_kind()?;
        if kind == DictionaryKind::Identity && self.k_range.iter().any(|&k| k > self.n) {
            return bad("sparsity exceeds N".into());
        }
        if self.k_range.iter().any(|&k| k > self.n) {
            return bad(format!("sparsity levels must be <= N={}", self.n));
        }
        let window = self.window()?;
        for &l in &self.l_values {
            for &kk in &self.k_values {
                let geometry = Geometry::new(&window, l, kk).map_err(|e| Error::Config(e.to_string()))?;
                for &m in &self.methods {
                    match m {
                        Method::Gla | Method::Pcgp if kk < self.w => {
                            return bad(format!("{m} needs K >= W (K={kk}, W={})", self.w));
                        }
                        Method::PsGespar if geometry.measurement_count() < self.n => {
                            return bad(format!("ps-gespar needs M K >= N at L={l}, K={kk}"));
                        }
                        Method::Direct if l != 1 || kk != self.n => {
                            return bad("direct needs L = 1 and K = N".into());
                        }
                        _ => {}
                    }
                }
            }
        }
        self.gespar_config(1, 0).validate()?;
        self.altproj_config(AltProjMethod::Gla, 0).validate()?;
        Ok(())
    }

    /// Cells in export order: method, L, K, SNR, sparsity.
    pub fn cells(&self) -> Vec<Cell> {
        let snrs: Vec<Option<f64>> = if self.snr_db_values.is_empty() {
            vec![None]
        } else {
            self.snr_db_values.iter().map(|&s| Some(s)).collect()
        };
        let mut out = Vec::new();
        for &method in &self.methods {
            for &hop in &self.l_values {
                for &bins in &self.k_values {
                    for &snr_db in &snrs {
                        for &k in &self.k_range {
                            out.push(Cell {
                                method,
                                k,
                                hop,
                                bins,
                                snr_db,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// One point of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub k: usize,
    pub hop: usize,
    pub bins: usize,
    pub snr_db: Option<f64>,
}

impl Cell {
    /// Seed of trial `trial`; independent of the method so all methods see the same instances.
    pub fn instance_seed(&self, master: u64, trial: usize) -> u64 {
        let snr_bits = self.snr_db.map_or(u64::MAX, f64::to_bits);
        derive_seed(master, &[self.k as u64, self.hop as u64, self.bins as u64, snr_bits, trial as u64])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub cell: Cell,
    pub nmse: f64,
    pub success: bool,
    pub objective: f64,
    pub wall_time: Duration,
    pub seed: u64,
    /// Set when the method raised an error; the trial then counts as a failure.
    pub diagnostic: Option<String>,
}

/// NMSE that also scores the all-zero truth: exact zero is a perfect recovery.
fn trial_nmse(estimate: &Signal, truth: &Signal) -> Result<f64> {
    if truth.energy() == 0.0 {
        return Ok(if estimate.energy() == 0.0 { 0.0 } else { f64::INFINITY });
    }
    nmse(estimate, truth)
}

/// Generates the instance for `seed`, measures it, runs the cell's method and scores the estimate.
/// Method errors become failed trials with a diagnostic.
pub fn run_trial(config: &ExperimentConfig, cell: &Cell, seed: u64) -> TrialResult {
    let start = Instant::now();
    let outcome = trial_inner(config, cell, seed);
    let wall_time = start.elapsed();
    match outcome {
        Ok((nmse, objective)) => TrialResult {
            cell: *cell,
            nmse,
            success: nmse < config.success_nmse_threshold,
            objective,
            wall_time,
            seed,
            diagnostic: None,
        },
        Err(e) => TrialResult {
            cell: *cell,
            nmse: f64::INFINITY,
            success: false,
            objective: f64::INFINITY,
            wall_time,
            seed,
            diagnostic: Some(e.to_string()),
        },
    }
}

fn trial_inner(config: &ExperimentConfig, cell: &Cell, seed: u64) -> Result<(f64, f64)> {
    let window = config.window()?;
    let (dict, inst) = sample_sparse_instance(config.n, config.n, cell.k, config.dictionary_kind()?, seed)?;
    let noise_seed = derive_seed(seed, &[1]);
    let method_seed = derive_seed(seed, &[2, cell.method.id()]);
    let snr = cell.snr_db.unwrap_or(f64::INFINITY);
    let clean = measure(&inst.signal, &window, cell.hop, cell.bins)?;

    match cell.method {
        Method::StftGespar | Method::PsGespar => {
            let (operator, clean_y) = if cell.method == Method::StftGespar {
                (build_measurement_operator(&window, cell.hop, cell.bins, &dict)?, clean.y.clone())
            } else {
                let p = clean.geometry.measurement_count();
                (power_spectrum_operator(&dict, p)?, ps_measure(&inst.signal, p)?)
            };
            let (noisy, variance) = perturb(&clean_y, snr, noise_seed, config.noise_model);
            let problem = QuadraticProblem::new(&operator, noisy)?;
            let mut gc = config.gespar_config(cell.k, method_seed);
            if config.gespar_noise_stopping {
                gc.noise_floor = noise_objective_floor(&clean_y, variance, config.noise_model);
            }
            let res = gespar_solve(&problem, &gc)?;
            let estimate = dict.synthesize(&res.coefficients)?;
            Ok((trial_nmse(&estimate, &inst.signal)?, res.objective_value))
        }
        Method::Gla | Method::Pcgp => {
            let y = add_noise_with(&clean, snr, noise_seed, config.noise_model);
            let m = if cell.method == Method::Gla {
                AltProjMethod::Gla
            } else {
                AltProjMethod::Pcgp
            };
            let res = altproj::run(&y, &window, &config.altproj_config(m, method_seed))?;
            Ok((trial_nmse(&res.estimate, &inst.signal)?, res.final_residual()))
        }
        Method::Direct => {
            let y = add_noise_with(&clean, snr, noise_seed, config.noise_model);
            let estimate = direct_recover(&y, &window)?;
            let fit = measure(&estimate, &window, cell.hop, cell.bins)?;
            let objective = fit.y.iter().zip(&y.y).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok((trial_nmse(&estimate, &inst.signal)?, objective))
        }
    }
}

/// Aggregated statistics of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub cell: Cell,
    pub trials: usize,
    pub success_rate: f64,
    pub mean_nmse: f64,
    pub median_nmse: f64,
    pub mean_wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentTable {
    pub rows: Vec<TableRow>,
    /// Every trial, grouped by cell in row order.
    pub trials: Vec<TrialResult>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn aggregate(cell: Cell, trials: &[TrialResult], record_timing: bool) -> TableRow {
    let n = trials.len() as f64;
    let mut errs: Vec<f64> = trials.iter().map(|t| t.nmse).collect();
    TableRow {
        cell,
        trials: trials.len(),
        success_rate: trials.iter().filter(|t| t.success).count() as f64 / n,
        mean_nmse: errs.iter().sum::<f64>() / n,
        median_nmse: median(&mut errs),
        mean_wall_ms: record_timing.then(|| trials.iter().map(|t| t.wall_time.as_secs_f64() * 1e3).sum::<f64>() / n),
    }
}

/// Runs the full sweep. Trials run in parallel; results do not depend on
/// the thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentTable> {
    config.validate()?;
    let cells = config.cells();
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.trials_per_cell).map(move |t| (c, t)))
        .collect();
    let trials: Vec<TrialResult> = tasks
        .par_iter()
        .map(|&(c, t)| {
            let cell = &cells[c];
            run_trial(config, cell, cell.instance_seed(config.rng_seed, t))
        })
        .collect();
    Ok(ExperimentTable::from_trials(trials, config.trials_per_cell, config.record_timing))
}

pub const CSV_HEADER: &str = "method,k,L,K,snr_db,trials,success_rate,mean_nmse,median_nmse,mean_wall_ms";

impl ExperimentTable {
    /// Aggregates consecutive runs of `per_cell` trials, one row per run.
    pub fn from_trials(trials: Vec<TrialResult>, per_cell: usize, record_timing: bool) -> Self {
        let rows = trials
            .chunks(per_cell.max(1))
            .map(|chunk| aggregate(chunk[0].cell, chunk, record_timing))
            .collect();
        ExperimentTable { rows, trials }
    }

    /// Table restricted to the first `per_cell` trials of every cell.
    pub fn truncated(&self, old_per_cell: usize, per_cell: usize, record_timing: bool) -> Self {
        let trials = self
            .trials
            .chunks(old_per_cell)
            .flat_map(|c| c[..per_cell.min(c.len())].iter().cloned())
            .collect();
        Self::from_trials(trials, per_cell, record_timing)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let c = &r.cell;
            let snr = c.snr_db.map_or_else(|| "inf".to_string(), |s| s.to_string());
            let wall = r.mean_wall_ms.map_or_else(String::new, |w| format!("{w:.3}"));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                c.method, c.k, c.hop, c.bins, snr, r.trials, r.success_rate, r.mean_nmse, r.median_nmse, wall
            );
        }
        out
    }

    /// Rows matching a predicate, in table order.
    pub fn select<'a>(&'a self, pred: impl Fn(&Cell) -> bool + 'a) -> impl Iterator<Item = &'a TableRow> + 'a {
        self.rows.iter().filter(move |r| pred(&r.cell))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMetric {
    SuccessRate,
    MeanNmse,
}

/// Coordinate that splits the plot into panels; the remaining ones label series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelBy {
    Hop,
    Bins,
    Snr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Svg { metric: PlotMetric, panel_by: PanelBy },
}

pub fn export_results(table: &ExperimentTable, format: ExportFormat, path: &Path) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::Validation("nothing to export".into()));
    }
    let text = match format {
        ExportFormat::Csv => table.to_csv(),
        ExportFormat::Svg { metric, panel_by } => render_svg(table, metric, panel_by),
    };
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn panel_key(c: &Cell, by: PanelBy) -> String {
    match by {
        PanelBy::Hop => format!("L={}", c.hop),
        PanelBy::Bins => format!("K={}", c.bins),
        PanelBy::Snr => format!("SNR={}", c.snr_db.map_or("inf".into(), |s| format!("{s} dB"))),
    }
}

fn series_key(c: &Cell, by: PanelBy) -> String {
    let snr = c.snr_db.map_or("inf".into(), |s| format!("{s}dB"));
    match by {
        PanelBy::Hop => format!("{} K={} SNR={snr}", c.method, c.bins),
        PanelBy::Bins => format!("{} L={} SNR={snr}", c.method, c.hop),
        PanelBy::Snr => format!("{} L={} K={}", c.method, c.hop, c.bins),
    }
}

fn ordered_unique(keys: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for k in keys {
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

/// One SVG document with a panel per `panel_by` value and a polyline per series.
pub fn render_svg(table: &ExperimentTable, metric: PlotMetric, panel_by: PanelBy) -> String {
    let (pw, ph, margin) = (360.0, 260.0, 50.0);
    let panels = ordered_unique(table.rows.iter().map(|r| panel_key(&r.cell, panel_by)));
    let series = ordered_unique(table.rows.iter().map(|r| series_key(&r.cell, panel_by)));
    let value = |r: &TableRow| match metric {
        PlotMetric::SuccessRate => r.success_rate,
        PlotMetric::MeanNmse => r.mean_nmse.max(1e-16).min(1e16).log10(),
    };
    let finite = table.rows.iter().map(value).filter(|v| v.is_finite());
    let (mut vmin, mut vmax) = match metric {
        PlotMetric::SuccessRate => (0.0, 1.0),
        PlotMetric::MeanNmse => finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v))),
    };
    if !(vmax > vmin) {
        vmin -= 0.5;
        vmax += 0.5;
    }
    let kmin = table.rows.iter().map(|r| r.cell.k).min().unwrap_or(0) as f64;
    let kmax = (table.rows.iter().map(|r| r.cell.k).max().unwrap_or(1) as f64).max(kmin + 1.0);
    let width = panels.len() as f64 * (pw + margin) + margin;
    let height = ph + 2.0 * margin + 16.0 * series.len() as f64;
    let ylabel = match metric {
        PlotMetric::SuccessRate => "success rate",
        PlotMetric::MeanNmse => "log10 mean NMSE",
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    for (pi, panel) in panels.iter().enumerate() {
        let x0 = margin + pi as f64 * (pw + margin);
        let y0 = margin;
        let _ = writeln!(s, r#"<g class="panel" transform="translate({x0},{y0})">"#);
        let _ = writeln!(s, r#"<rect width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="-8" text-anchor="middle">{panel}</text>"#, pw / 2.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">k</text>"#, pw / 2.0, ph + 30.0);
        let _ = writeln!(s, r#"<text x="-36" y="{}" transform="rotate(-90 -36 {})" text-anchor="middle">{ylabel}</text>"#, ph / 2.0, ph / 2.0);
        for (label, v) in [(format!("{vmin:.2}"), vmin), (format!("{vmax:.2}"), vmax)] {
            let y = ph - (v - vmin) / (vmax - vmin) * ph;
            let _ = writeln!(s, r#"<text x="-4" y="{y}" text-anchor="end">{label}</text>"#);
        }
        for (label, v) in [(kmin, kmin), (kmax, kmax)] {
            let x = (v - kmin) / (kmax - kmin) * pw;
            let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{label}</text>"#, ph + 14.0);
        }
        for (si, name) in series.iter().enumerate() {
            let pts: Vec<String> = table
                .rows
                .iter()
                .filter(|r| &panel_key(&r.cell, panel_by) == panel && &series_key(&r.cell, panel_by) == name)
                .filter(|r| value(r).is_finite())
                .map(|r| {
                    let x = (r.cell.k as f64 - kmin) / (kmax - kmin) * pw;
                    let y = ph - (value(r) - vmin) / (vmax - vmin) * ph;
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            if pts.is_empty() {
                continue;
            }
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"><title>{name}</title></polyline>"#,
                PALETTE[si % PALETTE.len()],
                pts.join(" ")
            );
        }
        s.push_str("</g>\n");
    }
    for (si, name) in series.iter().enumerate() {
        let y = ph + 2.0 * margin + 16.0 * si as f64;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{margin}" x2="{}" y1="{y}" y2="{y}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{name}</text></g>"#,
            margin + 20.0,
            PALETTE[si % PALETTE.len()],
            margin + 26.0,
            y + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Contents of a measurement file: `N W L K M` then `M` lines of `K` values.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFile {
    pub n: usize,
    pub w: usize,
    pub hop: usize,
    pub bins: usize,
    pub positions: usize,
    pub y: Vec<f64>,
}

impl MeasurementFile {
    /// Attaches a window whose support length must match `W`.
    pub fn into_measurements(self, window: &Window) -> Result<MeasurementSet> {
        if window.period() != self.n || window.support_length() != self.w {
            return Err(Error::Geometry(format!(
                "window (N={}, W={}) does not match the file (N={}, W={})",
                window.period(),
                window.support_length(),
                self.n,
                self.w
            )));
        }
        let geometry = Geometry::new(window, self.hop, self.bins)?;
        if geometry.positions() != self.positions {
            return Err(Error::Geometry(format!(
                "file has M={} positions, geometry implies {}",
                self.positions,
                geometry.positions()
            )));
        }
        MeasurementSet::new(self.y, geometry)
    }
}

pub fn format_measurements(y: &MeasurementSet) -> String {
    let g = &y.geometry;
    let mut out = format!("{} {} {} {} {}\n", g.n, g.w, g.hop, g.bins, g.positions());
    for m in 0..g.positions() {
        let row: Vec<String> = y.row(m).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_measurements(text: &str) -> Result<MeasurementFile> {
    let mut tokens = text.split_whitespace();
    let mut header = [0usize; 5];
    for (i, h) in header.iter_mut().enumerate() {
        let tok = tokens.next().ok_or_else(|| Error::Parse("truncated header, expected N W L K M".into()))?;
        *h = tok
            .parse()
            .map_err(|_| Error::Parse(format!("header field {} is not a count: '{tok}'", i + 1)))?;
    }
    let [n, w, hop, bins, positions] = header;
    let y: Vec<f64> = tokens
        .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("not a number: '{t}'"))))
        .collect::<Result<_>>()?;
    if y.len() != positions * bins {
        return Err(Error::Parse(format!("expected {} values, found {}", positions * bins, y.len())));
    }
    Ok(MeasurementFile {
        n,
        w,
        hop,
        bins,
        positions,
        y,
    })
}

pub fn write_measurements(path: &Path, y: &MeasurementSet) -> Result<()> {
    std::fs::write(path, format_measurements(y)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_measurements(path: &Path) -> Result<MeasurementFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_measurements(&text)
}

/// One `re im` pair per line.
pub fn format_signal(x: &Signal) -> String {
    x.values().iter().map(|v| format!("{} {}\n", v.re, v.im)).collect()
}

pub fn parse_signal(text: &str) -> Result<Signal> {
    let mut values = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("line {}: not a number: '{s}'", no + 1)));
        let v = match parts.as_slice() {
            [re] => Complex64::new(num(re)?, 0.0),
            [re, im] => Complex64::new(num(re)?, num(im)?),
            _ => return Err(Error::Parse(format!("line {}: expected one or two columns", no + 1))),
        };
        values.push(v);
    }
    Signal::new(values)
}

pub fn write_signal(path: &Path, x: &Signal) -> Result<()> {
    std::fs::write(path, format_signal(x)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_signal(path: &Path) -> Result<Signal> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_signal(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: &[(f64, f64)]) -> Signal {
        Signal::new(v.iter().map(|&(a, b)| Complex64::new(a, b)).collect()).unwrap()
    }

    #[test]
    fn nmse_examples() {
        let t = sig(&[(1.0, 0.5), (-2.0, 0.0), (0.3, -1.0)]);
        assert!(nmse(&t, &t).unwrap() < 1e-15);
        assert!(nmse(&t.scaled(Complex64::new(-1.0, 0.0)), &t).unwrap() < 1e-15);
        assert!(nmse(&t.scaled(Complex64::from_polar(1.0, 2.1)), &t).unwrap() < 1e-15);
        assert!((nmse(&Signal::zeros(3), &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(nmse(&t, &Signal::zeros(3)), Err(Error::UndefinedMetric(_))));
        assert!(nmse(&Signal::zeros(2), &t).is_err());
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
N = 16
W = 5
L_values = [1]
K_values = [16]
k_range = [1]
trials_per_cell = 1
methods = ["stft-gespar"]
rng_seed = 3
"#,
        )
        .unwrap()
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let c = small_config();
        assert_eq!(c.gespar_tau, 1e-4);
        assert_eq!(c.gespar_max_swaps, 50_000);
        assert_eq!(c.altproj_restarts, 50);
        assert_eq!(c.success_nmse_threshold, 1e-2);
        assert!(!c.record_timing);
        let typo = "N = 16\nW = 5\nL_values = [1]\nK_values = [16]\nk_range = [1]\ntrials_per_cell = 1\nmethods = [\"gla\"]\nrng_seed = 1\ngespar_taus = 1.0\n";
        assert!(matches!(ExperimentConfig::from_toml_str(typo), Err(Error::Config(_))));
        let zero = "N = 16\nW = 5\nL_values = [1]\nK_values = [16]\nk_range = [1]\ntrials_per_cell = 0\nmethods = [\"gla\"]\nrng_seed = 1\n";
        assert!(ExperimentConfig::from_toml_str(zero).is_err());
        let direct = "N = 16\nW = 5\nL_values = [2]\nK_values = [16]\nk_range = [1]\ntrials_per_cell = 1\nmethods = [\"direct\"]\nrng_seed = 1\n";
        assert!(ExperimentConfig::from_toml_str(direct).is_err());
    }

    #[test]
    fn k_zero_trial_is_trivial_success() {
        let mut c = small_config();
        c.k_range = vec![0];
        let cell = c.cells()[0];
        let r = run_trial(&c, &cell, 11);
        assert!(r.success);
        assert_eq!(r.nmse, 0.0);
    }

    #[test]
    fn direct_trial_is_exact() {
        let c = ExperimentConfig::from_toml_str(
            "N = 7\nW = 3\nL_values = [1]\nK_values = [7]\nk_range = [7]\ntrials_per_cell = 1\nmethods = [\"direct\"]\nrng_seed = 5\n",
        )
        .unwrap();
        let cell = c.cells()[0];
        let r = run_trial(&c, &cell, 9);
        assert!(r.diagnostic.is_none(), "{:?}", r.diagnostic);
        assert!(r.success && r.nmse < 1e-8, "nmse {}", r.nmse);
    }

    #[test]
    fn noise_is_deterministic_and_calibrated() {
        let window = make_window(WindowKind::Square, 16, 256, 0).unwrap();
        let x = Signal::new((0..256).map(|i| Complex64::new((i as f64 * 0.37).sin() + 1.1, (i as f64 * 0.11).cos())).collect()).unwrap();
        let y = measure(&x, &window, 1, 16).unwrap();
        assert_eq!(add_noise(&y, f64::INFINITY, 1), y);
        let a = add_noise(&y, 20.0, 4);
        assert_eq!(a, add_noise(&y, 20.0, 4));
        assert_eq!(a.noise_snr_db, Some(20.0));
        let signal: f64 = y.y.iter().map(|v| v * v).sum();
        let noise: f64 = a.y.iter().zip(&y.y).map(|(p, q)| (p - q) * (p - q)).sum();
        let snr = 10.0 * (signal / noise).log10();
        assert!((snr - 20.0).abs() < 0.5, "empirical snr {snr}");
    }

    #[test]
    fn single_trial_table_matches_trial() {
        let c = small_config();
        let table = run_experiment(&c).unwrap();
        assert_eq!(table.rows.len(), 1);
        let t = &table.trials[0];
        let r = &table.rows[0];
        assert_eq!(r.trials, 1);
        assert_eq!(r.mean_nmse, t.nmse);
        assert_eq!(r.median_nmse, t.nmse);
        assert_eq!(r.success_rate, if t.success { 1.0 } else { 0.0 });
        let csv = table.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn measurement_and_signal_files_round_trip() {
        let window = make_window(WindowKind::Square, 3, 8, 0).unwrap();
        let x = sig(&[(1.0, 0.0), (0.5, -0.25), (2.0, 1.0), (-1.0, 0.1), (0.3, 0.3), (1.0, 1.0), (-0.2, 0.0), (0.7, -0.9)]);
        let y = measure(&x, &window, 2, 4).unwrap();
        let back = parse_measurements(&format_measurements(&y)).unwrap().into_measurements(&window).unwrap();
        assert_eq!(back.y, y.y);
        assert_eq!(back.geometry, y.geometry);
        assert_eq!(parse_signal(&format_signal(&x)).unwrap(), x);
        assert!(matches!(parse_measurements("8 3 2"), Err(Error::Parse(_))));
        assert!(matches!(parse_measurements("8 3 2 4 4\n1 2 3"), Err(Error::Parse(_))));
        assert!(matches!(parse_signal("1 2 3"), Err(Error::Parse(_))));
    }
}
