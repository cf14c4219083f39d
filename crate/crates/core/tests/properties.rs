use num_complex::Complex64;
use proptest::prelude::*;

use stftpr::gespar::{gespar_solve, objective, power_spectrum_operator, ps_measure, GesparConfig, QuadraticProblem};
use stftpr::harness::{
    nmse, render_svg, run_experiment, ExperimentConfig, ExperimentTable, PanelBy, PlotMetric, CSV_HEADER,
};
use stftpr::primitives::rng_from_seed;
use stftpr::{
    build_measurement_operator, istft, make_window, measure, stft_forward, Dictionary, Geometry, Signal, WindowKind,
};

fn complex_vec(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0).prop_map(|(re, im)| Complex64::new(re, im)), n)
}

fn nonzero_signal(n: usize) -> impl Strategy<Value = Signal> {
    complex_vec(n)
        .prop_filter("nonzero", |v| v.iter().any(|z| z.norm() > 1e-3))
        .prop_map(|v| Signal::new(v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nmse_is_invariant_to_global_phase(x in nonzero_signal(9), phi in 0.0f64..std::f64::consts::TAU) {
        let rotated = x.scaled(Complex64::from_polar(1.0, phi));
        prop_assert!(nmse(&rotated, &x).unwrap() < 1e-24);
    }

    #[test]
    fn nmse_is_bounded_by_the_unaligned_error(x in nonzero_signal(7), e in nonzero_signal(7)) {
        let direct: f64 = e.values().iter().zip(x.values()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / x.energy();
        prop_assert!(nmse(&e, &x).unwrap() <= direct * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn spectrogram_ignores_global_phase(x in nonzero_signal(12), phi in 0.0f64..6.3, hop in 1usize..=4) {
        let g = make_window(WindowKind::Square, 4, 12, 0).unwrap();
        let a = measure(&x, &g, hop, 6).unwrap();
        let b = measure(&x.scaled(Complex64::from_polar(1.0, phi)), &g, hop, 6).unwrap();
        let scale = a.y.iter().fold(1.0f64, |m, v| m.max(*v));
        for (u, v) in a.y.iter().zip(&b.y) {
            prop_assert!((u - v).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn overlap_add_inverts_the_transform(x in nonzero_signal(10), w in 1usize..=10, hop_frac in 0.0f64..1.0) {
        let hop = 1 + ((w - 1) as f64 * hop_frac) as usize;
        let g = make_window(WindowKind::Square, w, 10, 0).unwrap();
        let back = istft(&stft_forward(&x, &g, hop, w).unwrap(), &g, hop).unwrap();
        for (a, b) in back.values().iter().zip(x.values()) {
            prop_assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn objective_is_nonnegative(s in prop::collection::vec(-3.0f64..3.0, 8), y in prop::collection::vec(0.0f64..5.0, 32)) {
        let g = make_window(WindowKind::Square, 4, 8, 0).unwrap();
        let op = build_measurement_operator(&g, 2, 8, &Dictionary::identity(8)).unwrap();
        prop_assert_eq!(op.count(), y.len());
        let p = QuadraticProblem::new(&op, y).unwrap();
        prop_assert!(objective(&s, &p).unwrap() >= 0.0);
    }

    #[test]
    fn measurement_count_is_positions_times_bins(n in 2usize..40, w_frac in 0.0f64..1.0, hop_frac in 0.0f64..1.0, bins in 1usize..20) {
        let w = 1 + ((n - 1) as f64 * w_frac) as usize;
        let hop = 1 + ((n - 1) as f64 * hop_frac) as usize;
        let g = make_window(WindowKind::Square, w, n, 0).unwrap();
        let geo = Geometry::new(&g, hop, bins).unwrap();
        prop_assert_eq!(geo.positions(), n.div_ceil(hop));
        prop_assert_eq!(geo.measurement_count(), n.div_ceil(hop) * bins);
        let x = Signal::zeros(n);
        prop_assert_eq!(measure(&x, &g, hop, bins).unwrap().y.len(), geo.measurement_count());
    }

    #[test]
    fn power_spectrum_operator_matches_fft(x in prop::collection::vec(-2.0f64..2.0, 6), p in 6usize..20) {
        let signal = Signal::from_real(&x).unwrap();
        let op = power_spectrum_operator(&Dictionary::identity(6), p).unwrap();
        prop_assert_eq!(op.count(), p);
        let a = op.evaluate(&x).unwrap();
        let b = ps_measure(&signal, p).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-10 * (1.0 + v.abs()));
        }
    }
}

fn planted_problem(seed: u64) -> (QuadraticProblem, Vec<f64>) {
    let n = 16;
    let dict = Dictionary::gaussian(n, n, &mut rng_from_seed(seed));
    let g = make_window(WindowKind::Square, 5, n, 0).unwrap();
    let op = build_measurement_operator(&g, 2, 8, &dict).unwrap();
    let mut s = vec![0.0; n];
    s[3] = 1.2;
    s[11] = -0.7;
    let y = op.evaluate(&s).unwrap();
    (QuadraticProblem::new(&op, y).unwrap(), s)
}

#[test]
fn gespar_is_deterministic_for_a_seed() {
    let (p, _) = planted_problem(5);
    let cfg = GesparConfig { max_total_swaps: 200, ..GesparConfig::new(2, 77) };
    assert_eq!(gespar_solve(&p, &cfg).unwrap(), gespar_solve(&p, &cfg).unwrap());
}

#[test]
fn gespar_result_is_consistent_with_its_objective() {
    let (p, _) = planted_problem(6);
    let cfg = GesparConfig { max_total_swaps: 300, ..GesparConfig::new(2, 1) };
    let r = gespar_solve(&p, &cfg).unwrap();
    assert!(r.support.len() <= 2);
    assert!(r.coefficients.iter().enumerate().all(|(j, c)| *c == 0.0 || r.support.contains(&j)));
    let f = objective(&r.coefficients, &p).unwrap();
    assert!((f - r.objective_value).abs() <= 1e-9 * (1.0 + f));
    assert!(r.swaps_used <= 300 + 1);
}

#[test]
fn gespar_recovers_one_sparse_identity_example() {
    // Identity dictionary: measurements of a scaled unit vector.
    let n = 8;
    let g = make_window(WindowKind::Square, 3, n, 0).unwrap();
    let op = build_measurement_operator(&g, 1, n, &Dictionary::identity(n)).unwrap();
    let mut s = vec![0.0; n];
    s[5] = 2.0;
    let p = QuadraticProblem::new(&op, op.evaluate(&s).unwrap()).unwrap();
    let r = gespar_solve(&p, &GesparConfig::new(1, 0)).unwrap();
    assert!(r.converged);
    assert_eq!(r.support, vec![5]);
    assert!((r.coefficients[5].abs() - 2.0).abs() < 1e-8);
}

fn small_config(methods: &str, l_values: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!(
        r#"
N = 16
W = 4
L_values = {l_values}
K_values = [8]
k_range = [1, 2]
trials_per_cell = 2
methods = {methods}
rng_seed = 9
gespar_max_swaps = 200
altproj_restarts = 2
altproj_max_iterations = 50
"#
    ))
    .unwrap()
}

#[test]
fn experiment_csv_is_byte_identical_across_runs() {
    let cfg = small_config(r#"["stft-gespar", "gla"]"#, "[1, 2]");
    let a = run_experiment(&cfg).unwrap().to_csv();
    let b = run_experiment(&cfg).unwrap().to_csv();
    assert_eq!(a, b);
    assert!(a.starts_with(CSV_HEADER));
    assert_eq!(a.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn svg_has_one_panel_per_stride() {
    let cfg = small_config(r#"["stft-gespar"]"#, "[1, 2, 3, 4]");
    let table = run_experiment(&cfg).unwrap();
    let svg = render_svg(&table, PlotMetric::SuccessRate, PanelBy::Hop);
    assert_eq!(svg.matches("<g class=\"panel\"").count(), 4);
    assert_eq!(svg.matches("<polyline").count(), 4);
}

#[test]
fn truncation_matches_a_shorter_rerun() {
    let cfg = small_config(r#"["stft-gespar"]"#, "[2]");
    let full = run_experiment(&cfg).unwrap();
    let short = run_experiment(&ExperimentConfig { trials_per_cell: 1, ..cfg }).unwrap();
    assert_eq!(full.truncated(2, 1, false).to_csv(), short.to_csv());
    assert_eq!(ExperimentTable::from_trials(short.trials.clone(), 1, false), short);
}
