use std::path::Path;
use std::process::{Command, Output};

fn stftpr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stftpr")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_conditions_reports_and_exits_zero() {
    let out = stftpr(&["check-conditions", "--N", "31", "--W", "8"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("unique recovery guaranteed: true"));
}

#[test]
fn invalid_arguments_exit_one() {
    assert_eq!(code(&stftpr(&["check-conditions", "--N", "31", "--W", "0"])), 1);
    assert_eq!(code(&stftpr(&["no-such-command"])), 1);
    assert_eq!(code(&stftpr(&["--help"])), 0);
}

#[test]
fn measure_then_direct_recover_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let signal = dir.path().join("x.txt");
    let meas = dir.path().join("y.txt");
    let est = dir.path().join("est.txt");
    let values: Vec<String> = (0..13).map(|i| format!("{} {}", 1.0 + 0.1 * i as f64, 0.3 - 0.05 * i as f64)).collect();
    std::fs::write(&signal, values.join("\n")).unwrap();

    let out = stftpr(&["measure", "--signal", path(&signal), "--W", "4", "--L", "1", "--K", "13", "--output", path(&meas)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = stftpr(&["recover", "--input", path(&meas), "--method", "direct", "--output", path(&est)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let x = stftpr::harness::read_signal(&signal).unwrap();
    let e = stftpr::harness::read_signal(&est).unwrap();
    assert!(stftpr::harness::nmse(&e, &x).unwrap() < 1e-16);
}

#[test]
fn recover_rejects_mismatched_header_flags() {
    let dir = tempfile::tempdir().unwrap();
    let signal = dir.path().join("x.txt");
    let meas = dir.path().join("y.txt");
    std::fs::write(&signal, "1\n2\n3\n4\n5\n").unwrap();
    assert_eq!(code(&stftpr(&["measure", "--signal", path(&signal), "--W", "2", "--L", "1", "--K", "5", "--output", path(&meas)])), 0);
    assert_eq!(code(&stftpr(&["recover", "--input", path(&meas), "--method", "gla", "--L", "2"])), 1);
}

#[test]
fn unconverged_search_exits_two_and_still_writes_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let signal = dir.path().join("x.txt");
    let meas = dir.path().join("y.txt");
    let est = dir.path().join("est.txt");
    let values: Vec<String> = (0..16).map(|i| format!("{}", ((i * 7919) % 13) as f64 - 6.0)).collect();
    std::fs::write(&signal, values.join("\n")).unwrap();
    assert_eq!(code(&stftpr(&["measure", "--signal", path(&signal), "--W", "4", "--L", "4", "--K", "4", "--output", path(&meas)])), 0);
    let out = stftpr(&[
        "recover", "--input", path(&meas), "--method", "stft-gespar", "--k", "1", "--max-swaps", "1", "--output", path(&est),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(est.exists());
}

#[test]
fn ambiguity_pair_has_matching_spectrograms() {
    let dir = tempfile::tempdir().unwrap();
    let out = stftpr(&["ambiguity", "--kind", "separated", "--N", "24", "--W", "4", "--L", "2", "--out", path(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let u = stftpr::harness::read_signal(&dir.path().join("u.txt")).unwrap();
    let v = stftpr::harness::read_signal(&dir.path().join("v.txt")).unwrap();
    let g = stftpr::make_window(stftpr::WindowKind::Square, 4, 24, 0).unwrap();
    let a = stftpr::measure(&u, &g, 2, 24).unwrap();
    let b = stftpr::measure(&v, &g, 2, 24).unwrap();
    let scale = a.y.iter().fold(0.0f64, |m, y| m.max(*y));
    assert!(a.y.iter().zip(&b.y).all(|(p, q)| (p - q).abs() <= 1e-10 * scale));
    assert!(stftpr::harness::nmse(&u, &v).unwrap() > 1e-6);
}

#[test]
fn experiment_writes_csv_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "N = 12\nW = 4\nL_values = [1, 2]\nK_values = [6]\nk_range = [1]\ntrials_per_cell = 1\nmethods = [\"stft-gespar\"]\nrng_seed = 3\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = stftpr(&["experiment", "--config", path(&cfg), "--out", path(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["results.csv", "success.svg", "nmse.svg"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    std::fs::write(&cfg, "N = 12\nbogus = 1\n").unwrap();
    assert_eq!(code(&stftpr(&["experiment", "--config", path(&cfg), "--out", path(&out_dir)])), 1);
}
