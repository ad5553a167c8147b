use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use haptic_mpc::cli::{EXIT_ASSERTION, EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_RUNTIME};
use haptic_mpc::sim::ExperimentLog;

fn scenario_path(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name].iter().collect()
}

fn scenario_text(name: &str) -> String {
    fs::read_to_string(scenario_path(name)).unwrap()
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_haptic-mpc")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn metric(dir: &Path, name: &str) -> f64 {
    let text = fs::read_to_string(dir.join("metrics.txt")).unwrap();
    let prefix = format!("{name} = ");
    text.lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("{name} missing from metrics.txt"))
        .parse()
        .unwrap()
}

/// Data rows of a CSV file, skipping `#` comments and the header line.
fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(str::to_string)
        .collect()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .find(|l| !l.starts_with('#'))
        .unwrap()
        .to_string()
}

#[test]
fn run_writes_logger_rate_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = cli(&["run", "--config", s(&scenario_path("free-motion.toml")), "--duration", "1.5", "--variant", "feedback", "--out", s(&out)]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(data_rows(&out.join("log.csv")).len(), 600);
    assert!(out.join("solves.csv").is_file());
    assert!(out.join("meta.json").is_file());
    assert!(metric(&out, "tracking_error") > 0.0);
    let log = ExperimentLog::read(&out).unwrap();
    assert_eq!(log.meta.variant.name(), "feedback");
    assert_eq!(log.rows.len(), 600);
}

#[test]
fn invalid_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, scenario_text("free-motion.toml").replace("duration = 30.0", "duration = -1.0")).unwrap();
    let o = cli(&["run", "--config", s(&bad)]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(String::from_utf8_lossy(&o.stderr).contains("duration"));

    fs::write(&bad, format!("bogus_key = 1\n{}", scenario_text("free-motion.toml"))).unwrap();
    assert_eq!(code(&cli(&["run", "--config", s(&bad)])), EXIT_CONFIG);
}

#[test]
fn unreadable_config_and_unwritable_output_exit_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&cli(&["run", "--config", s(&missing)])), EXIT_IO);

    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let o = cli(&["run", "--config", s(&scenario_path("free-motion.toml")), "--duration", "0.2", "--out", s(&blocker.join("run"))]);
    assert_eq!(code(&o), EXIT_IO);
}

#[test]
fn failed_assertion_exits_with_assertion_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("strict.toml");
    let text = scenario_text("free-motion.toml").replace("duration = 30.0", "duration = 1.0")
        + "\n[[assertions]]\nmetric = \"tracking_error\"\nlhs = \"feedback\"\nrelation = \">\"\nfactor = 10.0\nrhs = \"baseline\"\n";
    let cfg_text = text.replace("variants = [\"baseline\", \"feedforward\", \"feedback\"]", "variants = [\"baseline\", \"feedback\"]");
    fs::write(&cfg, cfg_text).unwrap();
    let out = dir.path().join("cmp");
    let o = cli(&["compare", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), EXIT_ASSERTION, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL tracking_error(feedback) >"), "{stdout}");
    assert!(out.join("comparison.txt").is_file());
}

#[test]
fn repeated_variant_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("twice.toml");
    let text = scenario_text("contact-press.toml")
        .replace("duration = 4.0", "duration = 2.0")
        .replace("variants = [\"baseline\", \"feedforward\", \"feedback\"]", "variants = [\"feedforward\", \"feedforward\"]");
    let text = text[..text.find("[[assertions]]").unwrap()].to_string();
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("cmp");
    let o = cli(&["compare", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let (a, b) = (out.join("feedforward"), out.join("feedforward-2"));
    assert_eq!(fs::read(a.join("metrics.txt")).unwrap(), fs::read(b.join("metrics.txt")).unwrap());
    assert_eq!(fs::read(a.join("log.csv")).unwrap(), fs::read(b.join("log.csv")).unwrap());
}

#[test]
fn sweep_writes_one_row_per_seed_and_variant() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = cli(&[
        "sweep", "--config", s(&scenario_path("contact-press.toml")), "--duration", "0.5", "--variant", "feedback", "--seeds", "2", "--out", s(&out),
    ]);
    // A half-second run never reaches the wall, so force metrics are undefined and the
    // scenario's assertions cannot hold.
    assert!([EXIT_OK, EXIT_ASSERTION].contains(&code(&o)), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("1,feedback,"));
    assert!(rows[1].starts_with("2,feedback,"));
}

#[test]
fn report_files_are_consistent_with_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario_path("zigzag-obstacle.toml");
    let mut runs = Vec::new();
    for variant in ["baseline", "feedback"] {
        let out = dir.path().join(variant);
        let o = cli(&["run", "--config", s(&cfg), "--duration", "3", "--variant", variant, "--out", s(&out)]);
        assert_eq!(code(&o), EXIT_OK);
        runs.push(out);
    }
    let report = dir.path().join("report");
    let o = cli(&["report", s(&runs[0]), s(&runs[1]), "--out", s(&report), "--downsample", "2"]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));

    for (k, (variant, run)) in ["baseline", "feedback"].iter().zip(&runs).enumerate() {
        let d = report.join(format!("{k}-{variant}"));
        assert_eq!(header(&d.join("overlay.csv")), "t,x_d_0,x_d_1,ee_0,ee_1");
        assert_eq!(data_rows(&d.join("overlay.csv")).len(), 600);

        let force = fs::read_to_string(d.join("force.csv")).unwrap();
        assert!(force.lines().any(|l| l.starts_with("# bump_time=")));
        assert_eq!(header(&d.join("force.csv")), "t,f_hf,f_0,f_1,bump");
        let bumps = data_rows(&d.join("force.csv")).iter().filter(|r| r.ends_with(",1")).count();
        assert!(bumps <= 1);

        let min_distance = data_rows(&d.join("clearance.csv"))
            .iter()
            .map(|r| r.split(',').nth(1).unwrap().parse::<f64>().unwrap())
            .fold(f64::INFINITY, f64::min);
        let penetration = metric(run, "max_penetration");
        assert!(((-min_distance).max(0.0) - penetration).abs() < 1e-12, "{min_distance} vs {penetration}");

        let errors = data_rows(&d.join("errors.csv"));
        let q: Vec<f64> = errors[0].split(',').map(|x| x.parse().unwrap()).collect();
        assert!(q.windows(2).take(4).all(|w| w[0] <= w[1]));
    }
    assert_eq!(data_rows(&report.join("summary.csv")).len(), 2);
}

#[test]
fn report_refuses_mixed_configurations_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario_path("free-motion.toml");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&cli(&["run", "--config", s(&cfg), "--duration", "0.5", "--out", s(&a)])), EXIT_OK);
    assert_eq!(code(&cli(&["run", "--config", s(&cfg), "--duration", "0.6", "--out", s(&b)])), EXIT_OK);
    let report = dir.path().join("report");
    let o = cli(&["report", s(&a), s(&b), "--out", s(&report)]);
    assert_eq!(code(&o), EXIT_RUNTIME);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    let o = cli(&["report", s(&a), s(&b), "--out", s(&report), "--force"]);
    assert_eq!(code(&o), EXIT_OK);
}

#[test]
fn seeds_and_variants_share_a_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario_path("contact-press.toml");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&cli(&["run", "--config", s(&cfg), "--duration", "0.3", "--seed", "4", "--out", s(&a)])), EXIT_OK);
    assert_eq!(code(&cli(&["run", "--config", s(&cfg), "--duration", "0.3", "--variant", "feedback", "--out", s(&b)])), EXIT_OK);
    let report = dir.path().join("report");
    assert_eq!(code(&cli(&["report", s(&a), s(&b), "--out", s(&report)])), EXIT_OK);
}
