//! Command-line front end: single runs, comparisons, seed sweeps and
//! plot-ready report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, OrderingAssertion};
use crate::mpc::ControllerVariant;
use crate::sim::{run_experiment, write_run, ExperimentLog, Metrics, Obstacle, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_ASSERTION: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} ordering assertion(s) failed")]
    Assertion(usize),
    #[error("{0}")]
    Report(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Io { .. }) | CliError::Io { .. } => EXIT_IO,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) | CliError::Report(_) => EXIT_RUNTIME,
            CliError::Assertion(_) => EXIT_ASSERTION,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => CliError::Config(c),
            SimError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

#[derive(Debug, Parser)]
#[command(name = "haptic-mpc", version, about = "Feedback MPC teleoperation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<ControllerVariant>,
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one variant and write its log and metrics.
    Run(RunArgs),
    /// Run every configured variant and evaluate the ordering assertions.
    Compare(RunArgs),
    /// Repeat `compare` over consecutive seeds and assert on the means.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 6)]
        seeds: u64,
    },
    /// Turn run directories into plot-ready data files.
    Report {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        downsample: usize,
        /// Accept logs from different configurations.
        #[arg(long)]
        force: bool,
    },
    /// Serve a live session over TCP.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value_t = 1.0)]
        pace: f64,
    },
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let config = ExperimentConfig::from_file(&args.config)?;
    Ok(config.with_overrides(args.seed, args.variant, args.duration, args.out.clone())?)
}

fn output_dir(config: &ExperimentConfig) -> PathBuf {
    config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&config.name))
}

/// Runs the first configured variant (or the `--variant` override).
pub fn run(config: &ExperimentConfig) -> Result<(PathBuf, Metrics), CliError> {
    let variant = config.variants[0];
    let dir = output_dir(config);
    log::info!("running {} ({variant}, seed {}) into {}", config.name, config.seed, dir.display());
    let (log, metrics) = run_experiment(config, variant)?;
    write_run(&dir, &log, &metrics)?;
    Ok((dir, metrics))
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: ControllerVariant,
    pub dir: PathBuf,
    pub metrics: Result<Metrics, String>,
}

#[derive(Debug, Clone)]
pub struct AssertionResult {
    pub assertion: OrderingAssertion,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantResult>,
    pub assertions: Vec<AssertionResult>,
}

impl ComparisonReport {
    pub fn failed_assertions(&self) -> usize {
        self.assertions.iter().filter(|a| !a.passed).count()
    }

    /// Metric value for a variant (the first listing if repeated).
    pub fn metric(&self, variant: ControllerVariant, name: &str) -> Option<f64> {
        self.variants
            .iter()
            .find(|v| v.variant == variant)
            .and_then(|v| v.metrics.as_ref().ok())
            .and_then(|m| m.get(name))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config_hash = {}", self.config_hash);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        for v in &self.variants {
            let _ = writeln!(s, "\n[{}]", v.variant);
            let _ = writeln!(s, "log = {}", v.dir.display());
            match &v.metrics {
                Ok(m) => {
                    for name in crate::sim::METRIC_NAMES {
                        let _ = writeln!(s, "{name} = {}", m.get(name).expect("known metric"));
                    }
                }
                Err(e) => {
                    let _ = writeln!(s, "status = failed: {e}");
                }
            }
        }
        if !self.assertions.is_empty() {
            let _ = writeln!(s, "\n[assertions]");
        }
        for a in &self.assertions {
            let x = &a.assertion;
            let _ = writeln!(
                s,
                "{} {}({}) {} {}*{}({}) : {} vs {} : {}",
                if a.passed { "PASS" } else { "FAIL" },
                x.metric,
                x.lhs,
                x.relation.symbol(),
                x.factor,
                x.metric,
                x.rhs,
                a.lhs,
                a.rhs,
                if a.passed { "ok" } else { "violated" }
            );
        }
        s
    }
}

fn evaluate_assertions(
    assertions: &[OrderingAssertion],
    value: impl Fn(ControllerVariant, &str) -> Option<f64>,
) -> Vec<AssertionResult> {
    assertions
        .iter()
        .map(|a| {
            let lhs = value(a.lhs, &a.metric).unwrap_or(f64::NAN);
            let rhs = value(a.rhs, &a.metric).unwrap_or(f64::NAN) * a.factor;
            AssertionResult {
                assertion: a.clone(),
                lhs,
                rhs,
                passed: a.relation.holds(lhs, rhs),
            }
        })
        .collect()
}

fn variant_dirs(root: &Path, variants: &[ControllerVariant]) -> Vec<PathBuf> {
    variants
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let repeats = variants[..i].iter().filter(|w| *w == v).count();
            if repeats == 0 {
                root.join(v.name())
            } else {
                root.join(format!("{}-{}", v.name(), repeats + 1))
            }
        })
        .collect()
}

/// Runs every configured variant in parallel; metrics are recomputed from the
/// written logs.
pub fn compare(config: &ExperimentConfig) -> Result<ComparisonReport, CliError> {
    let root = output_dir(config);
    let dirs = variant_dirs(&root, &config.variants);
    let outcomes: Vec<Result<(), String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .variants
            .iter()
            .zip(dirs.iter())
            .map(|(&variant, dir)| {
                scope.spawn(move || -> Result<(), String> {
                    log::info!("running {} ({variant}, seed {}) into {}", config.name, config.seed, dir.display());
                    let (log, metrics) = run_experiment(config, variant).map_err(|e| e.to_string())?;
                    write_run(dir, &log, &metrics).map_err(|e| e.to_string())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("sub-run panicked".into())))
            .collect()
    });
    let variants: Vec<VariantResult> = config
        .variants
        .iter()
        .zip(dirs)
        .zip(outcomes)
        .map(|((&variant, dir), outcome)| {
            let metrics = outcome.and_then(|()| {
                ExperimentLog::read(&dir)
                    .map(|log| Metrics::from_log(&log, &config.metrics))
                    .map_err(|e| e.to_string())
            });
            VariantResult { variant, dir, metrics }
        })
        .collect();
    let mut report = ComparisonReport {
        config_hash: config.hash(),
        seeds: vec![config.seed],
        variants,
        assertions: Vec::new(),
    };
    report.assertions = evaluate_assertions(&config.assertions, |v, m| report.metric(v, m));
    fs::create_dir_all(&root).map_err(io_err(&root))?;
    write(&root.join("comparison.txt"), &report.to_text())?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub config_hash: String,
    pub runs: Vec<(u64, ComparisonReport)>,
    pub assertions: Vec<AssertionResult>,
}

impl SweepReport {
    /// Per-seed values of a metric for one variant.
    pub fn values(&self, variant: ControllerVariant, name: &str) -> Vec<f64> {
        self.runs.iter().filter_map(|(_, r)| r.metric(variant, name)).collect()
    }

    pub fn mean(&self, variant: ControllerVariant, name: &str) -> Option<f64> {
        let v = self.values(variant, name);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn failed_assertions(&self) -> usize {
        self.assertions.iter().filter(|a| !a.passed).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# haptic-mpc sweep config_hash={}\nseed,variant", self.config_hash);
        for name in crate::sim::METRIC_NAMES {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for (seed, r) in &self.runs {
            for v in &r.variants {
                let _ = write!(s, "{seed},{}", v.variant);
                for name in crate::sim::METRIC_NAMES {
                    let x = v.metrics.as_ref().ok().and_then(|m| m.get(name)).unwrap_or(f64::NAN);
                    let _ = write!(s, ",{x}");
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Runs `compare` for seeds `seed, seed+1, …` and evaluates the assertions on
/// the per-variant means.
pub fn sweep(config: &ExperimentConfig, seeds: u64) -> Result<SweepReport, CliError> {
    let root = output_dir(config);
    let mut runs = Vec::new();
    for k in 0..seeds {
        let seed = config.seed + k;
        let mut c = config.clone();
        c.seed = seed;
        c.output_dir = Some(root.join(format!("seed-{seed}")));
        c.assertions.clear();
        runs.push((seed, compare(&c)?));
    }
    let mut report = SweepReport {
        config_hash: config.hash(),
        runs,
        assertions: Vec::new(),
    };
    report.assertions = evaluate_assertions(&config.assertions, |v, m| report.mean(v, m));
    let mut summary = String::new();
    for a in &report.assertions {
        let x = &a.assertion;
        let _ = writeln!(
            summary,
            "{} mean {}({}) {} {}*mean {}({}) : {} vs {}",
            if a.passed { "PASS" } else { "FAIL" },
            x.metric,
            x.lhs,
            x.relation.symbol(),
            x.factor,
            x.metric,
            x.rhs,
            a.lhs,
            a.rhs
        );
    }
    write(&root.join("sweep.csv"), &report.to_csv())?;
    write(&root.join("sweep.txt"), &format!("config_hash = {}\n{summary}", report.config_hash))?;
    Ok(report)
}

/// Quartiles (min, q1, median, q3, max) with linear interpolation.
pub fn quartiles(values: &[f64]) -> [f64; 5] {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    [q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)]
}

/// Signed clearance `min_i ‖ee − c_i‖ − r_i` to the hard obstacle radius.
pub fn clearance(ee: &nalgebra::DVector<f64>, obstacles: &[Obstacle]) -> f64 {
    obstacles
        .iter()
        .map(|o| (ee - &o.center).norm() - o.radius)
        .fold(f64::INFINITY, f64::min)
}

/// Files written by [`report`] for one log.
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub overlay: PathBuf,
    pub force: PathBuf,
    pub errors: PathBuf,
    pub clearance: Option<PathBuf>,
}

fn channel_list(log: &ExperimentLog, prefix: &str) -> Vec<usize> {
    (0..)
        .map(|i| log.channel(&format!("{prefix}_{i}")))
        .take_while(Option::is_some)
        .flatten()
        .collect()
}

fn columns_file(log: &ExperimentLog, header: &str, cols: &[usize], step: usize) -> String {
    let mut s = format!("{header}\n");
    let names: Vec<&str> = cols.iter().map(|&i| log.channels[i].as_str()).collect();
    s.push_str(&names.join(","));
    s.push('\n');
    for row in log.rows.iter().step_by(step.max(1)) {
        let vals: Vec<String> = cols.iter().map(|&i| format!("{:?}", row[i])).collect();
        s.push_str(&vals.join(","));
        s.push('\n');
    }
    s
}

/// Writes overlay, force, error-quartile and clearance files for each log
/// directory into `out/<index>-<variant>/`.
pub fn report(logs: &[PathBuf], out: &Path, downsample: usize, force: bool) -> Result<Vec<ReportFiles>, CliError> {
    let loaded: Vec<ExperimentLog> = logs.iter().map(|p| ExperimentLog::read(p)).collect::<Result<_, _>>()?;
    if let Some(first) = loaded.first() {
        let mixed = loaded.iter().any(|l| l.meta.config_hash != first.meta.config_hash);
        if mixed && !force {
            return Err(CliError::Report(
                "logs come from different configurations (config hashes differ); pass --force to combine them".into(),
            ));
        }
    }
    let mut files = Vec::new();
    let mut summary = String::from("log,variant,seed,config_hash,q0,q25,q50,q75,q100,min_clearance\n");
    for (k, (log, path)) in loaded.iter().zip(logs).enumerate() {
        let dir = out.join(format!("{k}-{}", log.meta.variant));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let header = format!(
            "# haptic-mpc report config_hash={} seed={} variant={} source={}",
            log.meta.config_hash,
            log.meta.seed,
            log.meta.variant,
            path.display()
        );
        let t = log.channel("t").ok_or_else(|| CliError::Report("log lacks channel t".into()))?;

        let mut cols = vec![t];
        cols.extend(channel_list(log, "x_d"));
        cols.extend(channel_list(log, "ee"));
        let overlay = dir.join("overlay.csv");
        write(&overlay, &columns_file(log, &header, &cols, downsample))?;

        let bump = crate::sim::bump_time(log, 2.0);
        let mut force_text = header.clone();
        let _ = writeln!(
            force_text,
            "\n# bump_time={}",
            bump.map(|b| b.to_string()).unwrap_or_else(|| "none".into())
        );
        let f_hf = log.channel("f_hf");
        let f_cols = channel_list(log, "f");
        force_text.push_str("t,f_hf");
        for &i in &f_cols {
            let _ = write!(force_text, ",{}", log.channels[i]);
        }
        force_text.push_str(",bump\n");
        let mut marked = false;
        for row in &log.rows {
            let is_bump = !marked && bump.is_some_and(|b| row[t] >= b);
            marked |= is_bump;
            let _ = write!(force_text, "{:?},{:?}", row[t], f_hf.map(|i| row[i]).unwrap_or(0.0));
            for &i in &f_cols {
                let _ = write!(force_text, ",{:?}", row[i]);
            }
            let _ = writeln!(force_text, ",{}", u8::from(is_bump));
        }
        let force_path = dir.join("force.csv");
        write(&force_path, &force_text)?;

        let ee = log.vectors("ee").map_err(|e| CliError::Report(e.to_string()))?;
        let xd = log.vectors("x_d").map_err(|e| CliError::Report(e.to_string()))?;
        let clutch = log.column("clutch").map_err(|e| CliError::Report(e.to_string()))?;
        let errs: Vec<f64> = ee
            .iter()
            .zip(&xd)
            .zip(&clutch)
            .filter(|(_, c)| **c != 0.0)
            .map(|((e, d), _)| (e - d).norm())
            .collect();
        let q = if errs.is_empty() { [f64::NAN; 5] } else { quartiles(&errs) };
        let errors = dir.join("errors.csv");
        write(
            &errors,
            &format!(
                "{header}\nq0,q25,q50,q75,q100,samples\n{},{},{},{},{},{}\n",
                q[0],
                q[1],
                q[2],
                q[3],
                q[4],
                errs.len()
            ),
        )?;

        let obstacles: Vec<Obstacle> = log
            .meta
            .obstacles
            .iter()
            .map(|(c, r, b)| Obstacle {
                center: nalgebra::DVector::from_column_slice(c),
                radius: *r,
                buffer: *b,
            })
            .collect();
        let mut min_clear = f64::NAN;
        let clearance_path = if obstacles.is_empty() {
            None
        } else {
            let mut text = format!("{header}\nt,min_distance\n");
            min_clear = f64::INFINITY;
            for (row, p) in log.rows.iter().zip(&ee) {
                let c = clearance(p, &obstacles);
                min_clear = min_clear.min(c);
                let _ = writeln!(text, "{:?},{c:?}", row[t]);
            }
            let path = dir.join("clearance.csv");
            write(&path, &text)?;
            Some(path)
        };
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{},{}",
            path.display(),
            log.meta.variant,
            log.meta.seed,
            log.meta.config_hash,
            q[0],
            q[1],
            q[2],
            q[3],
            q[4],
            min_clear
        );
        files.push(ReportFiles {
            overlay,
            force: force_path,
            errors,
            clearance: clearance_path,
        });
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    write(&out.join("summary.csv"), &summary)?;
    Ok(files)
}

fn print_metrics(variant: ControllerVariant, m: &Metrics) {
    let fmt = |r: &Result<f64, crate::sim::MetricError>| match r {
        Ok(v) => format!("{v:.6}"),
        Err(e) => format!("n/a ({e})"),
    };
    println!(
        "{variant:>12}  tracking_error={}  force_std={}  instability={}  max_penetration={:.6}  replans={} skipped={} failed={}",
        fmt(&m.tracking_error),
        fmt(&m.force_std),
        m.instability,
        m.max_penetration,
        m.replans,
        m.skipped_replans,
        m.failed_solves
    );
}

/// Executes a parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let config = load(&args)?;
            let (dir, metrics) = run(&config)?;
            print_metrics(config.variants[0], &metrics);
            println!("wrote {}", dir.display());
            Ok(())
        }
        Command::Compare(args) => {
            let mut config = load(&args)?;
            if args.variant.is_some() {
                config.assertions.clear();
            }
            let report = compare(&config)?;
            for v in &report.variants {
                match &v.metrics {
                    Ok(m) => print_metrics(v.variant, m),
                    Err(e) => println!("{:>12}  failed: {e}", v.variant),
                }
            }
            for a in &report.assertions {
                let x = &a.assertion;
                println!(
                    "{} {}({}) {} {}*{}({}): {} vs {}",
                    if a.passed { "PASS" } else { "FAIL" },
                    x.metric,
                    x.lhs,
                    x.relation.symbol(),
                    x.factor,
                    x.metric,
                    x.rhs,
                    a.lhs,
                    a.rhs
                );
            }
            match report.failed_assertions() {
                0 => Ok(()),
                n => Err(CliError::Assertion(n)),
            }
        }
        Command::Sweep { run, seeds } => {
            let config = load(&run)?;
            let report = sweep(&config, seeds)?;
            for v in &config.variants {
                let m = |name| report.mean(*v, name).unwrap_or(f64::NAN);
                println!(
                    "{v:>12}  mean tracking_error={:.6}  mean force_std={:.6}  instability={}/{}",
                    m("tracking_error"),
                    m("force_std"),
                    report.values(*v, "instability").iter().filter(|x| **x != 0.0).count(),
                    seeds
                );
            }
            for a in &report.assertions {
                println!(
                    "{} mean {}({}) {} {}*mean({}): {} vs {}",
                    if a.passed { "PASS" } else { "FAIL" },
                    a.assertion.metric,
                    a.assertion.lhs,
                    a.assertion.relation.symbol(),
                    a.assertion.factor,
                    a.assertion.rhs,
                    a.lhs,
                    a.rhs
                );
            }
            match report.failed_assertions() {
                0 => Ok(()),
                n => Err(CliError::Assertion(n)),
            }
        }
        Command::Report {
            logs,
            out,
            downsample,
            force,
        } => {
            let out = out.unwrap_or_else(|| PathBuf::from("report"));
            let files = report(&logs, &out, downsample, force)?;
            println!("wrote {} report set(s) to {}", files.len(), out.display());
            Ok(())
        }
        Command::Serve { config, port, pace } => {
            let config = ExperimentConfig::from_file(&config)?;
            crate::bridge::serve(&config, port, pace).map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_interpolate() {
        assert_eq!(quartiles(&[3.0, 1.0, 2.0, 4.0, 5.0]), [1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(quartiles(&[1.0, 2.0])[2], 1.5);
        assert_eq!(quartiles(&[7.0]), [7.0; 5]);
    }

    #[test]
    fn repeated_variants_get_distinct_dirs() {
        use ControllerVariant::*;
        let dirs = variant_dirs(Path::new("r"), &[Feedback, Baseline, Feedback]);
        assert_eq!(
            dirs,
            vec![
                PathBuf::from("r/feedback"),
                PathBuf::from("r/baseline"),
                PathBuf::from("r/feedback-2")
            ]
        );
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Assertion(1).exit_code(), EXIT_ASSERTION);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), EXIT_RUNTIME);
        assert_eq!(CliError::Config(ConfigError::Parse("x".into())).exit_code(), EXIT_CONFIG);
        assert_eq!(
            CliError::Config(ConfigError::Io {
                path: "x".into(),
                source: std::io::Error::other("x")
            })
            .exit_code(),
            EXIT_IO
        );
    }

    #[test]
    fn cli_parses_verbs() {
        let c = Cli::try_parse_from(["haptic-mpc", "run", "--config", "a.toml", "--variant", "feed-forward", "--seed", "3"])
            .unwrap();
        match c.command {
            Command::Run(a) => {
                assert_eq!(a.variant, Some(ControllerVariant::FeedForward));
                assert_eq!(a.seed, Some(3));
            }
            _ => panic!(),
        }
        assert!(Cli::try_parse_from(["haptic-mpc", "report"]).is_err());
        assert!(Cli::try_parse_from(["haptic-mpc", "serve", "--config", "a", "--port", "9", "--pace", "0.5"]).is_ok());
    }
}
