//! Command-line front end: config resolution, experiment dispatch and
//! artifact emission (CSV, manifest, gnuplot script).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{self, Experiment, ExperimentConfig, MetricSeries, PmseTable, RunOutput};
use crate::lmi::{SolverOptions, FEASIBILITY_TOL, SYMMETRY_TOL};
use crate::models::NoiseKind;

#[derive(Debug, Parser)]
#[command(name = "fusionest", version, about = "Distributed fusion estimation under unknown bounded noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Two-sensor target tracking (linear model).
    Tracking(TrackingArgs),
    /// Landmark-based mobile robot localization (nonlinear model).
    Robot(CommonArgs),
    /// Runs the Schur-oracle, error-recursion and certificate suites.
    Selftest,
}

#[derive(Debug, Args)]
pub struct TrackingArgs {
    /// Noise type: 1 decaying, 2 Gaussian, 3 bounded.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub noise_type: Option<u8>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Monte Carlo runs for the PMSE curves (0 skips them).
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// TOML config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Solver { .. } | Error::Numerical(_) => 3,
        _ => 1,
    }
}

fn load_config(path: Option<&Path>) -> Result<Option<ExperimentConfig>> {
    let Some(path) = path else { return Ok(None) };
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
}

fn noise_from_flag(n: u8) -> NoiseKind {
    match n {
        1 => NoiseKind::TypeI,
        2 => NoiseKind::TypeII,
        _ => NoiseKind::TypeIII,
    }
}

/// Merges the config file (if any) with flag overrides.
pub fn resolve_config(experiment: Experiment, noise_flag: Option<u8>, common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match load_config(common.config.as_deref())? {
        Some(c) => {
            if c.experiment != experiment {
                return Err(Error::Config(format!(
                    "config is for the {:?} experiment, not {:?}",
                    c.experiment, experiment
                )));
            }
            c
        }
        None => match experiment {
            Experiment::Tracking => ExperimentConfig::default(),
            Experiment::Robot => ExperimentConfig::robot(120, 42),
        },
    };
    if let Some(n) = noise_flag {
        cfg.noise = noise_from_flag(n);
    }
    if let Some(h) = common.horizon {
        cfg.horizon = h;
    }
    if let Some(r) = common.runs {
        cfg.runs = r;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Per-step CSV text.
pub fn steps_csv(series: &MetricSeries) -> String {
    let l = series.sensors;
    let mut header = vec!["t".to_string()];
    header.extend((1..=l).map(|i| format!("se_lse_{i}")));
    header.push("se_dfe".into());
    header.extend((1..=l).map(|i| format!("obj_local_{i}")));
    header.push("obj_fusion".into());
    header.extend((1..=l).map(|i| format!("jd_{i}")));
    header.push("infeasible_flags".into());
    let mut out = header.join(",");
    out.push('\n');
    for s in &series.steps {
        let mut row = vec![s.t.to_string()];
        row.extend(s.se_lse.iter().map(|&v| num(v)));
        row.push(num(s.se_dfe));
        row.extend(s.obj_local.iter().map(|&v| num(v)));
        row.push(num(s.obj_fusion));
        row.extend(s.jd.iter().map(|&v| num(v)));
        row.push(s.infeasible_flags.to_string());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn emit_csv(series: &MetricSeries, path: &Path) -> Result<()> {
    fs::write(path, steps_csv(series))?;
    Ok(())
}

/// PMSE CSV text: `t,pmse_<method>,…`.
pub fn pmse_csv(table: &PmseTable) -> String {
    let mut out = String::from("t");
    for m in &table.methods {
        let _ = write!(out, ",pmse_{m}");
    }
    out.push('\n');
    for (t, row) in table.rows.iter().enumerate() {
        out.push_str(&(t + 1).to_string());
        for &v in row {
            out.push(',');
            out.push_str(&num(v));
        }
        out.push('\n');
    }
    out
}

/// Per-component PMSE: `t,pmse_<method>_x<k>,…`.
pub fn pmse_components_csv(table: &PmseTable) -> String {
    let n = table.components.first().and_then(|r| r.first()).map_or(0, Vec::len);
    let mut out = String::from("t");
    for m in &table.methods {
        for k in 1..=n {
            let _ = write!(out, ",pmse_{m}_x{k}");
        }
    }
    out.push('\n');
    for (t, row) in table.components.iter().enumerate() {
        out.push_str(&(t + 1).to_string());
        for per_method in row {
            for &v in per_method {
                out.push(',');
                out.push_str(&num(v));
            }
        }
        out.push('\n');
    }
    out
}

/// Truth, local and fused estimates of the reported run.
pub fn trajectory_csv(run: &RunOutput) -> String {
    let n = run.record.states.first().map_or(0, |x| x.len());
    let l = run.local.first().map_or(0, Vec::len);
    let mut out = String::from("t");
    for k in 1..=n {
        let _ = write!(out, ",x{k}");
    }
    for i in 1..=l {
        for k in 1..=n {
            let _ = write!(out, ",lse_{i}_x{k}");
        }
    }
    for k in 1..=n {
        let _ = write!(out, ",dfe_x{k}");
    }
    out.push('\n');
    for t in 0..run.record.states.len() {
        out.push_str(&t.to_string());
        let vals = run.record.states[t]
            .iter()
            .chain(run.local[t].iter().flat_map(|e| e.iter()))
            .chain(run.fused[t].iter());
        for &v in vals {
            out.push(',');
            out.push_str(&num(v));
        }
        out.push('\n');
    }
    out
}

/// Gnuplot script rendering the SE, objective, contraction and PMSE panels.
pub fn plot_script(config: &ExperimentConfig, series: &MetricSeries, pmse: Option<&PmseTable>) -> String {
    let l = series.sensors;
    let mut s = String::new();
    let _ = writeln!(s, "# gnuplot script; run from the output directory: gnuplot plot.gp");
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set terminal pngcairo size 1200,900");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set grid");
    let _ = writeln!(s, "set xlabel 't'");

    let _ = writeln!(s, "\nset output 'se.png'\nset title 'Squared estimation error'\nset ylabel 'SE'\nset logscale y");
    let mut plots: Vec<String> = (0..l).map(|i| format!("'steps.csv' using 1:{} with lines", 2 + i)).collect();
    plots.push(format!("'steps.csv' using 1:{} with lines lw 2", 2 + l));
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    let _ = writeln!(s, "unset logscale y");

    let _ = writeln!(s, "\nset output 'objectives.png'\nset title 'Design objectives'\nset ylabel 'trace'");
    let mut plots: Vec<String> = (0..l).map(|i| format!("'steps.csv' using 1:{} with lines", 3 + l + i)).collect();
    plots.push(format!("'steps.csv' using 1:{} with lines lw 2", 3 + 2 * l));
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));

    let _ = writeln!(s, "\nset output 'contraction.png'\nset title 'Contraction diagnostic'\nset ylabel 'J_d'");
    let plots: Vec<String> = (0..l).map(|i| format!("'steps.csv' using 1:{} with lines", 4 + 2 * l + i)).collect();
    let _ = writeln!(s, "plot {}, 1 with lines dashtype 2 notitle", plots.join(", "));

    if config.experiment == Experiment::Robot {
        let _ = writeln!(
            s,
            "\nset output 'trajectory.png'\nset title 'Robot trajectory'\nset xlabel 's_x'\nset ylabel 's_y'\nset size ratio -1"
        );
        let n = 3;
        let mut plots = vec!["'trajectory.csv' using 2:3 with lines lw 2 title 'truth'".to_string()];
        for i in 0..l {
            let c = 2 + n + i * n;
            plots.push(format!("'trajectory.csv' using {}:{} with lines title 'LSE {}'", c, c + 1, i + 1));
        }
        let c = 2 + n + l * n;
        plots.push(format!("'trajectory.csv' using {}:{} with lines title 'DFE'", c, c + 1));
        let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
        let _ = writeln!(s, "set size noratio\nset xlabel 't'");
    }

    if let Some(table) = pmse {
        let _ = writeln!(s, "\nset output 'pmse.png'\nset title 'PMSE over {} runs'\nset ylabel 'PMSE'\nset logscale y", table.runs);
        let plots: Vec<String> = (0..table.methods.len())
            .map(|m| format!("'pmse.csv' using 1:{} with lines", 2 + m))
            .collect();
        let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    }
    s
}

pub fn emit_plot_script(config: &ExperimentConfig, series: &MetricSeries, pmse: Option<&PmseTable>, path: &Path) -> Result<()> {
    fs::write(path, plot_script(config, series, pmse))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: String,
    command: String,
    config: &'a ExperimentConfig,
    run_seed: u64,
    monte_carlo_runs: usize,
    solver: SolverManifest,
    files: Vec<&'a str>,
}

#[derive(Debug, Serialize)]
struct SolverManifest {
    max_iterations: usize,
    gap_tol: f64,
    feas_tol: f64,
    verification_tol: f64,
    symmetry_tol: f64,
}

fn version_string() -> String {
    match option_env!("FUSIONEST_GIT_REV") {
        Some(rev) => format!("v{}-g{rev}", env!("CARGO_PKG_VERSION")),
        None => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

/// Whether PMSE curves are produced for this configuration.
pub fn wants_pmse(config: &ExperimentConfig) -> bool {
    config.runs > 0 && matches!(config.noise, NoiseKind::TypeII | NoiseKind::TypeIV)
}

/// Runs an experiment and writes every artifact into `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let run = match config.experiment {
        Experiment::Tracking => harness::run_linear_experiment(config)?.run,
        Experiment::Robot => harness::run_nonlinear_experiment(config)?.output,
    };
    let pmse = if wants_pmse(config) {
        Some(harness::monte_carlo_pmse(config, &harness::default_methods(config))?)
    } else {
        None
    };
    let mut files = vec!["steps.csv", "trajectory.csv", "config.toml", "plot.gp", "manifest.json"];
    emit_csv(&run.series, &out.join("steps.csv"))?;
    fs::write(out.join("trajectory.csv"), trajectory_csv(&run))?;
    if let Some(table) = &pmse {
        fs::write(out.join("pmse.csv"), pmse_csv(table))?;
        fs::write(out.join("pmse_components.csv"), pmse_components_csv(table))?;
        files.extend(["pmse.csv", "pmse_components.csv"]);
    }
    let toml_text = toml::to_string(config).map_err(|e| Error::Config(format!("config serialization: {e}")))?;
    fs::write(out.join("config.toml"), toml_text)?;
    emit_plot_script(config, &run.series, pmse.as_ref(), &out.join("plot.gp"))?;
    let opts = SolverOptions::default();
    let manifest = Manifest {
        version: version_string(),
        command: match config.experiment {
            Experiment::Tracking => "tracking".into(),
            Experiment::Robot => "robot".into(),
        },
        config,
        run_seed: config.seed,
        monte_carlo_runs: if pmse.is_some() { config.runs } else { 0 },
        solver: SolverManifest {
            max_iterations: opts.max_iterations,
            gap_tol: opts.gap_tol,
            feas_tol: opts.feas_tol,
            verification_tol: FEASIBILITY_TOL,
            symmetry_tol: SYMMETRY_TOL,
        },
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    fs::write(out.join("manifest.json"), json + "\n")?;
    Ok(())
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Tracking(a) => resolve_config(Experiment::Tracking, a.noise_type, &a.common)
            .and_then(|cfg| run_experiment(&cfg, &a.common.out).map(|()| a.common.out.clone())),
        Command::Robot(a) => resolve_config(Experiment::Robot, None, a)
            .and_then(|cfg| run_experiment(&cfg, &a.out).map(|()| a.out.clone())),
        Command::Selftest => {
            let report = crate::selftest::run_all();
            print!("{report}");
            return if report.passed() { 0 } else { 1 };
        }
    };
    match result {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
