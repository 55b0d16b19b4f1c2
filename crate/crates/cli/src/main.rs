#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use openres::export;
use openres::memory::{self, TauGrid};
use openres::model::{self, build_damping_matrix, build_effective_hamiltonian, overlap_diagnostics};
use openres::moments::{self, derive_drift, DEFAULT_Z_MAX};
use openres::resonances;
use openres::trajectories::{self, EnsembleConfig, EnsembleMetadata};
use openres::{linalg, Error, ErrorKind, Result};
use serde_json::json;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "openres", version, about = "Open-resonator field dynamics with overlapping modes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Check the system spec and report mode-overlap diagnostics
    Validate(Args),
    /// Resonances, nonorthogonality matrices and Petermann factors
    Resonances(Args),
    /// Exact Gaussian moment evolution
    Evolve(Args),
    /// Langevin ensemble with an equivalence report against `evolve`
    Montecarlo(Args),
    /// Memory kernels of a frequency-dependent coupling profile
    Kernel(Args),
    /// Non-Markovian mean field from the Volterra equation
    Nonmarkovian(Args),
}

#[derive(clap::Args, Debug, Clone)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    #[arg(long = "z-max")]
    z_max: Option<f64>,
    /// Also write long-format (t, series, value) data for plotting
    #[arg(long = "emit-plot-data")]
    emit_plot_data: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::SingularDamping { undamped } = &e {
                for v in undamped {
                    eprintln!("  undamped direction: {v:?}");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Io => 1,
        ErrorKind::Validation => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Resolution => 4,
    }
}

fn run(command: Command) -> Result<()> {
    let handler: fn(&RunConfig, &Args) -> Result<()> = match &command {
        Command::Validate(_) => validate,
        Command::Resonances(_) => resonances,
        Command::Evolve(_) => evolve,
        Command::Montecarlo(_) => montecarlo,
        Command::Kernel(_) => kernel,
        Command::Nonmarkovian(_) => nonmarkovian,
    };
    let (Command::Validate(args)
    | Command::Resonances(args)
    | Command::Evolve(args)
    | Command::Montecarlo(args)
    | Command::Kernel(args)
    | Command::Nonmarkovian(args)) = &command;
    let cfg = RunConfig::load(&args.config)?;
    handler(&cfg, args)
}

fn output_path(args: &Args) -> Option<&Path> {
    args.output.as_deref()
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn write_table(args: &Args, header: &[String], times: &[f64], rows: &[Vec<f64>]) -> Result<()> {
    let path = output_path(args);
    let mut out = open_output(path)?;
    match args.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            writeln!(out, "{}", header.join(","))?;
            for row in rows {
                let cells: Vec<String> = row.iter().map(|v| export::fmt_f64(*v)).collect();
                writeln!(out, "{}", cells.join(","))?;
            }
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &json!({ "columns": header, "rows": rows }))?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    if args.emit_plot_data {
        let path = path.ok_or_else(|| Error::InvalidArgument("--emit-plot-data needs --output".into()))?;
        let mut plot = BufWriter::new(File::create(sibling(path, ".long.csv"))?);
        let series: Vec<String> = header[1..].to_vec();
        let values: Vec<Vec<f64>> = rows.iter().map(|r| r[1..].to_vec()).collect();
        export::write_long_format(&mut plot, times, &series, &values)?;
        plot.flush()?;
    }
    Ok(())
}

fn validate(cfg: &RunConfig, args: &Args) -> Result<()> {
    let spec = cfg.spec()?;
    let gamma = build_damping_matrix(&spec)?;
    let eigen = gamma.eigenvalues();
    let floor = -1e-12 * gamma.norm().max(f64::MIN_POSITIVE);
    if eigen.first().is_some_and(|&v| v < floor) {
        return Err(Error::InvalidSpec(vec![format!("damping matrix is not PSD (eigenvalue {:.3e})", eigen[0])]));
    }
    let report = overlap_diagnostics(&spec, &gamma);
    let value = json!({
        "label": spec.label(),
        "spec_hash": spec.spec_hash(),
        "modes": spec.modes(),
        "channels": spec.channels(),
        "n_th": spec.n_th(),
        "damping_eigenvalues": eigen,
        "hermiticity_deviation": linalg::hermitian_deviation(gamma.matrix()),
        "diagnostics": report,
        "regime": report.regime.to_string(),
        "valid": true,
    });
    write_json(output_path(args), &value)
}

fn resonances(cfg: &RunConfig, args: &Args) -> Result<()> {
    let spec = cfg.spec()?;
    let gamma = build_damping_matrix(&spec)?;
    let h = build_effective_hamiltonian(&spec, &gamma)?;
    let report = resonances::resonance_report(&h, &gamma)?;
    let mut value = serde_json::to_value(&report)?;
    value["spec_hash"] = json!(spec.spec_hash());
    write_json(output_path(args), &value)
}

fn time_grid(cfg: &RunConfig, args: &Args) -> Result<Vec<f64>> {
    if let Some(times) = &cfg.params.times {
        if args.dt.is_none() && args.t_max.is_none() {
            return Ok(times.clone());
        }
    }
    let dt = args.dt.or(cfg.params.dt).unwrap_or(0.1);
    let t_max = args.t_max.or(cfg.params.t_max).unwrap_or(0.0);
    if !(dt > 0.0) || !(t_max >= 0.0) {
        return Err(Error::InvalidArgument(format!("need dt > 0 and t_max >= 0 (dt = {dt}, t_max = {t_max})")));
    }
    let steps = (t_max / dt).round() as usize;
    Ok((0..=steps).map(|k| k as f64 * dt).collect())
}

fn evolve(cfg: &RunConfig, args: &Args) -> Result<()> {
    let spec = cfg.spec()?;
    let gamma = build_damping_matrix(&spec)?;
    let drift = derive_drift(&spec, &gamma)?;
    let state0 = cfg.initial(spec.modes())?;
    let times = time_grid(cfg, args)?;
    let states = moments::evolve_series(&state0, &drift, &gamma, spec.n_th(), &times)?;
    let mut header = vec![format!("t [{}]", export::TIME_UNIT)];
    header.extend(export::moment_headers(spec.modes()));
    let rows: Vec<Vec<f64>> = states.iter().map(|s| std::iter::once(s.t).chain(s.flatten()).collect()).collect();
    write_table(args, &header, &times, &rows)
}

fn montecarlo(cfg: &RunConfig, args: &Args) -> Result<()> {
    let spec = cfg.spec()?;
    let state0 = cfg.initial(spec.modes())?;
    let p = &cfg.params;
    let dt = args.dt.or(p.dt).unwrap_or(0.1);
    let requested = p.times.clone();
    let t_max = args
        .t_max
        .or(p.t_max)
        .or_else(|| requested.as_ref().and_then(|t| t.iter().cloned().reduce(f64::max)))
        .unwrap_or(1.0);
    let config = EnsembleConfig {
        scheme: p.scheme.unwrap_or_default(),
        dt,
        t_max,
        trajectories: args.trajectories.or(p.trajectories).unwrap_or(1000),
        base_seed: args.seed.or(p.seed).unwrap_or(0),
        store_paths: p.store_paths.unwrap_or(false),
        ..EnsembleConfig::default()
    };
    let ensemble = trajectories::run_ensemble(&spec, &state0, &config)?;
    let z_max = args.z_max.or(p.z_max).unwrap_or(DEFAULT_Z_MAX);
    let compare = requested.unwrap_or_else(|| ensemble.times().to_vec());
    let report = moments::equivalence_report(&spec, &state0, &compare, &ensemble, z_max)?;

    let comps = moments::components(spec.modes());
    let mut header = vec![format!("t [{}]", export::TIME_UNIT)];
    header.extend(export::moment_headers(spec.modes()));
    header.extend(export::moment_headers(spec.modes()).into_iter().map(|h| format!("stderr_{h}")));
    debug_assert_eq!(header.len(), 1 + 2 * comps.len());
    let rows: Vec<Vec<f64>> = (0..ensemble.times().len())
        .map(|k| {
            let e = ensemble.estimate(k);
            std::iter::once(e.t).chain(e.mean).chain(e.stderr).collect()
        })
        .collect();
    write_table(args, &header, ensemble.times(), &rows)?;

    let meta = serde_json::to_value(EnsembleMetadata::from(&ensemble))?;
    let summary = json!({ "pass": report.pass, "max_abs_z": report.max_abs_z, "z_max": report.z_max });
    match output_path(args) {
        Some(path) => {
            write_json(Some(&sibling(path, ".meta.json")), &meta)?;
            write_json(Some(&sibling(path, ".equivalence.json")), &serde_json::to_value(&report)?)?;
        }
        None => eprintln!("{}", json!({ "meta": meta, "equivalence": summary })),
    }
    eprintln!(
        "equivalence: pass={} max|z|={:.3} (z_max {}) over {} comparisons, seed {}",
        report.pass,
        report.max_abs_z,
        report.z_max,
        report.comparisons.len(),
        report.base_seed
    );
    Ok(())
}

fn kernel(cfg: &RunConfig, args: &Args) -> Result<()> {
    let profile = cfg.profile()?;
    let fastest = profile.max_frequency();
    let dtau = args.dt.or(cfg.params.dt).unwrap_or(0.1 / fastest.max(f64::MIN_POSITIVE));
    let tau_max = args.t_max.or(cfg.params.t_max).unwrap_or(1.0);
    let grid = TauGrid::new(tau_max, dtau)?;
    let kernel = memory::compute_kernels(&profile, grid)?;
    let omega_bar = cfg.params.omega_bar.unwrap_or_else(|| {
        profile.channels().iter().map(|c| c.center).sum::<f64>() / profile.channels().len().max(1) as f64
    });
    let check = memory::markov_limit_check(&kernel, omega_bar);
    for w in kernel.warnings.iter().chain(&check.warnings) {
        eprintln!("warning: {w}");
    }
    let rows = export::kernel_rows(&kernel);
    write_table(args, &export::kernel_headers(kernel.modes()), &grid.values(), &rows)?;
    let markov = json!({
        "omega_bar": omega_bar,
        "markov_residual": check.residual,
        "gamma_eff": model::MatrixDoc::from_matrix(&check.gamma_eff),
        "target": model::MatrixDoc::from_matrix(&check.target),
        "warnings": kernel.warnings.iter().chain(&check.warnings).collect::<Vec<_>>(),
    });
    if let Some(path) = output_path(args) {
        write_json(Some(&sibling(path, ".markov.json")), &markov)?;
    }
    eprintln!("markov residual: {:.6e}", check.residual);
    Ok(())
}

fn nonmarkovian(cfg: &RunConfig, args: &Args) -> Result<()> {
    let spec = cfg.spec()?;
    let profile = cfg.profile()?;
    let state0 = cfg.initial(spec.modes())?;
    let fastest = spec.omega().iter().cloned().fold(profile.max_frequency(), f64::max);
    let dt = args.dt.or(cfg.params.dt).unwrap_or(0.1 / fastest);
    let t_max = args.t_max.or(cfg.params.t_max).unwrap_or(1.0);
    let t_max = (t_max / dt).round() * dt;
    let (sol, _) = memory::solve_mean_volterra_for_profile(spec.omega(), &profile, &state0.m, t_max, dt)?;
    let rows = export::volterra_rows(&sol);
    write_table(args, &export::volterra_headers(sol.modes()), &sol.times, &rows)
}
