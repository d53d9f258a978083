//! Command-line front end.
//!
//! ```text
//! crowdsim run     --scenario NAME [--config FILE] [--set k=v]... --out DIR [--quiet]
//! crowdsim sweep   --scenario NAME --param KEY --values a,b,... --t T --out DIR [--set k=v]... [--quiet]
//! crowdsim eikonal --mask FILE --out DIR
//! crowdsim check   --scenario NAME [--config FILE] [--set k=v]... [--full]
//! ```
//!
//! Exit codes: 0 success, 1 failed check or I/O error, 2 configuration error,
//! 3 aborted run.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::diagnostics::{LaneWindow, RunDiagnostics};
use crate::error::{Error, Result};
use crate::geometry::solve_eikonal;
use crate::grid::ScalarField;
use crate::io::{read_mask, snapshot_name, write_field, write_mask};
use crate::nonlocal::{advection_field, lambda_min_good, lambda_min_pt, nagumo_check, OperatorKind};
use crate::scenarios::{build, parse_override, read_config, Params, ScenarioName};
use crate::solver::Simulation;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ABORTED: i32 = 3;

/// Worker cap read by `sweep`.
pub const THREADS_ENV: &str = "CROWDSIM_THREADS";

#[derive(Parser, Debug)]
#[command(name = "crowdsim", version, about = "Nonlocal crowd dynamics simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and write snapshots and diagnostics.
    Run(RunArgs),
    /// Run a scenario for several values of one key and count lanes.
    Sweep(SweepArgs),
    /// Solve the exit-distance problem on a mask file.
    Eikonal(EikonalArgs),
    /// Check the wall invariance thresholds of a scenario.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// lanes | evacuation | singularity | custom
    #[arg(long)]
    scenario: Option<String>,
    /// Config file; its `scenario` line selects the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set kernel.r=1.4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "r")]
    param: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Time at which lanes are counted.
    #[arg(long)]
    t: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct EikonalArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Run the whole scenario and check every step, not only the initial state.
    #[arg(long)]
    full: bool,
}

fn resolve_params(a: &ScenarioArgs) -> Result<Params> {
    let mut p = match (&a.config, &a.scenario) {
        (Some(path), name) => {
            let p = read_config(path).map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
                other => other,
            })?;
            if let Some(n) = name {
                let n: ScenarioName = n.parse()?;
                if n != p.scenario {
                    return Err(Error::Config(format!("--scenario {n} conflicts with `scenario = {}` in {}", p.scenario, path.display())));
                }
            }
            p
        }
        (None, Some(n)) => Params::preset(n.parse()?),
        (None, None) => return Err(Error::Config("either --scenario or --config is required".into())),
    };
    for s in &a.set {
        let (k, v) = parse_override(s)?;
        p.set(&k, &v)?;
    }
    Ok(p)
}

/// Exit code reported for `e`.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse(_) => EXIT_CONFIG,
        Error::Aborted { .. } => EXIT_ABORTED,
        _ => EXIT_FAILED,
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let res = match cli.cmd {
        Command::Run(a) => cmd_run(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Eikonal(a) => cmd_eikonal(&a),
        Command::Check(a) => cmd_check(&a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_run_outputs(dir: &Path, p: &Params, mask: &crate::grid::DomainMask, diag: &RunDiagnostics) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), p.to_config_text())?;
    write_mask(&dir.join("mask.msk"), mask)?;
    diag.write_csv(&dir.join("diagnostics.csv"))?;
    std::fs::write(dir.join("summary.txt"), diag.summary_text())?;
    Ok(())
}

fn write_snapshot(dir: &Path, requested: f64, t: f64, rho: &ScalarField) -> Result<()> {
    write_field(&dir.join(snapshot_name(requested)), rho, t)
}

fn cmd_run(a: &RunArgs) -> Result<i32> {
    let p = resolve_params(&a.scenario)?;
    let sc = build(&p)?;
    std::fs::create_dir_all(&a.out)?;
    let mask = sc.config.mask.clone();
    let mut sim = Simulation::new(sc.config)?;
    let mut written = 0;
    let mut next_report = 1.0;
    while !sim.is_done() {
        match sim.step() {
            Ok(()) => {}
            Err(Error::Aborted { t, reason, diagnostics }) => {
                for s in &sim.snapshots()[written..] {
                    write_snapshot(&a.out, s.requested, s.t, &s.rho)?;
                }
                write_run_outputs(&a.out, &p, &mask, &diagnostics)?;
                eprintln!("aborted at t = {t}: {reason}");
                return Ok(EXIT_ABORTED);
            }
            Err(e) => return Err(e),
        }
        for s in &sim.snapshots()[written..] {
            write_snapshot(&a.out, s.requested, s.t, &s.rho)?;
        }
        written = sim.snapshots().len();
        if !a.quiet && sim.t() >= next_report {
            let r = sim.diagnostics().rows.last().expect("rows");
            eprintln!("t={:.3} mass={:.6} max={:.4} dt={:.4e}", r.t, r.mass, r.max, r.dt);
            next_report = sim.t().floor() + 1.0;
        }
    }
    write_run_outputs(&a.out, &p, &mask, sim.diagnostics())?;
    if !a.quiet {
        print!("{}", sim.diagnostics().summary_text());
    }
    Ok(EXIT_OK)
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0)
}

/// Lane count at `t` for each value of `key`, in input order.
pub fn sweep_lane_counts(base: &Params, key: &str, values: &[String], t: f64) -> Result<Vec<(String, usize, f64)>> {
    if !(t > 0.0) {
        return Err(Error::Config(format!("--t: must be positive, got {t}")));
    }
    let mut params = Vec::with_capacity(values.len());
    for v in values {
        let mut p = base.clone();
        p.set(key, v)?;
        p.run_t_end = t;
        p.run_snapshots = vec![t];
        p.run_snapshot_every = 0.0;
        if p.run_lane_window.is_none() {
            p.run_lane_window = Some(LaneWindow::Occupied { threshold: 0.05 });
        }
        params.push(p);
    }
    let work = |p: &Params| -> Result<(usize, f64)> {
        let sc = build(p)?;
        let win = sc.config.lane_window.expect("lane window set");
        let mask = sc.config.mask.clone();
        let out = crate::solver::run(sc.config)?;
        let snap = out.snapshots.last().ok_or_else(|| Error::Config("sweep run produced no snapshot".into()))?;
        Ok((win.count(&snap.rho, &mask)?, snap.t))
    };
    let results: Vec<Result<(usize, f64)>> = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("{THREADS_ENV}: {e}")))?
            .install(|| params.par_iter().map(work).collect()),
        None => params.par_iter().map(work).collect(),
    };
    values
        .iter()
        .zip(results)
        .map(|(v, r)| r.map(|(n, t)| (v.clone(), n, t)))
        .collect()
}

fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    let base = resolve_params(&a.scenario)?;
    let key = crate::scenarios::canonical_key(&a.param)?;
    let rows = sweep_lane_counts(&base, key, &a.values, a.t)?;
    std::fs::create_dir_all(&a.out)?;
    let col = a.param.rsplit('.').next().unwrap_or(&a.param);
    let mut csv = format!("{col},lane_count,t\n");
    for (v, n, t) in &rows {
        let _ = writeln!(csv, "{v},{n},{t:?}");
    }
    std::fs::write(a.out.join("sweep.csv"), &csv)?;
    if !a.quiet {
        print!("{csv}");
    }
    Ok(EXIT_OK)
}

fn cmd_eikonal(a: &EikonalArgs) -> Result<i32> {
    let mask = read_mask(&a.mask).map_err(|e| Error::Config(format!("{}: {e}", a.mask.display())))?;
    let eik = solve_eikonal(&mask)?;
    std::fs::create_dir_all(&a.out)?;
    write_field(&a.out.join("potential.fld"), &eik.potential, 0.0)?;
    let g = eik.geodesic.grid;
    write_field(&a.out.join("geodesic_x.fld"), &ScalarField::from_values(g, eik.geodesic.ux.clone())?, 0.0)?;
    write_field(&a.out.join("geodesic_y.fld"), &ScalarField::from_values(g, eik.geodesic.uy.clone())?, 0.0)?;
    let mut s = String::new();
    let _ = writeln!(s, "unreachable={}", eik.unreachable.len());
    for (i, j) in &eik.unreachable {
        let _ = writeln!(s, "unreachable.cell={i},{j}");
    }
    std::fs::write(a.out.join("eikonal.txt"), &s)?;
    print!("{s}");
    Ok(EXIT_OK)
}

/// Text report of `check`, and whether every condition held.
pub fn check_report(p: &Params, full: bool) -> Result<(String, bool)> {
    let sc = build(p)?;
    let cfg = &sc.config;
    let mut s = String::new();
    let mut ok = true;
    let lambda = p.wall_lambda;
    let _ = writeln!(s, "scenario={}", p.scenario);
    let _ = writeln!(s, "operator={}", p.model_operator);
    let _ = writeln!(s, "lambda={lambda:?}");
    let r_max = cfg.speed.r_max();
    match p.model_operator {
        OperatorKind::Good => {
            if p.model_eps >= 0.0 {
                let lm = lambda_min_good(p.model_eps, r_max, &cfg.spec.kernel)?;
                let pass = lambda >= lm;
                ok &= pass;
                let _ = writeln!(s, "lambda_min_good={lm:?}");
                let _ = writeln!(s, "threshold={}", if pass { "PASS" } else { "FAIL" });
            } else {
                let _ = writeln!(s, "lambda_min_good=undefined (eps < 0)");
            }
        }
        OperatorKind::Pt | OperatorKind::LinearPt => {
            let phi = cfg.spec.vision.as_ref().expect("validated");
            let g = cfg.spec.g_field.as_ref().expect("validated");
            let ell = 2.0 * p.kernel_r * std::f64::consts::SQRT_2;
            let th = lambda_min_pt(p.model_eps, r_max, &cfg.spec.kernel, phi, g, &cfg.mask, ell)?;
            let pass = lambda >= th.eps_scaled;
            ok &= pass;
            let _ = writeln!(s, "lambda_min_pt.printed={:?}", th.printed);
            let _ = writeln!(s, "lambda_min_pt.eps_scaled={:?}", th.eps_scaled);
            let _ = writeln!(s, "grad_g_inf={:?}", th.grad_g_inf);
            let _ = writeln!(s, "threshold={}", if pass { "PASS" } else { "FAIL" });
        }
    }
    match &sc.wall {
        None => {
            let _ = writeln!(s, "nagumo=skipped (no walls)");
        }
        Some(wg) => {
            let mut rho = cfg.rho0.clone();
            rho.zero_outside(&cfg.mask);
            let i_field = cfg.spec.apply(&rho, &cfg.mask)?;
            let adv = advection_field(&cfg.nu, &i_field, &cfg.mask)?;
            let rep = nagumo_check(&adv.w, wg, &cfg.mask)?;
            ok &= rep.passed();
            s.push_str(&rep.to_text());
            if full {
                let mut c = cfg.clone();
                c.wall = Some(wg.clone());
                c.check_invariance = true;
                c.snapshot_times.clear();
                c.snapshot_every = None;
                let (diag, aborted) = match crate::solver::run(c) {
                    Ok(o) => (o.diagnostics, false),
                    Err(Error::Aborted { diagnostics, .. }) => (*diagnostics, true),
                    Err(e) => return Err(e),
                };
                let sm = &diag.summary;
                let pass = !aborted && sm.nagumo_violations == 0 && diag.max_leak() == 0.0;
                ok &= pass;
                let _ = writeln!(s, "run.steps={}", sm.steps);
                let _ = writeln!(s, "run.nagumo_min={:?}", sm.nagumo_min.unwrap_or(f64::NAN));
                let _ = writeln!(s, "run.nagumo_violations={}", sm.nagumo_violations);
                let _ = writeln!(s, "run.max_leak={:?}", diag.max_leak());
                let _ = writeln!(s, "run.aborted={aborted}");
                let _ = writeln!(s, "run.result={}", if pass { "PASS" } else { "FAIL" });
            }
        }
    }
    let _ = writeln!(s, "result={}", if ok { "PASS" } else { "FAIL" });
    Ok((s, ok))
}

fn cmd_check(a: &CheckArgs) -> Result<i32> {
    let p = resolve_params(&a.scenario)?;
    let (text, ok) = check_report(&p, a.full)?;
    print!("{text}");
    let _ = std::io::stdout().flush();
    Ok(if ok { EXIT_OK } else { EXIT_FAILED })
}
