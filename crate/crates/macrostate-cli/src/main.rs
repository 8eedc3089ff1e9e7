//! Scenario runner for macrostate dynamics on small spin chains.
//!
//! `run` reads a TOML scenario, builds the chain and its constraint set
//! once, executes the requested pipelines concurrently (they share only
//! immutable data), and writes one time-series file per pipeline plus a
//! comparison report and a manifest of every resolved setting. All outputs
//! are pure functions of the config, so a re-run is byte-identical.
//!
//! Exit status: 0 on success, 2 for configuration or usage errors, 3 for
//! numerical failures inside a pipeline (the manifest then names the
//! failing pipeline).

mod config;
mod output;
mod scenario;

use config::{Pipeline, ResolvedConfig};
use macrostate::{
    entropy_report, estimate_tau, exact_macrostate_trajectory, integrate_zeta,
    reduced_trajectory, Trajectory,
};
use output::{EntropySummary, GridSummary, Manifest, RunReport, RunStatus, SeriesEntry};
use scenario::Scenario;
use std::path::Path;
use std::process::ExitCode;

const USAGE: &str = "scenario runner for macrostate dynamics on small spin chains

usage:
  macrostate run <config.toml> [--output-dir DIR] [--override KEY=VALUE]... [--quiet]
      build the scenario, execute the configured pipelines, and write
      per-pipeline time series, report.json, and manifest.json
  macrostate diagnose-tau <config.toml> [--override KEY=VALUE]... [--quiet]
      print the correlation-time diagnostic at the scenario's
      conserved-totals equilibrium
  macrostate compare <series-a> <series-b> [--quiet]
      print per-column max/mean deviations between two series files

exit status: 0 success, 2 configuration or usage error, 3 numerical failure";

fn main() -> ExitCode {
    let mut quiet = false;
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| {
            if a == "--quiet" {
                quiet = true;
                false
            } else {
                true
            }
        })
        .collect();
    env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or(if quiet { "off" } else { "info" }),
    )
    .format_timestamp(None)
    .init();

    match dispatch(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

fn dispatch(args: &[String]) -> Result<(), (u8, String)> {
    let command = args
        .first()
        .ok_or_else(|| (2u8, format!("missing subcommand\n\n{USAGE}")))?;
    match command.as_str() {
        "run" => cmd_run(parse_run_args(&args[1..], true)?),
        "diagnose-tau" => cmd_diagnose_tau(parse_run_args(&args[1..], false)?),
        "compare" => {
            let paths = positionals_only(&args[1..])?;
            match paths.as_slice() {
                [a, b] => cmd_compare(a, b),
                _ => Err((2, format!("compare takes two series files\n\n{USAGE}"))),
            }
        }
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err((2, format!("unknown subcommand `{other}`\n\n{USAGE}"))),
    }
}

struct RunArgs {
    config_path: String,
    output_dir: Option<String>,
    overrides: Vec<String>,
}

fn parse_run_args(args: &[String], allow_output_dir: bool) -> Result<RunArgs, (u8, String)> {
    let mut config_path = None;
    let mut output_dir = None;
    let mut overrides = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        if let Some(v) = arg.strip_prefix("--override=") {
            overrides.push(v.to_string());
        } else if arg == "--override" {
            let v = it
                .next()
                .ok_or_else(|| (2u8, "--override needs KEY=VALUE".to_string()))?;
            overrides.push(v.clone());
        } else if allow_output_dir && arg == "--output-dir" {
            let v = it
                .next()
                .ok_or_else(|| (2u8, "--output-dir needs a directory".to_string()))?;
            output_dir = Some(v.clone());
        } else if allow_output_dir && arg.starts_with("--output-dir=") {
            output_dir = Some(arg["--output-dir=".len()..].to_string());
        } else if arg.starts_with('-') {
            return Err((2, format!("unknown flag `{arg}`\n\n{USAGE}")));
        } else if config_path.is_none() {
            config_path = Some(arg.clone());
        } else {
            return Err((2, format!("unexpected argument `{arg}`\n\n{USAGE}")));
        }
    }
    Ok(RunArgs {
        config_path: config_path
            .ok_or_else(|| (2u8, format!("missing config path\n\n{USAGE}")))?,
        output_dir,
        overrides,
    })
}

fn positionals_only(args: &[String]) -> Result<Vec<String>, (u8, String)> {
    let mut out = Vec::new();
    for arg in args {
        if arg.starts_with('-') {
            return Err((2, format!("unknown flag `{arg}`\n\n{USAGE}")));
        }
        out.push(arg.clone());
    }
    Ok(out)
}

/// Parses, overrides, and resolves the config; returns the resolved config
/// plus the applied-defaults and override lists for the manifest.
fn load(args: &RunArgs) -> Result<(ResolvedConfig, Vec<String>, Vec<String>), String> {
    let mut doc = config::load_document(&args.config_path)?;
    for entry in &args.overrides {
        config::apply_override(&mut doc, entry)?;
    }
    let (mut cfg, mut defaults) = config::RawConfig::from_document(doc)?.resolve()?;
    let mut overrides = args.overrides.clone();
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
        defaults.retain(|d| d != "output_dir");
        overrides.push(format!("output_dir={dir}"));
    }
    Ok((cfg, defaults, overrides))
}

fn cmd_run(args: RunArgs) -> Result<(), (u8, String)> {
    let (cfg, defaults, overrides) = load(&args).map_err(|m| (2, m))?;
    let scn = scenario::build(&cfg).map_err(|m| (2, m))?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        (
            2,
            format!("cannot create output directory `{}`: {e}", cfg.output_dir),
        )
    })?;
    log::info!(
        "scenario: {} ({} sites, dimension {}), {} initial condition, {} -> {} in {} steps of {}",
        cfg.model.kind,
        cfg.model.num_sites,
        scn.sys.dim(),
        cfg.initial.kind_name(),
        cfg.t0,
        cfg.t_end,
        cfg.steps,
        cfg.grid_dt
    );

    let results = run_pipelines(&scn, &cfg);

    // Single writer: all artifacts land after every pipeline has returned.
    let out_dir = Path::new(&cfg.output_dir);
    let mut series = Vec::new();
    let mut successes: Vec<(Pipeline, &Trajectory)> = Vec::new();
    let mut failure: Option<(Pipeline, &macrostate::Error)> = None;
    for (pipeline, result) in &results {
        match result {
            Ok(traj) => {
                let file = format!("{pipeline}.csv");
                output::write_series(&out_dir.join(&file), traj).map_err(|m| (3, m))?;
                series.push(SeriesEntry {
                    pipeline: pipeline.name().to_string(),
                    file,
                });
                successes.push((*pipeline, traj));
            }
            Err(e) => failure = failure.or(Some((*pipeline, e))),
        }
    }

    let mut manifest = Manifest {
        config_path: args.config_path.clone(),
        resolved: cfg.clone(),
        defaults_applied: defaults,
        overrides,
        series,
        report_file: None,
        status: RunStatus::ok(),
    };

    if let Some((pipeline, error)) = failure {
        manifest.status = RunStatus {
            ok: false,
            failed_pipeline: Some(pipeline.name().to_string()),
            error: Some(error.to_string()),
            failed_time: failed_time(error),
        };
        output::write_json(&out_dir.join("manifest.json"), &manifest).map_err(|m| (3, m))?;
        return Err((3, format!("pipeline `{pipeline}` failed: {error}")));
    }

    let report = build_report(&cfg, &scn, &successes).map_err(|m| (3, m))?;
    output::write_json(&out_dir.join("report.json"), &report).map_err(|m| (3, m))?;
    manifest.report_file = Some("report.json".to_string());
    output::write_json(&out_dir.join("manifest.json"), &manifest).map_err(|m| (3, m))?;
    log::info!(
        "wrote {} series file(s), report.json, manifest.json to {}",
        manifest.series.len(),
        cfg.output_dir
    );
    Ok(())
}

fn run_pipelines(
    scn: &Scenario,
    cfg: &ResolvedConfig,
) -> Vec<(Pipeline, Result<Trajectory, macrostate::Error>)> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .pipelines
            .iter()
            .map(|&pipeline| {
                (
                    pipeline,
                    scope.spawn(move || run_pipeline(pipeline, scn, cfg)),
                )
            })
            .collect();
        handles
            .into_iter()
            .map(|(pipeline, handle)| {
                (pipeline, handle.join().expect("pipeline thread panicked"))
            })
            .collect()
    })
}

fn run_pipeline(
    pipeline: Pipeline,
    scn: &Scenario,
    cfg: &ResolvedConfig,
) -> Result<Trajectory, macrostate::Error> {
    let settings = cfg.inversion.to_settings();
    log::info!("pipeline {pipeline}: starting");
    let result = match pipeline {
        Pipeline::Exact => exact_macrostate_trajectory(
            &scn.sys,
            &scn.rho0,
            scn.t0,
            cfg.grid_dt,
            cfg.steps,
            settings,
        ),
        Pipeline::Memory => {
            let mem = cfg.mem.as_ref().expect("resolution requires mem").to_settings();
            integrate_zeta(&scn.sys, &scn.zeta0, &scn.sched, &mem, cfg.t_end)
        }
        Pipeline::Semigroup => {
            let tau = cfg.mem.as_ref().expect("resolution requires mem").tau;
            reduced_trajectory(
                &scn.sys,
                &scn.zeta0,
                scn.t0,
                tau,
                cfg.grid_dt,
                cfg.steps,
                settings,
            )
        }
    };
    match &result {
        Ok(_) => log::info!("pipeline {pipeline}: finished"),
        Err(e) => log::warn!("pipeline {pipeline}: failed: {e}"),
    }
    result
}

/// Trajectory time of the failure, for errors that carry one.
fn failed_time(error: &macrostate::Error) -> Option<f64> {
    match error {
        macrostate::Error::StepRejected { t, .. } => Some(*t),
        _ => None,
    }
}

fn build_report(
    cfg: &ResolvedConfig,
    scn: &Scenario,
    successes: &[(Pipeline, &Trajectory)],
) -> Result<RunReport, String> {
    let mut deviations = Vec::new();
    for (i, (pa, ta)) in successes.iter().enumerate() {
        for (pb, tb) in &successes[i + 1..] {
            deviations.push(output::pair_deviation(*pa, ta, *pb, tb));
        }
    }

    let span = cfg.t_end - cfg.t0;
    // Entropy lag: the configured memory depth when present, else a quarter
    // of the run, clamped so at least two strides fit the grid.
    let entropy = if cfg.steps >= 2 {
        let preferred = [Pipeline::Exact, Pipeline::Memory, Pipeline::Semigroup]
            .iter()
            .find_map(|want| successes.iter().find(|(p, _)| p == want));
        match preferred {
            Some((source, traj)) => {
                let requested = cfg.mem.as_ref().map_or(span / 4.0, |m| m.tau);
                let tau = requested.min(span / 2.0).max(cfg.grid_dt);
                let report = entropy_report(&scn.sys, traj, tau)
                    .map_err(|e| format!("entropy report failed: {e}"))?;
                Some(EntropySummary {
                    source: source.name().to_string(),
                    tau: report.tau,
                    stride: report.stride,
                    effective_tau: report.effective_tau,
                    first_step: report.first_step,
                    min_step: report.min_step,
                    negative_steps: report.negative_steps,
                    equilibrium_entropy: report.equilibrium_entropy,
                    min_equilibrium_gap: report.min_equilibrium_gap,
                })
            }
            None => None,
        }
    } else {
        None
    };

    let correlation_time = correlation_summary(cfg, scn)?;

    Ok(RunReport {
        grid: GridSummary {
            t0: cfg.t0,
            t_end: cfg.t_end,
            dt: cfg.grid_dt,
            steps: cfg.steps,
        },
        pipelines: successes.iter().map(|(p, _)| p.name().to_string()).collect(),
        deviations,
        entropy,
        correlation_time,
    })
}

/// Correlation-time scan at the conserved-totals equilibrium. When every
/// constraint operator commutes with the Hamiltonian there is nothing to
/// scan — and the conserved family may not even span independent
/// directions — so that case short-circuits.
fn correlation_summary(
    cfg: &ResolvedConfig,
    scn: &Scenario,
) -> Result<output::TauSummary, String> {
    if scn.sys.conserved().iter().all(|&c| c) {
        return Ok(output::TauSummary {
            no_driven_modes: true,
            per_mode: vec![],
            tau_est: None,
            recurrence: None,
            certified: false,
        });
    }
    let settings = cfg.inversion.to_settings();
    let eq = scenario::conserved_equilibrium(&scn.sys, &scn.rho0, &settings)?;
    let est = estimate_tau(&scn.sys, &eq, cfg.t_end - cfg.t0, cfg.grid_dt)
        .map_err(|e| format!("correlation-time scan failed: {e}"))?;
    Ok((&est).into())
}

fn cmd_diagnose_tau(args: RunArgs) -> Result<(), (u8, String)> {
    let (cfg, _, _) = load(&args).map_err(|m| (2, m))?;
    let scn = scenario::build(&cfg).map_err(|m| (2, m))?;
    let summary = correlation_summary(&cfg, &scn).map_err(|m| (3, m))?;

    println!(
        "correlation-time diagnostic: normalized autocorrelations at the \
         conserved-totals equilibrium, lags up to {} in steps of {}",
        cfg.t_end - cfg.t0,
        cfg.grid_dt
    );
    if summary.no_driven_modes {
        println!("no driven modes: every constraint operator commutes with the Hamiltonian");
        return Ok(());
    }
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.6}"),
        None => "none".to_string(),
    };
    println!("{:<16} {:>14} {:>14}", "mode", "1/e crossing", "recurrence");
    for mode in &summary.per_mode {
        println!(
            "{:<16} {:>14} {:>14}",
            mode.label,
            fmt(mode.crossing),
            fmt(mode.recurrence)
        );
    }
    match summary.tau_est {
        Some(tau) if summary.certified => {
            println!("tau_est = {tau:.6} (certified: no recurrence undercuts the slowest crossing)")
        }
        Some(tau) => println!("tau_est = {tau:.6} (not certified: a recurrence undercuts it)"),
        None => println!("no tau_est: a driven mode never fell below 1/e within the window"),
    }
    Ok(())
}

fn cmd_compare(path_a: &str, path_b: &str) -> Result<(), (u8, String)> {
    let a = output::read_series(Path::new(path_a)).map_err(|m| (2, m))?;
    let b = output::read_series(Path::new(path_b)).map_err(|m| (2, m))?;
    let deviations = output::compare_series(&a, &b).map_err(|m| (2, m))?;
    println!("{:<24} {:>13} {:>13}", "column", "max", "mean");
    let mut overall = 0.0f64;
    for d in &deviations {
        overall = overall.max(d.max);
        println!("{:<24} {:>13.6e} {:>13.6e}", d.column, d.max, d.mean);
    }
    println!("overall max deviation: {overall:.6e}");
    Ok(())
}
