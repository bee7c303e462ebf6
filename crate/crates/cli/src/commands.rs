//! The `equilibria`, `trace-boundary` and `simulate` subcommands.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};

use tde_plankton::continuation::{
    dedupe_curves, emit_frequency_profile, m_scale, seed_starts, trace_both_ways, BoundaryCurve, TraceOptions,
};
use tde_plankton::equilibria::{classify_and_sweep, log_grid, m_ceiling, thresholds};
use tde_plankton::simulate::{
    build_initial, dt_for_steps, integrate_with, measure_frequency, reconstruct_rho,
    tde_residual, to_physical_time, SimOptions, Termination, Trajectory,
};
use tde_plankton::Error;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{fmt, tag, write_json, CsvWriter};

fn config_value(cfg: &RunConfig) -> Value {
    json!(cfg.raw.entries())
}

fn prepare_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    Ok(())
}

pub fn equilibria(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    prepare_out(out)?;
    let grid = log_grid(cfg.run.nt_min, cfg.run.nt_max, cfg.run.nt_count);
    let d0 = cfg.params.delta0;
    let files: Vec<Result<Value, CliError>> = cfg
        .run
        .m_values
        .par_iter()
        .map(|&m| {
            let p = cfg.params.clone().with_m(m);
            let name = format!("equilibria_m{}_d0{}.csv", tag(m), tag(d0));
            let rows = classify_and_sweep(&p, &grid)?;
            let mut w = CsvWriter::create(
                &out.join(&name),
                &["n_total", "kind", "n_star", "p_star", "z_star", "residual"],
            )?;
            for r in &rows {
                w.row(&[
                    fmt(r.n_total),
                    r.point.kind.label().to_string(),
                    fmt(r.point.n_star),
                    fmt(r.point.p_star),
                    fmt(r.point.z_star),
                    fmt(r.point.residual),
                ])?;
            }
            w.finish()?;
            let th = thresholds(&p);
            Ok(json!({
                "file": name,
                "m": m,
                "delta0": d0,
                "rows": rows.len(),
                "nt1": th.nt1,
                "nt2": th.nt2,
                "m_ceiling": finite_or_null(th.m_ceiling),
            }))
        })
        .collect();
    let files = files.into_iter().collect::<Result<Vec<_>, _>>()?;
    write_json(
        &out.join("metadata.json"),
        &json!({
            "command": "equilibria",
            "config": config_value(cfg),
            "params": cfg.params,
            "files": files,
        }),
    )?;
    for f in &files {
        println!("wrote {}", f["file"].as_str().unwrap_or(""));
    }
    Ok(())
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn trace_boundary(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    prepare_out(out)?;
    let params = &cfg.params;
    let c = &cfg.continuation;
    let ceiling = m_ceiling(params);
    let mut m_max = c.m_max;
    let mut warnings = Vec::new();
    if m_max >= ceiling {
        let clipped = ceiling * (1.0 - 1e-6);
        let msg = format!("continuation.m_max = {m_max} is at or beyond the maturity ceiling {ceiling}; clipped to {clipped}");
        eprintln!("warning: {msg}");
        warnings.push(msg);
        m_max = clipped;
    }
    let m_min = c.m_min.min(m_max);
    let seeds_m = linspace(m_min, m_max, c.m_seeds);
    let nt_grid = log_grid(c.nt_min, c.nt_max, c.scan_count);
    let starts: Vec<_> = seeds_m
        .par_iter()
        .map(|&m| seed_starts(params, m, &nt_grid, &c.omega_windows))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let opts = TraceOptions {
        m_max: Some(m_max),
        ..c.trace.clone()
    };
    let traced: Vec<BoundaryCurve> = starts
        .par_iter()
        .filter_map(|s| trace_both_ways(s, params, &opts).ok())
        .collect();
    let ms = m_scale(params);
    let curves = dedupe_curves(traced, ms, c.dedupe_tol);

    let mut w = CsvWriter::create(
        &out.join("curves.csv"),
        &["curve_id", "point_index", "m", "n_total", "omega", "n_star", "p_star", "z_star", "residual"],
    )?;
    let mut fw = CsvWriter::create(&out.join("frequency.csv"), &["curve_id", "m", "n_total", "omega"])?;
    let mut summaries = Vec::new();
    for (id, curve) in curves.iter().enumerate() {
        for (i, p) in curve.points.iter().enumerate() {
            w.row(&[
                id.to_string(),
                i.to_string(),
                fmt(p.m),
                fmt(p.n_total),
                fmt(p.omega),
                fmt(p.n_star),
                fmt(p.p_star),
                fmt(p.z_star),
                fmt(p.residual),
            ])?;
        }
        for r in emit_frequency_profile(curve) {
            fw.row(&[id.to_string(), fmt(r.m), fmt(r.n_total), fmt(r.omega)])?;
        }
        let (nt_lo, nt_hi) = curve
            .points
            .iter()
            .fold((f64::INFINITY, 0f64), |(a, b), p| (a.min(p.n_total), b.max(p.n_total)));
        summaries.push(json!({
            "curve_id": id,
            "points": curve.points.len(),
            "termination": curve.termination.label(),
            "back_termination": curve.back_termination.map(|t| t.label()),
            "n_total_min": nt_lo,
            "n_total_max": nt_hi,
            "max_residual": curve.points.iter().map(|p| p.residual).fold(0.0, f64::max),
        }));
    }
    w.finish()?;
    fw.finish()?;
    let report = if curves.is_empty() {
        let e = Error::NoSignChange {
            lo: c.nt_min,
            hi: c.nt_max,
        };
        eprintln!("no boundary found: {e}");
        Some(e.to_string())
    } else {
        None
    };
    write_json(
        &out.join("metadata.json"),
        &json!({
            "command": "trace-boundary",
            "config": config_value(cfg),
            "params": params,
            "m_range": [m_min, m_max],
            "m_ceiling": finite_or_null(ceiling),
            "starts": starts.len(),
            "curves": summaries,
            "warnings": warnings,
            "no_sign_change": report,
        }),
    )?;
    println!("wrote {} curve(s)", curves.len());
    Ok(())
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    prepare_out(out)?;
    let params = &cfg.params;
    let dt_hat = match cfg.run.dt_hat {
        Some(dt) => dt,
        None => dt_for_steps(params, cfg.run.steps_per_delay),
    };
    let meta_base = json!({
        "command": "simulate",
        "config": config_value(cfg),
        "params": params,
        "history": cfg.run.history,
        "dt_hat": dt_hat,
    });
    let buf = match build_initial(&cfg.run.history, params, dt_hat) {
        Ok(b) => b,
        Err(e) => {
            let mut meta = meta_base;
            meta["error"] = json!(e.to_string());
            write_json(&out.join("metadata.json"), &meta)?;
            return Err(match e {
                Error::InfeasibleBiomass { .. } | Error::InvalidHistory(_) => CliError::Config(e.to_string()),
                other => other.into(),
            });
        }
    };
    let opts = SimOptions::new(cfg.run.horizon).record_every(cfg.run.record_every);
    let traj = to_physical_time(integrate_with(buf, params, &opts)?);
    write_trajectory(&traj, &out.join("trajectory.csv"))?;

    let mut rho_files = Vec::new();
    if !cfg.run.rho_times.is_empty() {
        let n = cfg.run.rho_panels;
        let s_grid: Vec<f64> = (0..=n).map(|i| params.m * i as f64 / n as f64).collect();
        for (k, &t) in cfg.run.rho_times.iter().enumerate() {
            let name = format!("rho_{k}.csv");
            match reconstruct_rho(&traj, t, &s_grid, params) {
                Ok(rho) => {
                    let mut w = CsvWriter::create(&out.join(&name), &["s", "rho"])?;
                    for (s, r) in s_grid.iter().zip(&rho) {
                        w.row(&[fmt(*s), fmt(*r)])?;
                    }
                    w.finish()?;
                    rho_files.push(json!({ "t": t, "file": name }));
                }
                Err(e) => rho_files.push(json!({ "t": t, "error": e.to_string() })),
            }
        }
    }

    let last = *traj.last();
    let frequency = measure_frequency(&traj, 0.5);
    let mut meta = meta_base;
    meta["termination"] = json!(traj.termination.label());
    meta["steps_per_delay"] = json!(traj.steps_per_delay);
    meta["r_star"] = json!(traj.r_star);
    meta["record_every"] = json!(traj.record_every);
    meta["fitted_frequency"] = json!(frequency);
    meta["final_state"] = json!({ "t": last.t, "t_hat": last.t_hat, "n": last.n, "p": last.p, "z": last.z });
    meta["max_abs_cons_residual"] = json!(traj.max_abs_cons_residual());
    if traj.record_every == 1 {
        meta["tde_residual"] = json!(tde_residual(&traj, params).ok());
    }
    meta["rho"] = json!(rho_files);
    write_json(&out.join("metadata.json"), &meta)?;
    println!(
        "termination {} at t = {} (t_hat = {}), {} rows",
        traj.termination.label(),
        last.t,
        last.t_hat,
        traj.rows.len()
    );
    match traj.termination {
        Termination::HorizonReached | Termination::Extinction => Ok(()),
        Termination::SingularRate => Err(CliError::Runtime(format!(
            "integration stopped at t_hat = {}: growth rate became singular",
            last.t_hat
        ))),
    }
}

fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<(), CliError> {
    let mut w = CsvWriter::create(path, &["t_hat", "t", "n", "p", "z", "tau_m", "cons_residual"])?;
    for r in &traj.rows {
        w.row(&[fmt(r.t_hat), fmt(r.t), fmt(r.n), fmt(r.p), fmt(r.z), fmt(r.tau_m), fmt(r.cons_residual)])?;
    }
    w.finish()
}
