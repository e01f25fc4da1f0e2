use std::f64::consts::{PI, TAU};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde_json::json;

use spopo::analysis::{MeanFieldSink, PhaseVarianceSink, QuadratureOptions, QuadratureSink, Taper, ThetaEstimator};
use spopo::io::{fmt_f64, load_config, write_csv, write_dump_csv, write_json, DumpWriter};
use spopo::linear::{analytic_dark_spectra, dark_quadrature_vectors, linspace, numeric_spectrum, LinearModel};
use spopo::sde::{run_ensemble, EnsembleParams, NoiseScheme, Stepper, Trajectory, TrajectorySink};
use spopo::steady::{check_phase_locking, reconstruct_field, solve_with, verify_eigenrelation, FieldGrid, SolverOptions};
use spopo::supermodes::{below_threshold_spectrum, decompose};
use spopo::{CombConfig, SteadyState};

use crate::manifest::RunDir;
use crate::{
    DumpFormat, EstimatorArg, FieldArgs, MonteCarloArgs, NoiseArg, Quadrature, SpectrumArgs, SteadyArgs, StepperArg,
    SupermodesArgs, TaperArg,
};

/// JSON number, or the string `"inf"` for an infinite value.
pub fn json_f64(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else if x > 0.0 {
        json!("inf")
    } else if x < 0.0 {
        json!("-inf")
    } else {
        json!("nan")
    }
}

fn args_json<T: serde::Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

pub fn supermodes(a: &SupermodesArgs) -> Result<()> {
    let cfg = load_config(&a.common.config)?;
    let mut run = RunDir::create(&a.common.out)?;
    let basis = decompose(&cfg.coupling_matrix())?;
    let dim = basis.dim();

    write_csv(
        &run.file("eigenvalues.csv"),
        &["k", "eigenvalue"],
        (0..dim).map(|k| [k.to_string(), fmt_f64(basis.eigenvalues[k])]),
    )?;

    let k = a.n_vectors.min(dim);
    let mut header = vec!["m".to_string()];
    header.extend((0..k).map(|i| format!("v{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let modes: Vec<i64> = cfg.mode_numbers().collect();
    write_csv(
        &run.file("eigenvectors.csv"),
        &header,
        (0..dim).map(|r| {
            let mut row = vec![modes[r].to_string()];
            row.extend((0..k).map(|c| fmt_f64(basis.eigenvectors[(r, c)])));
            row
        }),
    )?;

    let thr = basis.threshold_sigma;
    write_json(
        &run.file("threshold.json"),
        &json!({
            "threshold_sigma": json_f64(thr),
            "leading_eigenvalue": basis.eigenvalues[0],
            "dim": dim,
            "sigma": cfg.sigma,
            "sigma_over_threshold": if thr.is_finite() { cfg.sigma / thr } else { 0.0 },
            "above_threshold": cfg.sigma > thr,
        }),
    )?;
    info!("threshold sigma = {}", fmt_f64(thr));
    run.finish("supermodes", &a.common.config, &cfg.params, None, args_json(a))?;
    Ok(())
}

fn solve(cfg: &CombConfig) -> Result<(spopo::SupermodeBasis, SteadyState)> {
    let basis = decompose(&cfg.coupling_matrix())?;
    let state = solve_with(cfg, &basis, &SolverOptions::default()).context("steady state did not converge")?;
    Ok((basis, state))
}

pub fn steady_state(a: &SteadyArgs) -> Result<()> {
    let cfg = load_config(&a.common.config)?;
    let mut run = RunDir::create(&a.common.out)?;
    let (basis, state) = solve(&cfg)?;
    let modes: Vec<i64> = cfg.mode_numbers().collect();
    write_csv(
        &run.file("rho.csv"),
        &["m", "rho"],
        state.rho.iter().zip(&modes).map(|(r, m)| [m.to_string(), fmt_f64(*r)]),
    )?;

    let mut summary = json!({
        "regime": state.regime,
        "norm_sq": state.norm_sq,
        "residual": state.residual,
        "threshold_sigma": json_f64(basis.threshold_sigma),
        "overlap_v0": if state.is_trivial() { 0.0 } else { state.rho.dot(&basis.mode(0)).abs() / state.norm() },
        "solver": state.report,
    });
    if !state.is_trivial() {
        summary["predicted_phase_slope"] = json!(cfg.gamma / (4.0 * state.norm_sq));
        summary["eigenrelation"] = json!(verify_eigenrelation(&state, &cfg)?);
        let model = LinearModel::assemble(&cfg, &state)?;
        summary["identities"] = json!(model.identities);
        summary["stability"] = match model.check_stability() {
            Ok(max) => json!({ "stable": true, "max_eigenvalue": max }),
            Err(e) => {
                warn!("{e}");
                json!({ "stable": false, "message": e.to_string() })
            }
        };
        let lock = check_phase_locking(&cfg, &state, a.seed)?;
        summary["phase_locking"] = json!({
            "locked": lock.locked(),
            "violation": lock.violation,
            "converged": lock.converged,
            "steps": lock.steps,
            "theta": lock.theta,
        });
    }
    write_json(&run.file("steady.json"), &summary)?;
    info!("|rho|^2 = {}, residual = {:e}", state.norm_sq, state.residual);
    run.finish("steady-state", &a.common.config, &cfg.params, Some(a.seed), args_json(a))?;
    Ok(())
}

pub fn spectrum(a: &SpectrumArgs) -> Result<()> {
    if a.n_points == 0 || !(a.omega_max >= a.omega_min) {
        bail!("empty frequency grid");
    }
    let cfg = load_config(&a.common.config)?;
    let mut run = RunDir::create(&a.common.out)?;
    let gamma = cfg.gamma;
    let grid = linspace(a.omega_min * gamma, a.omega_max * gamma, a.n_points);
    let (basis, state) = solve(&cfg)?;
    let model = LinearModel::assemble(&cfg, &state)?;
    write_json(&run.file("identities.json"), &model.identities)?;
    let failed: Vec<String> = model
        .identities
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} = {:e} (tolerance {:e})", c.name, c.value, c.tolerance))
        .collect();

    let mut summary = json!({ "quadrature": a.quadrature, "n_points": a.n_points });
    if failed.is_empty() {
        match a.quadrature {
            Quadrature::Yd | Quadrature::Xd => {
                if state.is_trivial() {
                    bail!("the dark mode exists only above threshold (sigma = {}, threshold = {})", cfg.sigma, fmt_f64(basis.threshold_sigma));
                }
                let (qx, qy) = dark_quadrature_vectors(&model)?;
                let (y_exact, x_exact) = analytic_dark_spectra(&grid, gamma);
                let (q, exact, label) = match a.quadrature {
                    Quadrature::Yd => (qy, y_exact, "Y_d"),
                    _ => (qx, x_exact, "X_d"),
                };
                let spec = numeric_spectrum(&model, &q, &grid, label)?;
                write_csv(
                    &run.file("spectrum.csv"),
                    &["omega_over_gamma", "omega", "V", "V_analytic"],
                    (0..grid.len()).map(|i| {
                        [fmt_f64(grid[i] / gamma), fmt_f64(grid[i]), fmt_f64(spec.values[i]), fmt_f64(exact.values[i])]
                    }),
                )?;
                let err = spec.values.iter().zip(&exact.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                summary["label"] = json!(label);
                summary["V_first"] = json!(spec.values[0]);
                summary["max_error_vs_analytic"] = json!(err);
            }
            Quadrature::Supermode => {
                let s = below_threshold_spectrum(&basis, &cfg, a.mode, &grid)?;
                let (vx, vy) = if s.eigenvalue >= 0.0 { (&s.antisqueezed, &s.squeezed) } else { (&s.squeezed, &s.antisqueezed) };
                write_csv(
                    &run.file("spectrum.csv"),
                    &["omega_over_gamma", "omega", "V_X", "V_Y"],
                    (0..grid.len()).map(|i| [fmt_f64(grid[i] / gamma), fmt_f64(grid[i]), fmt_f64(vx.values[i]), fmt_f64(vy.values[i])]),
                )?;
                summary["label"] = json!(format!("supermode {}", a.mode));
                summary["eigenvalue"] = json!(s.eigenvalue);
                summary["V_squeezed_first"] = json!(s.squeezed.values[0]);
                summary["V_antisqueezed_first"] = json!(s.antisqueezed.values[0]);
            }
        }
    }
    summary["identities_passed"] = json!(failed.is_empty());
    write_json(&run.file("spectrum.json"), &summary)?;
    run.finish("spectrum", &a.common.config, &cfg.params, None, args_json(a))?;
    if !failed.is_empty() {
        bail!("eigenstructure identity check failed: {}", failed.join("; "));
    }
    Ok(())
}

/// Optional trajectory dump fed alongside the analysis sinks.
enum DumpSink {
    None,
    Bin(DumpWriter),
    Csv(Vec<Trajectory>),
}

impl TrajectorySink for DumpSink {
    type Item = Option<Trajectory>;

    fn map(&self, traj: &Trajectory) -> Option<Trajectory> {
        match self {
            DumpSink::None => None,
            _ => Some(traj.clone()),
        }
    }

    fn absorb(&mut self, _index: usize, item: Option<Trajectory>) -> spopo::Result<()> {
        match (self, item) {
            (DumpSink::Bin(w), Some(t)) => w.write(&t),
            (DumpSink::Csv(v), Some(t)) => {
                v.push(t);
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn ensemble_params(a: &MonteCarloArgs, gamma: f64) -> Result<EnsembleParams> {
    let mut p = EnsembleParams::for_gamma(gamma, a.n_traj, a.seed);
    if let Some(dt) = a.dt {
        p.dt = dt;
    }
    if let Some(t) = a.t_max {
        p.t_max = t;
    }
    p.save_stride = a.save_stride;
    p.wave = a.wave;
    p.escape_radius = a.escape_radius;
    p.stepper = match a.stepper {
        StepperArg::Euler => Stepper::EulerMaruyama,
        StepperArg::Midpoint => Stepper::SemiImplicitMidpoint,
    };
    p.noise = match a.noise {
        NoiseArg::Block => NoiseScheme::Block,
        NoiseArg::Minimal => NoiseScheme::Minimal,
    };
    p.validate()?;
    Ok(p)
}

pub fn montecarlo(a: &MonteCarloArgs) -> Result<()> {
    let cfg = load_config(&a.common.config)?;
    let gamma = cfg.gamma;
    // Run mechanics are validated before anything is computed.
    let params = ensemble_params(a, gamma)?;
    if a.n_points == 0 || !(a.omega_max >= 0.0) {
        bail!("empty frequency grid");
    }
    let mut run = RunDir::create(&a.common.out)?;
    let (_, state) = solve(&cfg)?;
    if state.is_trivial() {
        bail!("montecarlo needs an above-threshold configuration (sigma = {})", cfg.sigma);
    }

    let mut qopts = QuadratureOptions::for_gamma(gamma);
    if let Some(t) = a.transient {
        qopts.transient = t;
    }
    if let Some(l) = a.max_lag {
        qopts.max_lag = l;
    }
    qopts.n_blocks = a.n_blocks;
    qopts.taper = match a.taper {
        TaperArg::Rectangular => Taper::Rectangular,
        TaperArg::Hann => Taper::Hann,
    };
    qopts.estimator = match a.estimator {
        EstimatorArg::Goldstone => ThetaEstimator::Goldstone,
        EstimatorArg::Projection => ThetaEstimator::Projection,
    };
    let phase = PhaseVarianceSink::new(&state.rho, &params, a.n_blocks, false)?;
    phase.check_stride(gamma)?;
    let quad = QuadratureSink::new(&state.rho, &params, qopts)?;
    let dump = match a.dump {
        DumpFormat::None => DumpSink::None,
        DumpFormat::Bin => DumpSink::Bin(DumpWriter::create(
            &run.file("trajectories.bin"),
            cfg.dim(),
            params.n_saves(),
            params.save_stride,
            params.dt,
        )?),
        DumpFormat::Csv => DumpSink::Csv(Vec::new()),
    };
    let mut sink = ((phase, quad), (MeanFieldSink::new(&state.rho), dump));
    let summary = run_ensemble(&cfg, &state, &params, &mut sink)?;
    let ((phase, quad), (mean_field, dump)) = sink;
    match dump {
        DumpSink::Bin(w) => {
            w.finish()?;
        }
        DumpSink::Csv(trajs) => write_dump_csv(&run.file("trajectories.csv"), &trajs)?,
        DumpSink::None => {}
    }

    let mf = mean_field.finish();
    write_json(
        &run.file("ensemble.json"),
        &json!({
            "summary": summary,
            "norm_sq": state.norm_sq,
            "mean_field": {
                "mean": mf.mean,
                "stderr": mf.stderr,
                "expected": state.norm_sq,
                "z": (mf.mean - state.norm_sq) / mf.stderr,
            },
        }),
    )?;

    let fit_from = a.fit_from.unwrap_or(1.0 / gamma);
    let phase_result = phase.finish(gamma, fit_from);
    if let Ok(ps) = &phase_result {
        write_csv(
            &run.file("phase_variance.csv"),
            &["t", "variance"],
            ps.t_grid.iter().zip(&ps.variance).map(|(t, v)| [fmt_f64(*t), fmt_f64(*v)]),
        )?;
        write_json(
            &run.file("phase_fit.json"),
            &json!({
                "fitted_slope": ps.fitted_slope,
                "slope_stderr": ps.slope_stderr,
                "slope_over_gamma": ps.fitted_slope / gamma,
                "intercept": ps.intercept,
                "fit_window": [ps.fit_window.0, ps.fit_window.1],
                "predicted_slope": ps.predicted_slope,
                "relative_error": ps.fitted_slope / ps.predicted_slope - 1.0,
                "n_traj": ps.n_traj,
                "flagged_increments": ps.flagged,
                "increments": ps.increments,
                "flag_rate": ps.flagged as f64 / ps.increments.max(1) as f64,
                "undefined_samples": ps.undefined,
            }),
        )?;
        info!("phase slope {:.5} (predicted {:.5})", ps.fitted_slope, ps.predicted_slope);
    }

    let grid = linspace(0.0, a.omega_max * gamma, a.n_points);
    let quad_result = quad.finish(gamma, &grid);
    if let Ok(q) = &quad_result {
        let (y_exact, x_exact) = analytic_dark_spectra(&grid, gamma);
        write_csv(
            &run.file("quadrature_spectra.csv"),
            &["omega_over_gamma", "omega", "V_Xd", "stderr_Xd", "V_Yd", "stderr_Yd", "analytic_Xd", "analytic_Yd"],
            (0..grid.len()).map(|i| {
                [
                    fmt_f64(grid[i] / gamma),
                    fmt_f64(grid[i]),
                    fmt_f64(q.x.spectrum.values[i]),
                    fmt_f64(q.x.stderr[i]),
                    fmt_f64(q.y.spectrum.values[i]),
                    fmt_f64(q.y.stderr[i]),
                    fmt_f64(x_exact.values[i]),
                    fmt_f64(y_exact.values[i]),
                ]
            }),
        )?;
        write_json(
            &run.file("quadrature.json"),
            &json!({
                "mean_x": q.mean_x,
                "mean_y": q.mean_y,
                "x2": q.x2,
                "y2": q.y2,
                "x2_imag": q.x2_imag,
                "y2_imag": q.y2_imag,
                "stationarity_z": q.stationarity_z,
                "window": [q.window.0, q.window.1],
                "max_lag_time": q.y.max_lag_time,
                "taper": q.y.taper,
                "n_traj": q.n_traj,
                "undefined_samples": q.undefined,
                "coverage_x": q.x.coverage(&x_exact.values, 2.0),
                "coverage_y": q.y.coverage(&y_exact.values, 2.0),
            }),
        )?;
    }

    run.finish("montecarlo", &a.common.config, &cfg.params, Some(a.seed), args_json(a))?;
    phase_result.context("phase-variance analysis failed")?;
    quad_result.context("quadrature analysis failed")?;
    Ok(())
}

pub fn field(a: &FieldArgs) -> Result<()> {
    if a.n_phi == 0 || a.n_r == 0 || a.n_z == 0 || a.n_t == 0 {
        bail!("every field axis needs at least one sample");
    }
    let cfg = load_config(&a.common.config)?;
    let mut run = RunDir::create(&a.common.out)?;
    let (_, state) = solve(&cfg)?;
    if state.is_trivial() {
        bail!("no bright field below threshold (sigma = {})", cfg.sigma);
    }
    let geometry = cfg.params.field.clone().unwrap_or_default();
    let uniform = |n: usize, span: f64| (0..n).map(|i| span * i as f64 / n as f64).collect::<Vec<_>>();
    let grid = FieldGrid {
        phi: uniform(a.n_phi, TAU),
        r: linspace(0.0, a.r_max * geometry.waist, a.n_r),
        z: uniform(a.n_z, geometry.cavity_length),
        t: uniform(a.n_t, TAU / geometry.fsr),
    };
    let sample = reconstruct_field(&state, &grid, &geometry, a.theta)?;
    write_csv(
        &run.file("field.csv"),
        &["phi", "r", "z", "t", "value"],
        sample.rows().map(|r| r.map(fmt_f64)),
    )?;
    let nodal = FieldGrid {
        phi: vec![a.theta + 0.5 * PI, a.theta - 0.5 * PI],
        ..grid.clone()
    };
    let on_nodal = reconstruct_field(&state, &nodal, &geometry, a.theta)?;
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    write_json(
        &run.file("field.json"),
        &json!({
            "theta": a.theta,
            "geometry": geometry,
            "shape": [grid.phi.len(), grid.r.len(), grid.z.len(), grid.t.len()],
            "max_abs": max_abs(&sample.values),
            "nodal_line_max_abs": max_abs(&on_nodal.values),
            "norm_sq": state.norm_sq,
        }),
    )?;
    run.finish("field", &a.common.config, &cfg.params, None, args_json(a))?;
    Ok(())
}
