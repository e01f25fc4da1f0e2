use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use serde::Deserialize;
use serde_json::json;

use spopo::comb::{CombParams, MismatchKind, PumpKind};
use spopo::io::{fmt_f64, load_params, write_csv, write_json};
use spopo::linear::{dark_quadrature_vectors, numeric_spectrum, LinearModel};
use spopo::steady::{solve_with, SolverOptions};
use spopo::supermodes::decompose;
use spopo::Execution;

use crate::manifest::RunDir;
use crate::SweepArgs;

/// Values of one swept parameter: a list or an inclusive linear range.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    List(Vec<f64>),
    Range { start: f64, stop: f64, n: usize },
}

impl Axis {
    fn values(&self) -> Vec<f64> {
        match self {
            Axis::List(v) => v.clone(),
            Axis::Range { start, stop, n } => spopo::linear::linspace(*start, *stop, *n),
        }
    }
}

/// Grid file. Unset axes keep the configuration value.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub sigma: Option<Axis>,
    /// Width of a gaussian or sech² pump.
    pub width: Option<Axis>,
    /// Quadratic mismatch coefficients.
    pub u: Option<Axis>,
    pub v: Option<Axis>,
    pub w: Option<Axis>,
}

#[derive(Clone, Copy, Debug, Default)]
struct Point {
    sigma: Option<f64>,
    width: Option<f64>,
    u: Option<f64>,
    v: Option<f64>,
    w: Option<f64>,
}

impl SweepGrid {
    fn points(&self) -> Vec<Point> {
        let axis = |a: &Option<Axis>| -> Vec<Option<f64>> {
            match a {
                Some(a) => a.values().into_iter().map(Some).collect(),
                None => vec![None],
            }
        };
        let mut out = Vec::new();
        for sigma in axis(&self.sigma) {
            for width in axis(&self.width) {
                for u in axis(&self.u) {
                    for v in axis(&self.v) {
                        for w in axis(&self.w) {
                            out.push(Point { sigma, width, u, v, w });
                        }
                    }
                }
            }
        }
        out
    }
}

fn apply(base: &CombParams, p: &Point) -> Result<CombParams> {
    let mut params = base.clone();
    if let Some(s) = p.sigma {
        params.sigma = s;
    }
    if let Some(width) = p.width {
        params.pump = match &params.pump {
            PumpKind::Gaussian { .. } => PumpKind::Gaussian { width },
            PumpKind::Sech2 { .. } => PumpKind::Sech2 { width },
            other => bail!("cannot sweep the width of a {other:?} pump"),
        };
    }
    if p.u.is_some() || p.v.is_some() || p.w.is_some() {
        let (u0, v0, w0) = match &params.mismatch {
            MismatchKind::Quadratic { u, v, w } => (*u, *v, *w),
            MismatchKind::Perfect => (0.0, 0.0, 0.0),
            other => bail!("cannot sweep quadratic coefficients of a {other:?} mismatch"),
        };
        params.mismatch = MismatchKind::Quadratic {
            u: p.u.unwrap_or(u0),
            v: p.v.unwrap_or(v0),
            w: p.w.unwrap_or(w0),
        };
    }
    Ok(params)
}

#[derive(Debug, Default)]
struct Row {
    threshold: f64,
    margin: f64,
    norm_sq: f64,
    regime: String,
    v_yd0: Option<f64>,
    slope: Option<f64>,
}

fn evaluate(params: &CombParams, base_dir: Option<&Path>) -> Result<Row> {
    let cfg = params.build(base_dir)?;
    let basis = decompose(&cfg.coupling_matrix())?;
    let state = solve_with(&cfg, &basis, &SolverOptions::default())?;
    let threshold = basis.threshold_sigma;
    let mut row = Row {
        threshold,
        margin: if threshold.is_finite() { cfg.sigma / threshold - 1.0 } else { -1.0 },
        norm_sq: state.norm_sq,
        regime: if state.is_trivial() { "trivial" } else { "above_threshold" }.into(),
        ..Default::default()
    };
    if !state.is_trivial() {
        let model = LinearModel::build(&cfg, &state)?;
        let (_, qy) = dark_quadrature_vectors(&model)?;
        row.v_yd0 = Some(numeric_spectrum(&model, &qy, &[0.0], "Y_d")?.values[0]);
        row.slope = Some(cfg.gamma / (4.0 * state.norm_sq));
    }
    Ok(row)
}

pub fn run(a: &SweepArgs) -> Result<()> {
    let base = load_params(&a.common.config)?;
    base.validate()?;
    let text = std::fs::read_to_string(&a.grid).with_context(|| format!("cannot read sweep grid {}", a.grid.display()))?;
    let grid: SweepGrid = serde_json::from_str(&text).with_context(|| format!("invalid sweep grid {}", a.grid.display()))?;
    let points = grid.points();
    if points.is_empty() {
        bail!("sweep grid is empty");
    }
    let mut run = RunDir::create(&a.common.out)?;
    let base_dir = a.common.config.parent();

    let results = Execution::default().map_slice(&points, |p| {
        let params = apply(&base, p)?;
        let row = evaluate(&params, base_dir)?;
        Ok::<_, anyhow::Error>((params, row))
    });

    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    let mut failures = 0;
    let rows: Vec<Vec<String>> = points
        .iter()
        .zip(&results)
        .enumerate()
        .map(|(i, (p, r))| {
            let effective = apply(&base, p).ok();
            let sigma = effective.as_ref().map(|e| e.sigma).unwrap_or(base.sigma);
            let mut row = vec![i.to_string(), fmt_f64(sigma), opt(p.width), opt(p.u), opt(p.v), opt(p.w)];
            match r {
                Ok((_, r)) => row.extend([
                    fmt_f64(r.threshold),
                    fmt_f64(r.margin),
                    fmt_f64(r.norm_sq),
                    r.regime.clone(),
                    opt(r.v_yd0),
                    opt(r.slope),
                    String::new(),
                ]),
                Err(e) => {
                    failures += 1;
                    row.extend(std::iter::repeat_n(String::new(), 6));
                    row.push(format!("{e:#}"));
                }
            }
            row
        })
        .collect();
    write_csv(
        &run.file("sweep.csv"),
        &[
            "index",
            "sigma",
            "width",
            "u",
            "v",
            "w",
            "threshold_sigma",
            "threshold_margin",
            "norm_sq",
            "regime",
            "V_Yd_0",
            "predicted_phase_slope",
            "error",
        ],
        rows,
    )?;
    write_json(
        &run.file("sweep.json"),
        &json!({ "points": points.len(), "failures": failures }),
    )?;
    info!("sweep: {} points, {failures} failures", points.len());
    let args = json!({ "config": a.common.config, "out": a.common.out, "grid": a.grid, "grid_spec": serde_json::from_str::<serde_json::Value>(&text)? });
    run.finish("sweep", &a.common.config, &base, None, args)?;
    Ok(())
}
