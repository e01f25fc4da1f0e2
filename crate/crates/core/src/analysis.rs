//! Post-processing of positive-P ensembles: orientation phase, its
//! diffusion, dark-mode quadratures and homodyne spectra.
//!
//! With the projections `P± = Σ ρ s[±1]` and `Q± = Σ ρ s⁺[±1]`, the
//! orientation is estimated either from `s` alone,
//! `θ̂ = ½[arg P₋ - arg P₊]`, or by the Goldstone projection
//! `θ_g = (1/2i) log[(P₋ + Q₊)/(P₊ + Q₋)]`, which removes the component of
//! the fluctuation along `u0` exactly. Dark amplitudes in the co-rotating
//! frame are
//!
//! ```text
//! s_d  =  (i/√2|ρ|) Σ ρ (e^{iθ} s[+1]  - e^{-iθ} s[-1])
//! s_d⁺ = (-i/√2|ρ|) Σ ρ (e^{-iθ} s⁺[+1] - e^{iθ} s⁺[-1])
//! ```
//!
//! and `X_d = s_d⁺ + s_d`, `Y_d = i(s_d⁺ - s_d)`.

use std::f64::consts::{FRAC_PI_4, PI, SQRT_2, TAU};
use std::sync::Arc;

use nalgebra::DVector;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linear::NoiseSpectrum;
use crate::sde::{EnsembleParams, Trajectory, TrajectorySink};
use crate::C64;

/// Magnitude below which a projection is treated as vanishing, relative to `|ρ|²`.
const UNDEFINED_REL: f64 = 1e-6;
/// Largest phase increment between saves accepted without a flag.
pub const UNWRAP_FLAG: f64 = FRAC_PI_4;
/// Tolerated fraction of flagged increments or undefined samples.
pub const MAX_FLAG_RATE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projections {
    pub p_plus: C64,
    pub p_minus: C64,
    pub q_plus: C64,
    pub q_minus: C64,
}

/// Projections of a phase-space row (`2M` or `4M` amplitudes) on `ρ`.
pub fn projections(x: &[C64], rho: &[f64]) -> Projections {
    let m = rho.len();
    let dot = |seg: &[C64]| -> C64 { seg.iter().zip(rho).map(|(z, r)| z * r).sum() };
    let (q_plus, q_minus) = if x.len() >= 4 * m {
        (dot(&x[2 * m..3 * m]), dot(&x[3 * m..4 * m]))
    } else {
        (C64::default(), C64::default())
    };
    Projections {
        p_plus: dot(&x[..m]),
        p_minus: dot(&x[m..2 * m]),
        q_plus,
        q_minus,
    }
}

fn wrap(a: f64) -> f64 {
    let w = a - TAU * ((a + PI) / TAU).floor();
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// `θ̂ = ½[arg P₋ - arg P₊]` wrapped to `(-π, π]`. Defined modulo `π`.
pub fn estimate_theta(x: &[C64], rho: &[f64]) -> Result<f64> {
    let nsq: f64 = rho.iter().map(|r| r * r).sum();
    if nsq == 0.0 {
        return Err(Error::TrivialState("the orientation phase"));
    }
    let p = projections(x, rho);
    let floor = UNDEFINED_REL * nsq;
    if p.p_plus.norm() < floor && p.p_minus.norm() < floor {
        return Err(Error::PhaseUndefined(1));
    }
    Ok(wrap(0.5 * (p.p_minus.arg() - p.p_plus.arg())))
}

/// Complex orientation from the Goldstone projection.
pub fn gauge_theta(x: &[C64], rho: &[f64]) -> Result<C64> {
    let nsq: f64 = rho.iter().map(|r| r * r).sum();
    if nsq == 0.0 {
        return Err(Error::TrivialState("the orientation phase"));
    }
    let p = projections(x, rho);
    let num = p.p_minus + p.q_plus;
    let den = p.p_plus + p.q_minus;
    let floor = UNDEFINED_REL * nsq;
    if num.norm() < floor || den.norm() < floor {
        return Err(Error::PhaseUndefined(1));
    }
    Ok((num / den).ln() / C64::new(0.0, 2.0))
}

/// Dark amplitudes `(s_d, s_d⁺)` relative to the (possibly complex) orientation `θ`.
pub fn dark_amplitudes(x: &[C64], rho: &[f64], theta: C64) -> (C64, C64) {
    let norm = rho.iter().map(|r| r * r).sum::<f64>().sqrt();
    let p = projections(x, rho);
    let i = C64::new(0.0, 1.0);
    let e = (i * theta).exp();
    let ei = (-i * theta).exp();
    let pre = i / (SQRT_2 * norm);
    let sd = pre * (e * p.p_plus - ei * p.p_minus);
    let sdp = -pre * (ei * p.q_plus - e * p.q_minus);
    (sd, sdp)
}

/// `(X_d, Y_d)` for the orientation `θ`.
pub fn dark_quadratures_at(x: &[C64], rho: &[f64], theta: C64) -> (C64, C64) {
    let (sd, sdp) = dark_amplitudes(x, rho, theta);
    (sdp + sd, C64::new(0.0, 1.0) * (sdp - sd))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaEstimator {
    /// Real `θ̂` from the `s` projections only.
    Projection,
    /// Complex `θ_g` enforcing `u0ᵀc = 0`.
    #[default]
    Goldstone,
}

pub fn orientation(x: &[C64], rho: &[f64], estimator: ThetaEstimator) -> Result<C64> {
    match estimator {
        ThetaEstimator::Projection => estimate_theta(x, rho).map(|t| C64::new(t, 0.0)),
        ThetaEstimator::Goldstone => gauge_theta(x, rho),
    }
}

/// Weighted least-squares line `y = a + b x`; returns `(a, b)`.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let sw: f64 = w.iter().sum();
    if x.len() < 2 || sw <= 0.0 {
        return Err(Error::InsufficientData("a linear fit needs at least two weighted points".into()));
    }
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::InsufficientData("degenerate abscissae in linear fit".into()));
    }
    let slope = sxy / sxx;
    Ok((my - slope * mx, slope))
}

/// Jackknife standard error from leave-one-out estimates.
pub fn jackknife_stderr(loo: &[f64]) -> f64 {
    let b = loo.len() as f64;
    if loo.len() < 2 {
        return f64::NAN;
    }
    let mean = loo.iter().sum::<f64>() / b;
    ((b - 1.0) / b * loo.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()).sqrt()
}

#[derive(Clone, Debug, Default)]
pub struct PhaseTrack {
    /// `(θ(t) - θ(0))²` per save.
    pub dtheta_sq: Vec<f64>,
    pub theta: Vec<f64>,
    pub flagged: usize,
    pub undefined: usize,
}

/// Unwraps `θ̂` along a trajectory. `θ̂` lives modulo `π`, so `2θ̂` is
/// unwrapped with period `2π`; increments above [`UNWRAP_FLAG`] are flagged.
pub fn track_phase(traj: &Trajectory, rho: &[f64]) -> PhaseTrack {
    let n = traj.n_saves();
    let mut out = PhaseTrack {
        dtheta_sq: Vec::with_capacity(n),
        theta: Vec::with_capacity(n),
        ..Default::default()
    };
    let mut acc: Option<f64> = None;
    let mut start = 0.0;
    for row in traj.rows() {
        match estimate_theta(row, rho) {
            Ok(th) => {
                let two = 2.0 * th;
                match acc {
                    None => {
                        acc = Some(two);
                        start = two;
                    }
                    Some(prev) => {
                        let d = wrap(two - wrap(prev));
                        if 0.5 * d.abs() > UNWRAP_FLAG {
                            out.flagged += 1;
                        }
                        acc = Some(prev + d);
                    }
                }
            }
            Err(_) => out.undefined += 1,
        }
        let th = acc.unwrap_or(0.0);
        let rel = 0.5 * (th - start);
        out.theta.push(0.5 * th);
        out.dtheta_sq.push(rel * rel);
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseSeries {
    pub t_grid: Vec<f64>,
    pub variance: Vec<f64>,
    pub fitted_slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    pub fit_window: (f64, f64),
    /// `γ / (4|ρ|²)`.
    pub predicted_slope: f64,
    pub n_traj: usize,
    pub flagged: usize,
    pub increments: usize,
    pub undefined: usize,
    /// Unwrapped `θ` per trajectory, when requested.
    #[serde(skip)]
    pub theta: Option<Vec<Vec<f64>>>,
}

/// Accumulates `V_θ(t) = ⟨(θ(t) - θ(0))²⟩` in jackknife blocks.
pub struct PhaseVarianceSink {
    rho: Vec<f64>,
    dt_save: f64,
    n_saves: usize,
    n_blocks: usize,
    sums: Vec<Vec<f64>>,
    counts: Vec<usize>,
    flagged: usize,
    increments: usize,
    undefined: usize,
    samples: usize,
    survivors: usize,
    keep_theta: bool,
    thetas: Vec<Vec<f64>>,
}

impl PhaseVarianceSink {
    pub fn new(rho: &DVector<f64>, params: &EnsembleParams, n_blocks: usize, keep_theta: bool) -> Result<Self> {
        if rho.norm_squared() == 0.0 {
            return Err(Error::TrivialState("the orientation phase"));
        }
        let n_saves = params.n_saves();
        Ok(PhaseVarianceSink {
            rho: rho.iter().copied().collect(),
            dt_save: params.dt * params.save_stride as f64,
            n_saves,
            n_blocks: n_blocks.max(2),
            sums: vec![vec![0.0; n_saves]; n_blocks.max(2)],
            counts: vec![0; n_blocks.max(2)],
            flagged: 0,
            increments: 0,
            undefined: 0,
            samples: 0,
            survivors: 0,
            keep_theta,
            thetas: Vec::new(),
        })
    }

    /// Checks that the predicted diffusion per save, `γ Δt_save / 4|ρ|²`,
    /// stays well below `π²`.
    pub fn check_stride(&self, gamma: f64) -> Result<()> {
        let nsq: f64 = self.rho.iter().map(|r| r * r).sum();
        let per_save = gamma * self.dt_save / (4.0 * nsq);
        if per_save > 0.01 * PI * PI {
            return Err(Error::Config(format!(
                "save stride too coarse for phase unwrapping: predicted variance {per_save:.3e} per save (limit {:.3e}); reduce save_stride",
                0.01 * PI * PI
            )));
        }
        Ok(())
    }

    pub fn finish(self, gamma: f64, fit_from: f64) -> Result<PhaseSeries> {
        self.check_stride(gamma)?;
        if self.survivors < 100 {
            return Err(Error::InsufficientData(format!(
                "phase variance needs at least 100 surviving trajectories, got {}",
                self.survivors
            )));
        }
        if self.samples > 0 && self.undefined as f64 > MAX_FLAG_RATE * self.samples as f64 {
            return Err(Error::PhaseUndefined(self.undefined));
        }
        if self.increments > 0 {
            let rate = self.flagged as f64 / self.increments as f64;
            if rate > MAX_FLAG_RATE {
                return Err(Error::UnwrapRate {
                    flagged: self.flagged,
                    total: self.increments,
                    rate: 100.0 * rate,
                });
            }
        }
        let t_grid: Vec<f64> = (0..self.n_saves).map(|k| k as f64 * self.dt_save).collect();
        let total: Vec<f64> = (0..self.n_saves).map(|k| self.sums.iter().map(|b| b[k]).sum()).collect();
        let n = self.survivors as f64;
        let variance: Vec<f64> = total.iter().map(|s| s / n).collect();
        let t_max = *t_grid.last().unwrap_or(&0.0);
        let sel: Vec<usize> = (0..self.n_saves).filter(|&k| t_grid[k] >= fit_from - 1e-12).collect();
        if sel.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "fit window [{fit_from}, {t_max}] holds fewer than two saves"
            )));
        }
        let fit = |v: &[f64]| -> Result<(f64, f64)> {
            let x: Vec<f64> = sel.iter().map(|&k| t_grid[k]).collect();
            let y: Vec<f64> = sel.iter().map(|&k| v[k]).collect();
            let floor = y.iter().copied().fold(0.0, f64::max) * 1e-6 + f64::MIN_POSITIVE;
            let w: Vec<f64> = y.iter().map(|v| 1.0 / v.max(floor).powi(2)).collect();
            weighted_linear_fit(&x, &y, &w)
        };
        let (intercept, slope) = fit(&variance)?;
        let mut loo = Vec::with_capacity(self.n_blocks);
        for (b, sums) in self.sums.iter().enumerate() {
            let rest = n - self.counts[b] as f64;
            if self.counts[b] == 0 || rest <= 0.0 {
                continue;
            }
            let v: Vec<f64> = total.iter().zip(sums).map(|(t, s)| (t - s) / rest).collect();
            loo.push(fit(&v)?.1);
        }
        let nsq: f64 = self.rho.iter().map(|r| r * r).sum();
        Ok(PhaseSeries {
            t_grid,
            variance,
            fitted_slope: slope,
            slope_stderr: jackknife_stderr(&loo),
            intercept,
            fit_window: (fit_from, t_max),
            predicted_slope: gamma / (4.0 * nsq),
            n_traj: self.survivors,
            flagged: self.flagged,
            increments: self.increments,
            undefined: self.undefined,
            theta: self.keep_theta.then_some(self.thetas),
        })
    }
}

impl TrajectorySink for PhaseVarianceSink {
    type Item = PhaseTrack;

    fn map(&self, traj: &Trajectory) -> PhaseTrack {
        track_phase(traj, &self.rho)
    }

    fn absorb(&mut self, _index: usize, item: PhaseTrack) -> Result<()> {
        if item.dtheta_sq.len() != self.n_saves {
            return Err(Error::Length {
                what: "phase track".into(),
                expected: self.n_saves,
                found: item.dtheta_sq.len(),
            });
        }
        let b = self.survivors % self.n_blocks;
        for (s, v) in self.sums[b].iter_mut().zip(&item.dtheta_sq) {
            *s += v;
        }
        self.counts[b] += 1;
        self.survivors += 1;
        self.flagged += item.flagged;
        self.increments += self.n_saves.saturating_sub(1);
        self.undefined += item.undefined;
        self.samples += self.n_saves;
        if self.keep_theta {
            self.thetas.push(item.theta);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taper {
    #[default]
    Rectangular,
    Hann,
}

impl Taper {
    /// Lag window `w_k`, `k = 0..=max_lag`.
    pub fn weight(self, k: usize, max_lag: usize) -> f64 {
        match self {
            Taper::Rectangular => 1.0,
            Taper::Hann => 0.5 * (1.0 + (PI * k as f64 / (max_lag as f64 + 1.0)).cos()),
        }
    }
}

/// Lag sums `Σ_t Q(t) Q(t+k)` (no conjugation) for `k = 0..=max_lag`.
pub struct Correlator {
    max_lag: usize,
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    n_fft: usize,
}

impl Correlator {
    pub fn new(len: usize, max_lag: usize) -> Self {
        let n_fft = (len + max_lag + 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        Correlator {
            max_lag,
            len,
            fwd: planner.plan_fft_forward(n_fft),
            inv: planner.plan_fft_inverse(n_fft),
            n_fft,
        }
    }

    pub fn lag_sums(&self, q: &[C64]) -> Vec<C64> {
        debug_assert_eq!(q.len(), self.len);
        let mut a: Vec<C64> = q.iter().map(|z| z.conj()).collect();
        a.resize(self.n_fft, C64::default());
        let mut b: Vec<C64> = q.to_vec();
        b.resize(self.n_fft, C64::default());
        self.fwd.process(&mut a);
        self.fwd.process(&mut b);
        let mut c: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x.conj() * y).collect();
        self.inv.process(&mut c);
        let scale = 1.0 / self.n_fft as f64;
        c.truncate(self.max_lag + 1);
        c.iter_mut().for_each(|z| *z *= scale);
        c
    }
}

#[derive(Clone, Debug)]
struct LagBlock {
    sums: Vec<C64>,
    counts: Vec<f64>,
    n: usize,
}

/// Ensemble-and-time averaged correlogram in jackknife blocks.
#[derive(Clone, Debug)]
pub struct CorrelogramAccumulator {
    max_lag: usize,
    blocks: Vec<LagBlock>,
    absorbed: usize,
}

impl CorrelogramAccumulator {
    pub fn new(max_lag: usize, n_blocks: usize) -> Self {
        let block = LagBlock {
            sums: vec![C64::default(); max_lag + 1],
            counts: vec![0.0; max_lag + 1],
            n: 0,
        };
        CorrelogramAccumulator {
            max_lag,
            blocks: vec![block; n_blocks.max(2)],
            absorbed: 0,
        }
    }

    /// Adds one trajectory's lag sums for a series of length `len`.
    pub fn add(&mut self, sums: &[C64], len: usize) {
        let b = self.absorbed % self.blocks.len();
        let block = &mut self.blocks[b];
        for k in 0..=self.max_lag {
            block.sums[k] += sums[k];
            block.counts[k] += len.saturating_sub(k) as f64;
        }
        block.n += 1;
        self.absorbed += 1;
    }

    pub fn n_series(&self) -> usize {
        self.absorbed
    }

    fn correlation(&self, skip: Option<usize>) -> Vec<C64> {
        (0..=self.max_lag)
            .map(|k| {
                let (mut s, mut c) = (C64::default(), 0.0);
                for (b, block) in self.blocks.iter().enumerate() {
                    if Some(b) != skip {
                        s += block.sums[k];
                        c += block.counts[k];
                    }
                }
                if c > 0.0 {
                    s / c
                } else {
                    C64::default()
                }
            })
            .collect()
    }

    /// Stationary correlation `C(k)` over all series.
    pub fn correlation_all(&self) -> Vec<C64> {
        self.correlation(None)
    }

    /// `V(ω) = 1 + 2γΔ[C₀ + 2 Σ_k w_k Re C_k cos(ωkΔ)]` with jackknife errors.
    pub fn spectrum(&self, gamma: f64, dt_save: f64, grid: &[f64], taper: Taper, label: &str) -> HomodyneSpectrum {
        let eval = |c: &[C64]| -> Vec<f64> {
            grid.iter()
                .map(|&w| {
                    let mut s = c[0].re;
                    for k in 1..=self.max_lag {
                        s += 2.0 * taper.weight(k, self.max_lag) * c[k].re * (w * k as f64 * dt_save).cos();
                    }
                    1.0 + 2.0 * gamma * dt_save * s
                })
                .collect()
        };
        let values = eval(&self.correlation_all());
        let loo: Vec<Vec<f64>> = (0..self.blocks.len())
            .filter(|&b| self.blocks[b].n > 0)
            .map(|b| eval(&self.correlation(Some(b))))
            .collect();
        let stderr = (0..grid.len())
            .map(|i| jackknife_stderr(&loo.iter().map(|v| v[i]).collect::<Vec<_>>()))
            .collect();
        HomodyneSpectrum {
            spectrum: NoiseSpectrum {
                omega_grid: grid.to_vec(),
                values,
                label: label.to_string(),
            },
            stderr,
            max_lag_time: self.max_lag as f64 * dt_save,
            taper,
            n_series: self.absorbed,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HomodyneSpectrum {
    pub spectrum: NoiseSpectrum,
    /// Jackknife standard error per grid point.
    pub stderr: Vec<f64>,
    pub max_lag_time: f64,
    pub taper: Taper,
    pub n_series: usize,
}

impl HomodyneSpectrum {
    /// Fraction of grid points where `reference` lies within `z` standard errors.
    pub fn coverage(&self, reference: &[f64], z: f64) -> f64 {
        let hits = self
            .spectrum
            .values
            .iter()
            .zip(&self.stderr)
            .zip(reference)
            .filter(|((v, e), r)| (*v - *r).abs() <= z * *e)
            .count();
        hits as f64 / reference.len().max(1) as f64
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadratureOptions {
    /// Discarded initial time.
    pub transient: f64,
    /// Largest correlation lag, in time units.
    pub max_lag: f64,
    pub estimator: ThetaEstimator,
    pub taper: Taper,
    pub n_blocks: usize,
    /// Segments of the analysis window used by the stationarity test.
    pub segments: usize,
    /// Keep the full `(X_d, Y_d)` series of each trajectory.
    pub keep_series: bool,
}

impl QuadratureOptions {
    /// Transient `1/γ`, lags up to `3.5/γ`.
    pub fn for_gamma(gamma: f64) -> Self {
        QuadratureOptions {
            transient: 1.0 / gamma,
            max_lag: 3.5 / gamma,
            estimator: ThetaEstimator::default(),
            taper: Taper::default(),
            n_blocks: 20,
            segments: 4,
            keep_series: false,
        }
    }
}

/// Per-trajectory reduction of the dark quadratures.
pub struct QuadratureItem {
    x_lags: Vec<C64>,
    y_lags: Vec<C64>,
    x_segments: Vec<f64>,
    y_segments: Vec<f64>,
    x2: C64,
    y2: C64,
    x_mean: C64,
    y_mean: C64,
    undefined: usize,
    series: Option<(Vec<C64>, Vec<C64>)>,
}

#[derive(Clone, Debug, Default)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    fn stderr(&self) -> f64 {
        if self.n < 2.0 {
            return f64::NAN;
        }
        let m = self.mean();
        ((self.sum_sq / self.n - m * m).max(0.0) * self.n / (self.n - 1.0) / self.n).sqrt()
    }
}

/// Mean with standard error.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    fn of(m: &Moments) -> Self {
        Estimate {
            mean: m.mean(),
            stderr: m.stderr(),
        }
    }
}

/// Dark-mode quadrature series of the ensemble.
pub struct QuadratureSink {
    rho: Vec<f64>,
    opts: QuadratureOptions,
    first: usize,
    len: usize,
    max_lag: usize,
    dt_save: f64,
    correlator: Correlator,
    acc_x: CorrelogramAccumulator,
    acc_y: CorrelogramAccumulator,
    seg_x: Vec<Moments>,
    seg_y: Vec<Moments>,
    x2: Moments,
    y2: Moments,
    x2_im: f64,
    y2_im: f64,
    mean_x: Moments,
    mean_y: Moments,
    undefined: usize,
    series: Vec<(Vec<C64>, Vec<C64>)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct QuadratureReport {
    pub x: HomodyneSpectrum,
    pub y: HomodyneSpectrum,
    /// Time-and-ensemble means of `Re X_d`, `Re Y_d`.
    pub mean_x: Estimate,
    pub mean_y: Estimate,
    /// Equal-time `⟨X_d²⟩`, `⟨Y_d²⟩` (normally ordered; may be negative).
    pub x2: Estimate,
    pub y2: Estimate,
    pub x2_imag: f64,
    pub y2_imag: f64,
    /// Largest first-vs-last segment drift, in standard errors.
    pub stationarity_z: f64,
    pub window: (f64, f64),
    pub n_traj: usize,
    pub undefined: usize,
    #[serde(skip)]
    pub series: Vec<(Vec<C64>, Vec<C64>)>,
}

impl QuadratureSink {
    pub fn new(rho: &DVector<f64>, params: &EnsembleParams, opts: QuadratureOptions) -> Result<Self> {
        if rho.norm_squared() == 0.0 {
            return Err(Error::TrivialState("the dark mode"));
        }
        let dt_save = params.dt * params.save_stride as f64;
        let n_saves = params.n_saves();
        let first = (opts.transient / dt_save).ceil() as usize;
        let max_lag = (opts.max_lag / dt_save).round() as usize;
        if first >= n_saves || n_saves - first <= max_lag + 1 {
            return Err(Error::InsufficientData(format!(
                "analysis window after a transient of {} holds {} saves, but lags up to {} need more",
                opts.transient,
                n_saves.saturating_sub(first),
                max_lag
            )));
        }
        if opts.segments < 2 || (n_saves - first) < 2 * opts.segments {
            return Err(Error::Config("stationarity test needs at least two non-empty segments".into()));
        }
        let len = n_saves - first;
        Ok(QuadratureSink {
            rho: rho.iter().copied().collect(),
            first,
            len,
            max_lag,
            dt_save,
            correlator: Correlator::new(len, max_lag),
            acc_x: CorrelogramAccumulator::new(max_lag, opts.n_blocks),
            acc_y: CorrelogramAccumulator::new(max_lag, opts.n_blocks),
            seg_x: vec![Moments::default(); opts.segments],
            seg_y: vec![Moments::default(); opts.segments],
            x2: Moments::default(),
            y2: Moments::default(),
            x2_im: 0.0,
            y2_im: 0.0,
            mean_x: Moments::default(),
            mean_y: Moments::default(),
            undefined: 0,
            series: Vec::new(),
            opts,
        })
    }

    pub fn dt_save(&self) -> f64 {
        self.dt_save
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    /// Quadrature series of one trajectory over the analysis window.
    pub fn quadratures(&self, traj: &Trajectory) -> (Vec<C64>, Vec<C64>, usize) {
        let mut xs = Vec::with_capacity(self.len);
        let mut ys = Vec::with_capacity(self.len);
        let mut undefined = 0;
        let mut last = C64::default();
        for k in self.first..self.first + self.len {
            let row = traj.row(k);
            let theta = match orientation(row, &self.rho, self.opts.estimator) {
                Ok(t) => {
                    last = t;
                    t
                }
                Err(_) => {
                    undefined += 1;
                    last
                }
            };
            let (x, y) = dark_quadratures_at(row, &self.rho, theta);
            xs.push(x);
            ys.push(y);
        }
        (xs, ys, undefined)
    }

    fn segment_means(&self, q: &[C64]) -> Vec<f64> {
        let s = self.opts.segments;
        (0..s)
            .map(|j| {
                let a = j * self.len / s;
                let b = (j + 1) * self.len / s;
                q[a..b].iter().map(|z| z.re).sum::<f64>() / (b - a) as f64
            })
            .collect()
    }

    pub fn finish(self, gamma: f64, grid: &[f64]) -> Result<QuadratureReport> {
        let n = self.acc_y.n_series();
        if n < 2 * self.opts.n_blocks.max(2) {
            return Err(Error::InsufficientData(format!(
                "homodyne spectra need at least {} trajectories, got {n}",
                2 * self.opts.n_blocks.max(2)
            )));
        }
        let record = n as f64 * self.len as f64 * self.dt_save;
        if record < 50.0 / gamma {
            return Err(Error::InsufficientData(format!(
                "stationary record of {record:.1} is shorter than 50/gamma"
            )));
        }
        let total = (n * self.len) as f64;
        if self.undefined as f64 > MAX_FLAG_RATE * total {
            return Err(Error::PhaseUndefined(self.undefined));
        }
        let last = self.opts.segments - 1;
        let drift = |seg: &[Moments]| {
            let d = seg[last].mean() - seg[0].mean();
            let e = (seg[last].stderr().powi(2) + seg[0].stderr().powi(2)).sqrt();
            if e > 0.0 {
                d.abs() / e
            } else {
                0.0
            }
        };
        let zx = drift(&self.seg_x);
        let zy = drift(&self.seg_y);
        for (label, z) in [("X_d", zx), ("Y_d", zy)] {
            if z > 3.0 {
                return Err(Error::NonStationary {
                    label: label.into(),
                    z,
                });
            }
        }
        let x = self.acc_x.spectrum(gamma, self.dt_save, grid, self.opts.taper, "X_d");
        let y = self.acc_y.spectrum(gamma, self.dt_save, grid, self.opts.taper, "Y_d");
        let t0 = self.first as f64 * self.dt_save;
        Ok(QuadratureReport {
            x,
            y,
            mean_x: Estimate::of(&self.mean_x),
            mean_y: Estimate::of(&self.mean_y),
            x2: Estimate::of(&self.x2),
            y2: Estimate::of(&self.y2),
            x2_imag: self.x2_im / n as f64,
            y2_imag: self.y2_im / n as f64,
            stationarity_z: zx.max(zy),
            window: (t0, t0 + (self.len - 1) as f64 * self.dt_save),
            n_traj: n,
            undefined: self.undefined,
            series: self.series,
        })
    }
}

impl TrajectorySink for QuadratureSink {
    type Item = QuadratureItem;

    fn map(&self, traj: &Trajectory) -> QuadratureItem {
        let (xs, ys, undefined) = self.quadratures(traj);
        let len = xs.len() as f64;
        let mean = |q: &[C64]| q.iter().sum::<C64>() / len;
        let sq = |q: &[C64]| q.iter().map(|z| z * z).sum::<C64>() / len;
        QuadratureItem {
            x_lags: self.correlator.lag_sums(&xs),
            y_lags: self.correlator.lag_sums(&ys),
            x_segments: self.segment_means(&xs),
            y_segments: self.segment_means(&ys),
            x2: sq(&xs),
            y2: sq(&ys),
            x_mean: mean(&xs),
            y_mean: mean(&ys),
            undefined,
            series: self.opts.keep_series.then_some((xs, ys)),
        }
    }

    fn absorb(&mut self, _index: usize, item: QuadratureItem) -> Result<()> {
        self.acc_x.add(&item.x_lags, self.len);
        self.acc_y.add(&item.y_lags, self.len);
        for (m, v) in self.seg_x.iter_mut().zip(&item.x_segments) {
            m.push(*v);
        }
        for (m, v) in self.seg_y.iter_mut().zip(&item.y_segments) {
            m.push(*v);
        }
        self.x2.push(item.x2.re);
        self.y2.push(item.y2.re);
        self.x2_im += item.x2.im;
        self.y2_im += item.y2.im;
        self.mean_x.push(item.x_mean.re);
        self.mean_y.push(item.y_mean.re);
        self.undefined += item.undefined;
        if let Some(s) = item.series {
            self.series.push(s);
        }
        Ok(())
    }
}

/// Homodyne spectrum of in-memory stationary series sampled every `dt_save`.
pub fn homodyne_spectrum(
    series: &[Vec<C64>],
    gamma: f64,
    dt_save: f64,
    max_lag: usize,
    grid: &[f64],
    taper: Taper,
    n_blocks: usize,
    label: &str,
) -> Result<HomodyneSpectrum> {
    let len = series.first().map(Vec::len).unwrap_or(0);
    if series.is_empty() || len <= max_lag + 1 || series.iter().any(|s| s.len() != len) {
        return Err(Error::InsufficientData("series must share a length longer than the maximal lag".into()));
    }
    let corr = Correlator::new(len, max_lag);
    let mut acc = CorrelogramAccumulator::new(max_lag, n_blocks);
    for s in series {
        acc.add(&corr.lag_sums(s), len);
    }
    Ok(acc.spectrum(gamma, dt_save, grid, taper, label))
}

/// Feeds stored trajectories (e.g. read back from a dump) through a sink.
pub fn replay<S: TrajectorySink + Sync>(trajectories: &[Trajectory], sink: &mut S, execution: Execution) -> Result<()> {
    let shared: &S = sink;
    let items = execution.map_slice(trajectories, |t| shared.map(t));
    for (t, item) in trajectories.iter().zip(items) {
        sink.absorb(t.index, item)?;
    }
    Ok(())
}

/// Co-rotated projection `Re(e^{iθ̂} Σ ρ s[+1])` at the last save, whose
/// ensemble mean should approach `|ρ|²`.
pub struct MeanFieldSink {
    rho: Vec<f64>,
    stats: Moments,
}

impl MeanFieldSink {
    pub fn new(rho: &DVector<f64>) -> Self {
        MeanFieldSink {
            rho: rho.iter().copied().collect(),
            stats: Moments::default(),
        }
    }

    pub fn finish(&self) -> Estimate {
        Estimate::of(&self.stats)
    }
}

impl TrajectorySink for MeanFieldSink {
    type Item = Option<f64>;

    fn map(&self, traj: &Trajectory) -> Option<f64> {
        let row = traj.row(traj.n_saves() - 1);
        let th = estimate_theta(row, &self.rho).ok()?;
        let p = projections(row, &self.rho);
        Some((C64::from_polar(1.0, th) * p.p_plus).re)
    }

    fn absorb(&mut self, _index: usize, item: Option<f64>) -> Result<()> {
        if let Some(v) = item {
            self.stats.push(v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::PPState;

    fn rho() -> Vec<f64> {
        vec![0.3, 1.1, -0.4]
    }

    #[test]
    fn theta_on_manifold() {
        let r = rho();
        let x = PPState::classical(&r, PI / 3.0).to_vec();
        assert!((estimate_theta(&x, &r).unwrap() - PI / 3.0).abs() < 1e-14);
        let x0 = PPState::classical(&r, 0.0).to_vec();
        assert_eq!(estimate_theta(&x0, &r).unwrap(), 0.0);
        assert!((gauge_theta(&x, &r).unwrap() - PI / 3.0).norm() < 1e-14);
    }

    #[test]
    fn undefined_phase() {
        let r = rho();
        let x = vec![C64::default(); 12];
        assert!(matches!(estimate_theta(&x, &r), Err(Error::PhaseUndefined(_))));
        assert!(estimate_theta(&x, &[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn dark_mode_empty_on_manifold() {
        let r = rho();
        for th in [0.0, 0.7, 2.9] {
            let x = PPState::classical(&r, th).to_vec();
            let t = gauge_theta(&x, &r).unwrap();
            let (xd, yd) = dark_quadratures_at(&x, &r, t);
            assert!(xd.norm() < 1e-14 && yd.norm() < 1e-14);
        }
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap(PI), PI);
        assert!((wrap(-PI) - PI).abs() < 1e-15);
        assert!((wrap(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 + 0.25 * v).collect();
        let (a, b) = weighted_linear_fit(&x, &y, &vec![1.0; 10]).unwrap();
        assert!((a - 0.5).abs() < 1e-12 && (b - 0.25).abs() < 1e-12);
    }

    #[test]
    fn fft_lag_sums_match_direct() {
        let q: Vec<C64> = (0..37).map(|k| C64::new((k as f64 * 0.3).sin(), (k as f64 * 0.17).cos())).collect();
        let c = Correlator::new(q.len(), 9);
        let got = c.lag_sums(&q);
        for k in 0..=9 {
            let direct: C64 = (0..q.len() - k).map(|t| q[t] * q[t + k]).sum();
            assert!((got[k] - direct).norm() < 1e-10);
        }
    }

    #[test]
    fn track_unwraps_through_branch_cut() {
        let r = rho();
        let thetas: Vec<f64> = (0..50).map(|k| 1.3 + 0.05 * k as f64).collect();
        let data = thetas.iter().flat_map(|&t| PPState::classical(&r, t).to_vec()).collect();
        let traj = Trajectory { index: 0, theta0: 1.3, dim: 3, dt: 0.1, stride: 1, data };
        let track = track_phase(&traj, &r);
        assert_eq!(track.flagged, 0);
        let last = (thetas[49] - thetas[0]).powi(2);
        assert!((track.dtheta_sq[49] - last).abs() < 1e-12);
    }
}
