//! Positive-P stochastic equations and the ensemble engine.
//!
//! A phase-space point is the flat vector
//! `x = (s₊₁, s₋₁, s⁺₊₁, s⁺₋₁)` of `4M` complex amplitudes, `s⁺`
//! independent of `conj(s)`. The Itô equations are `dx = A(x)dt + B(x)dW`
//! with drift
//!
//! ```text
//! A[m,l]  = -γ s[m,l]  + Σ_q G[m,q]  s⁺[q,-l]     G  = gain of (s₊₁, s₋₁)
//! A⁺[m,l] = -γ s⁺[m,l] + Σ_q G⁺[m,q] s[q,-l]      G⁺ = gain of (s⁺₊₁, s⁺₋₁)
//! ```
//!
//! and diffusion `D = diag([[0,G],[G,0]], [[0,G⁺],[G⁺,0]])`, factorised as
//! `D = BBᵀ` with a plain transpose.

use std::time::Instant;

use log::{debug, info};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::comb::CombConfig;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kernel::Kernel;
use crate::steady::SteadyState;
use crate::C64;

#[derive(Clone, Debug, PartialEq)]
pub struct PPState {
    /// `s[m,+1]` for `m = -N..N`, then `s[m,-1]`.
    pub s: Vec<C64>,
    pub s_plus: Vec<C64>,
    pub t: f64,
}

impl PPState {
    pub fn zeros(dim: usize) -> Self {
        PPState {
            s: vec![C64::default(); 2 * dim],
            s_plus: vec![C64::default(); 2 * dim],
            t: 0.0,
        }
    }

    /// Classical point `s[m,±1] = ρ e^{∓iθ}`, `s⁺ = conj(s)`.
    pub fn classical(rho: &[f64], theta: f64) -> Self {
        let e = C64::from_polar(1.0, -theta);
        let s: Vec<C64> = rho.iter().map(|&r| e * r).chain(rho.iter().map(|&r| e.conj() * r)).collect();
        let s_plus = s.iter().map(|z| z.conj()).collect();
        PPState { s, s_plus, t: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.s.len() / 2
    }

    pub fn to_vec(&self) -> Vec<C64> {
        self.s.iter().chain(&self.s_plus).copied().collect()
    }

    pub fn from_vec(x: &[C64], t: f64) -> Self {
        let half = x.len() / 2;
        PPState {
            s: x[..half].to_vec(),
            s_plus: x[half..].to_vec(),
            t,
        }
    }
}

/// Scratch buffers for drift and noise evaluation.
#[derive(Clone, Debug)]
pub struct Workspace {
    pairs: Vec<C64>,
    pairs_plus: Vec<C64>,
}

impl Workspace {
    pub fn new(kernel: &Kernel) -> Self {
        Workspace {
            pairs: vec![C64::default(); kernel.n_pairs()],
            pairs_plus: vec![C64::default(); kernel.n_pairs()],
        }
    }

    fn fill(&mut self, kernel: &Kernel, x: &[C64]) {
        let m = kernel.dim;
        kernel.pair_sums_into(&x[..m], &x[m..2 * m], &mut self.pairs);
        kernel.pair_sums_into(&x[2 * m..3 * m], &x[3 * m..], &mut self.pairs_plus);
    }
}

/// Drift of the flat phase-space vector into `out`.
pub fn drift_into(kernel: &Kernel, x: &[C64], out: &mut [C64], ws: &mut Workspace) {
    let m = kernel.dim;
    ws.fill(kernel, x);
    let (sp, sm, pp, pm) = (&x[..m], &x[m..2 * m], &x[2 * m..3 * m], &x[3 * m..]);
    let (o1, rest) = out.split_at_mut(m);
    let (o2, rest) = rest.split_at_mut(m);
    let (o3, o4) = rest.split_at_mut(m);
    kernel.apply_gain(&ws.pairs, pm, o1);
    kernel.apply_gain(&ws.pairs, pp, o2);
    kernel.apply_gain(&ws.pairs_plus, sm, o3);
    kernel.apply_gain(&ws.pairs_plus, sp, o4);
    out.iter_mut().zip(x).for_each(|(o, xi)| *o -= xi * kernel.gamma);
}

pub fn drift_vec(kernel: &Kernel, x: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::default(); x.len()];
    drift_into(kernel, x, &mut out, &mut Workspace::new(kernel));
    out
}

pub fn drift(kernel: &Kernel, state: &PPState) -> Vec<C64> {
    drift_vec(kernel, &state.to_vec())
}

/// Gain matrices `(G, G⁺)` of both sectors.
pub fn gain_blocks(kernel: &Kernel, state: &PPState) -> (DMatrix<C64>, DMatrix<C64>) {
    let m = kernel.dim;
    let p = kernel.pair_sums(&state.s[..m], &state.s[m..]);
    let pp = kernel.pair_sums(&state.s_plus[..m], &state.s_plus[m..]);
    (kernel.gain_matrix(&p), kernel.gain_matrix(&pp))
}

/// Full `4M × 4M` diffusion matrix.
pub fn diffusion_matrix(kernel: &Kernel, state: &PPState) -> DMatrix<C64> {
    let m = kernel.dim;
    let (g, gp) = gain_blocks(kernel, state);
    let mut d = DMatrix::zeros(4 * m, 4 * m);
    d.view_mut((0, m), (m, m)).copy_from(&g);
    d.view_mut((m, 0), (m, m)).copy_from(&g);
    d.view_mut((2 * m, 3 * m), (m, m)).copy_from(&gp);
    d.view_mut((3 * m, 2 * m), (m, m)).copy_from(&gp);
    d
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScheme {
    /// Two real noises per `(m, q, l)` channel, `4M²` per sector.
    #[default]
    Block,
    /// `2M` noises per sector from a Takagi factorisation of the gain.
    Minimal,
}

impl NoiseScheme {
    /// Real Gaussian draws per sector.
    pub fn noises_per_sector(self, dim: usize) -> usize {
        match self {
            NoiseScheme::Block => 4 * dim * dim,
            NoiseScheme::Minimal => 2 * dim,
        }
    }
}

/// `B` and `B⁺`, each `2M × K`, with `BBᵀ` the sector diffusion block.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseFactorization {
    pub b: DMatrix<C64>,
    pub b_plus: DMatrix<C64>,
}

impl NoiseFactorization {
    /// `diag(B Bᵀ, B⁺ B⁺ᵀ)`, comparable with [`diffusion_matrix`].
    pub fn product(&self) -> DMatrix<C64> {
        let n = self.b.nrows();
        let mut d = DMatrix::zeros(2 * n, 2 * n);
        d.view_mut((0, 0), (n, n)).copy_from(&(&self.b * self.b.transpose()));
        d.view_mut((n, n), (n, n)).copy_from(&(&self.b_plus * self.b_plus.transpose()));
        d
    }
}

/// Column layout: pair `p = iM + j` owns columns `4p..4p+4`. The first two
/// belong to the `l = -1` channel and stay zero, since the `l = +1` channel
/// already reproduces both symmetric entries `D[(i,+1),(j,-1)]` and
/// `D[(j,-1),(i,+1)]`. Columns `4p+2, 4p+3` carry `√(G_ij/2)·(1, i)` on row
/// `(i,+1)` and `√(G_ij/2)·(1, -i)` on row `(j,-1)`.
fn block_sector(g: &DMatrix<C64>) -> DMatrix<C64> {
    let m = g.nrows();
    let mut b = DMatrix::zeros(2 * m, 4 * m * m);
    let i_unit = C64::new(0.0, 1.0);
    for i in 0..m {
        for j in 0..m {
            let c = (g[(i, j)] * 0.5).sqrt();
            let col = 4 * (i * m + j) + 2;
            b[(i, col)] = c;
            b[(i, col + 1)] = c * i_unit;
            b[(m + j, col)] = c;
            b[(m + j, col + 1)] = -c * i_unit;
        }
    }
    b
}

/// Takagi factor `C` with `C Cᵀ = G` from the real symmetric embedding
/// `[[X, Y], [Y, -X]]` of `G = X + iY`: an eigenvector `(a, b)` with
/// eigenvalue `λ ≥ 0` gives the column `√λ (a + ib)`.
pub fn takagi_factor(g: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let m = g.nrows();
    let x = g.map(|z| z.re);
    let y = g.map(|z| z.im);
    let mut h = DMatrix::zeros(2 * m, 2 * m);
    h.view_mut((0, 0), (m, m)).copy_from(&x);
    h.view_mut((0, m), (m, m)).copy_from(&y);
    h.view_mut((m, 0), (m, m)).copy_from(&y);
    h.view_mut((m, m), (m, m)).copy_from(&(-&x));
    let eig = SymmetricEigen::try_new(h, f64::EPSILON, 200 * m.max(10)).ok_or(Error::EigenSolver(2 * m))?;
    let mut order: Vec<usize> = (0..2 * m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut c = DMatrix::zeros(m, m);
    for (k, &idx) in order.iter().take(m).enumerate() {
        let lam = eig.eigenvalues[idx].max(0.0).sqrt();
        for r in 0..m {
            c[(r, k)] = C64::new(eig.eigenvectors[(r, idx)], eig.eigenvectors[(m + r, idx)]) * lam;
        }
    }
    Ok(c)
}

/// `B = [[C, iC], [C, -iC]] / √2`.
fn minimal_sector(g: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let m = g.nrows();
    let c = takagi_factor(g)? * C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let ic = &c * C64::new(0.0, 1.0);
    let mut b = DMatrix::zeros(2 * m, 2 * m);
    b.view_mut((0, 0), (m, m)).copy_from(&c);
    b.view_mut((0, m), (m, m)).copy_from(&ic);
    b.view_mut((m, 0), (m, m)).copy_from(&c);
    b.view_mut((m, m), (m, m)).copy_from(&(-ic));
    Ok(b)
}

pub fn diffusion_factor(kernel: &Kernel, state: &PPState, scheme: NoiseScheme) -> Result<NoiseFactorization> {
    let (g, gp) = gain_blocks(kernel, state);
    Ok(match scheme {
        NoiseScheme::Block => NoiseFactorization {
            b: block_sector(&g),
            b_plus: block_sector(&gp),
        },
        NoiseScheme::Minimal => NoiseFactorization {
            b: minimal_sector(&g)?,
            b_plus: minimal_sector(&gp)?,
        },
    })
}

/// Adds `B(x) η` to `out` without materialising `B`. `eta` holds
/// `2 × noises_per_sector` standard normals, the `s` sector first.
pub fn apply_noise(kernel: &Kernel, x: &[C64], eta: &[f64], scheme: NoiseScheme, out: &mut [C64], ws: &mut Workspace) -> Result<()> {
    let m = kernel.dim;
    ws.fill(kernel, x);
    let k = scheme.noises_per_sector(m);
    match scheme {
        NoiseScheme::Block => {
            for (sector, pairs) in [&ws.pairs, &ws.pairs_plus].into_iter().enumerate() {
                let base = 2 * m * sector;
                let noise = &eta[sector * k..(sector + 1) * k];
                for i in 0..m {
                    for j in 0..m {
                        let c = (kernel.gain(i, j, pairs) * 0.5).sqrt();
                        let col = 4 * (i * m + j) + 2;
                        let (a, b) = (noise[col], noise[col + 1]);
                        out[base + i] += c * C64::new(a, b);
                        out[base + m + j] += c * C64::new(a, -b);
                    }
                }
            }
        }
        NoiseScheme::Minimal => {
            for (sector, pairs) in [&ws.pairs, &ws.pairs_plus].into_iter().enumerate() {
                let base = 2 * m * sector;
                let noise = &eta[sector * k..(sector + 1) * k];
                let b = minimal_sector(&kernel.gain_matrix(pairs))?;
                for r in 0..2 * m {
                    let mut acc = C64::default();
                    for (c, e) in noise.iter().enumerate() {
                        acc += b[(r, c)] * *e;
                    }
                    out[base + r] += acc;
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    #[default]
    EulerMaruyama,
    SemiImplicitMidpoint,
}

const MIDPOINT_MAX_ITER: usize = 20;
const MIDPOINT_TOL: f64 = 1e-12;

/// Per-trajectory integrator state.
pub struct Integrator<'a> {
    kernel: &'a Kernel,
    stepper: Stepper,
    scheme: NoiseScheme,
    ws: Workspace,
    drift: Vec<C64>,
    noise: Vec<C64>,
    guess: Vec<C64>,
    mid: Vec<C64>,
    /// Midpoint steps that fell back to Euler-Maruyama.
    pub fallbacks: usize,
}

impl<'a> Integrator<'a> {
    pub fn new(kernel: &'a Kernel, stepper: Stepper, scheme: NoiseScheme) -> Self {
        let n = 4 * kernel.dim;
        Integrator {
            kernel,
            stepper,
            scheme,
            ws: Workspace::new(kernel),
            drift: vec![C64::default(); n],
            noise: vec![C64::default(); n],
            guess: vec![C64::default(); n],
            mid: vec![C64::default(); n],
            fallbacks: 0,
        }
    }

    /// Number of standard normals consumed per step.
    pub fn draws_per_step(&self) -> usize {
        2 * self.scheme.noises_per_sector(self.kernel.dim)
    }

    /// Advances `x` by one step with noise `eta` (unit-variance draws).
    pub fn step(&mut self, x: &mut [C64], dt: f64, eta: &[f64]) -> Result<()> {
        self.noise.iter_mut().for_each(|z| *z = C64::default());
        apply_noise(self.kernel, x, eta, self.scheme, &mut self.noise, &mut self.ws)?;
        let sq = dt.sqrt();
        self.noise.iter_mut().for_each(|z| *z *= sq);
        drift_into(self.kernel, x, &mut self.drift, &mut self.ws);
        for i in 0..x.len() {
            self.guess[i] = x[i] + self.drift[i] * dt + self.noise[i];
        }
        if self.stepper == Stepper::SemiImplicitMidpoint {
            let mut converged = false;
            for _ in 0..MIDPOINT_MAX_ITER {
                for i in 0..x.len() {
                    self.mid[i] = (x[i] + self.guess[i]) * 0.5;
                }
                drift_into(self.kernel, &self.mid, &mut self.drift, &mut self.ws);
                let mut change = 0.0f64;
                let mut size = 0.0f64;
                for i in 0..x.len() {
                    let next = x[i] + self.drift[i] * dt + self.noise[i];
                    change = change.max((next - self.guess[i]).norm());
                    size = size.max(next.norm());
                    self.guess[i] = next;
                }
                if change <= MIDPOINT_TOL * (1.0 + size) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                self.fallbacks += 1;
                drift_into(self.kernel, x, &mut self.drift, &mut self.ws);
                for i in 0..x.len() {
                    self.guess[i] = x[i] + self.drift[i] * dt + self.noise[i];
                }
            }
        }
        x.copy_from_slice(&self.guess);
        Ok(())
    }
}

/// One stochastic step of `state` (convenience wrapper around [`Integrator`]).
pub fn step(kernel: &Kernel, state: &PPState, dt: f64, eta: &[f64], stepper: Stepper, scheme: NoiseScheme) -> Result<PPState> {
    let mut integ = Integrator::new(kernel, stepper, scheme);
    if eta.len() != integ.draws_per_step() {
        return Err(Error::Length {
            what: "noise draw".into(),
            expected: integ.draws_per_step(),
            found: eta.len(),
        });
    }
    let mut x = state.to_vec();
    integ.step(&mut x, dt, eta)?;
    Ok(PPState::from_vec(&x, state.t + dt))
}

/// Saved samples of one surviving trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub index: usize,
    pub theta0: f64,
    pub dim: usize,
    pub dt: f64,
    /// Integration steps between saves.
    pub stride: usize,
    /// `n_saves × 4M` amplitudes, row-major.
    pub data: Vec<C64>,
}

impl Trajectory {
    pub fn n_saves(&self) -> usize {
        self.data.len() / (4 * self.dim)
    }

    /// Phase-space vector at save `k`.
    pub fn row(&self, k: usize) -> &[C64] {
        let w = 4 * self.dim;
        &self.data[k * w..(k + 1) * w]
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.stride as f64 * self.dt
    }

    pub fn rows(&self) -> impl Iterator<Item = &[C64]> {
        self.data.chunks_exact(4 * self.dim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleParams {
    pub n_traj: usize,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    #[serde(default)]
    pub stepper: Stepper,
    #[serde(default)]
    pub noise: NoiseScheme,
    /// Steps between saved samples.
    pub save_stride: usize,
    /// Defaults to `10³ max(1, ‖ρ‖)`.
    #[serde(default)]
    pub escape_radius: Option<f64>,
    /// Trajectories simulated per parallel wave.
    pub wave: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl EnsembleParams {
    /// `dt = 10⁻³/γ`, `t_max = 5/γ`, stride 10.
    pub fn for_gamma(gamma: f64, n_traj: usize, seed: u64) -> Self {
        EnsembleParams {
            n_traj,
            dt: 1e-3 / gamma,
            t_max: 5.0 / gamma,
            seed,
            stepper: Stepper::default(),
            noise: NoiseScheme::default(),
            save_stride: 10,
            escape_radius: None,
            wave: 256,
            execution: Execution::default(),
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    pub fn n_saves(&self) -> usize {
        self.n_steps() / self.save_stride + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(Error::Config("n_traj must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::Config(format!("t_max must be > 0, got {}", self.t_max)));
        }
        if self.save_stride == 0 {
            return Err(Error::Config("save_stride must be at least 1".into()));
        }
        if self.wave == 0 {
            return Err(Error::Config("wave must be at least 1".into()));
        }
        if self.n_steps() == 0 {
            return Err(Error::Config("t_max shorter than one step".into()));
        }
        if let Some(r) = self.escape_radius {
            if !(r > 0.0) {
                return Err(Error::Config(format!("escape_radius must be > 0, got {r}")));
            }
        }
        Ok(())
    }
}

/// Consumer of trajectories. `map` runs in parallel on each survivor;
/// `absorb` receives the results one at a time in trajectory order.
pub trait TrajectorySink {
    type Item: Send;
    fn map(&self, traj: &Trajectory) -> Self::Item;
    fn absorb(&mut self, index: usize, item: Self::Item) -> Result<()>;
}

impl<A: TrajectorySink + Sync, B: TrajectorySink + Sync> TrajectorySink for (A, B) {
    type Item = (A::Item, B::Item);
    fn map(&self, traj: &Trajectory) -> Self::Item {
        (self.0.map(traj), self.1.map(traj))
    }
    fn absorb(&mut self, index: usize, item: Self::Item) -> Result<()> {
        self.0.absorb(index, item.0)?;
        self.1.absorb(index, item.1)
    }
}

/// Keeps every surviving trajectory in memory.
#[derive(Debug, Default)]
pub struct CollectSink {
    pub trajectories: Vec<Trajectory>,
}

impl TrajectorySink for CollectSink {
    type Item = Trajectory;
    fn map(&self, traj: &Trajectory) -> Trajectory {
        traj.clone()
    }
    fn absorb(&mut self, _index: usize, item: Trajectory) -> Result<()> {
        self.trajectories.push(item);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub n_traj: usize,
    pub survived: usize,
    pub discarded: usize,
    pub discard_fraction: f64,
    pub midpoint_fallbacks: usize,
    pub seed: u64,
    pub dt: f64,
    pub t_max: f64,
    pub n_steps: usize,
    pub save_stride: usize,
    pub n_saves: usize,
    pub escape_radius: f64,
    pub stepper: Stepper,
    pub noise: NoiseScheme,
}

/// RNG of trajectory `index`: one ChaCha stream per trajectory.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

struct Outcome {
    traj: Option<Trajectory>,
    fallbacks: usize,
}

fn simulate(kernel: &Kernel, rho: &[f64], params: &EnsembleParams, radius: f64, index: usize) -> Result<Outcome> {
    let dim = kernel.dim;
    let mut rng = trajectory_rng(params.seed, index);
    let theta0 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut x = PPState::classical(rho, theta0).to_vec();
    let mut integ = Integrator::new(kernel, params.stepper, params.noise);
    let mut eta = vec![0.0; integ.draws_per_step()];
    let n_steps = params.n_steps();
    let mut data = Vec::with_capacity(params.n_saves() * 4 * dim);
    data.extend_from_slice(&x);
    for step in 1..=n_steps {
        eta.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
        integ.step(&mut x, params.dt, &eta)?;
        if x.iter().any(|z| !(z.norm() <= radius)) {
            debug!("trajectory {index} escaped at step {step}");
            return Ok(Outcome { traj: None, fallbacks: integ.fallbacks });
        }
        if step % params.save_stride == 0 {
            data.extend_from_slice(&x);
        }
    }
    Ok(Outcome {
        traj: Some(Trajectory {
            index,
            theta0,
            dim,
            dt: params.dt,
            stride: params.save_stride,
            data,
        }),
        fallbacks: integ.fallbacks,
    })
}

/// Integrates `params.n_traj` trajectories starting on the classical
/// manifold of `state` at uniformly random orientations and streams the
/// survivors into `sink`. Deterministic for a given seed regardless of
/// execution mode or wave size.
pub fn run_ensemble<S>(config: &CombConfig, state: &SteadyState, params: &EnsembleParams, sink: &mut S) -> Result<EnsembleSummary>
where
    S: TrajectorySink + Sync,
{
    params.validate()?;
    if state.rho.len() != config.dim() {
        return Err(Error::Length {
            what: "initial state".into(),
            expected: config.dim(),
            found: state.rho.len(),
        });
    }
    let kernel = Kernel::new(config);
    let radius = params.escape_radius.unwrap_or(1e3 * state.rho.norm().max(1.0));
    let rho: Vec<f64> = state.rho.iter().copied().collect();
    let start = Instant::now();
    let mut discarded = 0;
    let mut fallbacks = 0;
    let mut first = 0;
    while first < params.n_traj {
        let end = (first + params.wave).min(params.n_traj);
        let shared: &S = sink;
        let results = params.execution.map_range(first..end, |i| {
            simulate(&kernel, &rho, params, radius, i).map(|o| (o.traj.map(|t| shared.map(&t)), o.fallbacks))
        });
        for (offset, res) in results.into_iter().enumerate() {
            let (item, fb) = res?;
            fallbacks += fb;
            match item {
                Some(item) => sink.absorb(first + offset, item)?,
                None => discarded += 1,
            }
        }
        first = end;
    }
    let survived = params.n_traj - discarded;
    info!(
        "ensemble: {survived}/{} trajectories survived in {:.2}s",
        params.n_traj,
        start.elapsed().as_secs_f64()
    );
    if survived == 0 {
        return Err(Error::AllDiscarded(params.n_traj));
    }
    Ok(EnsembleSummary {
        n_traj: params.n_traj,
        survived,
        discarded,
        discard_fraction: discarded as f64 / params.n_traj as f64,
        midpoint_fallbacks: fallbacks,
        seed: params.seed,
        dt: params.dt,
        t_max: params.t_max,
        n_steps: params.n_steps(),
        save_stride: params.save_stride,
        n_saves: params.n_saves(),
        escape_radius: radius,
        stepper: params.stepper,
        noise: params.noise,
    })
}
