//! Classical phase-locked steady state and the emitted field.
//!
//! Above threshold the stationary amplitudes are `s̄[m,±1] = ρ[m] e^{∓iθ}`
//! with real `ρ` solving `R(ρ)ρ = γρ`. The solver relaxes the real
//! equations from a small seed along a supermode, then polishes with
//! Newton's method on `g(ρ) = R(ρ)ρ - γρ`. The orientation `θ` is fixed to
//! zero here; its dynamics belongs to the stochastic modules.

use std::f64::consts::PI;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comb::CombConfig;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::supermodes::{decompose, SupermodeBasis};
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Trivial,
    AboveThreshold,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub seed_mode: usize,
    pub relaxation_steps: usize,
    pub relaxation_residual: f64,
    /// Endpoint of the relaxation stage, before polishing.
    pub relaxed: DVector<f64>,
    pub newton_iterations: usize,
    pub newton_converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SteadyState {
    pub rho: DVector<f64>,
    /// `‖R(ρ)ρ - γρ‖ / (γ‖ρ‖)`, zero for the trivial state.
    pub residual: f64,
    pub regime: Regime,
    pub norm_sq: f64,
    pub report: Option<SolveReport>,
}

impl SteadyState {
    pub fn trivial(dim: usize) -> Self {
        SteadyState {
            rho: DVector::zeros(dim),
            residual: 0.0,
            regime: Regime::Trivial,
            norm_sq: 0.0,
            report: None,
        }
    }

    /// Wraps a known solution, computing its residual.
    pub fn from_rho(config: &CombConfig, rho: DVector<f64>) -> Self {
        let norm_sq = rho.norm_squared();
        if norm_sq == 0.0 {
            return Self::trivial(rho.len());
        }
        let residual = relative_residual(&Kernel::new(config), &rho);
        SteadyState {
            rho,
            residual,
            regime: Regime::AboveThreshold,
            norm_sq,
            report: None,
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.regime == Regime::Trivial
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq.sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Supermode used as the relaxation seed direction.
    pub seed_mode: usize,
    pub relax_tol: f64,
    pub newton_tol: f64,
    pub max_relax_steps: usize,
    pub max_newton_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            seed_mode: 0,
            relax_tol: 1e-8,
            newton_tol: 1e-12,
            max_relax_steps: 20_000_000,
            max_newton_iterations: 50,
        }
    }
}

fn relative_residual(kernel: &Kernel, rho: &DVector<f64>) -> f64 {
    kernel.classical_drift(rho).norm() / (kernel.gamma * rho.norm())
}

/// Seed amplitude `ε = 10⁻³ √(γ/κ)`.
pub fn seed_scale(config: &CombConfig) -> f64 {
    1e-3 * (config.gamma / config.kappa).sqrt()
}

pub fn solve_steady_state(config: &CombConfig) -> Result<SteadyState> {
    let basis = decompose(&config.coupling_matrix())?;
    solve_with(config, &basis, &SolverOptions::default())
}

pub fn solve_with(config: &CombConfig, basis: &SupermodeBasis, opts: &SolverOptions) -> Result<SteadyState> {
    let dim = config.dim();
    let pos = basis.max_positive();
    let neg = basis.eigenvalues.iter().copied().fold(0.0, f64::min);
    if config.sigma * pos <= 1.0 {
        if -neg > pos && config.sigma * -neg > 1.0 {
            return Err(Error::NegativeDominant(neg));
        }
        return Ok(SteadyState::trivial(dim));
    }
    if config.kappa == 0.0 {
        return Err(Error::Unbounded);
    }
    if opts.seed_mode >= dim {
        return Err(Error::Config(format!("seed mode {} out of range", opts.seed_mode)));
    }

    let kernel = Kernel::new(config);
    let v = basis.mode(opts.seed_mode);
    let relaxed = relax(&kernel, &v * seed_scale(config), opts, basis)?;
    if relaxed.decayed {
        return Err(Error::RelaxationStalled {
            steps: relaxed.steps,
            residual: relaxed.residual,
        });
    }
    if !relaxed.converged {
        return Err(Error::RelaxationStalled {
            steps: relaxed.steps,
            residual: relaxed.residual,
        });
    }

    let (polished, iterations) = newton(&kernel, &relaxed.rho, opts);
    let (mut rho, converged) = match polished {
        Some(r) => (r, true),
        None => {
            warn!("Newton polish did not converge; returning the relaxation endpoint");
            (relaxed.rho.clone(), false)
        }
    };

    // Gauge: positive overlap with the seed supermode.
    let overlap = rho.dot(&v);
    let flip = if overlap.abs() > 1e-12 * rho.norm() {
        overlap < 0.0
    } else {
        rho.iter().find(|x| x.abs() > 1e-12).is_some_and(|&x| x < 0.0)
    };
    let mut relaxed_rho = relaxed.rho;
    if flip {
        rho.neg_mut();
        relaxed_rho.neg_mut();
    }

    let residual = relative_residual(&kernel, &rho);
    debug!("steady state: |rho|^2 = {}, residual = {residual:e}", rho.norm_squared());
    Ok(SteadyState {
        norm_sq: rho.norm_squared(),
        rho,
        residual,
        regime: Regime::AboveThreshold,
        report: Some(SolveReport {
            seed_mode: opts.seed_mode,
            relaxation_steps: relaxed.steps,
            relaxation_residual: relaxed.residual,
            relaxed: relaxed_rho,
            newton_iterations: iterations,
            newton_converged: converged,
        }),
    })
}

#[derive(Clone, Debug)]
pub struct RelaxOutcome {
    pub rho: DVector<f64>,
    pub steps: usize,
    /// Last `‖dρ/dt‖ / (γ‖ρ‖)`.
    pub residual: f64,
    pub converged: bool,
    /// The amplitude fell below `10⁻⁸` of the seed: the trivial state attracts.
    pub decayed: bool,
}

fn rk4_step(kernel: &Kernel, rho: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = kernel.classical_drift(rho);
    let k2 = kernel.classical_drift(&(rho + &k1 * (0.5 * h)));
    let k3 = kernel.classical_drift(&(rho + &k2 * (0.5 * h)));
    let k4 = kernel.classical_drift(&(rho + &k3 * h));
    rho + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Stable RK4 step for the current amplitude.
fn relax_step_size(kernel: &Kernel, basis: &SupermodeBasis, sigma: f64, l1: f64) -> f64 {
    let spread = basis.eigenvalues.amax();
    let rate = kernel.gamma * (1.0 + sigma * spread) + 3.0 * kernel.kappa * l1 * l1;
    0.5 / rate
}

/// Integrates `dρ/dt = R(ρ)ρ - γρ` from `seed`.
pub fn relax(kernel: &Kernel, seed: DVector<f64>, opts: &SolverOptions, basis: &SupermodeBasis) -> Result<RelaxOutcome> {
    let floor = 1e-8 * seed.norm();
    let mut rho = seed;
    let mut residual = f64::INFINITY;
    for step in 0..opts.max_relax_steps {
        let g = kernel.classical_drift(&rho);
        let norm = rho.norm();
        if !norm.is_finite() {
            return Err(Error::RelaxationStalled { steps: step, residual });
        }
        if norm < floor {
            return Ok(RelaxOutcome { rho, steps: step, residual, converged: false, decayed: true });
        }
        residual = g.norm() / (kernel.gamma * norm);
        if residual < opts.relax_tol {
            return Ok(RelaxOutcome { rho, steps: step, residual, converged: true, decayed: false });
        }
        let h = relax_step_size(kernel, basis, kernel.sigma, rho.lp_norm(1));
        rho = rk4_step(kernel, &rho, h);
    }
    Ok(RelaxOutcome {
        rho,
        steps: opts.max_relax_steps,
        residual,
        converged: false,
        decayed: false,
    })
}

/// Classifies `config` by relaxing from the seed supermode: `true` when a
/// nonzero stationary amplitude is reached.
pub fn relaxes_to_nontrivial(config: &CombConfig, basis: &SupermodeBasis) -> Result<bool> {
    if config.kappa == 0.0 {
        return Err(Error::Unbounded);
    }
    let kernel = Kernel::new(config);
    let opts = SolverOptions::default();
    let out = relax(&kernel, basis.mode(0) * seed_scale(config), &opts, basis)?;
    if out.decayed {
        return Ok(false);
    }
    if !out.converged {
        return Err(Error::RelaxationStalled {
            steps: out.steps,
            residual: out.residual,
        });
    }
    Ok(out.rho.norm() > 1e-3 * seed_scale(config))
}

/// Brackets the onset of a nontrivial state in `σ` by bisection on
/// [`relaxes_to_nontrivial`], starting from `[lo, hi]`.
pub fn bisect_threshold(config: &CombConfig, basis: &SupermodeBasis, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (lo, hi);
    if relaxes_to_nontrivial(&config.with_sigma(lo), basis)? || !relaxes_to_nontrivial(&config.with_sigma(hi), basis)? {
        return Err(Error::Config(format!("[{lo}, {hi}] does not bracket the threshold")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match relaxes_to_nontrivial(&config.with_sigma(mid), basis) {
            Ok(true) => hi = mid,
            Ok(false) => lo = mid,
            // Critical slowing down: too close to the onset to classify.
            // Step a quarter tolerance to either side instead.
            Err(Error::RelaxationStalled { .. }) => {
                let (a, b) = (mid - 0.25 * tol, mid + 0.25 * tol);
                if !relaxes_to_nontrivial(&config.with_sigma(a), basis)? {
                    lo = a;
                }
                if relaxes_to_nontrivial(&config.with_sigma(b), basis)? {
                    hi = b;
                }
                if hi - lo > tol && lo < a && hi > b {
                    return Err(Error::Config(format!("threshold bisection stuck at sigma = {mid}")));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok((lo, hi))
}

fn newton(kernel: &Kernel, start: &DVector<f64>, opts: &SolverOptions) -> (Option<DVector<f64>>, usize) {
    let dim = kernel.dim;
    let mut rho = start.clone();
    let mut res = relative_residual(kernel, &rho);
    for it in 1..=opts.max_newton_iterations {
        let g = kernel.classical_drift(&rho);
        let j = kernel.r_matrix(&rho) + kernel.t_matrix(&rho) * 2.0 - DMatrix::identity(dim, dim) * kernel.gamma;
        let Some(delta) = j.lu().solve(&g) else {
            return (None, it);
        };
        let next = &rho - delta;
        let next_res = relative_residual(kernel, &next);
        if !next_res.is_finite() {
            return (None, it);
        }
        rho = next;
        if next_res <= opts.newton_tol {
            return (Some(rho), it);
        }
        // Stagnation at round-off just above the tolerance still counts as
        // converged when the residual stopped improving.
        if next_res >= res && next_res <= 1e3 * opts.newton_tol {
            return (Some(rho), it);
        }
        res = next_res;
    }
    (None, opts.max_newton_iterations)
}

/// `‖Rρ - γρ‖ / (γ‖ρ‖)` of an above-threshold state.
pub fn verify_eigenrelation(state: &SteadyState, config: &CombConfig) -> Result<f64> {
    if state.is_trivial() || state.norm_sq == 0.0 {
        return Err(Error::TrivialState("the eigenrelation R rho = gamma rho"));
    }
    let kernel = Kernel::new(config);
    let r = kernel.r_matrix(&state.rho);
    Ok((r * &state.rho - &state.rho * config.gamma).norm() / (config.gamma * state.rho.norm()))
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseLockReport {
    /// `max |Im|` of the de-rotated complex endpoint relative to `‖ρ‖`.
    pub violation: f64,
    pub converged: bool,
    pub steps: usize,
    /// Orientation the complex run settled on.
    pub theta: f64,
}

impl PhaseLockReport {
    pub fn locked(&self) -> bool {
        self.converged && self.violation <= 1e-6
    }
}

/// Integrates the complex classical equations
/// `ds[m,l]/dt = -γ s[m,l] + Σ_q G[m,q] conj(s[q,-l])` from randomly phased
/// small amplitudes and measures how far the endpoint is from a real,
/// phase-locked state `s[m,±1] = ρ̃[m] e^{∓iθ}`.
pub fn check_phase_locking(config: &CombConfig, state: &SteadyState, seed: u64) -> Result<PhaseLockReport> {
    if state.is_trivial() {
        return Err(Error::TrivialState("phase locking"));
    }
    let kernel = Kernel::new(config);
    let basis = decompose(&config.coupling_matrix())?;
    let dim = kernel.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = seed_scale(config);
    let v0 = basis.mode(0);
    let spread = 0.1 / (dim as f64).sqrt();
    let mut s: Vec<C64> = (0..2 * dim)
        .map(|i| C64::from_polar(eps * (v0[i % dim].abs() + spread), rng.random_range(0.0..2.0 * PI)))
        .collect();

    let drift = |s: &[C64]| -> Vec<C64> {
        let (a, b) = s.split_at(dim);
        let pairs = kernel.pair_sums(a, b);
        let conj: Vec<C64> = s.iter().map(|z| z.conj()).collect();
        let mut out = vec![C64::default(); 2 * dim];
        let (plus, minus) = out.split_at_mut(dim);
        kernel.apply_gain(&pairs, &conj[dim..], plus);
        kernel.apply_gain(&pairs, &conj[..dim], minus);
        out.iter_mut().zip(s).for_each(|(o, z)| *o -= z * kernel.gamma);
        out
    };
    let axpy = |x: &[C64], k: &[C64], h: f64| -> Vec<C64> { x.iter().zip(k).map(|(a, b)| a + b * h).collect() };
    let norm = |x: &[C64]| x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();

    let h = relax_step_size(&kernel, &basis, config.sigma, 2.0 * state.rho.lp_norm(1));
    let max_steps = SolverOptions::default().max_relax_steps;
    let mut converged = false;
    let mut steps = 0;
    while steps < max_steps {
        let k1 = drift(&s);
        if norm(&k1) < 1e-11 * kernel.gamma * norm(&s) {
            converged = true;
            break;
        }
        let k2 = drift(&axpy(&s, &k1, 0.5 * h));
        let k3 = drift(&axpy(&s, &k2, 0.5 * h));
        let k4 = drift(&axpy(&s, &k3, h));
        for i in 0..2 * dim {
            s[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0);
        }
        steps += 1;
    }

    let (plus, minus) = s.split_at(dim);
    let p_plus: C64 = plus.iter().zip(state.rho.iter()).map(|(z, r)| z * r).sum();
    let p_minus: C64 = minus.iter().zip(state.rho.iter()).map(|(z, r)| z * r).sum();
    let theta = 0.5 * (p_minus.arg() - p_plus.arg());
    let rot = C64::from_polar(1.0, theta);
    let scale = state.rho.norm();
    let mut violation = 0.0f64;
    for m in 0..dim {
        let a = plus[m] * rot;
        let b = minus[m] * rot.conj();
        violation = violation.max(a.im.abs()).max(b.im.abs()).max((a - b).norm());
    }
    violation /= scale;
    let report = PhaseLockReport {
        violation,
        converged,
        steps,
        theta,
    };
    if !report.locked() {
        warn!(
            "complex classical run does not settle on a phase-locked real state (violation {:.3e}, converged {})",
            violation, converged
        );
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CavityKind {
    #[default]
    Ring,
    FabryPerot,
}

/// Display scales for the emitted field. Frequencies follow
/// `ω[m] = ω₀ + mΩ`, wavenumbers `k[m] = k₀ + m·dk`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldGeometry {
    pub waist: f64,
    pub omega0: f64,
    pub fsr: f64,
    pub k0: f64,
    pub dk: f64,
    pub cavity_length: f64,
    pub cavity: CavityKind,
}

impl Default for FieldGeometry {
    fn default() -> Self {
        FieldGeometry {
            waist: 1.0,
            omega0: 10.0,
            fsr: 1.0,
            k0: 10.0,
            dk: 1.0,
            cavity_length: 2.0 * PI,
            cavity: CavityKind::Ring,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FieldGrid {
    pub phi: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub t: Vec<f64>,
}

impl FieldGrid {
    pub fn len(&self) -> usize {
        self.phi.len() * self.r.len() * self.z.len() * self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index with `t` fastest.
    pub fn index(&self, iphi: usize, ir: usize, iz: usize, it: usize) -> usize {
        ((iphi * self.r.len() + ir) * self.z.len() + iz) * self.t.len() + it
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FieldSample {
    pub grid: FieldGrid,
    pub theta: f64,
    pub geometry: FieldGeometry,
    /// Field in units of the single-photon amplitude, see [`FieldGrid::index`].
    pub values: Vec<f64>,
}

impl FieldSample {
    pub fn at(&self, iphi: usize, ir: usize, iz: usize, it: usize) -> f64 {
        self.values[self.grid.index(iphi, ir, iz, it)]
    }

    /// Rows `(φ, r, z, t, value)`.
    pub fn rows(&self) -> impl Iterator<Item = [f64; 5]> + '_ {
        let g = &self.grid;
        g.phi.iter().enumerate().flat_map(move |(a, &phi)| {
            g.r.iter().enumerate().flat_map(move |(b, &r)| {
                g.z.iter().enumerate().flat_map(move |(c, &z)| {
                    g.t.iter().enumerate().map(move |(d, &t)| [phi, r, z, t, self.at(a, b, c, d)])
                })
            })
        })
    }
}

/// First-order Hermite-Gauss profile oriented at `θ`.
pub fn h10(r: f64, phi: f64, waist: f64) -> f64 {
    (8.0 / PI).sqrt() / (waist * waist) * r * (-(r * r) / (waist * waist)).exp() * phi.cos()
}

/// Temporal comb factor `F(z,t) = Σ_m ρ_m Im{u_m(z) e^{-iω_m t}}`.
pub fn comb_factor(rho: &DVector<f64>, geometry: &FieldGeometry, z: f64, t: f64) -> f64 {
    let n = (rho.len() / 2) as f64;
    rho.iter()
        .enumerate()
        .map(|(i, &r)| {
            let m = i as f64 - n;
            let k = geometry.k0 + m * geometry.dk;
            let w = geometry.omega0 + m * geometry.fsr;
            let im = match geometry.cavity {
                CavityKind::Ring => (k * z - w * t).sin(),
                CavityKind::FabryPerot => -(k * (z + 0.5 * geometry.cavity_length)).sin() * (w * t).sin(),
            };
            r * im
        })
        .sum()
}

/// Samples `E(r,φ,z,t) = H₁₀(r, φ - θ) F(z,t)`.
pub fn reconstruct_field(state: &SteadyState, grid: &FieldGrid, geometry: &FieldGeometry, theta: f64) -> Result<FieldSample> {
    for (name, axis) in [("phi", &grid.phi), ("r", &grid.r), ("z", &grid.z), ("t", &grid.t)] {
        if axis.is_empty() {
            return Err(Error::EmptyGrid(name));
        }
    }
    let mut temporal = Vec::with_capacity(grid.z.len() * grid.t.len());
    for &z in &grid.z {
        for &t in &grid.t {
            temporal.push(comb_factor(&state.rho, geometry, z, t));
        }
    }
    let mut values = Vec::with_capacity(grid.len());
    for &phi in &grid.phi {
        for &r in &grid.r {
            let transverse = h10(r, phi - theta, geometry.waist);
            values.extend(temporal.iter().map(|f| transverse * f));
        }
    }
    Ok(FieldSample {
        grid: grid.clone(),
        theta,
        geometry: geometry.clone(),
        values,
    })
}
