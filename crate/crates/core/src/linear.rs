//! Linearised fluctuations around a classical state and their output
//! noise spectra.
//!
//! Fluctuations are ordered `c = (δs₊₁, δs₋₁, δs⁺₊₁, δs⁺₋₁)`, each block of
//! length `M`. Their drift is `A = L_full - γI` with
//!
//! ```text
//! L_full = | T T 0 R |        D̄ = | 0 R 0 0 |
//!          | T T R 0 |            | R 0 0 0 |
//!          | 0 R T T |            | 0 0 0 R |
//!          | R 0 T T |            | 0 0 R 0 |
//! ```
//!
//! `u0 = (ρ,-ρ,-ρ,ρ)` is the Goldstone direction (eigenvalue 0 of `A`),
//! `u1 = (ρ,-ρ,ρ,-ρ)` the dark mode (eigenvalue `-2γ`).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::comb::CombConfig;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kernel::Kernel;
use crate::sde;
use crate::steady::SteadyState;
use crate::C64;

#[derive(Clone, Debug, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct IdentityReport {
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    fn push(&mut self, name: &str, value: f64, tolerance: f64) {
        self.checks.push(IdentityCheck {
            name: name.to_string(),
            value,
            tolerance,
            passed: value <= tolerance,
        });
    }

    pub fn get(&self, name: &str) -> Option<&IdentityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// First failing check as an error.
    pub fn check(&self) -> Result<()> {
        match self.checks.iter().find(|c| !c.passed) {
            Some(c) => Err(Error::IdentityCheck {
                name: c.name.clone(),
                value: c.value,
                tolerance: c.tolerance,
            }),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearModel {
    pub gamma: f64,
    pub rho: DVector<f64>,
    pub trivial: bool,
    pub r: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub l_v: DMatrix<f64>,
    pub l_full: DMatrix<f64>,
    pub d_bar: DMatrix<f64>,
    pub u0: DVector<f64>,
    pub u1: DVector<f64>,
    pub w1: DVector<f64>,
    pub identities: IdentityReport,
    #[serde(skip)]
    pub execution: Execution,
}

fn blocks4(dim: usize, layout: [[Option<&DMatrix<f64>>; 4]; 4]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(4 * dim, 4 * dim);
    for (bi, row) in layout.iter().enumerate() {
        for (bj, block) in row.iter().enumerate() {
            if let Some(b) = block {
                out.view_mut((bi * dim, bj * dim), (dim, dim)).copy_from(b);
            }
        }
    }
    out
}

fn stack(parts: &[(&DVector<f64>, f64)]) -> DVector<f64> {
    let dim = parts[0].0.len();
    DVector::from_fn(parts.len() * dim, |i, _| {
        let (v, sign) = parts[i / dim];
        sign * v[i % dim]
    })
}

impl LinearModel {
    /// Builds every matrix and records the identity checks without failing.
    pub fn assemble(config: &CombConfig, state: &SteadyState) -> Result<Self> {
        let dim = config.dim();
        if state.rho.len() != dim {
            return Err(Error::Length {
                what: "steady-state amplitudes".into(),
                expected: dim,
                found: state.rho.len(),
            });
        }
        let gamma = config.gamma;
        let kernel = Kernel::new(config);
        let rho = state.rho.clone();
        let r = kernel.r_matrix(&rho);
        let t = kernel.t_matrix(&rho);
        let eye = DMatrix::identity(dim, dim) * (-gamma);

        let mut l_v = DMatrix::zeros(2 * dim, 2 * dim);
        l_v.view_mut((0, 0), (dim, dim)).copy_from(&eye);
        l_v.view_mut((dim, dim), (dim, dim)).copy_from(&eye);
        l_v.view_mut((0, dim), (dim, dim)).copy_from(&r);
        l_v.view_mut((dim, 0), (dim, dim)).copy_from(&r);

        let (tt, rr) = (Some(&t), Some(&r));
        let l_full = blocks4(
            dim,
            [[tt, tt, None, rr], [tt, tt, rr, None], [None, rr, tt, tt], [rr, None, tt, tt]],
        );
        let d_bar = blocks4(
            dim,
            [[None, rr, None, None], [rr, None, None, None], [None, None, None, rr], [None, None, rr, None]],
        );

        let u0 = stack(&[(&rho, 1.0), (&rho, -1.0), (&rho, -1.0), (&rho, 1.0)]);
        let u1 = stack(&[(&rho, 1.0), (&rho, -1.0), (&rho, 1.0), (&rho, -1.0)]);
        let w1 = stack(&[(&rho, 1.0), (&rho, -1.0)]);

        let mut model = LinearModel {
            gamma,
            rho,
            trivial: state.is_trivial() || state.norm_sq == 0.0,
            r,
            t,
            l_v,
            l_full,
            d_bar,
            u0,
            u1,
            w1,
            identities: IdentityReport::default(),
            execution: Execution::default(),
        };
        model.identities = model.evaluate_identities(&kernel);
        Ok(model)
    }

    /// [`assemble`](Self::assemble) followed by a hard identity check.
    pub fn build(config: &CombConfig, state: &SteadyState) -> Result<Self> {
        let model = Self::assemble(config, state)?;
        model.identities.check()?;
        Ok(model)
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn dim(&self) -> usize {
        self.rho.len()
    }

    /// Linear drift `L_full - γI`.
    pub fn drift_matrix(&self) -> DMatrix<f64> {
        let n = self.l_full.nrows();
        &self.l_full - DMatrix::identity(n, n) * self.gamma
    }

    /// Centered-difference Jacobian of the positive-P drift at the
    /// classical point `s = s⁺ = (ρ, ρ)`, step `10⁻⁵‖ρ‖` (`10⁻⁵` at `ρ = 0`).
    pub fn finite_difference_jacobian(kernel: &Kernel, rho: &DVector<f64>) -> DMatrix<f64> {
        let dim = rho.len();
        let n = 4 * dim;
        let base: Vec<C64> = (0..n).map(|i| C64::new(rho[i % dim], 0.0)).collect();
        let norm = rho.norm();
        let h = 1e-5 * if norm > 0.0 { norm } else { 1.0 };
        let mut jac = DMatrix::zeros(n, n);
        let mut x = base.clone();
        for j in 0..n {
            x[j] = base[j] + h;
            let fp = sde::drift_vec(kernel, &x);
            x[j] = base[j] - h;
            let fm = sde::drift_vec(kernel, &x);
            x[j] = base[j];
            for i in 0..n {
                jac[(i, j)] = ((fp[i] - fm[i]) / (2.0 * h)).re;
            }
        }
        jac
    }

    fn evaluate_identities(&self, kernel: &Kernel) -> IdentityReport {
        let g = self.gamma;
        let mut rep = IdentityReport::default();
        let scale = |m: &DMatrix<f64>| m.amax().max(1.0);
        rep.push("r_symmetric", (&self.r - self.r.transpose()).amax() / scale(&self.r), 1e-12);
        rep.push("t_symmetric", (&self.t - self.t.transpose()).amax() / scale(&self.t), 1e-12);

        let jac = Self::finite_difference_jacobian(kernel, &self.rho);
        rep.push("jacobian", (jac - self.drift_matrix()).amax() / g, 1e-6);

        if !self.trivial {
            let rho = &self.rho;
            let norm = rho.norm();
            let nsq = rho.norm_squared();
            rep.push("eigenrelation", (&self.r * rho - rho * g).norm() / (g * norm), 1e-10);
            rep.push("dark_mode_lv", (&self.l_v * &self.w1 + &self.w1 * (2.0 * g)).norm() / (g * self.w1.norm()), 1e-9);
            let a = self.drift_matrix();
            rep.push("goldstone", (&a * &self.u0).norm() / (g * self.u0.norm()), 1e-9);
            rep.push("dark_mode_full", (&a * &self.u1 + &self.u1 * (2.0 * g)).norm() / (g * self.u1.norm()), 1e-9);
            let q = self.u0.dot(&(&self.d_bar * &self.u0));
            rep.push("goldstone_diffusion", (q + 4.0 * g * nsq).abs() / (g * nsq), 1e-9);
        }
        rep
    }

    /// `A` with the Goldstone direction moved to eigenvalue `-γ`.
    pub fn deflated_drift(&self) -> DMatrix<f64> {
        let mut a = self.drift_matrix();
        if !self.trivial {
            let u = &self.u0;
            let p = u * u.transpose() / u.norm_squared();
            a -= p * self.gamma;
        }
        a
    }

    /// Removes the Goldstone component `u0 (u0ᵀq)/|u0|²`.
    pub fn project(&self, q: &DVector<C64>) -> DVector<C64> {
        if self.trivial {
            return q.clone();
        }
        let u = self.u0.map(|x| C64::new(x, 0.0));
        let coef = u.transpose() * q;
        q - &u * (coef[(0, 0)] / self.u0.norm_squared())
    }

    /// Largest eigenvalue of the deflated drift; errors above `10⁻⁹γ`.
    pub fn check_stability(&self) -> Result<f64> {
        let a = self.deflated_drift();
        let sym = (&a + a.transpose()) * 0.5;
        let n = sym.nrows();
        let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 100 * n.max(10)).ok_or(Error::EigenSolver(n))?;
        let top = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top > 1e-9 * self.gamma {
            return Err(Error::UnstableDrift(top));
        }
        Ok(top)
    }
}

/// Output quadrature vectors of the dark mode, `(X_d, Y_d)`.
///
/// `Y_d = u1ᵀc / (√2|ρ|)` and `X_d = i u0ᵀc / (√2|ρ|)`.
pub fn dark_quadrature_vectors(model: &LinearModel) -> Result<(DVector<C64>, DVector<C64>)> {
    if model.trivial {
        return Err(Error::TrivialState("the dark mode"));
    }
    let scale = std::f64::consts::SQRT_2 * model.rho.norm();
    let x = model.u0.map(|v| C64::new(0.0, v / scale));
    let y = model.u1.map(|v| C64::new(v / scale, 0.0));
    Ok((x, y))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseSpectrum {
    pub omega_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub label: String,
}

/// Closed-form dark-mode spectra `(V_Y, V_X)`: `1 - 1/(1 + (ω/2γ)²)` and `1`.
pub fn analytic_dark_spectra(omega_grid: &[f64], gamma: f64) -> (NoiseSpectrum, NoiseSpectrum) {
    let y = omega_grid
        .iter()
        .map(|w| {
            let x = w / (2.0 * gamma);
            1.0 - 1.0 / (1.0 + x * x)
        })
        .collect();
    (
        NoiseSpectrum {
            omega_grid: omega_grid.to_vec(),
            values: y,
            label: "Y_d".into(),
        },
        NoiseSpectrum {
            omega_grid: omega_grid.to_vec(),
            values: vec![1.0; omega_grid.len()],
            label: "X_d".into(),
        },
    )
}

/// Solves `(zI - A) x = q` for complex `z`.
fn resolvent_solve(a: &DMatrix<f64>, z: C64, q: &DVector<C64>, omega: f64) -> Result<DVector<C64>> {
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let d = if i == j { z } else { C64::new(0.0, 0.0) };
        d - a[(i, j)]
    });
    m.lu().solve(q).ok_or(Error::SingularResolvent(omega))
}

/// Stationary cross-spectrum `∫dτ e^{-iωτ} ⟨Q₁(t) Q₂(t+τ)⟩` of `Q = qᵀc`.
pub fn cross_spectrum(
    a: &DMatrix<f64>,
    d: &DMatrix<f64>,
    q1: &DVector<C64>,
    q2: &DVector<C64>,
    omega: f64,
) -> Result<C64> {
    let at = a.transpose();
    let left = resolvent_solve(&at, C64::new(0.0, omega), q1, omega)?;
    let right = resolvent_solve(&at, C64::new(0.0, -omega), q2, omega)?;
    let dc = d.map(|x| C64::new(x, 0.0));
    Ok((left.transpose() * dc * right)[(0, 0)])
}

/// Output spectrum `V(ω) = 1 + 2γ Re S(ω)` of the quadrature `qᵀc`, with
/// the Goldstone direction deflated.
pub fn numeric_spectrum(model: &LinearModel, q: &DVector<C64>, omega_grid: &[f64], label: &str) -> Result<NoiseSpectrum> {
    if q.len() != 4 * model.dim() {
        return Err(Error::Length {
            what: "quadrature vector".into(),
            expected: 4 * model.dim(),
            found: q.len(),
        });
    }
    model.check_stability()?;
    let a = model.deflated_drift();
    let qp = model.project(q);
    let values = model
        .execution
        .map_slice(omega_grid, |&w| cross_spectrum(&a, &model.d_bar, &qp, &qp, w).map(|s| 1.0 + 2.0 * model.gamma * s.re))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(NoiseSpectrum {
        omega_grid: omega_grid.to_vec(),
        values,
        label: label.to_string(),
    })
}

/// Uniform grid of `n` points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}
