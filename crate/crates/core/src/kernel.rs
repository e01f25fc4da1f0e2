//! The cubic parametric nonlinearity shared by the classical, linearised
//! and stochastic equations.
//!
//! Everything reduces to the pair sums `P[c] = Σ_{n+p=c} f[n,p] a[n] b[p]`
//! (`c ∈ -2N..=2N`) and the pump-dressed gain
//! `G[m,q] = f[m,q] (γσ α[m+q] - κ P[m+q])`. With `a = s₊₁`, `b = s₋₁` the
//! gain is the diffusion block of the positive-P equations and the drift is
//! `A[m,l] = -γ s[m,l] + Σ_q G[m,q] s⁺[q,-l]`; on the real classical state
//! it is the matrix `R` whose eigenvector `ρ` has eigenvalue `γ`.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector, Scalar};

use crate::comb::CombConfig;

/// Field amplitude type: `f64` for classical states, `C64` for positive-P.
pub trait Amp:
    Scalar + Copy + Default + FromUnit + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Mul<f64, Output = Self>
{
}

impl<T> Amp for T where
    T: Scalar + Copy + Default + FromUnit + Add<Output = T> + Sub<Output = T> + Mul<Output = T> + Mul<f64, Output = T>
{
}

#[derive(Clone, Debug)]
pub struct Kernel {
    pub n_side: usize,
    pub dim: usize,
    pub gamma: f64,
    pub kappa: f64,
    pub sigma: f64,
    /// Row-major copy of `f`.
    f: Vec<f64>,
    /// `γσ α[c]` for `c = -2N..=2N`, zero outside the pump window.
    pump_gain: Vec<f64>,
}

impl Kernel {
    pub fn new(config: &CombConfig) -> Self {
        let dim = config.dim();
        let n = config.n_side as i64;
        let f = (0..dim * dim).map(|k| config.f()[(k / dim, k % dim)]).collect();
        let pump_gain = (-2 * n..=2 * n)
            .map(|c| config.gamma * config.sigma * config.alpha_at(c))
            .collect();
        Kernel {
            n_side: config.n_side,
            dim,
            gamma: config.gamma,
            kappa: config.kappa,
            sigma: config.sigma,
            f,
            pump_gain,
        }
    }

    #[inline]
    pub fn f(&self, i: usize, j: usize) -> f64 {
        self.f[i * self.dim + j]
    }

    /// Number of pump lines reachable by a signal pair, `4N + 1`.
    pub fn n_pairs(&self) -> usize {
        2 * self.dim - 1
    }

    /// `P[c] = Σ_{n+p=c} f[n,p] a[n] b[p]`, stored at index `c + 2N`.
    pub fn pair_sums_into<T: Amp>(&self, a: &[T], b: &[T], out: &mut [T]) {
        debug_assert_eq!(out.len(), self.n_pairs());
        out.iter_mut().for_each(|x| *x = T::default());
        for i in 0..self.dim {
            let ai = a[i];
            let row = &self.f[i * self.dim..(i + 1) * self.dim];
            for (j, fij) in row.iter().enumerate() {
                out[i + j] = out[i + j] + ai * b[j] * *fij;
            }
        }
    }

    pub fn pair_sums<T: Amp>(&self, a: &[T], b: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); self.n_pairs()];
        self.pair_sums_into(a, b, &mut out);
        out
    }

    /// Gain entry `f[i,j] (γσ α[i+j] - κ P[i+j])` in array indices.
    #[inline]
    pub fn gain<T: Amp>(&self, i: usize, j: usize, pairs: &[T]) -> T {
        let c = i + j;
        (pairs[c] * (-self.kappa) + T::from_unit() * self.pump_gain[c]) * self.f(i, j)
    }

    pub fn gain_matrix<T: Amp>(&self, pairs: &[T]) -> DMatrix<T> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.gain(i, j, pairs))
    }

    /// `y = G x` without materialising `G`.
    pub fn apply_gain<T: Amp>(&self, pairs: &[T], x: &[T], y: &mut [T]) {
        for i in 0..self.dim {
            let mut acc = T::default();
            for j in 0..self.dim {
                acc = acc + self.gain(i, j, pairs) * x[j];
            }
            y[i] = acc;
        }
    }

    /// The matrix `R(ρ)` of a real classical state.
    pub fn r_matrix(&self, rho: &DVector<f64>) -> DMatrix<f64> {
        let pairs = self.pair_sums(rho.as_slice(), rho.as_slice());
        self.gain_matrix(&pairs)
    }

    /// `T[m,n] = -κ Σ_q f[m,q] f[n,m+q-n] ρ[q] ρ[m+q-n]`: derivative of the
    /// cubic drift with respect to same-OAM amplitudes.
    pub fn t_matrix(&self, rho: &DVector<f64>) -> DMatrix<f64> {
        let dim = self.dim as i64;
        DMatrix::from_fn(self.dim, self.dim, |m, n| {
            let (mi, ni) = (m as i64, n as i64);
            let mut acc = 0.0;
            for q in 0..dim {
                let p = mi + q - ni;
                if (0..dim).contains(&p) {
                    let (q, p) = (q as usize, p as usize);
                    acc += self.f(m, q) * self.f(n, p) * rho[q] * rho[p];
                }
            }
            -self.kappa * acc
        })
    }

    /// Classical drift `R(ρ)ρ - γρ` of the phase-locked real amplitudes.
    pub fn classical_drift(&self, rho: &DVector<f64>) -> DVector<f64> {
        let pairs = self.pair_sums(rho.as_slice(), rho.as_slice());
        let mut y = vec![0.0; self.dim];
        self.apply_gain(&pairs, rho.as_slice(), &mut y);
        DVector::from_iterator(self.dim, y.iter().zip(rho.iter()).map(|(g, r)| g - self.gamma * r))
    }
}

/// Multiplicative unit for [`Amp`] types.
pub trait FromUnit {
    fn from_unit() -> Self;
}

impl FromUnit for f64 {
    fn from_unit() -> Self {
        1.0
    }
}

impl FromUnit for crate::C64 {
    fn from_unit() -> Self {
        crate::C64::new(1.0, 0.0)
    }
}
