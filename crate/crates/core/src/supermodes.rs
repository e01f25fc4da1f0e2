//! Eigenanalysis of the coupling matrix: supermodes, threshold and the
//! below-threshold squeezer picture.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::comb::{max_asymmetry, CombConfig};
use crate::error::{Error, Result};
use crate::linear::{numeric_spectrum, LinearModel, NoiseSpectrum};
use crate::steady::SteadyState;
use crate::C64;

/// Relative gap below which two eigenvalues are treated as one eigenspace.
const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupermodeBasis {
    /// Sorted by descending `|Λ|`; equal magnitudes put the positive one first.
    pub eigenvalues: DVector<f64>,
    /// Column `k` is the supermode `v_k`.
    pub eigenvectors: DMatrix<f64>,
    /// `1/Λ₀` if `Λ₀ > 0`, infinite otherwise.
    pub threshold_sigma: f64,
}

impl SupermodeBasis {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mode(&self, k: usize) -> DVector<f64> {
        self.eigenvectors.column(k).into_owned()
    }

    /// Largest positive eigenvalue (zero if none).
    pub fn max_positive(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(0.0, f64::max)
    }

    /// `Σ_k Λ_k v_k v_kᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        v * DMatrix::from_diagonal(&self.eigenvalues) * v.transpose()
    }
}

/// Full real eigendecomposition of a symmetric coupling matrix.
pub fn decompose(l: &DMatrix<f64>) -> Result<SupermodeBasis> {
    let dim = l.nrows();
    if l.ncols() != dim {
        return Err(Error::Config(format!("coupling matrix is {}x{}", l.nrows(), l.ncols())));
    }
    let scale = l.amax();
    let asym = max_asymmetry(l);
    if asym > 1e-12 * scale.max(1.0) {
        return Err(Error::AsymmetricCoupling(asym));
    }
    if dim == 0 {
        return Err(Error::Config("empty coupling matrix".into()));
    }
    if scale == 0.0 {
        return Ok(SupermodeBasis {
            eigenvalues: DVector::zeros(dim),
            eigenvectors: DMatrix::identity(dim, dim),
            threshold_sigma: f64::INFINITY,
        });
    }

    let eig = SymmetricEigen::try_new(l.clone(), f64::EPSILON, 100 * dim.max(10))
        .ok_or(Error::EigenSolver(dim))?;

    let ev = &eig.eigenvalues;
    let spread = ev.amax();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| ev[b].abs().total_cmp(&ev[a].abs()));
    // Within runs of equal magnitude the positive eigenvalues come first.
    let mut start = 0;
    while start < dim {
        let mut end = start + 1;
        while end < dim && (ev[order[end - 1]].abs() - ev[order[end]].abs()) <= DEGENERACY_TOL * spread {
            end += 1;
        }
        order[start..end].sort_by(|&a, &b| ev[b].total_cmp(&ev[a]));
        start = end;
    }
    let values: Vec<f64> = order.iter().map(|&i| ev[i]).collect();
    let mut vectors = DMatrix::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order[c])]);

    let mut start = 0;
    while start < dim {
        let mut end = start + 1;
        while end < dim && (values[end] - values[start]).abs() <= DEGENERACY_TOL * spread {
            end += 1;
        }
        if end - start > 1 {
            canonical_cluster(&mut vectors, start, end);
        }
        start = end;
    }
    for c in 0..dim {
        fix_sign(&mut vectors, c);
    }

    let lead = values[0];
    Ok(SupermodeBasis {
        eigenvalues: DVector::from_vec(values),
        eigenvectors: vectors,
        threshold_sigma: if lead > 0.0 { 1.0 / lead } else { f64::INFINITY },
    })
}

/// Replace the columns `start..end` spanning a degenerate eigenspace by the
/// Gram-Schmidt orthonormalisation of the projected unit vectors `P e_i`,
/// taken in index order. The result depends only on the eigenspace.
fn canonical_cluster(vectors: &mut DMatrix<f64>, start: usize, end: usize) {
    let dim = vectors.nrows();
    let block = vectors.columns(start, end - start).into_owned();
    let proj = &block * block.transpose();
    let mut chosen: Vec<DVector<f64>> = Vec::with_capacity(end - start);
    for i in 0..dim {
        if chosen.len() == end - start {
            break;
        }
        let mut x = proj.column(i).into_owned();
        for _ in 0..2 {
            for c in &chosen {
                let d = c.dot(&x);
                x.axpy(-d, c, 1.0);
            }
        }
        let norm = x.norm();
        if norm > 1e-6 {
            chosen.push(x / norm);
        }
    }
    // The projector has rank end - start, so unit vectors always suffice.
    for (k, c) in chosen.into_iter().enumerate() {
        vectors.set_column(start + k, &c);
    }
}

fn fix_sign(vectors: &mut DMatrix<f64>, col: usize) {
    let first = vectors.column(col).iter().copied().find(|v| v.abs() > 1e-10);
    if matches!(first, Some(v) if v < 0.0) {
        vectors.column_mut(col).neg_mut();
    }
}

/// Output spectra of both quadratures of supermode `k` below threshold.
#[derive(Clone, Debug, Serialize)]
pub struct SqueezerSpectra {
    pub k: usize,
    pub eigenvalue: f64,
    /// The quadrature below vacuum (`Y` for `Λ_k > 0`, `X` for `Λ_k < 0`).
    pub squeezed: NoiseSpectrum,
    pub antisqueezed: NoiseSpectrum,
}

/// Quadrature vectors `(X_k, Y_k)` of the horizontal supermode `k` in the
/// fluctuation ordering `(s₊₁, s₋₁, s⁺₊₁, s⁺₋₁)`:
/// `S_k = Σ_m v_km (s_m,+1 + s_m,-1)/√2`, `X = S + S⁺`, `Y = i(S⁺ - S)`.
pub fn supermode_quadratures(v: &DVector<f64>) -> (DVector<C64>, DVector<C64>) {
    let dim = v.len();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let x = DVector::from_fn(4 * dim, |i, _| C64::new(v[i % dim] * h, 0.0));
    let y = DVector::from_fn(4 * dim, |i, _| {
        let sign = if i < 2 * dim { -1.0 } else { 1.0 };
        C64::new(0.0, sign * v[i % dim] * h)
    });
    (x, y)
}

/// Spectra of supermode `k` from the linearised model around `ρ = 0`.
pub fn below_threshold_spectrum(
    basis: &SupermodeBasis,
    config: &CombConfig,
    k: usize,
    omega_grid: &[f64],
) -> Result<SqueezerSpectra> {
    if k >= basis.dim() {
        return Err(Error::Config(format!("supermode index {k} out of range (M = {})", basis.dim())));
    }
    let spread = basis.eigenvalues.amax();
    if config.sigma >= basis.threshold_sigma || config.sigma * spread >= 1.0 {
        return Err(Error::AboveThreshold {
            sigma: config.sigma,
            threshold: basis.threshold_sigma,
        });
    }
    let model = LinearModel::build(config, &SteadyState::trivial(config.dim()))?;
    let (qx, qy) = supermode_quadratures(&basis.mode(k));
    let lambda = basis.eigenvalues[k];
    let x = numeric_spectrum(&model, &qx, omega_grid, &format!("X_{k}"))?;
    let y = numeric_spectrum(&model, &qy, omega_grid, &format!("Y_{k}"))?;
    let (squeezed, antisqueezed) = if lambda >= 0.0 { (y, x) } else { (x, y) };
    Ok(SqueezerSpectra {
        k,
        eigenvalue: lambda,
        squeezed,
        antisqueezed,
    })
}
