//! Comb geometry, pump spectrum, phase-mismatch factors and the coupling
//! matrix `L[m,q] = f[m,q] α[m+q]`.
//!
//! Signal modes are indexed by `m ∈ {-N, ..., N}` (`M = 2N + 1` lines).
//! Pump lines outside that window carry no amplitude: `α[c] = 0` for
//! `|c| > N`.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_numeric_csv;
use crate::steady::FieldGeometry;

/// Largest supported `n_side`; the block noise matrix grows as `M²`.
pub const MAX_N_SIDE: usize = 256;

const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PumpKind {
    /// Single pump line, `α[m] = δ[m,0]`.
    Monochromatic,
    /// `α[m] ∝ exp(-m² / 2w²)`; `width` in units of the free spectral range.
    Gaussian { width: f64 },
    /// `α[m] ∝ sech²(m / w)`.
    Sech2 { width: f64 },
    /// Amplitudes read from a CSV file with exactly `M` real entries.
    Explicit { file: PathBuf },
    /// Amplitudes given inline.
    Values { alpha: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MismatchKind {
    /// `f ≡ 1`.
    Perfect,
    /// Second-order expansion of the wavenumber mismatch:
    /// `φ = u(m+q) + v(m+q)² - w(m² + q²)`, `f = sinc φ`.
    Quadratic { u: f64, v: f64, w: f64 },
    /// `M×M` matrix from a row-major CSV file without header.
    Explicit { file: PathBuf },
    /// `M×M` matrix given inline, row-major.
    Values { f: Vec<Vec<f64>> },
}

impl Default for MismatchKind {
    fn default() -> Self {
        MismatchKind::Perfect
    }
}

/// Normalised real pump amplitudes `α[m]`, `m = -N..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct PumpSpectrum {
    pub alpha: DVector<f64>,
    pub kind: PumpKind,
}

impl PumpSpectrum {
    pub fn build(kind: &PumpKind, n_side: usize) -> Result<Self> {
        let dim = 2 * n_side + 1;
        let raw: Vec<f64> = match kind {
            PumpKind::Monochromatic => modes(n_side).map(|m| if m == 0 { 1.0 } else { 0.0 }).collect(),
            PumpKind::Gaussian { width } => {
                check_width(*width)?;
                modes(n_side)
                    .map(|m| (-(m * m) as f64 / (2.0 * width * width)).exp())
                    .collect()
            }
            PumpKind::Sech2 { width } => {
                check_width(*width)?;
                modes(n_side)
                    .map(|m| {
                        let c = (m as f64 / width).cosh();
                        1.0 / (c * c)
                    })
                    .collect()
            }
            PumpKind::Explicit { file } => {
                let rows = read_numeric_csv(file, "pump amplitudes")?;
                rows.into_iter().flatten().collect()
            }
            PumpKind::Values { alpha } => alpha.clone(),
        };
        if raw.len() != dim {
            return Err(Error::Length {
                what: "pump amplitudes".into(),
                expected: dim,
                found: raw.len(),
            });
        }
        if raw.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("pump amplitudes must be finite".into()));
        }
        let norm = raw.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroPump);
        }
        let alpha = DVector::from_iterator(dim, raw.into_iter().map(|a| a / norm));
        debug_assert!((alpha.norm_squared() - 1.0).abs() <= NORMALIZATION_TOL);
        Ok(PumpSpectrum {
            alpha,
            kind: kind.clone(),
        })
    }
}

fn check_width(width: f64) -> Result<()> {
    if width > 0.0 && !width.is_nan() {
        Ok(())
    } else {
        Err(Error::Config(format!("pump width must be > 0, got {width}")))
    }
}

/// Phase-mismatch factors `f[m,q]`, symmetric with `|f| ≤ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MismatchModel {
    pub kind: MismatchKind,
    pub values: DMatrix<f64>,
}

impl MismatchModel {
    pub fn build(kind: &MismatchKind, n_side: usize) -> Result<Self> {
        let dim = 2 * n_side + 1;
        let values = match kind {
            MismatchKind::Perfect => DMatrix::from_element(dim, dim, 1.0),
            MismatchKind::Quadratic { u, v, w } => {
                if !(u.is_finite() && v.is_finite() && w.is_finite()) {
                    return Err(Error::Config("mismatch coefficients must be finite".into()));
                }
                let n = n_side as i64;
                DMatrix::from_fn(dim, dim, |i, j| {
                    let m = i as i64 - n;
                    let q = j as i64 - n;
                    let s = (m + q) as f64;
                    let phi = u * s + v * s * s - w * ((m * m + q * q) as f64);
                    sinc(phi)
                })
            }
            MismatchKind::Explicit { file } => {
                let rows = read_numeric_csv(file, "mismatch matrix")?;
                matrix_from_rows(rows, dim)?
            }
            MismatchKind::Values { f } => matrix_from_rows(f.clone(), dim)?,
        };
        let asym = max_asymmetry(&values);
        if asym > 1e-12 {
            return Err(Error::AsymmetricMismatch(asym));
        }
        if values.iter().any(|f| !f.is_finite() || f.abs() > 1.0 + 1e-12) {
            return Err(Error::Config("mismatch factors must satisfy |f| <= 1".into()));
        }
        // Explicit input may be symmetric only to rounding; make it exact.
        let values = (&values + values.transpose()) * 0.5;
        Ok(MismatchModel {
            kind: kind.clone(),
            values,
        })
    }
}

fn matrix_from_rows(rows: Vec<Vec<f64>>, dim: usize) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Length {
            what: "mismatch matrix".into(),
            expected: dim * dim,
            found: rows.iter().map(Vec::len).sum(),
        });
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

/// `sin φ / φ` with `sinc 0 = 1`.
pub fn sinc(phi: f64) -> f64 {
    if phi.abs() < 1e-4 {
        let p2 = phi * phi;
        1.0 - p2 / 6.0 + p2 * p2 / 120.0
    } else {
        phi.sin() / phi
    }
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

fn modes(n_side: usize) -> impl Iterator<Item = i64> {
    let n = n_side as i64;
    -n..=n
}

/// Configuration as it appears in the JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombParams {
    pub n_side: usize,
    pub gamma: f64,
    pub kappa: f64,
    pub sigma: f64,
    pub pump: PumpKind,
    #[serde(default)]
    pub mismatch: MismatchKind,
    /// Display-only scales used when sampling the emitted field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldGeometry>,
}

impl CombParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_side > MAX_N_SIDE {
            return Err(Error::Config(format!(
                "n_side = {} exceeds the supported maximum {MAX_N_SIDE}",
                self.n_side
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Builds the validated configuration. Relative file paths are resolved
    /// against `base_dir`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<CombConfig> {
        self.validate()?;
        let resolve = |p: &Path| match base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        };
        let pump_kind = match &self.pump {
            PumpKind::Explicit { file } => PumpKind::Explicit { file: resolve(file) },
            other => other.clone(),
        };
        let mismatch_kind = match &self.mismatch {
            MismatchKind::Explicit { file } => MismatchKind::Explicit { file: resolve(file) },
            other => other.clone(),
        };
        let pump = PumpSpectrum::build(&pump_kind, self.n_side)?;
        let mismatch = MismatchModel::build(&mismatch_kind, self.n_side)?;
        Ok(CombConfig {
            params: self.clone(),
            n_side: self.n_side,
            gamma: self.gamma,
            kappa: self.kappa,
            sigma: self.sigma,
            pump,
            mismatch,
        })
    }
}

/// Validated, immutable model configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct CombConfig {
    /// Snapshot of the parameters this configuration was built from.
    pub params: CombParams,
    pub n_side: usize,
    pub gamma: f64,
    pub kappa: f64,
    pub sigma: f64,
    pub pump: PumpSpectrum,
    pub mismatch: MismatchModel,
}

impl CombConfig {
    /// Convenience constructor for inline pump and mismatch kinds.
    pub fn new(
        n_side: usize,
        gamma: f64,
        kappa: f64,
        sigma: f64,
        pump: PumpKind,
        mismatch: MismatchKind,
    ) -> Result<Self> {
        CombParams {
            n_side,
            gamma,
            kappa,
            sigma,
            pump,
            mismatch,
            field: None,
        }
        .build(None)
    }

    /// Number of signal lines `M = 2N + 1`.
    pub fn dim(&self) -> usize {
        2 * self.n_side + 1
    }

    pub fn mode_numbers(&self) -> impl Iterator<Item = i64> {
        modes(self.n_side)
    }

    /// Pump amplitude of line `c`, zero outside `-N..=N`.
    pub fn alpha_at(&self, c: i64) -> f64 {
        let n = self.n_side as i64;
        if c.abs() > n {
            0.0
        } else {
            self.pump.alpha[(c + n) as usize]
        }
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.mismatch.values
    }

    /// Same configuration at a different pump level.
    pub fn with_sigma(&self, sigma: f64) -> Self {
        let mut out = self.clone();
        out.sigma = sigma;
        out.params.sigma = sigma;
        out
    }

    /// Same configuration with different loss rates.
    pub fn with_rates(&self, gamma: f64, kappa: f64) -> Self {
        let mut out = self.clone();
        out.gamma = gamma;
        out.kappa = kappa;
        out.params.gamma = gamma;
        out.params.kappa = kappa;
        out
    }

    /// The symmetric coupling matrix `L[m,q] = f[m,q] α[m+q]`.
    pub fn coupling_matrix(&self) -> DMatrix<f64> {
        let n = self.n_side as i64;
        let dim = self.dim();
        let mut l = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let c = (i as i64 - n) + (j as i64 - n);
                let v = self.mismatch.values[(i, j)] * self.alpha_at(c);
                l[(i, j)] = v;
                l[(j, i)] = v;
            }
        }
        l
    }
}
