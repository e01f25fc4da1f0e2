use nalgebra::DMatrix;
use proptest::prelude::*;

use spopo::kernel::Kernel;
use spopo::sde::{diffusion_factor, diffusion_matrix, drift, NoiseScheme, PPState};
use spopo::{CombConfig, MismatchKind, PumpKind, C64};

fn config(n: usize, width: f64, kappa: f64, sigma: f64, u: f64, v: f64) -> CombConfig {
    CombConfig::new(n, 1.0, kappa, sigma, PumpKind::Gaussian { width }, MismatchKind::Quadratic { u, v, w: 0.5 * v }).unwrap()
}

/// Gain from the definition: `G_ij = f_ij (γσα[i+j] - κ Σ_{n+p=i+j} f_np a_n b_p)`.
fn gain_oracle(cfg: &CombConfig, a: &[C64], b: &[C64]) -> DMatrix<C64> {
    let dim = cfg.dim();
    let n = cfg.n_side as i64;
    let f = cfg.f();
    DMatrix::from_fn(dim, dim, |i, j| {
        let c = i as i64 + j as i64 - 2 * n;
        let mut pair = C64::default();
        for p in 0..dim {
            for q in 0..dim {
                if p as i64 + q as i64 - 2 * n == c {
                    pair += a[p] * b[q] * f[(p, q)];
                }
            }
        }
        (C64::new(cfg.gamma * cfg.sigma * cfg.alpha_at(c), 0.0) - pair * cfg.kappa) * f[(i, j)]
    })
}

fn diffusion_oracle(cfg: &CombConfig, st: &PPState) -> DMatrix<C64> {
    let m = cfg.dim();
    let g = gain_oracle(cfg, &st.s[..m], &st.s[m..]);
    let gp = gain_oracle(cfg, &st.s_plus[..m], &st.s_plus[m..]);
    let mut d = DMatrix::zeros(4 * m, 4 * m);
    for (base, blk) in [(0, &g), (2 * m, &gp)] {
        for i in 0..m {
            for j in 0..m {
                d[(base + i, base + m + j)] = blk[(i, j)];
                d[(base + m + j, base + i)] = blk[(i, j)];
            }
        }
    }
    d
}

fn drift_oracle(cfg: &CombConfig, st: &PPState) -> Vec<C64> {
    let m = cfg.dim();
    let g = gain_oracle(cfg, &st.s[..m], &st.s[m..]);
    let gp = gain_oracle(cfg, &st.s_plus[..m], &st.s_plus[m..]);
    let gamma = cfg.gamma;
    let mut out = vec![C64::default(); 4 * m];
    for i in 0..m {
        let mut a = -st.s[i] * gamma;
        let mut b = -st.s[m + i] * gamma;
        let mut c = -st.s_plus[i] * gamma;
        let mut e = -st.s_plus[m + i] * gamma;
        for j in 0..m {
            a += g[(i, j)] * st.s_plus[m + j];
            b += g[(j, i)] * st.s_plus[j];
            c += gp[(i, j)] * st.s[m + j];
            e += gp[(j, i)] * st.s[j];
        }
        out[i] = a;
        out[m + i] = b;
        out[2 * m + i] = c;
        out[3 * m + i] = e;
    }
    out
}

fn complex_vec(len: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-1.5f64..1.5, -1.5f64..1.5), len).prop_map(|v| v.into_iter().map(|(a, b)| C64::new(a, b)).collect())
}

fn case() -> impl Strategy<Value = (CombConfig, PPState)> {
    (0usize..=3, 0.5f64..3.0, 0.0f64..2.0, 0.0f64..4.0, -0.3f64..0.3, -0.1f64..0.1).prop_flat_map(|(n, w, k, s, u, v)| {
        let cfg = config(n, w, k, s, u, v);
        let m = cfg.dim();
        (Just(cfg), complex_vec(2 * m), complex_vec(2 * m)).prop_map(|(c, s, sp)| (c, PPState { s, s_plus: sp, t: 0.0 }))
    })
}

fn rel_err(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, z| m.max(z.norm()));
    (a - b).iter().fold(0.0f64, |m, z| m.max(z.norm())) / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn block_factor_reproduces_diffusion((cfg, st) in case()) {
        let k = Kernel::new(&cfg);
        let d = diffusion_oracle(&cfg, &st);
        prop_assert!(rel_err(&diffusion_matrix(&k, &st), &d) <= 1e-12);
        let f = diffusion_factor(&k, &st, NoiseScheme::Block).unwrap();
        prop_assert_eq!(f.b.ncols(), 4 * cfg.dim() * cfg.dim());
        prop_assert!(rel_err(&f.product(), &d) <= 1e-10);
    }

    #[test]
    fn minimal_factor_reproduces_diffusion((cfg, st) in case()) {
        let k = Kernel::new(&cfg);
        let d = diffusion_oracle(&cfg, &st);
        let f = diffusion_factor(&k, &st, NoiseScheme::Minimal).unwrap();
        prop_assert_eq!(f.b.ncols(), 2 * cfg.dim());
        prop_assert!(rel_err(&f.product(), &d) <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn drift_matches_definition((cfg, st) in case()) {
        let k = Kernel::new(&cfg);
        let got = drift(&k, &st);
        let want = drift_oracle(&cfg, &st);
        let scale = want.iter().fold(1.0f64, |m, z| m.max(z.norm()));
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).norm() <= 1e-12 * scale);
        }
    }

    /// Rotating `s[±1] → e^{∓iφ} s[±1]` (and `s⁺` oppositely) commutes with the drift.
    #[test]
    fn drift_is_gauge_covariant((cfg, st) in case(), phi in 0.0f64..6.3) {
        let k = Kernel::new(&cfg);
        let m = cfg.dim();
        let rot = |x: &[C64]| -> Vec<C64> {
            let e = C64::from_polar(1.0, -phi);
            x.iter().enumerate().map(|(i, z)| {
                let sector = i / m;
                if sector == 0 || sector == 3 { z * e } else { z * e.conj() }
            }).collect()
        };
        let x = st.to_vec();
        let rx = PPState::from_vec(&rot(&x), 0.0);
        let lhs = drift(&k, &rx);
        let rhs = rot(&drift(&k, &st));
        let scale = rhs.iter().fold(1.0f64, |m, z| m.max(z.norm()));
        for (a, b) in lhs.iter().zip(&rhs) {
            prop_assert!((a - b).norm() <= 1e-12 * scale);
        }
    }
}
