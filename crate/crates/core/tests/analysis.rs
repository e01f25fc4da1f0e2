use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spopo::analysis::{
    dark_quadratures_at, estimate_theta, gauge_theta, homodyne_spectrum, replay, QuadratureOptions, QuadratureSink, Taper,
};
use spopo::linear::linspace;
use spopo::sde::{EnsembleParams, PPState, Trajectory};
use spopo::{Error, Execution, C64};

/// Exact AR(1) sampling of `dx = -λx dt + √(2λc) dW`, whose spectrum is `2cλ/(λ² + ω²)`.
fn ou_series(rng: &mut ChaCha8Rng, len: usize, dt: f64, lambda: f64, c: f64) -> Vec<C64> {
    let a = (-lambda * dt).exp();
    let s = (c * (1.0 - a * a)).sqrt();
    let mut x = c.sqrt() * rng.sample::<f64, _>(StandardNormal);
    (0..len)
        .map(|_| {
            let v = x;
            x = a * x + s * rng.sample::<f64, _>(StandardNormal);
            C64::new(v, 0.0)
        })
        .collect()
}

#[test]
fn homodyne_estimator_recovers_ou_spectrum() {
    let (gamma, lambda, c, dt) = (1.0, 2.0, -0.25, 0.01);
    // A negative `c` mimics a squeezed normally ordered correlation: use i·x.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let series: Vec<Vec<C64>> = (0..400)
        .map(|_| ou_series(&mut rng, 500, dt, lambda, -c).into_iter().map(|z| z * C64::new(0.0, 1.0)).collect())
        .collect();
    let grid = linspace(0.0, 4.0, 21);
    let max_lag = (3.5 / dt) as usize;
    let spec = homodyne_spectrum(&series, gamma, dt, max_lag, &grid, Taper::Rectangular, 20, "ou").unwrap();
    let exact: Vec<f64> = grid.iter().map(|w| 1.0 + 2.0 * gamma * 2.0 * c * lambda / (lambda * lambda + w * w)).collect();
    assert!(spec.coverage(&exact, 3.0) >= 0.9, "{:?} vs {exact:?}", spec.spectrum.values);
    assert!((spec.spectrum.values[0] - exact[0]).abs() < 3.0 * spec.stderr[0]);
}

#[test]
fn homodyne_rejects_short_series() {
    let s = vec![vec![C64::default(); 10]; 4];
    assert!(homodyne_spectrum(&s, 1.0, 0.1, 20, &[0.0], Taper::Hann, 2, "x").is_err());
}

fn near_manifold() -> impl Strategy<Value = (Vec<f64>, Vec<C64>)> {
    (1usize..=3).prop_flat_map(|m| {
        (
            prop::collection::vec(0.2f64..1.5, m),
            prop::collection::vec((-0.05f64..0.05, -0.05f64..0.05), 4 * m),
            0.0f64..std::f64::consts::TAU,
        )
            .prop_map(|(rho, noise, th)| {
                let mut x = PPState::classical(&rho, th).to_vec();
                for (z, (a, b)) in x.iter_mut().zip(noise) {
                    *z += C64::new(a, b);
                }
                (rho, x)
            })
    })
}

fn rotate(x: &[C64], phi: f64) -> Vec<C64> {
    let m = x.len() / 4;
    let e = C64::from_polar(1.0, -phi);
    x.iter()
        .enumerate()
        .map(|(i, z)| if i / m == 0 || i / m == 3 { z * e } else { z * e.conj() })
        .collect()
}

proptest! {
    #[test]
    fn estimators_are_gauge_covariant((rho, x) in near_manifold(), phi in 0.0f64..6.28) {
        let y = rotate(&x, phi);
        let t0 = estimate_theta(&x, &rho).unwrap();
        let t1 = estimate_theta(&y, &rho).unwrap();
        let d = (t1 - t0 - phi).rem_euclid(std::f64::consts::PI);
        prop_assert!(d < 1e-10 || std::f64::consts::PI - d < 1e-10);

        let g0 = gauge_theta(&x, &rho).unwrap();
        let g1 = gauge_theta(&y, &rho).unwrap();
        let (x0, y0) = dark_quadratures_at(&x, &rho, g0);
        let (x1, y1) = dark_quadratures_at(&y, &rho, g1);
        // θ_g is defined modulo π, which flips the sign of both quadratures.
        let same = (x0 - x1).norm() < 1e-12 && (y0 - y1).norm() < 1e-12;
        let flipped = (x0 + x1).norm() < 1e-12 && (y0 + y1).norm() < 1e-12;
        prop_assert!(same || flipped);
    }

    /// The Goldstone estimator removes the `X_d` component exactly.
    #[test]
    fn gauge_estimator_zeroes_x_quadrature((rho, x) in near_manifold()) {
        let g = gauge_theta(&x, &rho).unwrap();
        let (xd, _) = dark_quadratures_at(&x, &rho, g);
        prop_assert!(xd.norm() < 1e-12);
    }
}

#[test]
fn drifting_record_is_non_stationary() {
    let rho = vec![1.0];
    let mut p = EnsembleParams::for_gamma(1.0, 60, 1);
    p.t_max = 6.0;
    p.dt = 0.01;
    p.save_stride = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trajs: Vec<Trajectory> = (0..p.n_traj)
        .map(|index| {
            let mut data = Vec::new();
            for k in 0..p.n_saves() {
                let t = k as f64 * 0.1;
                // A growing displacement along the Y_d direction.
                let y = 0.2 * t + 0.05 * rng.sample::<f64, _>(StandardNormal);
                let h = y / (2.0 * std::f64::consts::SQRT_2);
                let mut x = PPState::classical(&rho, 0.0).to_vec();
                x[0] += h;
                x[1] -= h;
                x[2] += h;
                x[3] -= h;
                data.extend(x);
            }
            Trajectory { index, theta0: 0.0, dim: 1, dt: p.dt, stride: p.save_stride, data }
        })
        .collect();
    let mut sink = QuadratureSink::new(&nalgebra::DVector::from_vec(rho), &p, QuadratureOptions::for_gamma(1.0)).unwrap();
    replay(&trajs, &mut sink, Execution::Sequential).unwrap();
    let r = sink.finish(1.0, &[0.0]);
    assert!(matches!(r, Err(Error::NonStationary { .. })));
}
