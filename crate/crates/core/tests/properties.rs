//! Randomized invariants, 128 cases each from a fixed seed.

use std::f64::consts::PI;
use std::sync::OnceLock;

use jtma::basis::{make_pixel_basis, superposition_hologram, Layout};
use jtma::fit::{fit_full, FitReport};
use jtma::metrics::{entanglement_metrics, random_unitary};
use jtma::model::{jtma_collected, jtma_general, jtma_ideal};
use jtma::quadrature::{integrate_nd, Axis};
use jtma::scan::{expected_probabilities, simulate_scan, Noise, ScanData, ScanGrid};
use jtma::{Hologram, JtmaParams, Model, Primitive, QuadratureSpec, ScaledMomentumConstants, Vec2};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config() -> Config {
    Config {
        cases: 128,
        rng_seed: RngSeed::Fixed(0x6a74_6d61),
        failure_persistence: None,
        ..Config::default()
    }
}

fn params() -> impl Strategy<Value = JtmaParams> {
    (1.0..30.0f64, 40.0..400.0f64, 30.0..200.0f64).prop_map(|(sp, ss, sc)| JtmaParams::new(sp, ss, sc).unwrap())
}

fn momentum() -> impl Strategy<Value = Vec2> {
    [-300.0..300.0f64, -300.0..300.0f64]
}

fn rotate(q: Vec2, t: f64) -> Vec2 {
    let (s, c) = t.sin_cos();
    [c * q[0] - s * q[1], s * q[0] + c * q[1]]
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-300
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn amplitude_swap(p in params(), qs in momentum(), qi in momentum()) {
        prop_assert!(close(jtma_ideal(qs, qi, &p), jtma_ideal(qi, qs, &p), 1e-12));
        prop_assert!(close(jtma_collected(qs, qi, &p), jtma_collected(qi, qs, &p), 1e-12));
        prop_assert!(close(Model::Cl.kernel(qs, qi, &p), Model::Cl.kernel(qi, qs, &p), 1e-12));
    }

    #[test]
    fn amplitude_rotation(p in params(), qs in momentum(), qi in momentum(), t in 0.0..2.0 * PI) {
        let (rs, ri) = (rotate(qs, t), rotate(qi, t));
        prop_assert!(close(jtma_ideal(qs, qi, &p), jtma_ideal(rs, ri, &p), 1e-9));
        prop_assert!(close(jtma_collected(qs, qi, &p), jtma_collected(rs, ri, &p), 1e-9));
        prop_assert!(close(Model::Cl.kernel(qs, qi, &p), Model::Cl.kernel(rs, ri, &p), 1e-9));
    }

    #[test]
    fn amplitude_inversion(p in params(), qs in momentum(), qi in momentum()) {
        let (ns, ni) = ([-qs[0], -qs[1]], [-qi[0], -qi[1]]);
        prop_assert!(close(jtma_ideal(qs, qi, &p), jtma_ideal(ns, ni, &p), 1e-12));
        prop_assert!(close(jtma_collected(qs, qi, &p), jtma_collected(ns, ni, &p), 1e-12));
    }

    #[test]
    fn general_reduces_to_ideal(p in params(), qs in momentum(), qi in momentum()) {
        let k = ScaledMomentumConstants::new(1.0, 1.0).unwrap();
        prop_assert!(close(jtma_general(qs, qi, &p, &k), jtma_ideal(qs, qi, &p), 1e-12));
        let env = (-(qs[0] * qs[0] + qs[1] * qs[1] + qi[0] * qi[0] + qi[1] * qi[1]) / (p.sigma_c * p.sigma_c)).exp();
        prop_assert!(close(jtma_collected(qs, qi, &p), jtma_ideal(qs, qi, &p) * env, 1e-12));
        prop_assert!(close(Model::General(k).kernel(qs, qi, &p), jtma_collected(qs, qi, &p), 1e-12));
    }

    #[test]
    fn quadrature_linearity(
        alpha in -5.0..5.0f64,
        beta in -5.0..5.0f64,
        w1 in 0.3..3.0f64,
        w2 in 0.3..3.0f64,
        shift in -1.0..1.0f64,
    ) {
        let spec = QuadratureSpec::with_order(16);
        let dom = [Axis::symmetric(6.0), Axis::symmetric(6.0)];
        let f = move |x: &[f64]| (-(x[0] - shift).powi(2) / w1 - x[1] * x[1]).exp();
        let g = move |x: &[f64]| (1.0 + x[0] * x[1]) * (-(x[0] * x[0] + x[1] * x[1]) / w2).exp();
        let i_f = integrate_nd(f, &dom, &spec).unwrap();
        let i_g = integrate_nd(g, &dom, &spec).unwrap();
        let i_h = integrate_nd(move |x: &[f64]| alpha * f(x) + beta * g(x), &dom, &spec).unwrap();
        let combo = alpha * i_f.value + beta * i_g.value;
        let err = alpha.abs() * i_f.error + beta.abs() * i_g.error + i_h.error;
        prop_assert!((i_h.value - combo).abs() <= err + 1e-12 * (alpha.abs() * i_f.value.abs() + beta.abs() * i_g.value.abs()));
    }

    #[test]
    fn quadrature_odd_null(w in 0.3..4.0f64, c in -2.0..2.0f64, k in 1usize..4) {
        let spec = QuadratureSpec::with_order(16);
        let dom = [Axis::symmetric(5.0), Axis::symmetric(5.0)];
        let odd = move |x: &[f64]| x[0].powi(2 * k as i32 - 1) * (1.0 + c * x[1] * x[1]) * (-(x[0] * x[0] + x[1] * x[1]) / w).exp();
        let even = move |x: &[f64]| odd(x).abs();
        let i_odd = integrate_nd(odd, &dom, &spec).unwrap().value;
        let i_even = integrate_nd(even, &dom, &spec).unwrap().value;
        prop_assert!(i_odd.abs() < 1e-12 * i_even, "odd {i_odd}, even {i_even}");
    }

    #[test]
    fn fit_scale_equivariance(k in 2u64..50) {
        let (data, base) = base_fit();
        let r = fit_full(&data.scaled(k)).unwrap();
        prop_assert!(close(r.sigma_c, base.sigma_c, 1e-4), "{} vs {}", r.sigma_c, base.sigma_c);
        prop_assert!(close(r.sigma_p, base.sigma_p, 1e-3), "{} vs {}", r.sigma_p, base.sigma_p);
        prop_assert!((r.origin_s - base.origin_s).abs() < 1e-3);
        prop_assert!((r.origin_i - base.origin_i).abs() < 1e-3);
        prop_assert!(close(r.scale, k as f64 * base.scale, 1e-4));
    }

    #[test]
    fn fit_translation_equivariance(delta in -25.0..25.0f64) {
        let (data, base) = base_fit();
        let moved = ScanData { grid: data.grid.shifted(delta), ..data.clone() };
        let r = fit_full(&moved).unwrap();
        prop_assert!(close(r.sigma_c, base.sigma_c, 1e-4), "{} vs {}", r.sigma_c, base.sigma_c);
        prop_assert!(close(r.sigma_p, base.sigma_p, 1e-3), "{} vs {}", r.sigma_p, base.sigma_p);
        prop_assert!((r.origin_s - base.origin_s - delta).abs() < 1e-3);
        prop_assert!((r.origin_i - base.origin_i - delta).abs() < 1e-3);
    }

    #[test]
    fn metrics_unitary_invariance(d in 2usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_unitary(d, &mut rng) * DMatrix::from_fn(d, d, |i, j| {
            Complex64::new(if i == j { 1.0 + i as f64 } else { 0.0 }, 0.0)
        }) * random_unitary(d, &mut rng);
        let (u, v) = (random_unitary(d, &mut rng), random_unitary(d, &mut rng));
        let m0 = entanglement_metrics(&t).unwrap();
        let m1 = entanglement_metrics(&(&u * &t * &v)).unwrap();
        prop_assert!(close(m0.schmidt_number, m1.schmidt_number, 1e-9));
        prop_assert!((m0.eof_ebits - m1.eof_ebits).abs() < 1e-9);
        for (a, b) in m0.schmidt_coefficients.iter().zip(&m1.schmidt_coefficients) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn hologram_gain_bound(
        d in 1usize..40,
        rings in any::<bool>(),
        sp in 2.0..15.0f64,
        sc in 60.0..150.0f64,
        seed in any::<u64>(),
    ) {
        let p = JtmaParams::cl(sp, sc).unwrap();
        let layout = if rings { Layout::Rings } else { Layout::Hex };
        let basis = make_pixel_basis(d, layout, &p, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<Complex64> = (0..d)
            .map(|_| Complex64::new(rand::Rng::random_range(&mut rng, -1.0..1.0), rand::Rng::random_range(&mut rng, -1.0..1.0)))
            .collect();
        let n = raw.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let v: Vec<Complex64> = raw.iter().map(|z| z / n).collect();
        let h = superposition_hologram(&v, &basis).unwrap();
        let r = 1.05 * basis.max_radius;
        let probes = (0..81).flat_map(|i| (0..81).map(move |j| [-r + 2.0 * r * i as f64 / 80.0, -r + 2.0 * r * j as f64 / 80.0]));
        for q in probes.chain(basis.pixels.iter().map(|px| px.center)) {
            prop_assert!(h.eval(q).norm() <= 1.0 + 1e-12);
        }
        // Arbitrary primitive sets are either rejected or bounded.
        let prims: Vec<Primitive> = basis.pixels.iter().map(|px| Primitive::Disk { center: px.center, radius: 1.5 * px.radius }).collect();
        if let Ok(h) = Hologram::new(prims, v.clone(), 1.0) {
            for q in basis.pixels.iter().map(|px| px.center) {
                prop_assert!(h.eval(q).norm() <= 1.0 + 1e-12);
            }
        }
        prop_assert!(Hologram::pi_step(basis.pixels[0].center[0]).eval([0.0, 0.0]).norm() <= 1.0);
    }
}

fn base_fit() -> &'static (ScanData, FitReport) {
    static BASE: OnceLock<(ScanData, FitReport)> = OnceLock::new();
    BASE.get_or_init(|| {
        let p = JtmaParams::cl(7.45, 103.2).unwrap().with_origins(4.0, -3.0);
        let spec = QuadratureSpec::default();
        let grid = ScanGrid::uniform(21, 2.0 * p.sigma_c).unwrap();
        let scale = 1e4 / expected_probabilities(&grid, &p, &Model::Cl, &spec).unwrap().max();
        let data = simulate_scan(&grid, &p, &Model::Cl, &spec, Noise::Poisson { seed: 11 }, scale).unwrap();
        let r = fit_full(&data).unwrap();
        (data, r)
    })
}
