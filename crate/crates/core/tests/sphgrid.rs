use num_complex::Complex64;
use proptest::prelude::*;

use smartscatter_core::geom;
use smartscatter_core::specfun::{sph_harm, ModeIndex};
use smartscatter_core::sphgrid::{synthesize, BallGrid, DirectionGrid, SHCoefficients};

type C64 = Complex64;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

#[test]
fn direction_grid_integrates_harmonics() {
    let grid = DirectionGrid::new(8);
    assert!((grid.weights.iter().sum::<f64>() - FOUR_PI).abs() < 1e-12);
    assert!(grid.nodes.iter().all(|n| (geom::norm(*n) - 1.0).abs() < 1e-12));
    let y21: Vec<C64> = grid.nodes.iter().map(|d| sph_harm(ModeIndex::new(2, 1).unwrap(), *d).unwrap()).collect();
    let sq: Vec<C64> = y21.iter().map(|y| C64::new(y.norm_sqr(), 0.0)).collect();
    assert!((grid.integrate(&sq) - 1.0).norm() < 1e-12);
    let y30: Vec<C64> = grid.nodes.iter().map(|d| sph_harm(ModeIndex::new(3, 0).unwrap(), *d).unwrap()).collect();
    assert!(grid.integrate(&y30).norm() < 1e-12);
}

#[test]
fn constant_function_analysis() {
    let grid = DirectionGrid::new(6);
    let c = grid.analyze(&vec![C64::new(1.0, 0.0); grid.len()], 6).unwrap();
    assert!((c.get(0, 0) - FOUR_PI.sqrt()).norm() < 1e-12);
    assert!(c.coeffs[1..].iter().all(|v| v.norm() < 1e-12));
}

#[test]
fn single_mode_analysis_negative_order() {
    let grid = DirectionGrid::new(5);
    let samples: Vec<C64> = grid.nodes.iter().map(|d| sph_harm(ModeIndex::new(2, -1).unwrap(), *d).unwrap()).collect();
    let c = grid.analyze(&samples, 5).unwrap();
    for (i, v) in c.coeffs.iter().enumerate() {
        let expected = if i == ModeIndex::new(2, -1).unwrap().flat() { 1.0 } else { 0.0 };
        assert!((v - expected).norm() < 1e-12);
    }
}

#[test]
fn ball_grid_volume_and_moments() {
    let b = 1.3;
    let grid = BallGrid::new(b, 16, 8).unwrap();
    let vol = 4.0 / 3.0 * std::f64::consts::PI * b.powi(3);
    assert!((grid.weights.iter().sum::<f64>() - vol).abs() < 1e-8 * vol);
    assert!(grid.nodes.iter().all(|x| geom::norm(*x) <= b));
    let r2: Vec<C64> = grid.nodes.iter().map(|x| C64::new(geom::dot(*x, *x), 0.0)).collect();
    let m = 4.0 * std::f64::consts::PI / 5.0 * b.powi(5);
    assert!((grid.integrate(&r2).re - m).abs() < 1e-8 * m);
}

#[test]
fn ball_grid_radial_polynomials_exact() {
    let n_r = 6;
    let grid = BallGrid::new(1.0, n_r, 2).unwrap();
    // with the r^2 Jacobian the radial integrand r^{p+2} has degree <= 2 n_r - 1
    for p in 0..=(2 * n_r - 3) as i32 {
        let v: Vec<C64> = grid.nodes.iter().map(|x| C64::new(geom::norm(*x).powi(p), 0.0)).collect();
        // int_ball r^p dx = 4 pi / (p + 3)
        let exact = FOUR_PI / (p as f64 + 3.0);
        assert!((grid.integrate(&v).re - exact).abs() < 1e-13, "p = {p}");
    }
}

#[test]
fn ball_indicator_fourier_transform() {
    let (k, b) = (2.0, 1.0);
    let grid = BallGrid::new(b, 16, 12).unwrap();
    let beta = geom::normalized([0.3, -0.4, 0.8]).unwrap();
    let v: Vec<C64> = grid.nodes.iter().map(|x| C64::new(0.0, k * geom::dot(beta, *x)).exp()).collect();
    let kb = k * b;
    let exact = FOUR_PI * (kb.sin() - kb * kb.cos()) / k.powi(3);
    assert!((grid.integrate(&v) - exact).norm() < 1e-6 * exact.abs());
}

#[test]
fn grids_serialize_to_json() {
    let g = BallGrid::new(0.8, 3, 2).unwrap();
    let s = serde_json::to_string(&g).unwrap();
    let back: BallGrid = serde_json::from_str(&s).unwrap();
    assert_eq!(back, g);
}

fn coeffs_strategy(lmax: usize) -> impl Strategy<Value = SHCoefficients> {
    let n = (lmax + 1) * (lmax + 1);
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n).prop_map(move |v| SHCoefficients {
        bandlimit: lmax,
        coeffs: v.into_iter().map(|(a, b)| C64::new(a, b)).collect(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn analyze_inverts_synthesize(c in coeffs_strategy(6)) {
        let grid = DirectionGrid::new(6);
        let samples = synthesize(&c, &grid.nodes);
        let back = grid.analyze(&samples, 6).unwrap();
        let err = back.difference(&c).norm();
        prop_assert!(err <= 1e-11 * c.norm().max(1.0), "{err:e}");
    }

    #[test]
    fn parseval(c in coeffs_strategy(5)) {
        let grid = DirectionGrid::new(7);
        let samples = synthesize(&c, &grid.nodes);
        let rel = (grid.l2_norm(&samples) - c.norm()).abs() / c.norm();
        prop_assert!(rel <= 1e-10);
    }
}
