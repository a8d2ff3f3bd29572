use std::sync::OnceLock;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smartscatter_core::geom::{self, Vec3};
use smartscatter_core::inversion::*;
use smartscatter_core::ls_forward::{amplitude_matrix, AmplitudeMatrix, SolverConfig};
use smartscatter_core::potential::{ParticleModel, PotentialGrid};
use smartscatter_core::specfun::{num_modes, sph_harm_complex_all, ComplexDirection, ModeIndex};
use smartscatter_core::sphgrid::{BallGrid, DirectionGrid};

type C64 = Complex64;

const CENTER: Vec3 = [0.1, -0.05, 0.08];
const WIDTH: f64 = 0.2;
const K: f64 = 1.0;

fn gaussian_grid(amp: f64) -> PotentialGrid {
    PotentialGrid::from_fn(BallGrid::new(1.0, 10, 6).unwrap(), move |x| {
        let d = geom::sub(x, CENTER);
        C64::new(amp * (-geom::dot(d, d) / (2.0 * WIDTH * WIDTH)).exp(), 0.0)
    })
}

/// `int e^{-i zeta.x} q(x) dx` for complex `zeta` (the ball cuts off nothing visible).
fn gaussian_transform(amp: f64, zeta: [C64; 3]) -> C64 {
    let mass = amp * (2.0 * std::f64::consts::PI).powf(1.5) * WIDTH.powi(3);
    let zz: C64 = zeta.iter().map(|z| z * z).sum();
    let zc: C64 = zeta.iter().zip(CENTER).map(|(z, c)| z * c).sum();
    mass * (-0.5 * WIDTH * WIDTH * zz - C64::i() * zc).exp()
}

fn real_transform(amp: f64, xi: Vec3) -> C64 {
    gaussian_transform(amp, xi.map(|v| C64::new(v, 0.0)))
}

fn data(amp: f64) -> AmplitudeMatrix {
    amplitude_matrix(&gaussian_grid(amp), K, &DirectionGrid::new(8), SolverConfig::default()).unwrap()
}

fn strong() -> &'static AmplitudeMatrix {
    static CELL: OnceLock<AmplitudeMatrix> = OnceLock::new();
    CELL.get_or_init(|| data(2.0))
}

fn weak() -> &'static AmplitudeMatrix {
    static CELL: OnceLock<AmplitudeMatrix> = OnceLock::new();
    CELL.get_or_init(|| data(0.01))
}

fn config() -> InversionConfig {
    InversionConfig {
        l_nu: 10,
        ..Default::default()
    }
}

fn strong_inverter() -> &'static Inverter {
    static CELL: OnceLock<Inverter> = OnceLock::new();
    CELL.get_or_init(|| Inverter::new(strong(), config()).unwrap())
}

fn on_variety(t: &ComplexDirection) -> f64 {
    (t.self_dot() - t.k * t.k).norm() / (t.k * t.k)
}

#[test]
fn theta_pair_geometry() {
    let p = make_theta_pair([0.0; 3], K, K).unwrap();
    assert!(geom::norm(p.theta.imag_part()) < 1e-15);
    assert!(p.kappa() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let xi: Vec3 = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let k: f64 = rng.random_range(0.5..2.0);
        let t = 5.0 * k.max(min_feasible_t(xi, k));
        let p = make_theta_pair(xi, t, k).unwrap();
        assert!(on_variety(&p.theta) < 1e-12);
        assert!(on_variety(&p.theta_prime) < 1e-12);
        assert!((p.theta.norm() - t).abs() < 1e-12 * t);
        for j in 0..3 {
            assert!((p.theta_prime.components[j] - p.theta.components[j] - xi[j]).norm() < 1e-12 * t);
        }
        let kappa = ((t * t - k * k) / 2.0).sqrt();
        assert!((p.kappa() - kappa).abs() < 1e-12 * t);
    }
}

#[test]
fn theta_pair_rotates_with_frame() {
    // rotating xi and the frame together rotates theta
    let xi = [0.4, -0.2, 0.9];
    let e1 = geom::normalized(xi).unwrap();
    let (e2, _) = geom::complete_frame(e1);
    let a = make_theta_pair_in_frame(xi, 3.0, K, e2).unwrap();
    let (s, c) = (1.1f64.sin(), 1.1f64.cos());
    let rot = |v: Vec3| [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]];
    let b = make_theta_pair_in_frame(rot(xi), 3.0, K, rot(e2)).unwrap();
    let (re, im) = (rot(a.theta.real_part()), rot(a.theta.imag_part()));
    assert!(geom::norm(geom::sub(re, b.theta.real_part())) < 1e-13);
    assert!(geom::norm(geom::sub(im, b.theta.imag_part())) < 1e-13);
}

#[test]
fn theta_pair_rejects_infeasible_t() {
    let xi = [0.0, 0.0, 4.0];
    let tmin = min_feasible_t(xi, K);
    assert!((tmin - 7f64.sqrt()).abs() < 1e-12);
    assert!(make_theta_pair(xi, tmin, K).is_ok());
    assert!(make_theta_pair(xi, 0.9 * tmin, K).is_err());
    assert!(make_theta_pair([0.0; 3], 0.5, K).is_err());
    assert!(make_theta_pair([0.0; 3], 2.0, -1.0).is_err());
    assert!(make_theta_pair_in_frame(xi, 3.0, K, [0.0, 0.0, 1.0]).is_err());
}

#[test]
fn continuation_reproduces_real_data() {
    let a = strong();
    let e = AmplitudeSHExpansion::new(a, 8).unwrap();
    let scale = a.l2_norm() / a.n() as f64;
    let mut worst: f64 = 0.0;
    for (i, dir) in a.directions.nodes.iter().enumerate().step_by(7) {
        let tp = ComplexDirection::from_real(*dir, K);
        for j in (0..a.n()).step_by(11) {
            worst = worst.max((e.continue_at(&tp, j) - a.get(i, j)).norm());
        }
    }
    let peak = a.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    assert!(worst < 1e-6 * peak, "worst {worst:.3e}, peak {peak:.3e}, mean {scale:.3e}");
    assert!(AmplitudeSHExpansion::new(a, 9).is_err());
}

#[test]
fn continuation_matches_complex_born_transform() {
    // first Born order: A(theta', a) = -q~(theta' - k a) / (4 pi)
    let a = weak();
    let e = AmplitudeSHExpansion::new(a, 8).unwrap();
    let alpha = geom::normalized([0.3, 0.5, -0.8]).unwrap();
    for (xi, t) in [([0.0; 3], 1.5), ([0.5, 0.0, 0.0], 2.0), ([0.0, 0.8, 0.3], 3.0)] {
        let p = make_theta_pair(xi, t, K).unwrap();
        assert!(p.theta_prime.imag_part().iter().all(|v| v.abs() <= 2.0));
        let zeta: [C64; 3] = std::array::from_fn(|j| p.theta_prime.components[j] - K * alpha[j]);
        let born = -gaussian_transform(0.01, zeta) / (4.0 * std::f64::consts::PI);
        let got = e.continue_amplitude(&p.theta_prime, alpha).unwrap();
        let rel = (got - born).norm() / born.norm();
        assert!(rel < 0.05, "t = {t}: {got} vs {born} ({rel:.3e})");
    }
}

#[test]
fn continued_partial_sums_settle() {
    let e = AmplitudeSHExpansion::new(strong(), 8).unwrap();
    let p = make_theta_pair([0.3, 0.0, 0.2], 2.0, K).unwrap();
    for j in [0, 40, 100] {
        let sums = e.partial_sums(&p.theta_prime, j);
        let steps: Vec<f64> = sums.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        let last = sums[8].norm();
        assert!(steps[7] < 1e-3 * last, "{steps:?}");
        assert!(steps[7] < steps[4]);
    }
}

#[test]
fn scattered_field_decays_like_outgoing_wave() {
    let a = strong();
    let e = AmplitudeSHExpansion::new(a, 8).unwrap();
    // r e^{-ikr} u_sc(r x) tends to A(x, a)
    let i = 17;
    let x = a.directions.nodes[i];
    let r = 400.0;
    let u = e.scattered_field(geom::scale(x, r), 5);
    let far = u * r * C64::new(0.0, -K * r).exp();
    let rel = (far - a.get(i, 5)).norm() / a.get(i, 5).norm();
    assert!(rel < 0.05, "{rel}");
}

fn zero_basis(l_nu: usize) -> NuBasis {
    let annulus = AnnulusGrid::new(1.2, 1.6, 8, l_nu + 6).unwrap();
    NuBasis::new(K, None, annulus, l_nu).unwrap()
}

#[test]
fn zero_potential_functional() {
    let basis = zero_basis(10);
    let p = make_theta_pair([0.0, 0.0, 0.5], 2.0, K).unwrap();
    let nu = solve_nu(&basis, &p, 10, 1e-13).unwrap();
    for w in nu.sweep.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", nu.sweep);
    }
    assert!(nu.best_f > 0.0);
    assert!(nu.admissible);
    assert_eq!(nu.sweep.len(), 11);
    // the truncated expansion of e^{i theta.x}
    let y = sph_harm_complex_all(10, &p.theta);
    for l in [4, 7, 10] {
        let c: Vec<C64> = (0..num_modes(l))
            .map(|i| {
                let idx = ModeIndex::from_flat(i);
                let sign = if (idx.ell as i64 + idx.m).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                y[i] * sign
            })
            .collect();
        let analytic = basis.functional(&p.theta, &c).unwrap();
        assert!(nu.sweep[l] <= analytic * (1.0 + 1e-9), "l = {l}: {} vs {analytic}", nu.sweep[l]);
    }
    assert!(basis.functional(&p.theta, &[C64::new(1.0, 0.0)]).unwrap() > nu.best_f);
    assert_eq!(basis.estimate(&p.theta_prime, &nu.coeffs), C64::new(0.0, 0.0));
}

#[test]
fn gaussian_transform_recovered_from_exact_data() {
    let inv = strong_inverter();
    let mass = real_transform(2.0, [0.0; 3]);
    for t in [1.5, 3.0] {
        let e = inv.estimate([0.0; 3], t).unwrap();
        let rel = (e.q_hat - mass).norm() / mass.norm();
        assert!(rel < 0.06, "t = {t}: {rel:.3e}");
        assert!(e.f_nu > 0.0 && e.nu_norm > 0.0);
    }
    let xi = [0.0, 0.8, 0.0];
    let e = inv.estimate(xi, 3.0).unwrap();
    let exact = real_transform(2.0, xi);
    assert!((e.q_hat - exact).norm() / exact.norm() < 0.2, "{} vs {exact}", e.q_hat);
}

#[test]
fn weak_potential_is_linear() {
    let one = invert_exact(weak(), [0.0; 3], 3.0, config()).unwrap().q_hat;
    let two = invert_exact(&data(0.02), [0.0; 3], 3.0, config()).unwrap().q_hat;
    let ratio = two / one;
    assert!((ratio - 2.0).norm() < 0.2, "{ratio}");
    let mass = real_transform(0.01, [0.0; 3]);
    assert!((one - mass).norm() < 0.2 * mass.norm(), "{one} vs {mass}");
}

#[test]
fn real_potential_transform_is_hermitian() {
    let inv = strong_inverter();
    let xi = [0.5, 0.0, 0.0];
    let d = inv.symmetry_defect(xi, 2.0).unwrap();
    let q = real_transform(2.0, xi).norm();
    assert!(d < 0.05 * q, "{d} vs {q}");
}

#[test]
fn noise_level_to_truncation() {
    assert_eq!(n_of_delta(1e-2).unwrap(), 3);
    assert_eq!(n_of_delta(1e-3).unwrap(), 4);
    assert_eq!(n_of_delta(1e-4).unwrap(), 4);
    assert!(n_of_delta(0.0).is_err());
    assert!(n_of_delta(0.1).is_err());
    assert!(n_of_delta(-1e-3).is_err());
    let mut last = 0;
    for e in 3..40 {
        let n = n_of_delta(10f64.powi(-e)).unwrap();
        assert!(n >= last);
        last = n;
    }
}

#[test]
fn added_noise_is_bounded_and_antithetic() {
    let a = strong();
    let delta = 1e-3;
    let p = add_noise(a, delta, 9, false);
    let m = add_noise(a, delta, 9, true);
    assert_eq!(p, add_noise(a, delta, 9, false));
    for ((x, y), v) in p.values.iter().zip(&m.values).zip(&a.values) {
        assert!((x - v).norm() <= delta);
        assert!(((x + y) * 0.5 - v).norm() < 1e-15);
    }
}

#[test]
fn noisy_inversion_reduces_to_exact_path() {
    let a = strong();
    let cfg = NoisyConfig {
        base: config(),
        ..Default::default()
    };
    let noisy = NoisyInverter::new(a, 1e-16, cfg.clone()).unwrap();
    let e = noisy.estimate([0.0; 3]).unwrap();
    assert!(!e.degraded);
    let exact = strong_inverter().estimate([0.0; 3], e.t_used).unwrap();
    let rel = (e.q_hat - exact.q_hat).norm() / exact.q_hat.norm();
    assert!(rel < 0.01, "{rel:.3e}");

    // one draw at 1% noise on the coarse grid
    let an = add_noise(a, 1e-2, 5, false);
    let e = invert_noisy(&an, 1e-2, [0.0; 3], cfg).unwrap();
    assert_eq!(e.n_delta, 3);
    assert!(e.candidates.iter().any(|c| c.t == e.t_used));
    let mass = real_transform(2.0, [0.0; 3]);
    assert!((e.q_hat - mass).norm() < 0.25 * mass.norm(), "{}", e.q_hat);
}

fn cubic_points() -> Vec<Vec3> {
    vec![[0.0; 3], [0.2, 0.1, -0.1], [-0.3, 0.0, 0.25], [0.0, -0.45, 0.1]]
}

#[test]
fn inverse_transform_of_exact_samples() {
    let s: f64 = 0.3;
    let (xi, weights) = cartesian_xi_grid(0.6, 21.0).unwrap();
    let mass = (2.0 * std::f64::consts::PI).powf(1.5) * s.powi(3);
    let q_hat = xi.iter().map(|x| C64::new(mass * (-0.5 * s * s * geom::dot(*x, *x)).exp(), 0.0)).collect();
    let samples = XiSamples { xi, weights, q_hat };
    let pts = cubic_points();
    for (p, v) in pts.iter().zip(samples.inverse_transform(&pts)) {
        let exact = (-geom::dot(*p, *p) / (2.0 * s * s)).exp();
        assert!((v - exact).norm() < 1e-5, "{p:?}: {v} vs {exact}");
    }

    let grid = BallGrid::new(1.0, 4, 3).unwrap();
    let model = ParticleModel::soft(2.0);
    let q0 = vec![C64::new(0.0, 0.0); grid.len()];
    let d = density_from_inversion(&samples, &grid, &q0, model).unwrap();
    for (x, n) in grid.nodes.iter().zip(&d.n) {
        let exact = (-geom::dot(*x, *x) / (2.0 * s * s)).exp() / 2.0;
        assert!((n - exact).norm() < 1e-5);
    }
    // q equal to the background leaves no particles
    let q0: Vec<C64> = samples.inverse_transform(&grid.nodes);
    let d = density_from_inversion(&samples, &grid, &q0, model).unwrap();
    assert!(d.n.iter().all(|n| n.norm() == 0.0));
    assert!(density_from_inversion(&samples, &grid, &q0[1..], model).is_err());
}

#[test]
fn xi_grid_validation() {
    let (pts, w) = cartesian_xi_grid(1.0, 1.0).unwrap();
    assert_eq!(pts.len(), 7);
    assert!(w.iter().all(|v| *v == 1.0));
    assert!(cartesian_xi_grid(0.0, 1.0).is_err());
    assert!(cartesian_xi_grid(1.0, -1.0).is_err());
}

#[test]
fn config_validation() {
    let bad = InversionConfig {
        a1: 0.9,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    assert!(Inverter::new(strong(), bad).is_err());
    assert!(InversionConfig::default().validate().is_ok());
    let json = serde_json::to_string(&NoisyConfig::default()).unwrap();
    let back: NoisyConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, NoisyConfig::default());
    let partial: NoisyConfig = serde_json::from_str(r#"{"c": 5.0}"#).unwrap();
    assert_eq!(partial.c, 5.0);
}
