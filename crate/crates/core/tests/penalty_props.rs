mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use minco::flatness::{VehicleShape, GRAVITY};
use minco::geometry::{Ball, HPolytope};
use minco::minco::{construct, BoundaryCondition, Trajectory};
use minco::penalty::{
    integrate_penalty, max_violations, AccSq, BallContain, BodyRateSq, ConstraintSet, EllipsoidInPolytope,
    PolytopeContain, SpeedSq, ThrustWindow,
};

use common::{fd_gradient, rel_err};

fn random_traj(rng: &mut ChaCha8Rng) -> Trajectory {
    let pieces = rng.gen_range(1..=4);
    let q = DMatrix::from_fn(3, pieces - 1, |_, _| rng.gen_range(-1.5..1.5));
    let t: Vec<f64> = (0..pieces).map(|_| rng.gen_range(0.5..1.3)).collect();
    let p0: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let p1: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    construct(&q, &t, &BoundaryCondition::rest(&p0, 3), &BoundaryCondition::rest(&p1, 3), 3).unwrap()
}

fn polys() -> Vec<HPolytope> {
    vec![
        HPolytope::from_box(&[-1.0, -1.2, -0.8], &[1.1, 0.9, 1.0]).unwrap(),
        HPolytope::from_box(&[-0.7, -1.0, -1.3], &[0.8, 1.2, 0.6]).unwrap(),
    ]
}

fn assignment(n: usize) -> Vec<usize> {
    (0..n).map(|i| i % 2).collect()
}

/// One set per evaluator, with limits that most instances violate somewhere.
fn evaluator(which: usize, pieces: usize, kappa: usize) -> ConstraintSet {
    let cs = ConstraintSet::new(kappa).unwrap();
    let balls = vec![Ball::new(vec![0.1, 0.0, 0.0], 1.0).unwrap(), Ball::new(vec![0.0, -0.2, 0.1], 0.8).unwrap()];
    match which {
        0 => cs.add(SpeedSq { v_max: 1.0 }, 1.0),
        1 => cs.add(AccSq { a_max: 2.0 }, 1.0),
        2 => cs.add(PolytopeContain::new(&polys(), assignment(pieces)).unwrap(), 1.0),
        3 => cs.add(BallContain::new(&balls, assignment(pieces)).unwrap(), 1.0),
        4 => cs.add(ThrustWindow { f_min: 9.0, f_max: 10.5, gravity: GRAVITY }, 1.0),
        5 => cs.add(BodyRateSq { omega_max: 0.5, gravity: GRAVITY }, 1.0),
        _ => cs.add(
            EllipsoidInPolytope::new(&polys(), assignment(pieces), VehicleShape::new(0.3, 0.1).unwrap(), GRAVITY)
                .unwrap(),
            1.0,
        ),
    }
    .unwrap()
}

fn value_at(cs: &ConstraintSet, traj: &Trajectory, t: &[f64], c: &[f64]) -> f64 {
    let coeffs = DMatrix::from_column_slice(traj.coeffs().nrows(), 3, c);
    let tr = Trajectory::from_coefficients(traj.order(), t.to_vec(), coeffs).unwrap();
    integrate_penalty(cs, &tr).unwrap().value
}

#[test]
fn every_evaluator_matches_finite_differences() {
    for which in 0..7 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + which as u64);
        let mut active = 0;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let traj = random_traj(&mut rng);
            let cs = evaluator(which, traj.pieces(), rng.gen_range(4..=16));
            let pen = integrate_penalty(&cs, &traj).unwrap();
            if pen.value == 0.0 {
                continue;
            }
            active += 1;
            let c = traj.coeffs().as_slice().to_vec();
            let t = traj.durations().to_vec();
            let fd_c = fd_gradient(|x| value_at(&cs, &traj, &t, x), &c, 1e-5);
            let fd_t = fd_gradient(|x| value_at(&cs, &traj, x, &c), &t, 1e-5);
            worst = worst.max(rel_err(pen.d_coeffs.as_slice(), &fd_c));
            worst = worst.max(rel_err(&pen.d_durations, &fd_t));
        }
        assert!(active >= 20, "evaluator {which}: only {active} active instances");
        assert!(worst <= 1e-5, "evaluator {which}: {worst:e}");
    }
}

#[test]
fn trapezoid_converges_at_second_order() {
    // Always violated: the ball sits far from the route.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let traj = random_traj(&mut rng);
    let far = vec![Ball::new(vec![20.0, 0.0, 0.0], 0.5).unwrap(); traj.pieces()];
    let at = |kappa: usize| {
        let cs = ConstraintSet::new(kappa)
            .unwrap()
            .add(BallContain::new(&far, (0..traj.pieces()).collect()).unwrap(), 1.0)
            .unwrap();
        integrate_penalty(&cs, &traj).unwrap().value
    };
    let reference = at(4096);
    for kappa in [4, 8, 16, 32] {
        let ratio = (at(kappa) - reference).abs() / (at(2 * kappa) - reference).abs();
        assert!(ratio >= 3.5, "kappa {kappa}: ratio {ratio}");
    }
}

/// Largest third difference of the penalty along a shift of the route that
/// crosses the containment boundary.
fn third_difference(exponent: i32, h: f64) -> f64 {
    let ball = vec![Ball::new(vec![0.0; 3], 1.0).unwrap()];
    let cs = ConstraintSet::new(16)
        .unwrap()
        .with_exponent(exponent)
        .unwrap()
        .add(BallContain::new(&ball, vec![0]).unwrap(), 1.0)
        .unwrap();
    let f = |d: f64| {
        let traj = construct(
            &DMatrix::zeros(3, 0),
            &[1.0],
            &BoundaryCondition::rest(&[d, 0.0, 0.0], 3),
            &BoundaryCondition::rest(&[d + 0.5, 0.0, 0.0], 3),
            3,
        )
        .unwrap();
        integrate_penalty(&cs, &traj).unwrap().value
    };
    let grid: Vec<f64> = (-40..=40).map(|k| f(0.5 + k as f64 * h)).collect();
    grid.windows(4).map(|w| (w[3] - 3.0 * w[2] + 3.0 * w[1] - w[0]).abs() / h.powi(3)).fold(0.0, f64::max)
}

#[test]
fn cubic_penalty_is_twice_differentiable_across_activation() {
    let growth = third_difference(3, 5e-5) / third_difference(3, 1e-4);
    assert!(growth < 1.5, "cubic: {growth}");
    // The probe does detect a kink in the second derivative.
    let growth = third_difference(2, 5e-5) / third_difference(2, 1e-4);
    assert!(growth > 1.5, "quadratic: {growth}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn penalty_is_nonnegative_and_zero_iff_feasible_on_stamps(seed in any::<u64>(), which in 0usize..7, kappa in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = random_traj(&mut rng);
        let cs = evaluator(which, traj.pieces(), kappa);
        let value = integrate_penalty(&cs, &traj).unwrap().value;
        let worst = max_violations(&cs, &traj, kappa).unwrap()[0];
        prop_assert!(value >= 0.0);
        prop_assert_eq!(value == 0.0, worst <= 0.0, "value {} worst {}", value, worst);
    }
}

#[test]
fn loose_limits_give_zero_penalty_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let traj = random_traj(&mut rng);
    let cs = ConstraintSet::new(16)
        .unwrap()
        .add(SpeedSq { v_max: 100.0 }, 1e8)
        .unwrap()
        .add(AccSq { a_max: 100.0 }, 1e8)
        .unwrap();
    let pen = integrate_penalty(&cs, &traj).unwrap();
    assert_eq!(pen.value, 0.0);
    assert!(pen.d_coeffs.iter().all(|v| *v == 0.0));
    assert!(pen.d_durations.iter().all(|v| *v == 0.0));
}
