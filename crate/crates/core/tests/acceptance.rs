#![allow(clippy::needless_range_loop)]

mod common;

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use minco::elimination::{BallMap, PolytopeMap, TimeMap};
use minco::geometry::{orthonormal_complement, Corridor};
use minco::gradcheck::{self, GradcheckConfig};
use minco::minco::{construct, BoundaryCondition};
use minco::scene::{
    gap_width_for_angle, generate_corridor, narrow_gap, straight_corridor, GapGeometry, GeneratorConfig,
};
use minco::solver::{max_roll_deg, optimize_corridor, optimize_se3, speed_fraction, ProblemSpec, TimeRegularization};
use minco::Error;

use common::kkt_oracle;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_bc(rng: &mut ChaCha8Rng, s: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(s, m, |_, _| rng.gen_range(-2.0..2.0))
}

fn oracle_equivalence() -> Outcome {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_c, mut worst_j, mut worst_literal) = (0.0f64, 0.0f64, 0.0f64);
    for s in 2..=4 {
        for _ in 0..100 {
            let pieces = rng.gen_range(1..=8);
            let q = DMatrix::from_fn(3, pieces - 1, |_, _| rng.gen_range(-5.0..5.0));
            let t: Vec<f64> = (0..pieces).map(|_| rng.gen_range(0.3..3.0)).collect();
            let b0 = random_bc(&mut rng, s, 3);
            let bf = random_bc(&mut rng, s, 3);
            let traj = construct(
                &q,
                &t,
                &BoundaryCondition::new(b0.clone()).unwrap(),
                &BoundaryCondition::new(bf.clone()).unwrap(),
                s,
            )
            .unwrap();
            let cost = traj.control_effort(&[1.0; 3]).unwrap().cost;
            let oracle = kkt_oracle(s, &q, &t, &b0, &bf, s - 1);
            let literal = kkt_oracle(s, &q, &t, &b0, &bf, 2 * s - 2);
            worst_c = worst_c.max((traj.coeffs() - &oracle.coeffs).norm() / oracle.coeffs.norm());
            worst_literal = worst_literal.max((traj.coeffs() - &literal.coeffs).norm() / literal.coeffs.norm());
            worst_j = worst_j.max((cost - oracle.cost).abs() / oracle.cost.abs().max(1e-300));
        }
    }
    let elapsed = clock.elapsed().as_secs_f64();
    outcome(
        worst_c <= 1e-6 && worst_literal <= 1e-6 && worst_j <= 1e-8 && elapsed < 10.0,
        format!(
            "coeff rel {worst_c:.2e} (C^(2s-2) oracle {worst_literal:.2e}) <= 1e-6, cost rel {worst_j:.2e} <= 1e-8, {elapsed:.2}s < 10s"
        ),
    )
}

fn construct_and_propagate(pieces: usize, s: usize, rng: &mut ChaCha8Rng) -> f64 {
    let q = DMatrix::from_fn(3, pieces - 1, |_, _| rng.gen_range(-5.0..5.0));
    let t: Vec<f64> = (0..pieces).map(|_| rng.gen_range(0.5..2.0)).collect();
    let bc0 = BoundaryCondition::rest(&[0.0; 3], s);
    let bcf = BoundaryCondition::rest(&[1.0; 3], s);
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let clock = Instant::now();
        let traj = construct(&q, &t, &bc0, &bcf, s).unwrap();
        let e = traj.control_effort(&[1.0; 3]).unwrap();
        let g = traj.propagate_gradient(&e.d_coeffs, &e.d_durations).unwrap();
        std::hint::black_box(g);
        best = best.min(clock.elapsed().as_secs_f64());
    }
    best
}

fn linear_complexity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    construct_and_propagate(1000, 3, &mut rng);
    let small = construct_and_propagate(20_000, 3, &mut rng);
    let large = construct_and_propagate(200_000, 3, &mut rng);
    let mid = construct_and_propagate(100_000, 3, &mut rng);
    let ratio = large / small;
    outcome(
        (7.0..=15.0).contains(&ratio) && mid < 1.0,
        format!("ratio t(2e5)/t(2e4) = {ratio:.2} in [7,15], t(1e5) = {mid:.3}s < 1s"),
    )
}

fn gradient_integrity() -> Outcome {
    let reports = gradcheck::run(&GradcheckConfig::default()).unwrap();
    let worst = reports.iter().map(|r| r.worst).fold(0.0, f64::max);
    let failing: Vec<_> = reports.iter().filter(|r| !r.pass).map(|r| r.layer.clone()).collect();
    outcome(
        failing.is_empty() && reports.iter().all(|r| r.instances >= 100),
        format!("{} layers x 100 instances, worst rel {worst:.2e} <= 1e-4, failing {failing:?}", reports.len()),
    )
}

fn smoothness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_cont, mut weakest_jump) = (0.0f64, f64::INFINITY);
    for s in 2..=4 {
        for _ in 0..50 {
            let pieces = rng.gen_range(2..=8);
            let q = DMatrix::from_fn(3, pieces - 1, |_, _| rng.gen_range(-5.0..5.0));
            let t: Vec<f64> = (0..pieces).map(|_| rng.gen_range(0.3..3.0)).collect();
            let traj = construct(
                &q,
                &t,
                &BoundaryCondition::new(random_bc(&mut rng, s, 3)).unwrap(),
                &BoundaryCondition::new(random_bc(&mut rng, s, 3)).unwrap(),
                s,
            )
            .unwrap();
            let mut left = vec![0.0; 3];
            let mut right = vec![0.0; 3];
            let mut jump = 0.0f64;
            for i in 0..pieces - 1 {
                for d in 0..2 * s {
                    traj.piece_derivative(i, t[i], d, &mut left);
                    traj.piece_derivative(i + 1, 0.0, d, &mut right);
                    let scale = left.iter().chain(&right).fold(1.0f64, |m, v| m.max(v.abs()));
                    let gap = left.iter().zip(&right).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
                    if d <= 2 * s - 2 {
                        worst_cont = worst_cont.max(gap);
                    } else {
                        jump = jump.max(gap);
                    }
                }
            }
            weakest_jump = weakest_jump.min(jump);
        }
    }
    outcome(
        worst_cont <= 1e-8 && weakest_jump > 1e-3,
        format!("orders <= 2s-2 mismatch {worst_cont:.2e} <= 1e-8, order 2s-1 smallest jump {weakest_jump:.2e} > 1e-3"),
    )
}

fn nonsingularity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = [0usize; 3];
    for k in 0..10_000 {
        let s = 2 + k % 3;
        let pieces = rng.gen_range(1..=8);
        let q = DMatrix::from_fn(3, pieces - 1, |_, _| rng.gen_range(-10.0..10.0));
        let t: Vec<f64> = (0..pieces).map(|_| 10f64.powf(rng.gen_range(-3.0..3.0))).collect();
        let r = construct(
            &q,
            &t,
            &BoundaryCondition::new(random_bc(&mut rng, s, 3)).unwrap(),
            &BoundaryCondition::new(random_bc(&mut rng, s, 3)).unwrap(),
            s,
        );
        if matches!(r, Err(Error::SingularMatrix { .. })) {
            failures[s - 2] += 1;
        }
    }
    let total: usize = failures.iter().sum();
    outcome(
        total == 0,
        format!(
            "{total} singular factorizations in 10^4 systems with log-uniform T (s=2: {}, s=3: {}, s=4: {})",
            failures[0], failures[1], failures[2]
        ),
    )
}

fn surjection_totality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let draws = 100_000;
    let mut bad = Vec::new();

    let free = TimeMap::FreePositive;
    let fixed = TimeMap::fixed_total(7.5).unwrap();
    let (mut free_bad, mut fixed_bad) = (0, 0);
    for _ in 0..draws {
        let n = rng.gen_range(1..=8);
        let tau: Vec<f64> = (0..n).map(|_| rng.gen_range(-60.0..60.0)).collect();
        if !free.forward(&tau).iter().all(|t| *t > 0.0 && t.is_finite()) {
            free_bad += 1;
        }
        let t = fixed.forward(&tau);
        if !(t.iter().all(|t| *t > 0.0) && t.iter().sum::<f64>() == 7.5) {
            fixed_bad += 1;
        }
    }
    if free_bad + fixed_bad > 0 {
        bad.push(format!("time {free_bad}/{fixed_bad}"));
    }

    let center = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let ball = BallMap::new(center.clone(), 1.3).unwrap();
    let normal = DVector::from_vec(vec![0.3, -0.4, 0.866]).normalize();
    let disk = BallMap::embedded(center.clone(), 0.7, orthonormal_complement(&normal)).unwrap();
    let (mut ball_bad, mut disk_bad) = (0, 0);
    for _ in 0..draws {
        let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
        let xi = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0) * scale);
        if (ball.forward(&xi) - &center).norm() > 1.3 + 1e-9 {
            ball_bad += 1;
        }
        let xi = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0) * scale);
        let d = disk.forward(&xi) - &center;
        if d.norm() > 0.7 + 1e-9 || d.dot(&normal).abs() > 1e-9 {
            disk_bad += 1;
        }
    }
    if ball_bad + disk_bad > 0 {
        bad.push(format!("ball {ball_bad}/{disk_bad}"));
    }

    let scene = generate_corridor(6, &GeneratorConfig { count: 4, ..GeneratorConfig::default() }).unwrap();
    let Corridor::Polytopes(polys) = &scene.corridor else { unreachable!() };
    let mut poly_bad = 0;
    let mut round_trip = 0.0f64;
    for (k, p) in polys.iter().enumerate() {
        let (_, verts) = p.prune_redundant().unwrap();
        let map = PolytopeMap::new(&verts).unwrap();
        for _ in 0..draws / polys.len() {
            let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
            let xi = DVector::from_fn(map.param_dim(), |_, _| rng.gen_range(-1.0..1.0) * scale);
            if !p.contains(&map.forward(&xi), 1e-9) {
                poly_bad += 1;
            }
        }
        // Round trips: centroid, a facet point and a few interior points.
        let centroid = verts.iter().fold(DVector::zeros(3), |a, v| a + v) / verts.len() as f64;
        let mut targets = vec![centroid.clone(), (&verts[0] + &verts[1]) * 0.5];
        for _ in 0..3 {
            let w: Vec<f64> = (0..verts.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let sum: f64 = w.iter().sum();
            targets.push(verts.iter().zip(&w).fold(DVector::zeros(3), |a, (v, w)| a + v * (w / sum)));
        }
        for q in targets {
            let xi = map.backward(&q).unwrap();
            round_trip = round_trip.max((map.forward(&xi) - &q).norm());
        }
        if k == 0 {
            let q = map.base().clone();
            let xi = map.backward(&q).unwrap();
            round_trip = round_trip.max((map.forward(&xi) - &q).norm());
        }
    }
    if poly_bad > 0 {
        bad.push(format!("polytope {poly_bad}"));
    }

    let mut time_rt = 0.0f64;
    let mut ball_rt = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=8);
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..5.0)).collect();
        let back = free.forward(&free.backward(&t).unwrap());
        time_rt = time_rt.max(t.iter().zip(&back).map(|(a, b)| ((a - b) / a).abs()).fold(0.0, f64::max));
        let total: f64 = t.iter().sum();
        let map = TimeMap::fixed_total(total).unwrap();
        let back = map.forward(&map.backward(&t).unwrap());
        time_rt = time_rt.max(t.iter().zip(&back).map(|(a, b)| (a - b).abs() / total).fold(0.0, f64::max));
        let dir = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0)).normalize();
        let q = &center + dir * rng.gen_range(0.0..0.999) * 1.3;
        ball_rt = ball_rt.max((ball.forward(&ball.backward(&q).unwrap()) - &q).norm());
    }
    let rt_ok = time_rt <= 1e-12 && ball_rt <= 1e-10 && round_trip <= 1e-6;
    outcome(
        bad.is_empty() && rt_ok,
        format!(
            "violations {bad:?} over 10^5 draws per map; round trips time {time_rt:.1e} <= 1e-12, ball {ball_rt:.1e} <= 1e-10, polytope {round_trip:.1e} <= 1e-6"
        ),
    )
}

fn corridor_spec(seed: u64) -> ProblemSpec {
    let scene = generate_corridor(seed, &GeneratorConfig::default()).unwrap();
    ProblemSpec::corridor(scene.corridor, scene.start.as_slice(), scene.goal.as_slice())
}

fn corridor_planning() -> (Outcome, Vec<f64>) {
    let mut passed = 0;
    let (mut slowest, mut worst_dyn, mut worst_box) = (0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut durations = Vec::new();
    for seed in 0..10 {
        let r = optimize_corridor(&corridor_spec(seed)).unwrap();
        let dynamic = r.violation("speed").unwrap().max(r.violation("acceleration").unwrap());
        let contain = r.violation("containment").unwrap();
        slowest = slowest.max(r.wall_time);
        worst_dyn = worst_dyn.max(dynamic);
        worst_box = worst_box.max(contain);
        durations.push(r.total_duration());
        if r.converged() && r.wall_time < 1.0 && dynamic <= 1e-3 && contain <= 1e-3 {
            passed += 1;
        }
    }
    (
        outcome(
            passed == 10,
            format!(
                "{passed}/10 converged, slowest {slowest:.3}s < 1s, speed/acc {worst_dyn:.2e} <= 1e-3, containment {worst_box:.2e} m <= 1e-3"
            ),
        ),
        durations,
    )
}

fn speed_tightness() -> Outcome {
    let scene = straight_corridor(4, 12.0, 1.0).unwrap();
    let mut spec = ProblemSpec::corridor(scene.corridor, scene.start.as_slice(), scene.goal.as_slice());
    spec.time = TimeRegularization::Linear { k_rho: 1e4 };
    spec.pieces_per_primitive = 2;
    let r = optimize_corridor(&spec).unwrap();
    let frac = speed_fraction(&r.trajectory, spec.v_max, 0.95, 10_000).unwrap();
    outcome(frac > 0.5, format!("fraction of time at >= 0.95 v_max: {frac:.3} > 0.5"))
}

fn narrow_gap_crossing() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for angle in [30.0, 60.0] {
        let geom = GapGeometry::new(gap_width_for_angle(angle).unwrap());
        let scene = narrow_gap(&geom).unwrap();
        let spec = ProblemSpec::se3(scene.corridor, scene.start.as_slice(), scene.goal.as_slice());
        let r = optimize_se3(&spec).unwrap();
        let shape = spec.se3.unwrap().shape;
        let roll = max_roll_deg(&r.states, 0.5 * geom.wall_thickness + shape.radius);
        let ellipsoid = r.violation("ellipsoid").unwrap();
        let omega_max = spec.se3.unwrap().omega_max;
        let omega = r.states.iter().map(|s| Vector3::from(s.omega).norm()).fold(0.0, f64::max);
        let ok =
            r.converged() && r.wall_time < 5.0 && ellipsoid <= 1e-3 && omega <= omega_max + 1e-2 && roll >= angle - 5.0;
        pass &= ok;
        parts.push(format!(
            "{angle}deg: {:.2}s, ellipsoid {ellipsoid:.2e} m, |w| {omega:.3} <= {:.2}, roll {roll:.1} >= {}",
            r.wall_time,
            omega_max + 1e-2,
            angle - 5.0
        ));
    }
    outcome(pass, parts.join("; "))
}

fn duration_response(base: &[f64]) -> Outcome {
    let mut passed = 0;
    let mut smallest = f64::INFINITY;
    for (seed, &t) in base.iter().enumerate() {
        let mut spec = corridor_spec(seed as u64);
        spec.v_max *= 0.5;
        let slow = optimize_corridor(&spec).unwrap().total_duration();
        smallest = smallest.min(slow - t);
        if slow > t {
            passed += 1;
        }
    }
    outcome(passed == base.len(), format!("{passed}/10 longer with v_max halved, smallest increase {smallest:.3}s"))
}

#[test]
fn acceptance_criteria() {
    let mut results = vec![
        (1, oracle_equivalence()),
        (2, linear_complexity()),
        (3, gradient_integrity()),
        (4, smoothness()),
        (5, nonsingularity()),
        (6, surjection_totality()),
    ];
    let (seven, durations) = corridor_planning();
    results.extend([
        (7, seven),
        (8, speed_tightness()),
        (9, narrow_gap_crossing()),
        (10, duration_response(&durations)),
    ]);
    for (k, o) in &results {
        println!("criterion {k:>2}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<_> = results.iter().filter(|(_, o)| !o.pass).map(|(k, _)| *k).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
