use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use minco::geometry::{ball_overlap_disk, simplex_max, validate_corridor, Ball, Corridor, HPolytope};
use minco::scene::{generate_corridor, to_dvector, GeneratorConfig, PrimitiveKind};
use minco::Error;

/// Is `x` a convex combination of `verts`? Feasibility LP over the weights.
fn in_hull(verts: &[DVector<f64>], x: &DVector<f64>) -> bool {
    let n = x.len();
    let k = verts.len();
    let mut a = DMatrix::zeros(2 * n + 2, k);
    let mut b = vec![0.0; 2 * n + 2];
    for (j, v) in verts.iter().enumerate() {
        for i in 0..n {
            a[(i, j)] = v[i];
            a[(n + i, j)] = -v[i];
        }
        a[(2 * n, j)] = 1.0;
        a[(2 * n + 1, j)] = -1.0;
    }
    for i in 0..n {
        b[i] = x[i];
        b[n + i] = -x[i];
    }
    b[2 * n] = 1.0;
    b[2 * n + 1] = -1.0;
    match simplex_max(&vec![0.0; k], &a, &b) {
        Ok(_) => true,
        Err(Error::Infeasible) => false,
        Err(e) => panic!("unexpected {e}"),
    }
}

fn scene_polytopes(seed: u64, count: usize) -> Vec<HPolytope> {
    let cfg = GeneratorConfig { count, ..Default::default() };
    match generate_corridor(seed, &cfg).unwrap().corridor {
        Corridor::Polytopes(p) => p,
        Corridor::Balls(_) => unreachable!(),
    }
}

#[test]
fn vertex_enumeration_agrees_with_membership() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let polys = scene_polytopes(5, 4);
    let mut checked = 0;
    for p in &polys {
        let verts = p.enumerate_vertices().unwrap();
        let lo: Vec<f64> = (0..3).map(|i| verts.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min)).collect();
        let hi: Vec<f64> = (0..3).map(|i| verts.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max)).collect();
        let norm = p.normalized();
        for v in &verts {
            assert!(norm.contains(v, 1e-9));
        }
        for _ in 0..250 {
            let x = DVector::from_fn(3, |i, _| {
                let pad = 0.2 * (hi[i] - lo[i]);
                rng.gen_range(lo[i] - pad..hi[i] + pad)
            });
            if norm.signed_distance(&x).abs() < 1e-6 {
                continue;
            }
            assert_eq!(norm.contains(&x, 0.0), in_hull(&verts, &x), "{x}");
            checked += 1;
        }
    }
    assert!(checked >= 990, "only {checked} points checked");
}

#[test]
fn generated_corridors_validate() {
    for seed in 0..20 {
        for kind in [PrimitiveKind::Polytope, PrimitiveKind::Ball] {
            let cfg = GeneratorConfig { count: 10, kind, ..Default::default() };
            let scene = generate_corridor(seed, &cfg).unwrap();
            let report = validate_corridor(&scene.corridor, &to_dvector(&scene.start), &to_dvector(&scene.goal));
            assert!(report.pass, "seed {seed} {kind:?}: {report:?}");
            assert!(report.warnings.is_empty(), "seed {seed} {kind:?}: {report:?}");
            for i in 0..scene.corridor.len() - 1 {
                assert!(scene.corridor.overlaps(i, i + 1));
            }
            if let Corridor::Polytopes(p) = &scene.corridor {
                for p in p {
                    let x = p.interior_point().unwrap();
                    assert!(-p.normalized().signed_distance(&x) > 0.0);
                    assert!(p.is_bounded());
                }
            }
        }
    }
}

#[test]
fn large_corridor_generates_quickly() {
    let start = Instant::now();
    let cfg = GeneratorConfig { count: 64, ..Default::default() };
    let scene = generate_corridor(3, &cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(scene.corridor.len(), 64);
    assert!(elapsed < 5.0, "{elapsed} s");
}

#[test]
fn ball_corridor_overlap_disks_are_shared() {
    let scene =
        generate_corridor(1, &GeneratorConfig { count: 8, kind: PrimitiveKind::Ball, ..Default::default() }).unwrap();
    let Corridor::Balls(balls) = &scene.corridor else { unreachable!() };
    for w in balls.windows(2) {
        let disk = ball_overlap_disk(&w[0], &w[1]).unwrap();
        let basis = disk.basis();
        for k in 0..8 {
            let a = k as f64 * std::f64::consts::FRAC_PI_4;
            let p = &disk.center + (basis.column(0) * a.cos() + basis.column(1) * a.sin()) * disk.radius;
            assert!(w[0].contains(&p, 1e-9) && w[1].contains(&p, 1e-9));
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = GeneratorConfig::default();
    assert_eq!(generate_corridor(9, &cfg).unwrap().corridor, generate_corridor(9, &cfg).unwrap().corridor);
}

proptest! {
    #[test]
    fn boxes_intersect_to_their_overlap(
        lo in proptest::collection::vec(-3.0..0.0f64, 3),
        hi in proptest::collection::vec(0.5..3.0f64, 3),
        shift in proptest::collection::vec(-0.4..0.4f64, 3),
    ) {
        let a = HPolytope::from_box(&lo, &hi).unwrap();
        let lo2: Vec<f64> = lo.iter().zip(&shift).map(|(l, s)| l + s).collect();
        let hi2: Vec<f64> = hi.iter().zip(&shift).map(|(h, s)| h + s).collect();
        let b = HPolytope::from_box(&lo2, &hi2).unwrap();
        let (pruned, verts) = a.intersect(&b).unwrap().prune_redundant().unwrap();
        prop_assert_eq!(pruned.rows(), 6);
        prop_assert_eq!(verts.len(), 8);
        let (x, r) = pruned.chebyshev_center().unwrap();
        prop_assert!(r > 0.0);
        prop_assert!(a.contains(&x, 0.0) && b.contains(&x, 0.0));
    }

    #[test]
    fn ball_disk_lies_on_both_spheres(
        c in proptest::collection::vec(-2.0..2.0f64, 3),
        d in proptest::collection::vec(-1.0..1.0f64, 3),
        r0 in 0.5..2.0f64,
        r1 in 0.5..2.0f64,
    ) {
        let off = DVector::from_column_slice(&d);
        prop_assume!(off.norm() > 0.05 && off.norm() < (r0 + r1) * 0.9 && off.norm() > (r0 - r1).abs() * 1.1);
        let b0 = Ball::new(c.clone(), r0).unwrap();
        let c1: Vec<f64> = c.iter().zip(&d).map(|(a, b)| a + b).collect();
        let b1 = Ball::new(c1, r1).unwrap();
        let disk = ball_overlap_disk(&b0, &b1).unwrap();
        let rim = &disk.center + disk.basis().column(0) * disk.radius;
        prop_assert!(((&rim - b0.center_vec()).norm() - r0).abs() < 1e-9);
        prop_assert!(((&rim - b1.center_vec()).norm() - r1).abs() < 1e-9);
    }
}

#[test]
fn disjoint_balls_have_no_disk() {
    let a = Ball::new(vec![0.0; 3], 1.0).unwrap();
    let b = Ball::new(vec![3.0, 0.0, 0.0], 1.0).unwrap();
    assert!(ball_overlap_disk(&a, &b).is_err());
}
