#![allow(clippy::needless_range_loop)]

mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use minco::minco::{construct, BoundaryCondition, Trajectory};

use common::{fd_gradient, kkt_oracle, rel_err};

fn instance() -> impl Strategy<Value = (usize, DMatrix<f64>, Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    (2usize..=4, 1usize..=8).prop_flat_map(|(s, pieces)| {
        (
            Just(s),
            proptest::collection::vec(-5.0..5.0f64, 3 * (pieces - 1))
                .prop_map(move |v| DMatrix::from_vec(3, pieces - 1, v)),
            proptest::collection::vec(0.3..3.0f64, pieces),
            proptest::collection::vec(-2.0..2.0f64, 3 * s).prop_map(move |v| DMatrix::from_vec(s, 3, v)),
            proptest::collection::vec(-2.0..2.0f64, 3 * s).prop_map(move |v| DMatrix::from_vec(s, 3, v)),
        )
    })
}

fn build(s: usize, q: &DMatrix<f64>, t: &[f64], b0: &DMatrix<f64>, bf: &DMatrix<f64>) -> Trajectory {
    construct(q, t, &BoundaryCondition::new(b0.clone()).unwrap(), &BoundaryCondition::new(bf.clone()).unwrap(), s)
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_dense_kkt_minimizer((s, q, t, b0, bf) in instance()) {
        let traj = build(s, &q, &t, &b0, &bf);
        let oracle = kkt_oracle(s, &q, &t, &b0, &bf, s - 1);
        let cost = traj.control_effort(&[1.0; 3]).unwrap().cost;
        prop_assert!((traj.coeffs() - &oracle.coeffs).norm() <= 1e-6 * oracle.coeffs.norm());
        prop_assert!((cost - oracle.cost).abs() <= 1e-8 * oracle.cost.abs().max(1e-12));
    }

    #[test]
    fn boundary_and_waypoints_are_exact((s, q, t, b0, bf) in instance()) {
        let traj = build(s, &q, &t, &b0, &bf);
        let total = traj.total_duration();
        let last = traj.pieces() - 1;
        let mut out = vec![0.0; 3];
        for d in 0..s {
            traj.piece_derivative(0, 0.0, d, &mut out);
            for j in 0..3 {
                prop_assert!((out[j] - b0[(d, j)]).abs() <= 1e-9 * (1.0 + b0[(d, j)].abs()));
            }
            traj.piece_derivative(last, t[last], d, &mut out);
            for j in 0..3 {
                prop_assert!((out[j] - bf[(d, j)]).abs() <= 1e-8 * (1.0 + bf[(d, j)].abs()), "order {d}");
            }
        }
        let w = traj.waypoints();
        prop_assert!((w - &q).amax() <= 1e-9 * (1.0 + q.amax()));
        prop_assert!((traj.evaluate(total, 0).unwrap()[0] - bf[(0, 0)]).abs() <= 1e-8 * (1.0 + bf[(0, 0)].abs()));
    }

    #[test]
    fn continuous_through_order_2s_minus_2((s, q, t, b0, bf) in instance()) {
        let traj = build(s, &q, &t, &b0, &bf);
        let mut l = vec![0.0; 3];
        let mut r = vec![0.0; 3];
        for i in 0..traj.pieces().saturating_sub(1) {
            for d in 0..=2 * s - 2 {
                traj.piece_derivative(i, t[i], d, &mut l);
                traj.piece_derivative(i + 1, 0.0, d, &mut r);
                for j in 0..3 {
                    let scale = l[j].abs().max(r[j].abs()).max(1.0);
                    prop_assert!((l[j] - r[j]).abs() <= 1e-8 * scale, "knot {i} order {d}");
                }
            }
        }
    }

    #[test]
    fn propagated_gradient_matches_finite_differences(
        (s, q, t, b0, bf) in instance(),
        w in proptest::collection::vec(-1.0..1.0f64, 3),
    ) {
        prop_assume!(t.len() >= 2);
        let bc0 = BoundaryCondition::new(b0).unwrap();
        let bcf = BoundaryCondition::new(bf).unwrap();
        // K(c, T) = effort + sum_j w_j c_{0j}^2 + sum T^3
        let objective = |tr: &Trajectory| {
            let e = tr.control_effort(&[1.0, 2.0, 0.5]).unwrap();
            let c = tr.coeffs();
            e.cost + (0..3).map(|j| w[j] * c[(1, j)] * c[(1, j)]).sum::<f64>()
                + tr.durations().iter().map(|v| v.powi(3)).sum::<f64>()
        };
        let traj = construct(&q, &t, &bc0, &bcf, s).unwrap();
        let e = traj.control_effort(&[1.0, 2.0, 0.5]).unwrap();
        let mut dc = e.d_coeffs.clone();
        for j in 0..3 {
            dc[(1, j)] += 2.0 * w[j] * traj.coeffs()[(1, j)];
        }
        let dt: Vec<f64> = e.d_durations.iter().zip(&t).map(|(d, v)| d + 3.0 * v * v).collect();
        let (dq, dtot) = traj.propagate_gradient(&dc, &dt).unwrap();

        let fd_q = fd_gradient(
            |x| objective(&construct(&DMatrix::from_column_slice(3, q.ncols(), x), &t, &bc0, &bcf, s).unwrap()),
            q.as_slice(),
            1e-4,
        );
        let fd_t = fd_gradient(|x| objective(&construct(&q, x, &bc0, &bcf, s).unwrap()), &t, 1e-4);
        prop_assert!(rel_err(dq.as_slice(), &fd_q) <= 1e-5, "dq {}", rel_err(dq.as_slice(), &fd_q));
        prop_assert!(rel_err(&dtot, &fd_t) <= 1e-5, "dT {}", rel_err(&dtot, &fd_t));
    }
}

#[test]
fn highest_order_jumps_on_random_instances() {
    let q = DMatrix::from_vec(3, 2, vec![1.0, -2.0, 0.5, 3.0, 1.0, -1.0]);
    let t = [1.0, 1.7, 0.6];
    for s in 2..=4 {
        let traj =
            construct(&q, &t, &BoundaryCondition::rest(&[0.0; 3], s), &BoundaryCondition::rest(&[4.0, 0.0, 1.0], s), s)
                .unwrap();
        let mut l = vec![0.0; 3];
        let mut r = vec![0.0; 3];
        traj.piece_derivative(0, t[0], 2 * s - 1, &mut l);
        traj.piece_derivative(1, 0.0, 2 * s - 1, &mut r);
        let jump = l.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(jump > 1e-3, "s = {s}: jump {jump}");
    }
}

#[test]
fn single_piece_needs_no_waypoints() {
    let q = DMatrix::zeros(3, 0);
    let traj =
        construct(&q, &[2.0], &BoundaryCondition::rest(&[0.0; 3], 3), &BoundaryCondition::rest(&[1.0, 2.0, 3.0], 3), 3)
            .unwrap();
    let mid = traj.evaluate(1.0, 0).unwrap();
    for (m, e) in mid.iter().zip([0.5, 1.0, 1.5]) {
        assert!((m - e).abs() < 1e-12);
    }
}
