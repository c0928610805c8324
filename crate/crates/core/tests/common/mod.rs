#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};

/// `k (k-1) .. (k-d+1) t^(k-d)`, computed directly.
pub fn monomial_derivative(k: usize, d: usize, t: f64) -> f64 {
    if d > k {
        return 0.0;
    }
    let mut f = 1.0;
    for j in 0..d {
        f *= (k - j) as f64;
    }
    f * t.powi((k - d) as i32)
}

pub struct Oracle {
    pub coeffs: DMatrix<f64>,
    pub cost: f64,
}

/// Dense equality-constrained least-effort problem solved through its KKT
/// system. Continuity is imposed for orders `0..=continuity`.
///
/// `bc0`, `bcf` are `s x m`; `q` is `m x (M-1)`.
pub fn kkt_oracle(
    s: usize,
    q: &DMatrix<f64>,
    t: &[f64],
    bc0: &DMatrix<f64>,
    bcf: &DMatrix<f64>,
    continuity: usize,
) -> Oracle {
    let pieces = t.len();
    let nc = 2 * s;
    let n = nc * pieces;
    let m = bc0.ncols();

    let mut h = DMatrix::zeros(n, n);
    for (i, &ti) in t.iter().enumerate() {
        for k in s..nc {
            for l in s..nc {
                let e = (k + l - 2 * s) as i32;
                let fk = monomial_derivative(k, s, 1.0);
                let fl = monomial_derivative(l, s, 1.0);
                h[(i * nc + k, i * nc + l)] = fk * fl * ti.powi(e + 1) / (e + 1) as f64;
            }
        }
    }

    // (sparse row, right-hand side per column)
    type Row = (Vec<(usize, f64)>, Vec<f64>);
    let mut rows: Vec<Row> = Vec::new();
    for d in 0..s {
        let entry: Vec<(usize, f64)> = (0..nc).map(|k| (k, monomial_derivative(k, d, 0.0))).collect();
        rows.push((entry, bc0.row(d).iter().copied().collect()));
        let base = (pieces - 1) * nc;
        let entry: Vec<(usize, f64)> = (0..nc).map(|k| (base + k, monomial_derivative(k, d, t[pieces - 1]))).collect();
        rows.push((entry, bcf.row(d).iter().copied().collect()));
    }
    for i in 0..pieces - 1 {
        let entry: Vec<(usize, f64)> = (0..nc).map(|k| (i * nc + k, monomial_derivative(k, 0, t[i]))).collect();
        rows.push((entry, q.column(i).iter().copied().collect()));
        for d in 0..=continuity {
            let mut entry: Vec<(usize, f64)> = (0..nc).map(|k| (i * nc + k, monomial_derivative(k, d, t[i]))).collect();
            entry.extend((0..nc).map(|k| ((i + 1) * nc + k, -monomial_derivative(k, d, 0.0))));
            rows.push((entry, vec![0.0; m]));
        }
    }

    let nr = rows.len();
    let mut kkt = DMatrix::zeros(n + nr, n + nr);
    let mut rhs = DMatrix::zeros(n + nr, m);
    kkt.view_mut((0, 0), (n, n)).copy_from(&(&h * 2.0));
    for (r, (entry, b)) in rows.iter().enumerate() {
        for &(c, v) in entry {
            kkt[(n + r, c)] += v;
            kkt[(c, n + r)] += v;
        }
        for j in 0..m {
            rhs[(n + r, j)] = b[j];
        }
    }
    let sol = kkt.lu().solve(&rhs).expect("KKT system is nonsingular");
    let coeffs = sol.rows(0, n).into_owned();
    let cost = (0..m)
        .map(|j| {
            let c: DVector<f64> = coeffs.column(j).into_owned();
            c.dot(&(&h * &c))
        })
        .sum();
    Oracle { coeffs, cost }
}

/// Central differences with one Richardson step, `O(h^4)` accurate.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    let mut diff = |i: usize, step: f64, xs: &mut Vec<f64>| {
        xs[i] = x[i] + step;
        let fp = f(xs);
        xs[i] = x[i] - step;
        let fm = f(xs);
        xs[i] = x[i];
        (fp - fm) / (2.0 * step)
    };
    (0..x.len())
        .map(|i| {
            let step = h * x[i].abs().max(1.0);
            let d1 = diff(i, step, &mut xs);
            let d2 = diff(i, 0.5 * step, &mut xs);
            (4.0 * d2 - d1) / 3.0
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(1e-12)
}
