//! Smooth maps from unconstrained coordinates onto the constraint sets of
//! durations and waypoints.
//!
//! Every map has a forward evaluation, a local inverse used for warm starts
//! and a pullback (Jacobian-transpose product).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lbfgs::{self, LbfgsParams};

const TAU_CLAMP: f64 = 40.0;

/// Nudge entries by single ulps until the left-to-right sum of `out`
/// equals `total` exactly. Larger entries are tried first; a step on one
/// entry can skip the target under round-half-even, so smaller entries with
/// finer spacing follow.
fn exact_sum(out: &mut [f64], total: f64) {
    let sum_of = |v: &[f64]| v.iter().sum::<f64>();
    let sum = sum_of(out);
    if sum != total && (sum - total).abs() > 4.0 * f64::EPSILON * total.abs() {
        let k = (0..out.len()).max_by(|&a, &b| out[a].total_cmp(&out[b])).unwrap_or(0);
        out[k] += total - sum;
    }
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|&a, &b| out[b].total_cmp(&out[a]));
    for k in order {
        for _ in 0..16 {
            let sum = sum_of(out);
            if sum == total {
                return;
            }
            let saved = out[k];
            out[k] = if sum < total { saved.next_up() } else { saved.next_down() };
            let after = sum_of(out);
            if out[k] <= 0.0 || ((after - total).signum() == -(sum - total).signum() && after != total) {
                out[k] = saved;
                break;
            }
        }
    }
}

/// Parameterization of the duration vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeMap {
    /// `T > 0` with `sum(T) = total`; `M - 1` free coordinates.
    FixedTotal { total: f64 },
    /// `T = exp(tau)`; `M` free coordinates.
    FreePositive,
}

impl TimeMap {
    pub fn fixed_total(total: f64) -> Result<Self> {
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidInput(format!("total duration must be positive, got {total}")));
        }
        Ok(TimeMap::FixedTotal { total })
    }

    /// Number of free coordinates for `pieces` durations.
    pub fn param_dim(&self, pieces: usize) -> usize {
        match self {
            TimeMap::FixedTotal { .. } => pieces - 1,
            TimeMap::FreePositive => pieces,
        }
    }

    /// Number of durations produced from `tau`.
    pub fn pieces(&self, tau_len: usize) -> usize {
        match self {
            TimeMap::FixedTotal { .. } => tau_len + 1,
            TimeMap::FreePositive => tau_len,
        }
    }

    pub fn forward(&self, tau: &[f64]) -> Vec<f64> {
        match *self {
            TimeMap::FreePositive => tau.iter().map(|t| t.clamp(-TAU_CLAMP, TAU_CLAMP).exp()).collect(),
            TimeMap::FixedTotal { total } => {
                let shift = tau.iter().fold(0.0f64, |m, t| m.max(t.clamp(-TAU_CLAMP, TAU_CLAMP)));
                let e: Vec<f64> = tau.iter().map(|t| (t.clamp(-TAU_CLAMP, TAU_CLAMP) - shift).exp()).collect();
                let denom = (-shift).exp() + e.iter().sum::<f64>();
                let mut out: Vec<f64> = e.iter().map(|v| v * total / denom).collect();
                let direct = (-shift).exp() * total / denom;
                let used: f64 = out.iter().sum();
                let rest = total - used;
                if rest >= 0.5 * direct {
                    out.push(rest);
                } else {
                    // The remainder lost all precision; let the largest
                    // entry absorb the rounding instead.
                    out.push(direct);
                    let k = (0..out.len()).max_by(|&a, &b| out[a].partial_cmp(&out[b]).unwrap()).unwrap();
                    let others: f64 = out.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, v)| v).sum();
                    out[k] = total - others;
                }
                exact_sum(&mut out, total);
                out
            }
        }
    }

    pub fn backward(&self, durations: &[f64]) -> Result<Vec<f64>> {
        if let Some(bad) = durations.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(Error::DomainViolation(format!("duration {bad} is not positive")));
        }
        match *self {
            TimeMap::FreePositive => Ok(durations.iter().map(|t| t.ln()).collect()),
            TimeMap::FixedTotal { total } => {
                let sum: f64 = durations.iter().sum();
                if (sum - total).abs() > 1e-9 * total {
                    return Err(Error::DomainViolation(format!("durations sum to {sum}, expected {total}")));
                }
                let last = *durations
                    .last()
                    .ok_or_else(|| Error::DomainViolation("at least one duration is required".into()))?;
                Ok(durations[..durations.len() - 1].iter().map(|t| (t / last).ln()).collect())
            }
        }
    }

    /// Gradient with respect to `tau` of a cost whose gradient with respect
    /// to `T = forward(tau)` is `grad`.
    pub fn pullback(&self, tau: &[f64], grad: &[f64]) -> Vec<f64> {
        let durations = self.forward(tau);
        let active = |t: f64| (-TAU_CLAMP..=TAU_CLAMP).contains(&t);
        match *self {
            TimeMap::FreePositive => {
                tau.iter().zip(&durations).zip(grad).map(|((t, d), g)| if active(*t) { d * g } else { 0.0 }).collect()
            }
            TimeMap::FixedTotal { total } => {
                let mean: f64 = durations.iter().zip(grad).map(|(d, g)| d * g).sum::<f64>() / total;
                tau.iter()
                    .enumerate()
                    .map(|(j, t)| if active(*t) { durations[j] * (grad[j] - mean) } else { 0.0 })
                    .collect()
            }
        }
    }
}

/// Smooth surjection onto a closed ball, optionally embedded in an affine
/// subspace spanned by the orthonormal columns of `basis`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallMap {
    center: DVector<f64>,
    radius: f64,
    basis: Option<DMatrix<f64>>,
}

impl BallMap {
    pub fn new(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidInput(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius, basis: None })
    }

    /// A ball of dimension `basis.ncols()` lying in the plane through
    /// `center` spanned by `basis`.
    pub fn embedded(center: DVector<f64>, radius: f64, basis: DMatrix<f64>) -> Result<Self> {
        if basis.nrows() != center.len() {
            return Err(Error::DimensionMismatch { expected: center.len(), found: basis.nrows() });
        }
        let mut map = Self::new(center, radius)?;
        map.basis = Some(basis);
        Ok(map)
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Dimension of the unconstrained coordinate.
    pub fn param_dim(&self) -> usize {
        self.basis.as_ref().map_or(self.center.len(), |b| b.ncols())
    }

    pub fn ambient_dim(&self) -> usize {
        self.center.len()
    }

    fn lift(&self, local: DVector<f64>) -> DVector<f64> {
        match &self.basis {
            Some(b) => b * local,
            None => local,
        }
    }

    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            Some(b) => b.tr_mul(v),
            None => v.clone(),
        }
    }

    pub fn forward(&self, xi: &DVector<f64>) -> DVector<f64> {
        let s = xi.norm_squared() + 1.0;
        &self.center + self.lift(xi * (2.0 * self.radius / s))
    }

    pub fn backward(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let local = self.project(&(q - &self.center));
        let d2 = local.norm_squared();
        let r = self.radius;
        if d2.sqrt() > r * (1.0 + 1e-12) {
            return Err(Error::DomainViolation(format!("point at distance {} outside ball of radius {r}", d2.sqrt())));
        }
        if d2 == 0.0 {
            return Ok(DVector::zeros(local.len()));
        }
        let k = (r - (r * r - d2).max(0.0).sqrt()) / d2;
        Ok(local * k)
    }

    pub fn pullback(&self, xi: &DVector<f64>, grad: &DVector<f64>) -> DVector<f64> {
        let g = self.project(grad);
        let s = xi.norm_squared() + 1.0;
        let r = self.radius;
        let k = 4.0 * r * xi.dot(&g) / (s * s);
        g * (2.0 * r / s) - xi * k
    }
}

/// Smooth surjection onto the convex hull of `v_0..v_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeMap {
    v0: DVector<f64>,
    vhat: DMatrix<f64>,
}

impl PolytopeMap {
    /// `vertices[0]` becomes the base vertex.
    pub fn new(vertices: &[DVector<f64>]) -> Result<Self> {
        let Some(v0) = vertices.first() else {
            return Err(Error::InvalidInput("polytope needs at least one vertex".into()));
        };
        let n = v0.len();
        let mut vhat = DMatrix::zeros(n, vertices.len() - 1);
        for (k, v) in vertices[1..].iter().enumerate() {
            if v.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: v.len() });
            }
            vhat.set_column(k, &(v - v0));
        }
        Ok(Self { v0: v0.clone(), vhat })
    }

    pub fn param_dim(&self) -> usize {
        self.vhat.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.v0.len()
    }

    pub fn base(&self) -> &DVector<f64> {
        &self.v0
    }

    pub fn edges(&self) -> &DMatrix<f64> {
        &self.vhat
    }

    /// Barycentric weights of `vertices[1..]` produced by `xi`.
    pub fn weights(xi: &DVector<f64>) -> DVector<f64> {
        let s = xi.norm_squared() + 1.0;
        xi.map(|v| 4.0 * v * v / (s * s))
    }

    pub fn forward(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.v0 + &self.vhat * Self::weights(xi)
    }

    pub fn pullback(&self, xi: &DVector<f64>, grad: &DVector<f64>) -> DVector<f64> {
        let s = xi.norm_squared() + 1.0;
        let vg = self.vhat.tr_mul(grad);
        let sq = xi.component_mul(xi);
        let lin = vg.dot(&sq);
        xi.component_mul(&vg) * (8.0 / (s * s)) - xi * (16.0 * lin / (s * s * s))
    }

    /// A preimage of `q`, which must lie in the hull up to `1e-9`.
    pub fn backward(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.ambient_dim();
        let nv = self.param_dim() + 1;
        if q.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: q.len() });
        }
        // [v_0 .. v_n; 1 .. 1] lambda = [q; 1]
        let mut a = DMatrix::zeros(n + 1, nv);
        for i in 0..n {
            a[(i, 0)] = self.v0[i];
        }
        for k in 1..nv {
            a.set_column(k, &(self.vhat.column(k - 1) + &self.v0).insert_row(n, 1.0));
        }
        a.row_mut(n).fill(1.0);
        let rhs = q.clone().insert_row(n, 1.0);

        let uniform = DVector::from_element(nv, 1.0 / nv as f64);
        let mut lambda = {
            let resid = &rhs - &a * &uniform;
            let svd = a.clone().svd(true, true);
            let delta = svd.solve(&resid, 1e-12).map_err(|e| Error::InvalidInput(e.into()))?;
            uniform + delta
        };
        if lambda.min() < 0.0 || (&a * &lambda - &rhs).amax() > 1e-10 {
            let scale = 1.0 + self.vhat.amax() + self.v0.amax();
            let mut aw = a.clone();
            aw.row_mut(n).scale_mut(scale);
            let mut bw = rhs.clone();
            bw[n] *= scale;
            lambda = nnls(&aw, &bw);
        }
        let resid = (&a * &lambda - &rhs).amax();
        let tol = 1e-9 * (1.0 + q.amax());
        if resid > 1e-6 * (1.0 + q.amax()) {
            return Err(Error::DomainViolation(format!("point is outside the polytope (residual {resid:e})")));
        }
        let w = lambda.rows(1, nv - 1).map(|v| if v < 1e-13 { 0.0 } else { v });
        let total = w.sum();
        let y = if total > 1.0 { w.map(|v| (v / total).sqrt()) } else { w.map(f64::sqrt) };
        let y2 = y.norm_squared();
        let mut xi = if y2 == 0.0 { DVector::zeros(nv - 1) } else { &y * ((1.0 - (1.0 - y2).max(0.0).sqrt()) / y2) };
        if (self.forward(&xi) - q).norm() > tol {
            xi = self.polish(xi, q);
        }
        Ok(xi)
    }

    fn polish(&self, xi: DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        let params = LbfgsParams { grad_tol: 1e-14, grad_tol_rel: 0.0, max_iterations: 500, ..Default::default() };
        let res = lbfgs::minimize(
            |x, g| {
                let x = DVector::from_column_slice(x);
                let r = self.forward(&x) - q;
                let gx = self.pullback(&x, &(&r * 2.0));
                g.copy_from_slice(gx.as_slice());
                r.norm_squared()
            },
            xi.as_slice().to_vec(),
            &params,
        );
        DVector::from_vec(res.x)
    }
}

/// Lawson-Hanson nonnegative least squares.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * (1.0 + a.amax() * b.amax());
    for _ in 0..3 * n + 10 {
        let w = a.tr_mul(&(b - a * &x));
        let pick = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap());
        let Some(j) = pick else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = a.select_columns(&idx);
            let z = sub.svd(true, true).solve(b, 1e-14).unwrap_or_else(|_| DVector::zeros(idx.len()));
            if z.iter().all(|v| *v > 0.0) {
                for (k, &i) in idx.iter().enumerate() {
                    x[i] = z[k];
                }
                break;
            }
            let mut step = 1.0f64;
            for (k, &i) in idx.iter().enumerate() {
                if z[k] <= 0.0 {
                    step = step.min(x[i] / (x[i] - z[k]));
                }
            }
            for (k, &i) in idx.iter().enumerate() {
                x[i] += step * (z[k] - x[i]);
                if x[i] <= 1e-15 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|p| *p) {
                break;
            }
        }
    }
    x
}
