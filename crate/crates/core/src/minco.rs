//! Minimum-control polynomial splines.
//!
//! For integrator order `s`, every piece is a degree `2s - 1` polynomial in
//! local time. Given intermediate waypoints `q`, durations `T` and the
//! boundary derivative stacks, the coefficients solve a banded linear
//! system `M(T) c = b(q)`. The factorization of `M` is kept so that cost
//! gradients with respect to `c` and `T` can be pulled back to `q` and `T`
//! with one adjoint solve.

use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};

use crate::banded::{BandedMatrix, PluFactors};
use crate::error::{Error, Result};

/// Derivatives `0..s` at one end of the trajectory, one row per order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCondition {
    derivs: DMatrix<f64>,
}

impl BoundaryCondition {
    /// `derivs` has one row per derivative order and one column per dimension.
    pub fn new(derivs: DMatrix<f64>) -> Result<Self> {
        if derivs.nrows() == 0 || derivs.ncols() == 0 {
            return Err(Error::InvalidInput("empty boundary condition".into()));
        }
        if derivs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite boundary condition".into()));
        }
        Ok(Self { derivs })
    }

    /// At rest at `position`: all higher derivatives zero.
    pub fn rest(position: &[f64], s: usize) -> Self {
        let mut derivs = DMatrix::zeros(s, position.len());
        for (j, p) in position.iter().enumerate() {
            derivs[(0, j)] = *p;
        }
        Self { derivs }
    }

    pub fn order(&self) -> usize {
        self.derivs.nrows()
    }

    pub fn dim(&self) -> usize {
        self.derivs.ncols()
    }

    pub fn derivs(&self) -> &DMatrix<f64> {
        &self.derivs
    }

    pub fn position(&self) -> Vec<f64> {
        self.derivs.row(0).iter().copied().collect()
    }
}

/// `k! / (k - d)!`, zero when `d > k`.
#[inline]
pub fn falling_factorial(k: usize, d: usize) -> f64 {
    if d > k {
        return 0.0;
    }
    ((k - d + 1)..=k).fold(1.0, |acc, v| acc * v as f64)
}

/// Fill `out` with the `order`-th derivative of the monomial basis at `t`.
pub fn basis(order: usize, t: f64, out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate() {
        *o = if k < order { 0.0 } else { falling_factorial(k, order) * t.powi((k - order) as i32) };
    }
}

fn check_inputs(
    q: &DMatrix<f64>,
    durations: &[f64],
    bc0: &BoundaryCondition,
    bcf: &BoundaryCondition,
    s: usize,
) -> Result<()> {
    let pieces = durations.len();
    if s == 0 {
        return Err(Error::InvalidInput("integrator order must be at least 1".into()));
    }
    if pieces == 0 {
        return Err(Error::InvalidInput("at least one piece is required".into()));
    }
    for (index, &value) in durations.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveDuration { index, value });
        }
    }
    let m = bc0.dim();
    if bcf.dim() != m {
        return Err(Error::DimensionMismatch { expected: m, found: bcf.dim() });
    }
    if bc0.order() != s {
        return Err(Error::DimensionMismatch { expected: s, found: bc0.order() });
    }
    if bcf.order() != s {
        return Err(Error::DimensionMismatch { expected: s, found: bcf.order() });
    }
    if q.ncols() != pieces - 1 {
        return Err(Error::DimensionMismatch { expected: pieces - 1, found: q.ncols() });
    }
    if pieces > 1 && q.nrows() != m {
        return Err(Error::DimensionMismatch { expected: m, found: q.nrows() });
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite waypoint".into()));
    }
    Ok(())
}

/// Row index of the waypoint condition at interior knot `i` (1-based).
#[inline]
fn waypoint_row(s: usize, i: usize) -> usize {
    s + (i - 1) * 2 * s
}

/// Derivative orders of the rows occupied by piece `i`'s `E` block.
fn e_block(s: usize, pieces: usize, i: usize) -> (usize, Vec<usize>) {
    if i + 1 < pieces {
        let mut orders = Vec::with_capacity(2 * s);
        orders.push(0);
        orders.extend(0..2 * s - 1);
        (s + i * 2 * s, orders)
    } else {
        (s + (pieces - 1) * 2 * s, (0..s).collect())
    }
}

/// Assemble the banded optimality system `M c = b`.
///
/// `q` holds one waypoint per column (`m x (M - 1)`).
pub fn build_system(
    q: &DMatrix<f64>,
    durations: &[f64],
    bc0: &BoundaryCondition,
    bcf: &BoundaryCondition,
    s: usize,
) -> Result<(BandedMatrix, DMatrix<f64>)> {
    check_inputs(q, durations, bc0, bcf, s)?;
    let pieces = durations.len();
    let m = bc0.dim();
    let nc = 2 * s;
    let n = nc * pieces;
    let mut a = BandedMatrix::zeros(n, s + 1, s.saturating_sub(1));
    let mut b = DMatrix::zeros(n, m);
    let mut row = vec![0.0; nc];

    for d in 0..s {
        a.set(d, d, falling_factorial(d, d));
        for j in 0..m {
            b[(d, j)] = bc0.derivs[(d, j)];
        }
    }
    for i in 0..pieces {
        let t = durations[i];
        let (base, orders) = e_block(s, pieces, i);
        for (r, &d) in orders.iter().enumerate() {
            basis(d, t, &mut row);
            for k in d..nc {
                a.set(base + r, i * nc + k, row[k]);
            }
        }
        if i + 1 < pieces {
            // Continuity rows pair with -beta^(d)(0) of the next piece.
            for d in 0..nc - 1 {
                a.set(base + 1 + d, (i + 1) * nc + d, -falling_factorial(d, d));
            }
            for j in 0..m {
                b[(base, j)] = q[(j, i)];
            }
        } else {
            for d in 0..s {
                for j in 0..m {
                    b[(base + d, j)] = bcf.derivs[(d, j)];
                }
            }
        }
    }
    Ok((a, b))
}

const EQUILIBRATION_SWEEPS: usize = 30;

/// Equilibrated factorization of `M`.
///
/// Columns are scaled by `T_i^{-k}` (so the unknowns are coefficients in
/// normalized local time), then rows and columns are balanced by repeated
/// square-root max-norm sweeps.
#[derive(Debug)]
pub struct SystemFactors {
    plu: PluFactors,
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
}

impl SystemFactors {
    pub fn new(mut a: BandedMatrix, durations: &[f64], s: usize) -> Result<Self> {
        let nc = 2 * s;
        let n = a.dim();
        let mut col_scale = vec![1.0; n];
        for (i, &t) in durations.iter().enumerate() {
            let inv = 1.0 / t;
            let mut f = 1.0;
            for k in 0..nc {
                col_scale[i * nc + k] = f;
                f *= inv;
            }
        }
        for (j, &c) in col_scale.iter().enumerate() {
            if c != 1.0 {
                a.scale_col(j, c);
            }
        }
        let mut row_scale = vec![1.0; n];
        for _ in 0..EQUILIBRATION_SWEEPS {
            let mut done = true;
            for (i, r) in row_scale.iter_mut().enumerate() {
                let mx = a.row_max_abs(i);
                if mx > 0.0 && mx.is_finite() && (mx - 1.0).abs() > 0.5 {
                    let f = 1.0 / mx.sqrt();
                    *r *= f;
                    a.scale_row(i, f);
                    done = false;
                }
            }
            for (j, mx) in a.col_max_abs().into_iter().enumerate() {
                if mx > 0.0 && mx.is_finite() && (mx - 1.0).abs() > 0.5 {
                    let f = 1.0 / mx.sqrt();
                    col_scale[j] *= f;
                    a.scale_col(j, f);
                    done = false;
                }
            }
            if done {
                break;
            }
        }
        Ok(Self { plu: a.factorize()?, row_scale, col_scale })
    }

    /// `M^{-1} b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut x = DMatrix::zeros(b.nrows(), b.ncols());
        if b.nrows() != self.plu.dim() {
            return Err(Error::DimensionMismatch { expected: self.plu.dim(), found: b.nrows() });
        }
        for (j, mut col) in x.column_iter_mut().enumerate() {
            let buf = col.as_mut_slice();
            for (i, v) in buf.iter_mut().enumerate() {
                *v = b[(i, j)] * self.row_scale[i];
            }
            self.plu.solve_in_place(buf);
            for (v, c) in buf.iter_mut().zip(&self.col_scale) {
                *v *= c;
            }
        }
        Ok(x)
    }

    /// `M^{-T} g`.
    pub fn solve_adjoint(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if g.nrows() != self.plu.dim() {
            return Err(Error::DimensionMismatch { expected: self.plu.dim(), found: g.nrows() });
        }
        let mut x = DMatrix::zeros(g.nrows(), g.ncols());
        for (j, mut col) in x.column_iter_mut().enumerate() {
            let buf = col.as_mut_slice();
            for (i, v) in buf.iter_mut().enumerate() {
                *v = g[(i, j)] * self.col_scale[i];
            }
            self.plu.solve_adjoint_in_place(buf);
            for (v, r) in buf.iter_mut().zip(&self.row_scale) {
                *v *= r;
            }
        }
        Ok(x)
    }
}

/// A piecewise-polynomial trajectory in the monomial basis of local time.
#[derive(Debug, Clone)]
pub struct Trajectory {
    s: usize,
    durations: Vec<f64>,
    coeffs: DMatrix<f64>,
    starts: Vec<f64>,
    factors: Option<Arc<SystemFactors>>,
}

/// Control effort and its partial derivatives.
#[derive(Debug, Clone)]
pub struct Effort {
    pub cost: f64,
    pub d_coeffs: DMatrix<f64>,
    pub d_durations: Vec<f64>,
}

/// Unique control-effort minimizer through `q` with durations `T`.
pub fn construct(
    q: &DMatrix<f64>,
    durations: &[f64],
    bc0: &BoundaryCondition,
    bcf: &BoundaryCondition,
    s: usize,
) -> Result<Trajectory> {
    let (a, b) = build_system(q, durations, bc0, bcf, s)?;
    let factors = SystemFactors::new(a, durations, s)?;
    let coeffs = factors.solve(&b)?;
    Ok(Trajectory::assemble(s, durations.to_vec(), coeffs, Some(Arc::new(factors))))
}

impl Trajectory {
    fn assemble(s: usize, durations: Vec<f64>, coeffs: DMatrix<f64>, factors: Option<Arc<SystemFactors>>) -> Self {
        let mut starts = Vec::with_capacity(durations.len() + 1);
        let mut acc = 0.0;
        starts.push(0.0);
        for t in &durations {
            acc += t;
            starts.push(acc);
        }
        Self { s, durations, coeffs, starts, factors }
    }

    /// A trajectory from raw coefficients, without a retained factorization.
    pub fn from_coefficients(s: usize, durations: Vec<f64>, coeffs: DMatrix<f64>) -> Result<Self> {
        if s == 0 || durations.is_empty() {
            return Err(Error::InvalidInput("empty trajectory".into()));
        }
        for (index, &value) in durations.iter().enumerate() {
            if !(value > 0.0) {
                return Err(Error::NonPositiveDuration { index, value });
            }
        }
        if coeffs.nrows() != 2 * s * durations.len() {
            return Err(Error::DimensionMismatch { expected: 2 * s * durations.len(), found: coeffs.nrows() });
        }
        Ok(Self::assemble(s, durations, coeffs, None))
    }

    pub fn order(&self) -> usize {
        self.s
    }

    pub fn dim(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn pieces(&self) -> usize {
        self.durations.len()
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn total_duration(&self) -> f64 {
        self.starts[self.pieces()]
    }

    /// Start time of every piece followed by the total duration.
    pub fn knots(&self) -> &[f64] {
        &self.starts
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    /// `2s x m` coefficient block of piece `i`.
    pub fn piece_coeffs(&self, i: usize) -> DMatrixView<'_, f64> {
        let nc = 2 * self.s;
        self.coeffs.view((i * nc, 0), (nc, self.dim()))
    }

    /// Piece index and local time for global time `t`. Knots belong to the
    /// piece on their right, except the final time.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let total = self.total_duration();
        if !(t >= 0.0 && t <= total) {
            return Err(Error::OutOfDomain { t, total });
        }
        let pieces = self.pieces();
        let i = match self.starts[..pieces].binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        Ok((i, t - self.starts[i]))
    }

    /// `order`-th derivative of piece `i` at local time `t` (Horner).
    pub fn piece_derivative(&self, i: usize, t: f64, order: usize, out: &mut [f64]) {
        let nc = 2 * self.s;
        let base = i * nc;
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in (order..nc).rev() {
                acc = acc * t + self.coeffs[(base + k, j)] * falling_factorial(k, order);
            }
            *o = acc;
        }
    }

    /// `order`-th derivative at global time `t`.
    pub fn evaluate(&self, t: f64, order: usize) -> Result<Vec<f64>> {
        let (i, local) = self.locate(t)?;
        let mut out = vec![0.0; self.dim()];
        self.piece_derivative(i, local, order, &mut out);
        Ok(out)
    }

    /// Interior waypoints recovered from the coefficients (`m x (M - 1)`).
    pub fn waypoints(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut q = DMatrix::zeros(m, self.pieces() - 1);
        let mut buf = vec![0.0; m];
        for i in 0..self.pieces() - 1 {
            self.piece_derivative(i + 1, 0.0, 0, &mut buf);
            for j in 0..m {
                q[(j, i)] = buf[j];
            }
        }
        q
    }

    /// `\sum_i \int_0^{T_i} p_i^{(s)T} W p_i^{(s)} dt` with diagonal `W`.
    pub fn control_effort(&self, weights: &[f64]) -> Result<Effort> {
        let m = self.dim();
        if weights.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: weights.len() });
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidInput("effort weights must be positive".into()));
        }
        let s = self.s;
        let nc = 2 * s;
        let mut cost = 0.0;
        let mut d_coeffs = DMatrix::zeros(self.coeffs.nrows(), m);
        let mut d_durations = vec![0.0; self.pieces()];
        let mut gram = vec![0.0; nc * nc];
        let mut dgram = vec![0.0; nc * nc];
        for (i, &t) in self.durations.iter().enumerate() {
            for k in s..nc {
                for l in s..nc {
                    let f = falling_factorial(k, s) * falling_factorial(l, s);
                    let e = (k + l - 2 * s) as i32;
                    gram[k * nc + l] = f * t.powi(e + 1) / (e + 1) as f64;
                    dgram[k * nc + l] = f * t.powi(e);
                }
            }
            let base = i * nc;
            for j in 0..m {
                let w = weights[j];
                for k in s..nc {
                    let ck = self.coeffs[(base + k, j)];
                    let mut hc = 0.0;
                    let mut dhc = 0.0;
                    for l in s..nc {
                        let cl = self.coeffs[(base + l, j)];
                        hc += gram[k * nc + l] * cl;
                        dhc += dgram[k * nc + l] * cl;
                    }
                    cost += w * ck * hc;
                    d_durations[i] += w * ck * dhc;
                    d_coeffs[(base + k, j)] = 2.0 * w * hc;
                }
            }
        }
        Ok(Effort { cost, d_coeffs, d_durations })
    }

    /// Pull `(dK/dc, dK/dT)` back to `(dW/dq, dW/dT)`.
    ///
    /// Returns the waypoint gradient as `m x (M - 1)` and the duration
    /// gradient of length `M`.
    pub fn propagate_gradient(&self, d_coeffs: &DMatrix<f64>, d_durations: &[f64]) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let factors = self
            .factors
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("trajectory has no retained factorization".into()))?;
        let m = self.dim();
        let pieces = self.pieces();
        if d_coeffs.nrows() != self.coeffs.nrows() || d_coeffs.ncols() != m {
            return Err(Error::DimensionMismatch { expected: self.coeffs.nrows(), found: d_coeffs.nrows() });
        }
        if d_durations.len() != pieces {
            return Err(Error::DimensionMismatch { expected: pieces, found: d_durations.len() });
        }
        let g = factors.solve_adjoint(d_coeffs)?;
        let s = self.s;
        let nc = 2 * s;

        let mut dq = DMatrix::zeros(m, pieces - 1);
        for i in 1..pieces {
            let r = waypoint_row(s, i);
            for j in 0..m {
                dq[(j, i - 1)] = g[(r, j)];
            }
        }

        let mut dt = d_durations.to_vec();
        let mut row = vec![0.0; nc];
        for (i, dti) in dt.iter_mut().enumerate() {
            let t = self.durations[i];
            let (base, orders) = e_block(s, pieces, i);
            let mut tr = 0.0;
            for (r, &d) in orders.iter().enumerate() {
                basis(d + 1, t, &mut row);
                for j in 0..m {
                    let mut ec = 0.0;
                    for k in d + 1..nc {
                        ec += row[k] * self.coeffs[(i * nc + k, j)];
                    }
                    tr += g[(base + r, j)] * ec;
                }
            }
            *dti -= tr;
        }
        Ok((dq, dt))
    }

    pub fn to_data(&self) -> TrajectoryData {
        let nc = 2 * self.s;
        let coeffs = (0..self.pieces())
            .map(|i| (0..nc).map(|k| (0..self.dim()).map(|j| self.coeffs[(i * nc + k, j)]).collect()).collect())
            .collect();
        TrajectoryData { s: self.s, m: self.dim(), durations: self.durations.clone(), coeffs }
    }
}

/// Serialized trajectory: `coeffs[piece][row][col]`, rows in ascending
/// monomial order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryData {
    pub s: usize,
    pub m: usize,
    pub durations: Vec<f64>,
    pub coeffs: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<TrajectoryData> for Trajectory {
    type Error = Error;

    fn try_from(data: TrajectoryData) -> Result<Self> {
        let nc = 2 * data.s;
        if data.coeffs.len() != data.durations.len() {
            return Err(Error::DimensionMismatch { expected: data.durations.len(), found: data.coeffs.len() });
        }
        let mut coeffs = DMatrix::zeros(nc * data.durations.len(), data.m);
        for (i, block) in data.coeffs.iter().enumerate() {
            if block.len() != nc {
                return Err(Error::DimensionMismatch { expected: nc, found: block.len() });
            }
            for (k, row) in block.iter().enumerate() {
                if row.len() != data.m {
                    return Err(Error::DimensionMismatch { expected: data.m, found: row.len() });
                }
                for (j, v) in row.iter().enumerate() {
                    coeffs[(i * nc + k, j)] = *v;
                }
            }
        }
        Trajectory::from_coefficients(data.s, data.durations, coeffs)
    }
}
