//! Time-integral penalty of constraint violations, discretized with the
//! trapezoidal rule on a uniform grid of normalized stamps per piece.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::flatness::{flat_to_state, flat_to_state_pullback, FlatSignal, VehicleShape};
use crate::geometry::{Ball, HPolytope};
use crate::minco::{basis, Trajectory};

/// Highest derivative order kept per sample. Order 4 only feeds the
/// duration gradient through the stamp `t = T tau`.
pub const SAMPLE_ORDERS: usize = 5;

/// Derivatives of the trajectory at one stamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub derivs: [Vector3<f64>; SAMPLE_ORDERS],
}

impl Sample {
    pub fn flat(&self) -> FlatSignal {
        FlatSignal { p: self.derivs[0], v: self.derivs[1], a: self.derivs[2], j: self.derivs[3] }
    }
}

/// A vector-valued constraint `g <= 0` on the flat derivatives.
pub trait Constraint: Send + Sync {
    fn name(&self) -> &str;

    /// Number of components on `piece`.
    fn count(&self, piece: usize) -> usize;

    /// Raw constraint values (positive means violated).
    fn values(&self, piece: usize, sample: &Sample, out: &mut [f64]) -> Result<()>;

    /// `grad[d] += sum_k weights[k] * d g_k / d p^(d)` for `d = 0..4`.
    fn accumulate_gradient(
        &self,
        piece: usize,
        sample: &Sample,
        weights: &[f64],
        grad: &mut [Vector3<f64>; 4],
    ) -> Result<()>;
}

/// Weighted collection of constraints with shared quadrature settings.
pub struct ConstraintSet {
    entries: Vec<(Box<dyn Constraint>, f64)>,
    exponent: i32,
    resolution: usize,
}

impl std::fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstraintSet")
            .field("constraints", &self.entries.iter().map(|(c, w)| (c.name(), *w)).collect::<Vec<_>>())
            .field("exponent", &self.exponent)
            .field("resolution", &self.resolution)
            .finish()
    }
}

impl ConstraintSet {
    /// `resolution` is the number of quadrature intervals per piece.
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidInput("penalty resolution must be at least 2".into()));
        }
        Ok(Self { entries: Vec::new(), exponent: 3, resolution })
    }

    pub fn with_exponent(mut self, k: i32) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidInput("penalty exponent must be at least 2".into()));
        }
        self.exponent = k;
        Ok(self)
    }

    pub fn push(&mut self, constraint: Box<dyn Constraint>, weight: f64) -> Result<()> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::InvalidInput(format!("penalty weight must be nonnegative, got {weight}")));
        }
        self.entries.push((constraint, weight));
        Ok(())
    }

    pub fn add(mut self, constraint: impl Constraint + 'static, weight: f64) -> Result<Self> {
        self.push(Box::new(constraint), weight)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(c, _)| c.name().to_string()).collect()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }
}

/// Derivatives of piece `i` at local time `t`.
pub fn sample_piece(traj: &Trajectory, i: usize, t: f64) -> Result<Sample> {
    if traj.dim() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, found: traj.dim() });
    }
    let nc = 2 * traj.order();
    let c = traj.piece_coeffs(i);
    let mut row = vec![0.0; nc];
    let mut derivs = [Vector3::zeros(); SAMPLE_ORDERS];
    for (d, out) in derivs.iter_mut().enumerate() {
        basis(d, t, &mut row);
        for k in d..nc {
            for j in 0..3 {
                out[j] += row[k] * c[(k, j)];
            }
        }
    }
    Ok(Sample { derivs })
}

/// Raw constraint values at normalized stamp `stamp` of piece `i`, one
/// vector per constraint.
pub fn sample_constraints(cs: &ConstraintSet, traj: &Trajectory, i: usize, stamp: f64) -> Result<Vec<Vec<f64>>> {
    if !(0.0..=1.0).contains(&stamp) || i >= traj.pieces() {
        return Err(Error::InvalidInput(format!("stamp {stamp} on piece {i} out of range")));
    }
    let sample = sample_piece(traj, i, stamp * traj.durations()[i])?;
    cs.entries
        .iter()
        .map(|(c, _)| {
            let mut out = vec![0.0; c.count(i)];
            c.values(i, &sample, &mut out)?;
            Ok(out)
        })
        .collect()
}

/// Penalty value and gradients with respect to coefficients and durations.
#[derive(Debug, Clone)]
pub struct Penalty {
    pub value: f64,
    pub d_coeffs: DMatrix<f64>,
    pub d_durations: Vec<f64>,
}

struct PieceTerm {
    value: f64,
    dc: Vec<f64>,
    dt: f64,
}

fn piece_term(cs: &ConstraintSet, traj: &Trajectory, i: usize) -> Result<PieceTerm> {
    let nc = 2 * traj.order();
    let kappa = cs.resolution;
    let dur = traj.durations()[i];
    let h = dur / kappa as f64;
    let k = cs.exponent;
    let mut value = 0.0;
    let mut dc = vec![0.0; nc * 3];
    let mut dt = 0.0;
    let mut vals = Vec::new();
    let mut weights = Vec::new();
    let mut row = vec![0.0; nc];
    for j in 0..=kappa {
        let omega = if j == 0 || j == kappa { 0.5 } else { 1.0 };
        let stamp = j as f64 / kappa as f64;
        let t = stamp * dur;
        let sample = sample_piece(traj, i, t)?;
        let mut grad = [Vector3::zeros(); 4];
        let mut local = 0.0;
        let mut any = false;
        for (c, chi) in &cs.entries {
            let n = c.count(i);
            vals.resize(n, 0.0);
            c.values(i, &sample, &mut vals)?;
            weights.clear();
            let mut active = false;
            for &g in vals.iter() {
                if g > 0.0 {
                    local += chi * g.powi(k);
                    weights.push(chi * k as f64 * g.powi(k - 1));
                    active = true;
                } else {
                    weights.push(0.0);
                }
            }
            if active && *chi > 0.0 {
                c.accumulate_gradient(i, &sample, &weights, &mut grad)?;
                any = true;
            }
        }
        if !any {
            continue;
        }
        value += omega * h * local;
        // d/dT through the prefactor h = T / kappa and the stamp t = T stamp.
        let mut chain = 0.0;
        for d in 0..4 {
            chain += grad[d].dot(&sample.derivs[d + 1]);
        }
        dt += omega * (local / kappa as f64 + h * stamp * chain);
        for (d, g) in grad.iter().enumerate() {
            basis(d, t, &mut row);
            for kk in d..nc {
                let b = omega * h * row[kk];
                for m in 0..3 {
                    dc[kk * 3 + m] += b * g[m];
                }
            }
        }
    }
    Ok(PieceTerm { value, dc, dt })
}

/// Trapezoidal penalty `sum_i T_i/kappa sum_j w_j sum chi max(g, 0)^k`.
pub fn integrate_penalty(cs: &ConstraintSet, traj: &Trajectory) -> Result<Penalty> {
    let pieces = traj.pieces();
    let nc = 2 * traj.order();
    if traj.dim() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, found: traj.dim() });
    }
    let terms: Vec<Result<PieceTerm>> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..pieces).into_par_iter().map(|i| piece_term(cs, traj, i)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..pieces).map(|i| piece_term(cs, traj, i)).collect()
        }
    };
    let mut value = 0.0;
    let mut d_coeffs = DMatrix::zeros(nc * pieces, 3);
    let mut d_durations = vec![0.0; pieces];
    for (i, term) in terms.into_iter().enumerate() {
        let term = term?;
        value += term.value;
        d_durations[i] = term.dt;
        for k in 0..nc {
            for m in 0..3 {
                d_coeffs[(i * nc + k, m)] = term.dc[k * 3 + m];
            }
        }
    }
    Ok(Penalty { value, d_coeffs, d_durations })
}

/// Largest raw value of each constraint over `per_piece + 1` uniform stamps
/// on every piece.
pub fn max_violations(cs: &ConstraintSet, traj: &Trajectory, per_piece: usize) -> Result<Vec<f64>> {
    let mut out = vec![f64::NEG_INFINITY; cs.len()];
    let mut vals = Vec::new();
    for i in 0..traj.pieces() {
        for j in 0..=per_piece {
            let t = traj.durations()[i] * j as f64 / per_piece as f64;
            let sample = sample_piece(traj, i, t)?;
            for (slot, (c, _)) in out.iter_mut().zip(&cs.entries) {
                vals.resize(c.count(i), 0.0);
                c.values(i, &sample, &mut vals)?;
                *slot = vals.iter().fold(*slot, |m, v| m.max(*v));
            }
        }
    }
    Ok(out)
}

/// `(|v|^2 - v_max^2) / v_max^2`.
#[derive(Debug, Clone)]
pub struct SpeedSq {
    pub v_max: f64,
}

/// `(|a|^2 - a_max^2) / a_max^2`.
#[derive(Debug, Clone)]
pub struct AccSq {
    pub a_max: f64,
}

fn norm_sq_values(x: &Vector3<f64>, limit: f64, out: &mut [f64]) {
    out[0] = (x.norm_squared() - limit * limit) / (limit * limit);
}

impl Constraint for SpeedSq {
    fn name(&self) -> &str {
        "speed"
    }
    fn count(&self, _: usize) -> usize {
        1
    }
    fn values(&self, _: usize, s: &Sample, out: &mut [f64]) -> Result<()> {
        norm_sq_values(&s.derivs[1], self.v_max, out);
        Ok(())
    }
    fn accumulate_gradient(&self, _: usize, s: &Sample, w: &[f64], grad: &mut [Vector3<f64>; 4]) -> Result<()> {
        grad[1] += s.derivs[1] * (2.0 * w[0] / (self.v_max * self.v_max));
        Ok(())
    }
}

impl Constraint for AccSq {
    fn name(&self) -> &str {
        "acceleration"
    }
    fn count(&self, _: usize) -> usize {
        1
    }
    fn values(&self, _: usize, s: &Sample, out: &mut [f64]) -> Result<()> {
        norm_sq_values(&s.derivs[2], self.a_max, out);
        Ok(())
    }
    fn accumulate_gradient(&self, _: usize, s: &Sample, w: &[f64], grad: &mut [Vector3<f64>; 4]) -> Result<()> {
        grad[2] += s.derivs[2] * (2.0 * w[0] / (self.a_max * self.a_max));
        Ok(())
    }
}

/// Per-piece polytope membership with signed distances to each facet.
#[derive(Debug, Clone)]
pub struct PolytopeContain {
    polytopes: Vec<HPolytope>,
    assignment: Vec<usize>,
}

impl PolytopeContain {
    /// `assignment[i]` is the polytope index for piece `i`.
    pub fn new(polytopes: &[HPolytope], assignment: Vec<usize>) -> Result<Self> {
        check_assignment(&assignment, polytopes.len())?;
        Ok(Self { polytopes: polytopes.iter().map(HPolytope::normalized).collect(), assignment })
    }
}

fn check_assignment(assignment: &[usize], n: usize) -> Result<()> {
    if let Some(bad) = assignment.iter().find(|&&k| k >= n) {
        return Err(Error::InvalidInput(format!("piece assigned to missing primitive {bad}")));
    }
    Ok(())
}

fn row3(p: &HPolytope, k: usize) -> Vector3<f64> {
    Vector3::new(p.a()[(k, 0)], p.a()[(k, 1)], p.a()[(k, 2)])
}

impl Constraint for PolytopeContain {
    fn name(&self) -> &str {
        "containment"
    }
    fn count(&self, piece: usize) -> usize {
        self.polytopes[self.assignment[piece]].rows()
    }
    fn values(&self, piece: usize, s: &Sample, out: &mut [f64]) -> Result<()> {
        let p = &self.polytopes[self.assignment[piece]];
        if p.dim() != 3 {
            return Err(Error::DimensionMismatch { expected: 3, found: p.dim() });
        }
        for (k, o) in out.iter_mut().enumerate() {
            *o = row3(p, k).dot(&s.derivs[0]) - p.b()[k];
        }
        Ok(())
    }
    fn accumulate_gradient(&self, piece: usize, _: &Sample, w: &[f64], grad: &mut [Vector3<f64>; 4]) -> Result<()> {
        let p = &self.polytopes[self.assignment[piece]];
        for (k, wk) in w.iter().enumerate() {
            if *wk != 0.0 {
                grad[0] += row3(p, k) * *wk;
            }
        }
        Ok(())
    }
}

/// Per-piece ball membership, `(|p - o|^2 - r^2) / (2 r)`.
#[derive(Debug, Clone)]
pub struct BallContain {
    balls: Vec<(Vector3<f64>, f64)>,
    assignment: Vec<usize>,
}

impl BallContain {
    pub fn new(balls: &[Ball], assignment: Vec<usize>) -> Result<Self> {
        check_assignment(&assignment, balls.len())?;
        let balls = balls
            .iter()
            .map(|b| {
                if b.center.len() != 3 {
                    return Err(Error::DimensionMismatch { expected: 3, found: b.center.len() });
                }
                Ok((Vector3::from_column_slice(&b.center), b.radius))
            })
            .collect::<Result<_>>()?;
        Ok(Self { balls, assignment })
    }
}

impl Constraint for BallContain {
    fn name(&self) -> &str {
        "containment"
    }
    fn count(&self, _: usize) -> usize {
        1
    }
    fn values(&self, piece: usize, s: &Sample, out: &mut [f64]) -> Result<()> {
        let (o, r) = self.balls[self.assignment[piece]];
        out[0] = ((s.derivs[0] - o).norm_squared() - r * r) / (2.0 * r);
        Ok(())
    }
    fn accumulate_gradient(&self, piece: usize, s: &Sample, w: &[f64], grad: &mut [Vector3<f64>; 4]) -> Result<()> {
        let (o, r) = self.balls[self.assignment[piece]];
        grad[0] += (s.derivs[0] - o) * (w[0] / r);
        Ok(())
    }
}

/// `f_min <= f_spec <= f_max`, normalized by the window width.
#[derive(Debug, Clone)]
pub struct ThrustWindow {
    pub f_min: f64,
    pub f_max: f64,
    pub gravity: f64,
}

impl Constraint for ThrustWindow {
    fn name(&self) -> &str {
        "thrust"
    }
    fn count(&self, _: usize) -> usize {
        2
    }
    fn values(&self, _: usize, s: &Sample, out: &mut [f64]) -> Result<()> {
        let f = flat_to_state(&s.flat(), self.gravity)?.f_spec;
        let width = self.f_max - self.f_min;
        out[0] = (self.f_min - f) / width;
        out[1] = (f - self.f_max) / width;
        Ok(())
    }
    fn accumulate_gradient(&self, _: usize, s: &Sample, w: &[f64], grad: &mut [Vector3<f64>; 4]) -> Result<()> {
        let gf = (w[1] - w[0]) / (self.f_max - self.f_min);
        let g = flat_to_state_pullback(&s.flat(), self.gravity, &Matrix3::zeros(), gf, &Vector3::zeros())?;
        grad[2] += g.a;
        grad[3] += g.j;
        Ok(())
    }
}

/// `(|omega|^2 - omega_max^2) / omega_max^2`.
#[derive(Debug, Clone)]
pub struct BodyRateSq {
    pub omega_max: f64,
    pub gravity: f64,
}

impl Constraint for BodyRateSq {
    fn name(&self) -> &str {
        "body_rate"
    }
    fn count(&self, _: usize) -> usize {
        1
    }
    fn values(&self, _: usize, s: &Sample, out: &mut [f64]) -> Result<()> {
        let w = flat_to_state(&s.flat(), self.gravity)?.omega;
        norm_sq_values(&w, self.omega_max, out);
        Ok(())
    }
    fn accumulate_gradient(&self, _: usize, s: &Sample, w: &[f64], grad: &mut [Vector3<f64>; 4]) -> Result<()> {
        let st = flat_to_state(&s.flat(), self.gravity)?;
        let gw = st.omega * (2.0 * w[0] / (self.omega_max * self.omega_max));
        let g = flat_to_state_pullback(&s.flat(), self.gravity, &Matrix3::zeros(), 0.0, &gw)?;
        grad[2] += g.a;
        grad[3] += g.j;
        Ok(())
    }
}

/// Vehicle ellipsoid inside the assigned polytope:
/// `|Q R^T a_k| + a_k^T p - b_k <= 0` with unit normals.
#[derive(Debug, Clone)]
pub struct EllipsoidInPolytope {
    polytopes: Vec<HPolytope>,
    assignment: Vec<usize>,
    shape: VehicleShape,
    gravity: f64,
}

impl EllipsoidInPolytope {
    pub fn new(polytopes: &[HPolytope], assignment: Vec<usize>, shape: VehicleShape, gravity: f64) -> Result<Self> {
        check_assignment(&assignment, polytopes.len())?;
        Ok(Self { polytopes: polytopes.iter().map(HPolytope::normalized).collect(), assignment, shape, gravity })
    }
}

impl Constraint for EllipsoidInPolytope {
    fn name(&self) -> &str {
        "ellipsoid"
    }
    fn count(&self, piece: usize) -> usize {
        self.polytopes[self.assignment[piece]].rows()
    }
    fn values(&self, piece: usize, s: &Sample, out: &mut [f64]) -> Result<()> {
        let p = &self.polytopes[self.assignment[piece]];
        let rot = flat_to_state(&s.flat(), self.gravity)?.rotation;
        for (k, o) in out.iter_mut().enumerate() {
            let a = row3(p, k);
            *o = self.shape.extent(&rot, &a) + a.dot(&s.derivs[0]) - p.b()[k];
        }
        Ok(())
    }
    fn accumulate_gradient(&self, piece: usize, s: &Sample, w: &[f64], grad: &mut [Vector3<f64>; 4]) -> Result<()> {
        let p = &self.polytopes[self.assignment[piece]];
        let rot = flat_to_state(&s.flat(), self.gravity)?.rotation;
        let q = self.shape.q();
        let mut g_rot = Matrix3::zeros();
        for (k, wk) in w.iter().enumerate() {
            if *wk == 0.0 {
                continue;
            }
            let a = row3(p, k);
            let n = q * rot.transpose() * a;
            let norm = n.norm();
            grad[0] += a * *wk;
            if norm > 0.0 {
                g_rot += a * (q * n).transpose() * (*wk / norm);
            }
        }
        let g = flat_to_state_pullback(&s.flat(), self.gravity, &g_rot, 0.0, &Vector3::zeros())?;
        grad[2] += g.a;
        grad[3] += g.j;
        Ok(())
    }
}
