//! Convex primitives: halfspace polytopes, balls and corridors built from
//! them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LP_EPS: f64 = 1e-10;
/// Vertices closer than this are merged.
pub const VERTEX_MERGE_TOL: f64 = 1e-9;
/// Interior margin below which an intersection counts as empty.
pub const OVERLAP_MARGIN: f64 = 1e-9;

/// `{x | A x <= b}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HPolytope {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl HPolytope {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), found: b.len() });
        }
        if a.ncols() == 0 {
            return Err(Error::InvalidInput("polytope dimension must be positive".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite halfspace".into()));
        }
        for (i, row) in a.row_iter().enumerate() {
            if row.norm() == 0.0 {
                return Err(Error::InvalidInput(format!("halfspace {i} has a zero normal")));
            }
        }
        Ok(Self { a, b })
    }

    /// Rows given as `[a_1, .., a_n, b]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::InvalidInput("polytope has no halfspaces".into()));
        };
        let n = first
            .len()
            .checked_sub(1)
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::InvalidInput("halfspace rows need at least two entries".into()))?;
        let mut a = DMatrix::zeros(rows.len(), n);
        let mut b = DVector::zeros(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n + 1 {
                return Err(Error::DimensionMismatch { expected: n + 1, found: row.len() });
            }
            for j in 0..n {
                a[(i, j)] = row[j];
            }
            b[i] = row[n];
        }
        Self::new(a, b)
    }

    /// Axis-aligned box `lo <= x <= hi`.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        let n = lo.len();
        if hi.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: hi.len() });
        }
        let mut a = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for k in 0..n {
            a[(2 * k, k)] = 1.0;
            b[2 * k] = hi[k];
            a[(2 * k + 1, k)] = -1.0;
            b[2 * k + 1] = -lo[k];
        }
        Self::new(a, b)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows())
            .map(|i| {
                let mut r: Vec<f64> = self.a.row(i).iter().copied().collect();
                r.push(self.b[i]);
                r
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Same set with unit-norm normals.
    pub fn normalized(&self) -> Self {
        let mut a = self.a.clone();
        let mut b = self.b.clone();
        for i in 0..a.nrows() {
            let n = a.row(i).norm();
            a.row_mut(i).unscale_mut(n);
            b[i] /= n;
        }
        Self { a, b }
    }

    /// Largest violation `max_i (a_i x - b_i) / |a_i|`; nonpositive inside.
    pub fn signed_distance(&self, x: &DVector<f64>) -> f64 {
        (0..self.rows())
            .map(|i| (self.a.row(i) * x)[0] - self.b[i])
            .zip(self.a.row_iter())
            .map(|(v, r)| v / r.norm())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        (&self.a * x - &self.b).iter().all(|v| *v <= tol)
    }

    /// Both halfspace sets stacked.
    pub fn intersect(&self, other: &HPolytope) -> Result<HPolytope> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        let k = self.rows();
        let mut a = DMatrix::zeros(k + other.rows(), self.dim());
        a.rows_mut(0, k).copy_from(&self.a);
        a.rows_mut(k, other.rows()).copy_from(&other.a);
        let mut b = DVector::zeros(k + other.rows());
        b.rows_mut(0, k).copy_from(&self.b);
        b.rows_mut(k, other.rows()).copy_from(&other.b);
        Ok(HPolytope { a, b })
    }

    /// Chebyshev center and radius (largest inscribed ball).
    pub fn chebyshev_center(&self) -> Result<(DVector<f64>, f64)> {
        let p = self.normalized();
        let n = p.dim();
        let k = p.rows();
        // z = (u, v, delta) with x = u - v.
        let mut lp = DMatrix::zeros(k, 2 * n + 1);
        for i in 0..k {
            for j in 0..n {
                lp[(i, j)] = p.a[(i, j)];
                lp[(i, n + j)] = -p.a[(i, j)];
            }
            lp[(i, 2 * n)] = 1.0;
        }
        let mut c = vec![0.0; 2 * n + 1];
        c[2 * n] = 1.0;
        let (z, delta) = simplex_max(&c, &lp, p.b.as_slice())?;
        let x = DVector::from_fn(n, |j, _| z[j] - z[n + j]);
        Ok((x, delta))
    }

    /// A strictly interior point, or `Infeasible` if the interior is empty.
    pub fn interior_point(&self) -> Result<DVector<f64>> {
        let (x, margin) = self.chebyshev_center()?;
        if margin <= OVERLAP_MARGIN {
            return Err(Error::Infeasible);
        }
        Ok(x)
    }

    /// Is every direction blocked by some halfspace?
    pub fn is_bounded(&self) -> bool {
        let p = self.normalized();
        let n = p.dim();
        let k = p.rows();
        let mut lp = DMatrix::zeros(k, 2 * n);
        for i in 0..k {
            for j in 0..n {
                lp[(i, j)] = p.a[(i, j)];
                lp[(i, n + j)] = -p.a[(i, j)];
            }
        }
        for j in 0..n {
            for sign in [1.0, -1.0] {
                let mut c = vec![0.0; 2 * n];
                c[j] = sign;
                c[n + j] = -sign;
                match simplex_max(&c, &lp, p.b.as_slice()) {
                    Err(Error::Unbounded) => return false,
                    Err(_) => return true,
                    Ok(_) => {}
                }
            }
        }
        true
    }

    /// Vertices of a bounded polytope with nonempty interior.
    pub fn enumerate_vertices(&self) -> Result<Vec<DVector<f64>>> {
        match self.interior_point() {
            Ok(_) => {}
            Err(Error::Unbounded) => return Err(Error::Unbounded),
            Err(_) => return Err(Error::DegeneratePolytope),
        }
        if !self.is_bounded() {
            return Err(Error::Unbounded);
        }
        let p = self.normalized();
        let n = p.dim();
        let k = p.rows();
        let scale = 1.0 + p.b.amax();
        let mut out: Vec<DVector<f64>> = Vec::new();
        let mut idx: Vec<usize> = (0..n).collect();
        if k < n {
            return Err(Error::DegeneratePolytope);
        }
        let mut sub = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        loop {
            for (r, &i) in idx.iter().enumerate() {
                sub.row_mut(r).copy_from(&p.a.row(i));
                rhs[r] = p.b[i];
            }
            let lu = sub.clone().lu();
            if lu.determinant().abs() > 1e-12 {
                if let Some(x) = lu.solve(&rhs) {
                    if p.contains(&x, VERTEX_MERGE_TOL * scale)
                        && !out.iter().any(|v| (v - &x).amax() <= VERTEX_MERGE_TOL * scale)
                    {
                        out.push(x);
                    }
                }
            }
            if !next_combination(&mut idx, k) {
                break;
            }
        }
        Ok(out)
    }

    /// Drop rows that no vertex lies on.
    pub fn prune_redundant(&self) -> Result<(HPolytope, Vec<DVector<f64>>)> {
        let verts = self.enumerate_vertices()?;
        let p = self.normalized();
        let tol = 1e-8 * (1.0 + p.b.amax());
        let mut keep: Vec<usize> = Vec::new();
        for i in 0..p.rows() {
            let ai = p.a.row(i);
            let tight = verts.iter().filter(|v| ((ai * *v)[0] - p.b[i]).abs() <= tol).count();
            let duplicate = keep.iter().any(|&j| (p.a.row(j) - ai).amax() <= 1e-12 && (p.b[j] - p.b[i]).abs() <= 1e-12);
            if tight >= p.dim() && !duplicate {
                keep.push(i);
            }
        }
        let a = p.a.select_rows(&keep);
        let b = DVector::from_iterator(keep.len(), keep.iter().map(|&i| p.b[i]));
        Ok((HPolytope { a, b }, verts))
    }
}

fn next_combination(idx: &mut [usize], k: usize) -> bool {
    let n = idx.len();
    let mut i = n;
    while i > 0 {
        i -= 1;
        if idx[i] < k - n + i {
            idx[i] += 1;
            for j in i + 1..n {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Maximize `c^T z` subject to `A z <= b`, `z >= 0` by the two-phase
/// tableau simplex with Bland's rule.
pub fn simplex_max(c: &[f64], a: &DMatrix<f64>, b: &[f64]) -> Result<(Vec<f64>, f64)> {
    let m = a.nrows();
    let nz = a.ncols();
    if c.len() != nz || b.len() != m {
        return Err(Error::DimensionMismatch { expected: nz, found: c.len() });
    }
    let arts: Vec<usize> = (0..m).filter(|&i| b[i] < 0.0).collect();
    let na = arts.len();
    let cols = nz + m + na;
    let rhs = cols;
    let mut t = DMatrix::zeros(m + 1, cols + 1);
    let mut basis = vec![0usize; m];
    let mut art_k = 0;
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..nz {
            t[(i, j)] = sign * a[(i, j)];
        }
        t[(i, nz + i)] = sign;
        t[(i, rhs)] = sign * b[i];
        if b[i] < 0.0 {
            t[(i, nz + m + art_k)] = 1.0;
            basis[i] = nz + m + art_k;
            art_k += 1;
        } else {
            basis[i] = nz + i;
        }
    }
    let obj = m;

    let pivot = |t: &mut DMatrix<f64>, basis: &mut [usize], r: usize, col: usize| {
        let p = t[(r, col)];
        t.row_mut(r).unscale_mut(p);
        for i in 0..=m {
            if i != r {
                let f = t[(i, col)];
                if f != 0.0 {
                    for j in 0..=cols {
                        let v = t[(r, j)];
                        t[(i, j)] -= f * v;
                    }
                }
            }
        }
        basis[r] = col;
    };

    // Minimizes the objective row; columns >= `limit` never enter.
    let run = |t: &mut DMatrix<f64>, basis: &mut [usize], limit: usize| -> Result<()> {
        for _ in 0..50_000 {
            let Some(col) = (0..limit).find(|&j| t[(obj, j)] < -LP_EPS) else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..m {
                let v = t[(i, col)];
                if v > LP_EPS {
                    let ratio = t[(i, rhs)] / v;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-14 || (ratio <= br + 1e-14 && basis[i] < basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else {
                return Err(Error::Unbounded);
            };
            pivot(t, basis, r, col);
        }
        Err(Error::InvalidInput("simplex iteration limit".into()))
    };

    if na > 0 {
        for j in 0..=cols {
            t[(obj, j)] = 0.0;
        }
        for k in 0..na {
            t[(obj, nz + m + k)] = 1.0;
        }
        for i in 0..m {
            if basis[i] >= nz + m {
                for j in 0..=cols {
                    let v = t[(i, j)];
                    t[(obj, j)] -= v;
                }
            }
        }
        run(&mut t, &mut basis, cols)?;
        let scale = 1.0 + b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        if -t[(obj, rhs)] > 1e-9 * scale {
            return Err(Error::Infeasible);
        }
        for i in 0..m {
            if basis[i] >= nz + m {
                if let Some(col) = (0..nz + m).find(|&j| t[(i, j)].abs() > LP_EPS) {
                    pivot(&mut t, &mut basis, i, col);
                }
            }
        }
    }

    for j in 0..=cols {
        t[(obj, j)] = 0.0;
    }
    for j in 0..nz {
        t[(obj, j)] = -c[j];
    }
    for i in 0..m {
        let cb = if basis[i] < nz { -c[basis[i]] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..=cols {
                let v = t[(i, j)];
                t[(obj, j)] -= cb * v;
            }
        }
    }
    run(&mut t, &mut basis, nz + m)?;
    let mut z = vec![0.0; nz];
    for i in 0..m {
        if basis[i] < nz {
            z[basis[i]] = t[(i, rhs)];
        }
    }
    let value = c.iter().zip(&z).map(|(a, b)| a * b).sum();
    Ok((z, value))
}

/// `{x | |x - center| <= radius}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidInput(format!("ball radius must be positive, got {radius}")));
        }
        if center.is_empty() || center.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("invalid ball center".into()));
        }
        Ok(Self { center, radius })
    }

    pub fn center_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.center)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        (x - self.center_vec()).norm() <= self.radius + tol
    }
}

/// Flat disk `{x | n^T (x - c) = 0, |x - c| <= radius}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Disk {
    pub center: DVector<f64>,
    pub radius: f64,
    pub normal: DVector<f64>,
}

impl Disk {
    /// Orthonormal basis of the disk's plane.
    pub fn basis(&self) -> DMatrix<f64> {
        orthonormal_complement(&self.normal)
    }
}

/// Columns spanning the orthogonal complement of the unit vector `n`.
pub fn orthonormal_complement(n: &DVector<f64>) -> DMatrix<f64> {
    let dim = n.len();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(dim - 1);
    let mut axes: Vec<usize> = (0..dim).collect();
    axes.sort_by(|&i, &j| n[i].abs().partial_cmp(&n[j].abs()).unwrap());
    for &k in &axes {
        if cols.len() == dim - 1 {
            break;
        }
        let mut v = DVector::zeros(dim);
        v[k] = 1.0;
        v -= n * n.dot(&v);
        for c in &cols {
            v -= c * c.dot(&v);
        }
        let norm = v.norm();
        if norm > 1e-8 {
            cols.push(v / norm);
        }
    }
    DMatrix::from_columns(&cols)
}

/// The disk bounded by the intersection of two spheres.
pub fn ball_overlap_disk(bi: &Ball, bj: &Ball) -> Result<Disk> {
    let oi = bi.center_vec();
    let oj = bj.center_vec();
    if oi.len() != oj.len() {
        return Err(Error::DimensionMismatch { expected: oi.len(), found: oj.len() });
    }
    let delta = &oj - &oi;
    let d = delta.norm();
    if d <= 1e-12 || d >= bi.radius + bj.radius {
        return Err(Error::NoOverlap);
    }
    let a = (d * d + bi.radius * bi.radius - bj.radius * bj.radius) / (2.0 * d);
    let rho2 = bi.radius * bi.radius - a * a;
    if rho2 <= 0.0 {
        return Err(Error::NoOverlap);
    }
    let normal = delta / d;
    Ok(Disk { center: oi + &normal * a, radius: rho2.sqrt(), normal })
}

/// Ordered primitives, all of one kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Corridor {
    Polytopes(Vec<HPolytope>),
    Balls(Vec<Ball>),
}

impl Corridor {
    pub fn len(&self) -> usize {
        match self {
            Corridor::Polytopes(p) => p.len(),
            Corridor::Balls(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Corridor::Polytopes(p) => p.first().map(HPolytope::dim),
            Corridor::Balls(b) => b.first().map(|b| b.center.len()),
        }
    }

    pub fn contains(&self, i: usize, x: &DVector<f64>, tol: f64) -> bool {
        match self {
            Corridor::Polytopes(p) => p[i].normalized().contains(x, tol),
            Corridor::Balls(b) => b[i].contains(x, tol),
        }
    }

    /// Do elements `i` and `j` share interior points?
    pub fn overlaps(&self, i: usize, j: usize) -> bool {
        match self {
            Corridor::Polytopes(p) => p[i]
                .intersect(&p[j])
                .and_then(|q| q.chebyshev_center())
                .map(|(_, m)| m > OVERLAP_MARGIN)
                .unwrap_or(false),
            Corridor::Balls(b) => {
                let d = (b[i].center_vec() - b[j].center_vec()).norm();
                d < b[i].radius + b[j].radius - OVERLAP_MARGIN
            }
        }
    }

    pub fn to_data(&self) -> CorridorData {
        match self {
            Corridor::Polytopes(p) => CorridorData::Polytope {
                elements: p.iter().map(|p| PolytopeElement { halfspaces: p.to_rows() }).collect(),
            },
            Corridor::Balls(b) => CorridorData::Ball { elements: b.clone() },
        }
    }
}

/// Serialized corridor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorridorData {
    Polytope { elements: Vec<PolytopeElement> },
    Ball { elements: Vec<Ball> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeElement {
    pub halfspaces: Vec<Vec<f64>>,
}

impl TryFrom<CorridorData> for Corridor {
    type Error = Error;

    fn try_from(data: CorridorData) -> Result<Self> {
        let c = match data {
            CorridorData::Polytope { elements } => Corridor::Polytopes(
                elements.iter().map(|e| HPolytope::from_rows(&e.halfspaces)).collect::<Result<_>>()?,
            ),
            CorridorData::Ball { elements } => {
                Corridor::Balls(elements.into_iter().map(|b| Ball::new(b.center, b.radius)).collect::<Result<_>>()?)
            }
        };
        if c.is_empty() {
            return Err(Error::InvalidInput("corridor has no elements".into()));
        }
        let n = c.dim().unwrap_or(0);
        let consistent = match &c {
            Corridor::Polytopes(p) => p.iter().all(|p| p.dim() == n),
            Corridor::Balls(b) => b.iter().all(|b| b.center.len() == n),
        };
        if !consistent {
            return Err(Error::InvalidInput("corridor elements differ in dimension".into()));
        }
        Ok(c)
    }
}

/// Outcome of [`validate_corridor`]. Index pairs are 1-based.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorridorReport {
    pub pass: bool,
    pub start_inside: bool,
    pub goal_inside: bool,
    /// Adjacent pairs without a common interior.
    pub missing_overlaps: Vec<(usize, usize)>,
    /// Pairs two apart that intersect; reported but not fatal.
    pub warnings: Vec<(usize, usize)>,
    /// Elements with an empty interior.
    pub degenerate: Vec<usize>,
}

pub fn validate_corridor(c: &Corridor, start: &DVector<f64>, goal: &DVector<f64>) -> CorridorReport {
    let mut report = CorridorReport::default();
    let n = c.len();
    if n == 0 {
        return report;
    }
    if let Corridor::Polytopes(p) = c {
        for (i, p) in p.iter().enumerate() {
            if p.interior_point().is_err() || !p.is_bounded() {
                report.degenerate.push(i + 1);
            }
        }
    }
    let dim_ok = |x: &DVector<f64>| c.dim() == Some(x.len());
    report.start_inside = dim_ok(start) && c.contains(0, start, 1e-9);
    report.goal_inside = dim_ok(goal) && c.contains(n - 1, goal, 1e-9);
    for i in 0..n.saturating_sub(1) {
        if !c.overlaps(i, i + 1) {
            report.missing_overlaps.push((i + 1, i + 2));
        }
    }
    for i in 0..n.saturating_sub(2) {
        if c.overlaps(i, i + 2) {
            report.warnings.push((i + 1, i + 3));
        }
    }
    report.pass =
        report.start_inside && report.goal_inside && report.missing_overlaps.is_empty() && report.degenerate.is_empty();
    report
}
