//! Assembled objective over unconstrained coordinates and the corridor and
//! SE(3) planning pipelines.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::elimination::{BallMap, PolytopeMap, TimeMap};
use crate::error::{Error, Result};
use crate::flatness::{flat_to_state, VehicleShape, GRAVITY};
use crate::geometry::{ball_overlap_disk, Corridor, HPolytope};
use crate::lbfgs::{self, LbfgsParams, Termination};
use crate::minco::{construct, BoundaryCondition, Trajectory};
use crate::penalty::{
    integrate_penalty, max_violations, sample_piece, AccSq, BallContain, BodyRateSq, ConstraintSet,
    EllipsoidInPolytope, PolytopeContain, SpeedSq, ThrustWindow,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TimeRegularization {
    /// `rho(T) = k_rho * sum(T)`.
    Linear { k_rho: f64 },
    /// `sum(T)` fixed.
    FixedTotal { total: f64 },
}

/// Penalty weights per constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyWeights {
    pub speed: f64,
    pub acceleration: f64,
    pub containment: f64,
    pub thrust: f64,
    pub body_rate: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self { speed: 1e8, acceleration: 1e8, containment: 1e8, thrust: 1e8, body_rate: 1e8 }
    }
}

/// Amounts by which limits are tightened inside the objective (not in the
/// reported violations). Relative for speed, acceleration, thrust and body
/// rate; meters for containment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Margins {
    pub speed: f64,
    pub acceleration: f64,
    pub containment: f64,
    pub thrust: f64,
    pub body_rate: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Self { speed: 0.01, acceleration: 0.01, containment: 0.02, thrust: 0.01, body_rate: 0.01 }
    }
}

/// Attitude-aware constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se3Limits {
    pub shape: VehicleShape,
    pub f_min: f64,
    pub f_max: f64,
    pub omega_max: f64,
}

impl Se3Limits {
    /// Vehicle and limits of the narrow-gap experiment.
    pub fn narrow_gap() -> Self {
        Self { shape: VehicleShape { radius: 0.5, height: 0.1 }, f_min: 5.0, f_max: 18.5, omega_max: 5.2 }
    }
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub corridor: Corridor,
    pub start: BoundaryCondition,
    pub goal: BoundaryCondition,
    pub order: usize,
    pub pieces_per_primitive: usize,
    pub v_max: f64,
    pub a_max: f64,
    pub time: TimeRegularization,
    pub weights: PenaltyWeights,
    pub margins: Margins,
    pub resolution: usize,
    pub lbfgs: LbfgsParams,
    pub se3: Option<Se3Limits>,
    pub gravity: f64,
}

/// Optimizer settings used by both pipelines.
pub fn default_lbfgs() -> LbfgsParams {
    LbfgsParams { past: 3, delta: 1e-7, ..LbfgsParams::default() }
}

impl ProblemSpec {
    /// Rest-to-rest corridor flight with `v_max = 5`, `a_max = 7`,
    /// `k_rho = 1024`, `kappa = 16`, `K = 1`, `s = 3`.
    pub fn corridor(corridor: Corridor, start: &[f64], goal: &[f64]) -> Self {
        Self {
            corridor,
            start: BoundaryCondition::rest(start, 3),
            goal: BoundaryCondition::rest(goal, 3),
            order: 3,
            pieces_per_primitive: 1,
            v_max: 5.0,
            a_max: 7.0,
            time: TimeRegularization::Linear { k_rho: 1024.0 },
            weights: PenaltyWeights::default(),
            margins: Margins::default(),
            resolution: 16,
            lbfgs: default_lbfgs(),
            se3: None,
            gravity: GRAVITY,
        }
    }

    /// Hover-to-hover attitude-aware flight with the narrow-gap limits.
    pub fn se3(corridor: Corridor, start: &[f64], goal: &[f64]) -> Self {
        Self {
            v_max: 6.5,
            a_max: f64::INFINITY,
            pieces_per_primitive: 2,
            se3: Some(Se3Limits::narrow_gap()),
            margins: Margins { containment: 0.05, ..Margins::default() },
            ..Self::corridor(corridor, start, goal)
        }
    }

    pub fn pieces(&self) -> usize {
        self.corridor.len() * self.pieces_per_primitive
    }

    fn check(&self) -> Result<()> {
        if self.corridor.is_empty() {
            return Err(Error::InvalidInput("empty corridor".into()));
        }
        if self.corridor.dim() != Some(3) {
            return Err(Error::InvalidInput("corridor must be three-dimensional".into()));
        }
        if self.pieces_per_primitive == 0 {
            return Err(Error::InvalidInput("pieces per primitive must be at least 1".into()));
        }
        if !(self.v_max > 0.0 && self.a_max > 0.0) {
            return Err(Error::InvalidInput("limits must be positive".into()));
        }
        if self.start.dim() != 3 || self.goal.dim() != 3 {
            return Err(Error::DimensionMismatch { expected: 3, found: self.start.dim() });
        }
        Ok(())
    }
}

/// Smooth surjection onto the region a waypoint is confined to.
#[derive(Debug, Clone)]
pub enum Anchor {
    Polytope(PolytopeMap),
    Ball(BallMap),
}

impl Anchor {
    pub fn param_dim(&self) -> usize {
        match self {
            Anchor::Polytope(m) => m.param_dim(),
            Anchor::Ball(m) => m.param_dim(),
        }
    }

    pub fn forward(&self, xi: &DVector<f64>) -> DVector<f64> {
        match self {
            Anchor::Polytope(m) => m.forward(xi),
            Anchor::Ball(m) => m.forward(xi),
        }
    }

    pub fn backward(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Anchor::Polytope(m) => m.backward(q),
            Anchor::Ball(m) => m.backward(q),
        }
    }

    pub fn pullback(&self, xi: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        match self {
            Anchor::Polytope(m) => m.pullback(xi, g),
            Anchor::Ball(m) => m.pullback(xi, g),
        }
    }
}

/// Cost terms at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub effort: f64,
    pub time: f64,
    pub penalty: f64,
    pub total: f64,
}

/// Objective `J + rho + I` over `x = (xi_1, .., xi_{M-1}, tau)`.
pub struct Problem {
    anchors: Vec<Anchor>,
    offsets: Vec<usize>,
    time_map: TimeMap,
    k_rho: f64,
    start: BoundaryCondition,
    goal: BoundaryCondition,
    order: usize,
    pieces: usize,
    constraints: ConstraintSet,
    report: ConstraintSet,
    initial: Vec<f64>,
}

/// Primitive index of piece `i` (0-based) with `k` pieces per primitive.
#[inline]
pub fn primitive_of_piece(i: usize, k: usize) -> usize {
    i / k
}

fn assignment(spec: &ProblemSpec) -> Vec<usize> {
    (0..spec.pieces()).map(|i| primitive_of_piece(i, spec.pieces_per_primitive)).collect()
}

fn shrink(p: &HPolytope, margin: f64) -> HPolytope {
    let n = p.normalized();
    let b = n.b().map(|v| v - margin);
    HPolytope::new(n.a().clone(), b).expect("shrinking keeps dimensions")
}

fn constraint_set(spec: &ProblemSpec, margins: &Margins, resolution: usize) -> Result<ConstraintSet> {
    let w = &spec.weights;
    let assign = assignment(spec);
    let mut cs = ConstraintSet::new(resolution)?;
    cs.push(Box::new(SpeedSq { v_max: spec.v_max * (1.0 - margins.speed) }), w.speed)?;
    if spec.a_max.is_finite() {
        cs.push(Box::new(AccSq { a_max: spec.a_max * (1.0 - margins.acceleration) }), w.acceleration)?;
    }
    match (&spec.corridor, &spec.se3) {
        (Corridor::Polytopes(p), Some(se3)) => {
            let shrunk: Vec<HPolytope> = p.iter().map(|p| shrink(p, margins.containment)).collect();
            cs.push(Box::new(EllipsoidInPolytope::new(&shrunk, assign, se3.shape, spec.gravity)?), w.containment)?;
        }
        (Corridor::Polytopes(p), None) => {
            let shrunk: Vec<HPolytope> = p.iter().map(|p| shrink(p, margins.containment)).collect();
            cs.push(Box::new(PolytopeContain::new(&shrunk, assign)?), w.containment)?;
        }
        (Corridor::Balls(b), None) => {
            let shrunk: Vec<_> = b
                .iter()
                .map(|b| crate::geometry::Ball::new(b.center.clone(), (b.radius - margins.containment).max(1e-6)))
                .collect::<Result<_>>()?;
            cs.push(Box::new(BallContain::new(&shrunk, assign)?), w.containment)?;
        }
        (Corridor::Balls(_), Some(_)) => {
            return Err(Error::InvalidInput("attitude-aware planning needs a polytope corridor".into()));
        }
    }
    if let Some(se3) = &spec.se3 {
        let width = se3.f_max - se3.f_min;
        cs.push(
            Box::new(ThrustWindow {
                f_min: se3.f_min + margins.thrust * width,
                f_max: se3.f_max - margins.thrust * width,
                gravity: spec.gravity,
            }),
            w.thrust,
        )?;
        cs.push(
            Box::new(BodyRateSq { omega_max: se3.omega_max * (1.0 - margins.body_rate), gravity: spec.gravity }),
            w.body_rate,
        )?;
    }
    Ok(cs)
}

/// Arc-length times of a rest-to-rest trapezoidal speed profile.
fn trapezoid_times(lengths: &[f64], v: f64, a: f64) -> Vec<f64> {
    let total: f64 = lengths.iter().sum();
    let a = if a.is_finite() { a } else { 1e3 * v };
    let s_acc = v * v / (2.0 * a);
    let (t_total, time_at): (f64, Box<dyn Fn(f64) -> f64>) = if total >= 2.0 * s_acc {
        let t_acc = v / a;
        let tt = 2.0 * t_acc + (total - 2.0 * s_acc) / v;
        (
            tt,
            Box::new(move |s: f64| {
                if s < s_acc {
                    (2.0 * s / a).sqrt()
                } else if s <= total - s_acc {
                    t_acc + (s - s_acc) / v
                } else {
                    tt - (2.0 * (total - s).max(0.0) / a).sqrt()
                }
            }),
        )
    } else {
        let tt = 2.0 * (total / a).sqrt();
        (
            tt,
            Box::new(move |s: f64| {
                if s <= 0.5 * total {
                    (2.0 * s / a).sqrt()
                } else {
                    tt - (2.0 * (total - s).max(0.0) / a).sqrt()
                }
            }),
        )
    };
    let floor = 1e-2 * t_total.max(1e-3) / lengths.len() as f64;
    let mut acc = 0.0;
    let mut prev = 0.0;
    lengths
        .iter()
        .map(|l| {
            acc += l;
            let t = time_at(acc);
            let d = (t - prev).max(floor);
            prev = t;
            d
        })
        .collect()
}

impl Problem {
    pub fn new(spec: &ProblemSpec) -> Result<Self> {
        spec.check()?;
        let k = spec.pieces_per_primitive;
        let pieces = spec.pieces();
        let np = spec.corridor.len();
        let start = DVector::from_vec(spec.start.position());
        let goal = DVector::from_vec(spec.goal.position());

        // Route nodes: start, overlap centers, goal.
        let mut overlap_anchor: Vec<(Anchor, DVector<f64>)> = Vec::with_capacity(np.saturating_sub(1));
        for j in 0..np.saturating_sub(1) {
            overlap_anchor.push(match &spec.corridor {
                Corridor::Polytopes(p) => {
                    let region = p[j].intersect(&p[j + 1])?;
                    let (_, verts) = region.prune_redundant()?;
                    let center = region.interior_point()?;
                    (Anchor::Polytope(PolytopeMap::new(&verts)?), center)
                }
                Corridor::Balls(b) => {
                    let disk = ball_overlap_disk(&b[j], &b[j + 1])?;
                    let center = disk.center.clone();
                    (Anchor::Ball(BallMap::embedded(disk.center.clone(), disk.radius, disk.basis())?), center)
                }
            });
        }
        let mut nodes = vec![start.clone()];
        nodes.extend(overlap_anchor.iter().map(|(_, c)| c.clone()));
        nodes.push(goal.clone());

        let mut anchors = Vec::with_capacity(pieces - 1);
        let mut points: Vec<DVector<f64>> = Vec::with_capacity(pieces - 1);
        let mut overlap_iter = overlap_anchor.into_iter();
        for i in 1..pieces {
            let (a, b) = (primitive_of_piece(i - 1, k), primitive_of_piece(i, k));
            if a != b {
                let (anchor, center) = overlap_iter.next().expect("one overlap per boundary");
                anchors.push(anchor);
                points.push(center);
            } else {
                let frac = (i - a * k) as f64 / k as f64;
                let q = &nodes[a] * (1.0 - frac) + &nodes[a + 1] * frac;
                anchors.push(match &spec.corridor {
                    Corridor::Polytopes(p) => {
                        let (_, verts) = p[a].prune_redundant()?;
                        Anchor::Polytope(PolytopeMap::new(&verts)?)
                    }
                    Corridor::Balls(bs) => Anchor::Ball(BallMap::new(bs[a].center_vec(), bs[a].radius)?),
                });
                points.push(q);
            }
        }

        let mut route = vec![start];
        route.extend(points.iter().cloned());
        route.push(goal);
        let lengths: Vec<f64> = route.windows(2).map(|w| (&w[1] - &w[0]).norm()).collect();
        let profile_acc = match &spec.se3 {
            Some(se3) => spec.a_max.min(0.5 * (se3.f_max - spec.gravity).max(1.0)),
            None => spec.a_max,
        };
        let mut durations = trapezoid_times(&lengths, spec.v_max, profile_acc);
        let (time_map, k_rho) = match spec.time {
            TimeRegularization::Linear { k_rho } => (TimeMap::FreePositive, k_rho),
            TimeRegularization::FixedTotal { total } => {
                let sum: f64 = durations.iter().sum();
                durations.iter_mut().for_each(|d| *d *= total / sum);
                (TimeMap::fixed_total(total)?, 0.0)
            }
        };

        let mut initial = Vec::new();
        let mut offsets = Vec::with_capacity(anchors.len() + 1);
        for (anchor, q) in anchors.iter().zip(&points) {
            offsets.push(initial.len());
            let mut xi = anchor.backward(q)?;
            // The vertex preimage is a critical point of the polytope map.
            if matches!(anchor, Anchor::Polytope(_)) && xi.norm() < 1e-9 {
                xi.iter_mut().enumerate().for_each(|(j, v)| *v += 1e-6 * (1.0 + j as f64));
            }
            initial.extend(xi.iter());
        }
        offsets.push(initial.len());
        let sum: f64 = durations.iter().sum();
        if let TimeMap::FixedTotal { total } = time_map {
            let last = durations.len() - 1;
            durations[last] += total - sum;
        }
        initial.extend(time_map.backward(&durations)?);

        let zero = Margins { speed: 0.0, acceleration: 0.0, containment: 0.0, thrust: 0.0, body_rate: 0.0 };
        Ok(Self {
            anchors,
            offsets,
            time_map,
            k_rho,
            start: spec.start.clone(),
            goal: spec.goal.clone(),
            order: spec.order,
            pieces,
            constraints: constraint_set(spec, &spec.margins, spec.resolution)?,
            report: constraint_set(spec, &zero, 4 * spec.resolution)?,
            initial,
        })
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    pub fn initial_point(&self) -> &[f64] {
        &self.initial
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn pieces(&self) -> usize {
        self.pieces
    }

    fn xi(&self, x: &[f64], i: usize) -> DVector<f64> {
        DVector::from_column_slice(&x[self.offsets[i]..self.offsets[i + 1]])
    }

    fn tau<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.offsets[self.anchors.len()]..]
    }

    /// Waypoints (`3 x (M-1)`) and durations encoded by `x`.
    pub fn decode(&self, x: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
        let mut q = DMatrix::zeros(3, self.anchors.len());
        for (i, anchor) in self.anchors.iter().enumerate() {
            q.set_column(i, &anchor.forward(&self.xi(x, i)));
        }
        let tau = self.tau(x);
        let durations = if self.time_map.param_dim(self.pieces) == 0 {
            match self.time_map {
                TimeMap::FixedTotal { total } => vec![total],
                TimeMap::FreePositive => unreachable!(),
            }
        } else {
            self.time_map.forward(tau)
        };
        (q, durations)
    }

    pub fn trajectory(&self, x: &[f64]) -> Result<Trajectory> {
        let (q, t) = self.decode(x);
        construct(&q, &t, &self.start, &self.goal, self.order)
    }

    /// Objective value, writing the gradient into `grad`.
    pub fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> Result<CostBreakdown> {
        let (q, durations) = self.decode(x);
        let traj = construct(&q, &durations, &self.start, &self.goal, self.order)?;
        let effort = traj.control_effort(&[1.0; 3])?;
        let pen = integrate_penalty(&self.constraints, &traj)?;
        let time = self.k_rho * durations.iter().sum::<f64>();
        let dc = &effort.d_coeffs + &pen.d_coeffs;
        let dt: Vec<f64> = effort.d_durations.iter().zip(&pen.d_durations).map(|(a, b)| a + b + self.k_rho).collect();
        let (dq, dtotal) = traj.propagate_gradient(&dc, &dt)?;
        for (i, anchor) in self.anchors.iter().enumerate() {
            let g = anchor.pullback(&self.xi(x, i), &dq.column(i).into_owned());
            grad[self.offsets[i]..self.offsets[i + 1]].copy_from_slice(g.as_slice());
        }
        let base = self.offsets[self.anchors.len()];
        if self.time_map.param_dim(self.pieces) > 0 {
            let gt = self.time_map.pullback(self.tau(x), &dtotal);
            grad[base..].copy_from_slice(&gt);
        }
        Ok(CostBreakdown { effort: effort.cost, time, penalty: pen.value, total: effort.cost + time + pen.value })
    }

    /// Constraint names and their largest values on a dense resampling
    /// against the unmodified limits.
    pub fn violations(&self, traj: &Trajectory) -> Result<Vec<Violation>> {
        let maxes = max_violations(&self.report, traj, self.report.resolution())?;
        Ok(self.report.names().into_iter().zip(maxes).map(|(name, max)| Violation { name, max }).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub name: String,
    /// Largest normalized constraint value; nonpositive when satisfied.
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSample {
    pub t: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub f_spec: f64,
    pub omega: [f64; 3],
    /// Row-major rotation matrix.
    pub rotation: [f64; 9],
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub trajectory: Trajectory,
    pub cost: CostBreakdown,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_inf: f64,
    pub termination: Termination,
    pub violations: Vec<Violation>,
    pub wall_time: f64,
    /// Accepted objective values.
    pub history: Vec<f64>,
    pub states: Vec<StateSample>,
}

impl OptimizeResult {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }

    pub fn violation(&self, name: &str) -> Option<f64> {
        self.violations.iter().find(|v| v.name == name).map(|v| v.max)
    }

    pub fn total_duration(&self) -> f64 {
        self.trajectory.total_duration()
    }
}

/// Seconds since the call. `wasm32-unknown-unknown` has no clock, so wall
/// time reads zero there.
#[cfg(not(target_arch = "wasm32"))]
fn stopwatch() -> impl Fn() -> f64 {
    let clock = std::time::Instant::now();
    move || clock.elapsed().as_secs_f64()
}

#[cfg(target_arch = "wasm32")]
fn stopwatch() -> impl Fn() -> f64 {
    || 0.0
}

fn optimize(spec: &ProblemSpec) -> Result<OptimizeResult> {
    let clock = stopwatch();
    let problem = Problem::new(spec)?;
    let res = if problem.dim() == 0 {
        let mut g = [];
        let cost = problem.evaluate(&[], &mut g)?;
        lbfgs::LbfgsResult {
            x: vec![],
            f: cost.total,
            grad_inf: 0.0,
            iterations: 0,
            evaluations: 1,
            termination: Termination::GradientTolerance,
            history: vec![cost.total],
        }
    } else {
        lbfgs::minimize(
            |x, g| match problem.evaluate(x, g) {
                Ok(c) => c.total,
                Err(_) => f64::INFINITY,
            },
            problem.initial_point().to_vec(),
            &spec.lbfgs,
        )
    };
    let trajectory = problem.trajectory(&res.x)?;
    let mut scratch = vec![0.0; problem.dim()];
    let cost = problem.evaluate(&res.x, &mut scratch)?;
    let violations = problem.violations(&trajectory)?;
    let states =
        if spec.se3.is_some() { state_trace(&trajectory, 4 * spec.resolution, spec.gravity)? } else { Vec::new() };
    Ok(OptimizeResult {
        trajectory,
        cost,
        iterations: res.iterations,
        evaluations: res.evaluations,
        grad_inf: res.grad_inf,
        termination: res.termination,
        violations,
        wall_time: clock(),
        history: res.history,
        states,
    })
}

/// Flatness states at `per_piece + 1` uniform stamps on every piece.
pub fn state_trace(traj: &Trajectory, per_piece: usize, gravity: f64) -> Result<Vec<StateSample>> {
    let mut out = Vec::with_capacity(traj.pieces() * (per_piece + 1));
    for i in 0..traj.pieces() {
        let dur = traj.durations()[i];
        for j in 0..=per_piece {
            let t = dur * j as f64 / per_piece as f64;
            let s = sample_piece(traj, i, t)?;
            let st = flat_to_state(&s.flat(), gravity)?;
            let r = st.rotation;
            out.push(StateSample {
                t: traj.knots()[i] + t,
                position: s.derivs[0].into(),
                velocity: s.derivs[1].into(),
                f_spec: st.f_spec,
                omega: st.omega.into(),
                rotation: [
                    r[(0, 0)],
                    r[(0, 1)],
                    r[(0, 2)],
                    r[(1, 0)],
                    r[(1, 1)],
                    r[(1, 2)],
                    r[(2, 0)],
                    r[(2, 1)],
                    r[(2, 2)],
                ],
            });
        }
    }
    Ok(out)
}

/// Corridor planning with speed, acceleration and containment penalties.
pub fn optimize_corridor(spec: &ProblemSpec) -> Result<OptimizeResult> {
    if spec.se3.is_some() {
        return Err(Error::InvalidInput("use optimize_se3 for attitude-aware problems".into()));
    }
    optimize(spec)
}

/// Attitude-aware planning with ellipsoid containment, thrust and body-rate
/// penalties. The result carries a sampled state trace.
pub fn optimize_se3(spec: &ProblemSpec) -> Result<OptimizeResult> {
    if spec.se3.is_none() {
        return Err(Error::InvalidInput("attitude-aware planning needs vehicle limits".into()));
    }
    if spec.order != 3 {
        return Err(Error::InvalidInput("attitude-aware planning uses s = 3".into()));
    }
    optimize(spec)
}

/// Largest roll magnitude (degrees) among states with `|x| <= half_width`.
pub fn max_roll_deg(states: &[StateSample], half_width: f64) -> f64 {
    states
        .iter()
        .filter(|s| s.position[0].abs() <= half_width)
        .map(|s| s.rotation[7].atan2(s.rotation[8]).abs().to_degrees())
        .fold(0.0, f64::max)
}

/// Integral-free speed statistic: fraction of flight time with speed at
/// least `ratio * v_max`, from `samples` uniform stamps.
pub fn speed_fraction(traj: &Trajectory, v_max: f64, ratio: f64, samples: usize) -> Result<f64> {
    let total = traj.total_duration();
    let mut hit = 0;
    for k in 0..samples {
        let t = total * (k as f64 + 0.5) / samples as f64;
        let v = traj.evaluate(t, 1)?;
        if Vector3::from_column_slice(&v).norm() >= ratio * v_max {
            hit += 1;
        }
    }
    Ok(hit as f64 / samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_profile_sums_to_total_time() {
        let t = trapezoid_times(&[10.0, 10.0], 5.0, 5.0);
        // 1 s ramp each way plus 3 s cruise over the remaining 15 m.
        assert!((t.iter().sum::<f64>() - 5.0).abs() < 1e-12);
        assert!((t[0] - 2.5).abs() < 1e-12);
        let t = trapezoid_times(&[1.0], 5.0, 1.0);
        assert!((t[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_box_single_piece() {
        let corridor = Corridor::Polytopes(vec![HPolytope::from_box(&[-50.0; 3], &[50.0; 3]).unwrap()]);
        let mut spec = ProblemSpec::corridor(corridor, &[0.0; 3], &[5.0, 1.0, 0.0]);
        spec.v_max = 1e3;
        spec.a_max = 1e3;
        let problem = Problem::new(&spec).unwrap();
        assert_eq!(problem.dim(), 1);
        let mut g = [0.0];
        let x = problem.initial_point().to_vec();
        let c = problem.evaluate(&x, &mut g).unwrap();
        assert!(c.total.is_finite() && c.penalty >= 0.0);
        let h = 1e-6;
        let mut scratch = [0.0];
        let fp = problem.evaluate(&[x[0] + h], &mut scratch).unwrap().total;
        let fm = problem.evaluate(&[x[0] - h], &mut scratch).unwrap().total;
        let fd = (fp - fm) / (2.0 * h);
        assert!((fd - g[0]).abs() <= 1e-5 * fd.abs().max(1.0), "{fd} vs {}", g[0]);
    }

    #[test]
    fn rejects_ball_corridor_for_se3() {
        let corridor = Corridor::Balls(vec![crate::geometry::Ball::new(vec![0.0; 3], 2.0).unwrap()]);
        let spec = ProblemSpec::se3(corridor, &[0.0; 3], &[1.0, 0.0, 0.0]);
        assert!(optimize_se3(&spec).is_err());
    }
}
