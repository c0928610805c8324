//! Central finite-difference checks of every differentiable layer on random
//! instances.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elimination::{BallMap, PolytopeMap, TimeMap};
use crate::error::Result;
use crate::flatness::{flat_to_state, flat_to_state_pullback, FlatSignal, VehicleShape, GRAVITY};
use crate::geometry::{Ball, HPolytope};
use crate::minco::{construct, BoundaryCondition, Trajectory};
use crate::penalty::{
    integrate_penalty, AccSq, BallContain, BodyRateSq, ConstraintSet, EllipsoidInPolytope, PolytopeContain, SpeedSq,
    ThrustWindow,
};
use crate::scene::{generate_corridor, GeneratorConfig, PrimitiveKind};
use crate::solver::{Problem, ProblemSpec, TimeRegularization};

pub const TOLERANCE: f64 = 1e-4;

pub const LAYERS: [&str; 10] = [
    "minco.dq",
    "minco.dT",
    "time.free",
    "time.fixed",
    "ball",
    "polytope",
    "penalty.dc",
    "penalty.dT",
    "flatness",
    "objective",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Spread of random waypoints and coordinates.
    pub scale: f64,
    pub instances: usize,
    /// Layer whose analytic gradient is sign-flipped, for testing the harness.
    pub inject: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { seed: 0, scale: 1.0, instances: 100, inject: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: String,
    pub instances: usize,
    pub worst: f64,
    pub pass: bool,
}

/// `|a - b| / max(|b|, floor)` in the 2-norm.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / scale.max(floor)
}

/// Central differences of `f` at `x`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], rel_step: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel_step * x[i].abs().max(1.0);
            xs[i] = x[i] + h;
            let fp = f(&xs);
            xs[i] = x[i] - h;
            let fm = f(&xs);
            xs[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

struct Harness {
    rng: ChaCha8Rng,
    scale: f64,
    inject: Option<String>,
}

impl Harness {
    fn flip(&self, layer: &str, g: &mut [f64]) {
        if self.inject.as_deref() == Some(layer) {
            g.iter_mut().for_each(|v| *v = -*v);
        }
    }

    fn bc(&mut self, s: usize, pos: &[f64]) -> BoundaryCondition {
        let mut d = DMatrix::zeros(s, 3);
        for j in 0..3 {
            d[(0, j)] = pos[j];
            for k in 1..s {
                d[(k, j)] = self.rng.gen_range(-1.0..1.0);
            }
        }
        BoundaryCondition::new(d).expect("valid boundary")
    }

    /// Random instance: order, waypoints, durations, boundary conditions and a
    /// linear coefficient weight added to the effort.
    fn minco_instance(
        &mut self,
    ) -> (usize, DMatrix<f64>, Vec<f64>, BoundaryCondition, BoundaryCondition, DMatrix<f64>) {
        let s = self.rng.gen_range(2..=4);
        let pieces = self.rng.gen_range(2..=6);
        let q = DMatrix::from_vec(3, pieces - 1, uniform(&mut self.rng, 3 * (pieces - 1), self.scale));
        let t: Vec<f64> = (0..pieces).map(|_| self.rng.gen_range(0.5..2.0)).collect();
        let p0 = uniform(&mut self.rng, 3, self.scale);
        let p1 = uniform(&mut self.rng, 3, self.scale);
        let bc0 = self.bc(s, &p0);
        let bcf = self.bc(s, &p1);
        let w = DMatrix::from_vec(2 * s * pieces, 3, uniform(&mut self.rng, 6 * s * pieces, 1.0));
        (s, q, t, bc0, bcf, w)
    }

    fn minco(&mut self, wrt_time: bool) -> Result<f64> {
        let (s, q, t, bc0, bcf, w) = self.minco_instance();
        let cost = |q: &DMatrix<f64>, t: &[f64]| -> f64 {
            let traj = construct(q, t, &bc0, &bcf, s).expect("construct");
            let e = traj.control_effort(&[1.0; 3]).expect("effort");
            e.cost + traj.coeffs().dot(&w) + t.iter().map(|v| v * v).sum::<f64>()
        };
        let traj = construct(&q, &t, &bc0, &bcf, s)?;
        let e = traj.control_effort(&[1.0; 3])?;
        let dc = &e.d_coeffs + &w;
        let dt: Vec<f64> = e.d_durations.iter().zip(&t).map(|(d, v)| d + 2.0 * v).collect();
        let (dq, dtot) = traj.propagate_gradient(&dc, &dt)?;
        if wrt_time {
            let mut a = dtot;
            self.flip("minco.dT", &mut a);
            let fd = central_difference(|x| cost(&q, x), &t, 1e-6);
            Ok(relative_error(&a, &fd, 1e-6))
        } else {
            let mut a = dq.as_slice().to_vec();
            self.flip("minco.dq", &mut a);
            let fd = central_difference(|x| cost(&DMatrix::from_column_slice(3, q.ncols(), x), &t), q.as_slice(), 1e-6);
            Ok(relative_error(&a, &fd, 1e-6))
        }
    }

    fn time(&mut self, fixed: bool) -> f64 {
        let pieces = self.rng.gen_range(2..=8);
        let map = if fixed {
            TimeMap::fixed_total(self.rng.gen_range(1.0..20.0)).expect("positive")
        } else {
            TimeMap::FreePositive
        };
        let tau = uniform(&mut self.rng, map.param_dim(pieces), 2.0);
        let w = uniform(&mut self.rng, pieces, 1.0);
        let f = |tau: &[f64]| {
            let t = map.forward(tau);
            t.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.5 * t.iter().map(|v| v * v).sum::<f64>()
        };
        let t = map.forward(&tau);
        let g: Vec<f64> = t.iter().zip(&w).map(|(a, b)| a + b).collect();
        let mut a = map.pullback(&tau, &g);
        self.flip(if fixed { "time.fixed" } else { "time.free" }, &mut a);
        let fd = central_difference(f, &tau, 1e-6);
        relative_error(&a, &fd, 1e-6)
    }

    fn quadratic_pullback(
        &mut self,
        layer: &str,
        n: usize,
        ambient: usize,
        forward: impl Fn(&DVector<f64>) -> DVector<f64>,
        pullback: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
    ) -> f64 {
        let xi = DVector::from_vec(uniform(&mut self.rng, n, 2.0 * self.scale));
        let w = DVector::from_vec(uniform(&mut self.rng, ambient, 1.0));
        let f = |x: &[f64]| {
            let y = forward(&DVector::from_column_slice(x));
            y.dot(&w) + 0.5 * y.norm_squared()
        };
        let y = forward(&xi);
        let mut a = pullback(&xi, &(&w + &y)).as_slice().to_vec();
        self.flip(layer, &mut a);
        let fd = central_difference(f, xi.as_slice(), 1e-6);
        relative_error(&a, &fd, 1e-6)
    }

    fn ball(&mut self) -> Result<f64> {
        let center = DVector::from_vec(uniform(&mut self.rng, 3, self.scale));
        let radius = self.rng.gen_range(0.2..2.0) * self.scale.max(1e-3);
        let map = if self.rng.gen_bool(0.5) {
            BallMap::new(center, radius)?
        } else {
            let n = Vector3::from_vec(uniform(&mut self.rng, 3, 1.0)).normalize();
            let basis = crate::geometry::orthonormal_complement(&DVector::from_column_slice(n.as_slice()));
            BallMap::embedded(center, radius, basis)?
        };
        Ok(self.quadratic_pullback(
            "ball",
            map.param_dim(),
            map.ambient_dim(),
            |x| map.forward(x),
            |x, g| map.pullback(x, g),
        ))
    }

    fn polytope(&mut self) -> Result<f64> {
        let count = self.rng.gen_range(4..=9);
        let verts: Vec<DVector<f64>> =
            (0..count).map(|_| DVector::from_vec(uniform(&mut self.rng, 3, self.scale))).collect();
        let map = PolytopeMap::new(&verts)?;
        Ok(self.quadratic_pullback(
            "polytope",
            map.param_dim(),
            map.ambient_dim(),
            |x| map.forward(x),
            |x, g| map.pullback(x, g),
        ))
    }

    /// Hover-to-hover trajectory whose samples violate every constraint kind.
    fn penalty_instance(&mut self) -> Result<(Trajectory, ConstraintSet)> {
        let pieces = self.rng.gen_range(2..=4);
        let q = DMatrix::from_vec(3, pieces - 1, uniform(&mut self.rng, 3 * (pieces - 1), 1.5));
        let t: Vec<f64> = (0..pieces).map(|_| self.rng.gen_range(0.6..1.2)).collect();
        let traj = construct(
            &q,
            &t,
            &BoundaryCondition::rest(&uniform(&mut self.rng, 3, 1.0), 3),
            &BoundaryCondition::rest(&uniform(&mut self.rng, 3, 1.0), 3),
            3,
        )?;
        let assignment: Vec<usize> = (0..pieces).map(|i| i % 2).collect();
        let polys = vec![
            HPolytope::from_box(&[-1.0, -1.2, -0.8], &[1.1, 0.9, 1.0])?,
            HPolytope::from_box(&[-0.7, -1.0, -1.3], &[0.8, 1.2, 0.6])?,
        ];
        let balls = vec![Ball::new(vec![0.1, 0.0, 0.0], 1.0)?, Ball::new(vec![0.0, -0.2, 0.1], 0.8)?];
        let shape = VehicleShape::new(0.3, 0.1)?;
        let cs = ConstraintSet::new(self.rng.gen_range(4..=16))?
            .add(SpeedSq { v_max: 1.0 }, 1.0)?
            .add(AccSq { a_max: 2.0 }, 1.0)?
            .add(PolytopeContain::new(&polys, assignment.clone())?, 1.0)?
            .add(BallContain::new(&balls, assignment.clone())?, 1.0)?
            .add(ThrustWindow { f_min: 9.0, f_max: 10.5, gravity: GRAVITY }, 1.0)?
            .add(BodyRateSq { omega_max: 0.5, gravity: GRAVITY }, 1.0)?
            .add(EllipsoidInPolytope::new(&polys, assignment, shape, GRAVITY)?, 1.0)?;
        Ok((traj, cs))
    }

    fn penalty(&mut self, wrt_time: bool) -> Result<f64> {
        let (traj, cs) = self.penalty_instance()?;
        let pen = integrate_penalty(&cs, &traj)?;
        let s = traj.order();
        let value = |t: &[f64], c: &DMatrix<f64>| {
            let tr = Trajectory::from_coefficients(s, t.to_vec(), c.clone()).expect("valid");
            integrate_penalty(&cs, &tr).map(|p| p.value).unwrap_or(f64::NAN)
        };
        let c = traj.coeffs().clone();
        if wrt_time {
            let mut a = pen.d_durations.clone();
            self.flip("penalty.dT", &mut a);
            let fd = central_difference(|t| value(t, &c), traj.durations(), 1e-6);
            Ok(relative_error(&a, &fd, 1e-6))
        } else {
            let mut a = pen.d_coeffs.as_slice().to_vec();
            self.flip("penalty.dc", &mut a);
            let (r, cols) = (c.nrows(), c.ncols());
            let fd = central_difference(
                |x| value(traj.durations(), &DMatrix::from_column_slice(r, cols, x)),
                c.as_slice(),
                1e-6,
            );
            Ok(relative_error(&a, &fd, 1e-6))
        }
    }

    fn flatness(&mut self) -> Result<f64> {
        let sig = FlatSignal {
            p: Vector3::zeros(),
            v: Vector3::from_vec(uniform(&mut self.rng, 3, 2.0)),
            a: Vector3::from_vec(uniform(&mut self.rng, 3, 4.0)),
            j: Vector3::from_vec(uniform(&mut self.rng, 3, 8.0)),
        };
        let g_r = Matrix3::from_vec(uniform(&mut self.rng, 9, 1.0));
        let g_f = self.rng.gen_range(-1.0..1.0);
        let g_w = Vector3::from_vec(uniform(&mut self.rng, 3, 1.0));
        let f = |x: &[f64]| {
            let s = FlatSignal {
                p: Vector3::zeros(),
                v: Vector3::new(x[0], x[1], x[2]),
                a: Vector3::new(x[3], x[4], x[5]),
                j: Vector3::new(x[6], x[7], x[8]),
            };
            let st = flat_to_state(&s, GRAVITY).expect("regular");
            st.rotation.dot(&g_r) + g_f * st.f_spec + st.omega.dot(&g_w)
        };
        let g = flat_to_state_pullback(&sig, GRAVITY, &g_r, g_f, &g_w)?;
        let mut a: Vec<f64> = g.v.iter().chain(g.a.iter()).chain(g.j.iter()).copied().collect();
        self.flip("flatness", &mut a);
        let x: Vec<f64> = sig.v.iter().chain(sig.a.iter()).chain(sig.j.iter()).copied().collect();
        let fd = central_difference(f, &x, 1e-6);
        Ok(relative_error(&a, &fd, 1e-6))
    }

    fn objective(&mut self, index: usize) -> Result<f64> {
        let kind = if index.is_multiple_of(2) { PrimitiveKind::Polytope } else { PrimitiveKind::Ball };
        let cfg = GeneratorConfig { count: self.rng.gen_range(2..=4), kind, ..GeneratorConfig::default() };
        let scene = generate_corridor(self.rng.gen(), &cfg)?;
        let mut spec = ProblemSpec::corridor(scene.corridor, scene.start.as_slice(), scene.goal.as_slice());
        spec.pieces_per_primitive = self.rng.gen_range(1..=2);
        spec.v_max = 2.0;
        spec.a_max = 2.0;
        spec.weights = crate::solver::PenaltyWeights {
            speed: 10.0,
            acceleration: 10.0,
            containment: 10.0,
            thrust: 10.0,
            body_rate: 10.0,
        };
        if index % 3 == 2 {
            spec.time = TimeRegularization::FixedTotal { total: self.rng.gen_range(3.0..10.0) };
        }
        let problem = Problem::new(&spec)?;
        let x: Vec<f64> = problem.initial_point().iter().map(|v| v + 0.05 * self.rng.gen_range(-1.0..1.0)).collect();
        let mut g = vec![0.0; x.len()];
        problem.evaluate(&x, &mut g)?;
        self.flip("objective", &mut g);
        let mut scratch = vec![0.0; x.len()];
        let fd =
            central_difference(|x| problem.evaluate(x, &mut scratch).map(|c| c.total).unwrap_or(f64::NAN), &x, 1e-6);
        Ok(relative_error(&g, &fd, 1e-6))
    }
}

/// Worst relative error per layer over `instances` random draws each.
pub fn run(cfg: &GradcheckConfig) -> Result<Vec<LayerReport>> {
    let mut h = Harness { rng: ChaCha8Rng::seed_from_u64(cfg.seed), scale: cfg.scale, inject: cfg.inject.clone() };
    let mut out = Vec::with_capacity(LAYERS.len());
    for layer in LAYERS {
        let mut worst = 0.0f64;
        for k in 0..cfg.instances {
            let e = match layer {
                "minco.dq" => h.minco(false)?,
                "minco.dT" => h.minco(true)?,
                "time.free" => h.time(false),
                "time.fixed" => h.time(true),
                "ball" => h.ball()?,
                "polytope" => h.polytope()?,
                "penalty.dc" => h.penalty(false)?,
                "penalty.dT" => h.penalty(true)?,
                "flatness" => h.flatness()?,
                _ => h.objective(k)?,
            };
            worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
        }
        out.push(LayerReport { layer: layer.to_string(), instances: cfg.instances, worst, pass: worst <= TOLERANCE });
    }
    Ok(out)
}
