//! wasm-bindgen entry points for `www/index.html`. Inputs and outputs are
//! JSON strings; the inner functions are plain Rust so they test natively.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use minco::geometry::{Corridor, CorridorData};
use minco::scene::{self, GapGeometry, GeneratorConfig, PrimitiveKind};
use minco::solver::{max_roll_deg, optimize_corridor, optimize_se3, OptimizeResult, ProblemSpec, TimeRegularization};

/// Samples drawn per trajectory.
const SAMPLES: usize = 400;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneView {
    pub corridor: CorridorData,
    pub start: [f64; 3],
    pub goal: [f64; 3],
    /// Top-down outline of each element: a polygon, or a circle as
    /// `[cx, cy, r]`.
    pub outlines: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanView {
    pub converged: bool,
    pub iterations: usize,
    pub total_duration: f64,
    pub cost: f64,
    pub worst_violation: f64,
    /// `[t, x, y, z, speed]`.
    pub samples: Vec<[f64; 5]>,
    /// Knot positions.
    pub knots: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapView {
    pub scene: SceneView,
    pub plan: PlanView,
    pub gap_width: f64,
    pub max_roll_deg: f64,
    /// `[x, y, body y-axis x, body y-axis y]`, for drawing the tilt.
    pub attitude: Vec<[f64; 4]>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Monotone-chain convex hull.
fn hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup_by(|a, b| (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    if pts.len() < 3 {
        return pts;
    }
    let mut h: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = h.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while h.len() >= start + 2 && cross(h[h.len() - 2], h[h.len() - 1], p) <= 0.0 {
                h.pop();
            }
            h.push(p);
        }
        h.pop();
    }
    h
}

fn outlines(c: &Corridor) -> Result<Vec<Vec<[f64; 2]>>, String> {
    match c {
        Corridor::Polytopes(ps) => ps
            .iter()
            .map(|p| {
                let v = p.enumerate_vertices().map_err(|e| e.to_string())?;
                Ok(hull(v.iter().map(|v| [v[0], v[1]]).collect()))
            })
            .collect(),
        Corridor::Balls(bs) => Ok(bs.iter().map(|b| vec![[b.center[0], b.center[1]], [b.radius, 0.0]]).collect()),
    }
}

fn view(s: &scene::Scene) -> Result<SceneView, String> {
    Ok(SceneView {
        corridor: s.corridor.to_data(),
        start: s.start.into(),
        goal: s.goal.into(),
        outlines: outlines(&s.corridor)?,
    })
}

fn plan_view(r: &OptimizeResult) -> Result<PlanView, String> {
    let traj = &r.trajectory;
    let total = traj.total_duration();
    let samples = (0..=SAMPLES)
        .map(|k| {
            let t = (total * k as f64 / SAMPLES as f64).min(total);
            let p = traj.evaluate(t, 0).map_err(|e| e.to_string())?;
            let v = traj.evaluate(t, 1).map_err(|e| e.to_string())?;
            Ok([t, p[0], p[1], p[2], Vector3::from_column_slice(&v).norm()])
        })
        .collect::<Result<_, String>>()?;
    let w = traj.waypoints();
    Ok(PlanView {
        converged: r.converged(),
        iterations: r.iterations,
        total_duration: total,
        cost: r.cost.total,
        worst_violation: r.violations.iter().map(|v| v.max).fold(f64::NEG_INFINITY, f64::max),
        samples,
        knots: (0..w.ncols()).map(|i| [w[(0, i)], w[(1, i)], w[(2, i)]]).collect(),
    })
}

pub fn generate_scene(seed: u32, count: usize, kind: &str) -> Result<String, String> {
    let kind: PrimitiveKind = kind.parse().map_err(|e: minco::Error| e.to_string())?;
    let cfg = GeneratorConfig { count: count.clamp(1, 64), kind, planar: true, ..Default::default() };
    let s = scene::generate_corridor(seed as u64, &cfg).map_err(|e| e.to_string())?;
    serde_json::to_string(&view(&s)?).map_err(|e| e.to_string())
}

pub fn plan_scene(scene: &str, k_rho: f64, pieces: usize, v_max: f64) -> Result<String, String> {
    let s: SceneView = serde_json::from_str(scene).map_err(|e| e.to_string())?;
    let corridor = Corridor::try_from(s.corridor).map_err(|e| e.to_string())?;
    let mut spec = ProblemSpec::corridor(corridor, &s.start, &s.goal);
    spec.time = TimeRegularization::Linear { k_rho };
    spec.pieces_per_primitive = pieces.max(1);
    spec.v_max = v_max;
    let r = optimize_corridor(&spec).map_err(|e| e.to_string())?;
    serde_json::to_string(&plan_view(&r)?).map_err(|e| e.to_string())
}

pub fn fly_gap(angle_deg: f64) -> Result<String, String> {
    let width = scene::gap_width_for_angle(angle_deg).ok_or_else(|| format!("no gap tabulated for {angle_deg} deg"))?;
    let geom = GapGeometry::new(width);
    let s = scene::narrow_gap(&geom).map_err(|e| e.to_string())?;
    let spec = ProblemSpec::se3(s.corridor.clone(), s.start.as_slice(), s.goal.as_slice());
    let half = geom.wall_thickness / 2.0 + spec.se3.map(|l| l.shape.radius).unwrap_or(0.0);
    let r = optimize_se3(&spec).map_err(|e| e.to_string())?;
    let step = (r.states.len() / 60).max(1);
    let attitude = r
        .states
        .iter()
        .step_by(step)
        .map(|st| [st.position[0], st.position[1], st.rotation[1], st.rotation[4]])
        .collect();
    let out = GapView {
        scene: view(&s)?,
        plan: plan_view(&r)?,
        gap_width: width,
        max_roll_deg: max_roll_deg(&r.states, half),
        attitude,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Random planar corridor as a scene JSON.
#[wasm_bindgen(js_name = generateScene)]
pub fn generate_scene_js(seed: u32, count: usize, kind: &str) -> Result<String, JsError> {
    generate_scene(seed, count, kind).map_err(|e| JsError::new(&e))
}

/// Time-optimal flight through a scene from `generateScene`.
#[wasm_bindgen(js_name = planScene)]
pub fn plan_scene_js(scene: &str, k_rho: f64, pieces: usize, v_max: f64) -> Result<String, JsError> {
    plan_scene(scene, k_rho, pieces, v_max).map_err(|e| JsError::new(&e))
}

/// Attitude-aware crossing of the narrow gap for a tabulated angle.
#[wasm_bindgen(js_name = flyGap)]
pub fn fly_gap_js(angle_deg: f64) -> Result<String, JsError> {
    fly_gap(angle_deg).map_err(|e| JsError::new(&e))
}
