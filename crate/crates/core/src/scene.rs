//! Reproducible test scenes: random corridors, a long straight corridor and
//! a narrow slot through a wall.

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ball, Corridor, HPolytope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    #[default]
    Polytope,
    Ball,
}

impl std::str::FromStr for PrimitiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "polytope" => Ok(PrimitiveKind::Polytope),
            "ball" => Ok(PrimitiveKind::Ball),
            other => Err(Error::InvalidInput(format!("unknown primitive kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub corridor: Corridor,
    pub start: Vector3<f64>,
    pub goal: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub count: usize,
    pub kind: PrimitiveKind,
    /// Keep the route in the xy plane with a fixed vertical extent.
    pub planar: bool,
    pub segment_length: (f64, f64),
    pub max_turn_deg: f64,
    /// Clearance range around the route for each facet.
    pub clearance: (f64, f64),
    pub facets: (usize, usize),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            count: 16,
            kind: PrimitiveKind::Polytope,
            planar: false,
            segment_length: (3.0, 5.0),
            max_turn_deg: 60.0,
            clearance: (0.8, 1.5),
            facets: (8, 30),
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng, planar: bool) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            if planar { 0.0 } else { rng.gen_range(-1.0..1.0) },
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Unit vector at angle `<= max_turn` from `dir`.
fn turn(rng: &mut ChaCha8Rng, dir: &Vector3<f64>, max_turn: f64, planar: bool) -> Vector3<f64> {
    loop {
        let cand = random_unit(rng, planar);
        let angle = rng.gen_range(0.0..max_turn);
        let perp = cand - dir * dir.dot(&cand);
        if perp.norm() < 1e-3 {
            continue;
        }
        let perp = perp.normalize();
        return (dir * angle.cos() + perp * angle.sin()).normalize();
    }
}

fn frame(u: &Vector3<f64>, planar: bool) -> (Vector3<f64>, Vector3<f64>) {
    if planar {
        let v = Vector3::new(-u.y, u.x, 0.0).normalize();
        return (v, Vector3::z());
    }
    let helper = if u.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let v = u.cross(&helper).normalize();
    (v, u.cross(&v))
}

fn segment_polytope(
    rng: &mut ChaCha8Rng,
    c0: &Vector3<f64>,
    c1: &Vector3<f64>,
    cfg: &GeneratorConfig,
) -> Result<HPolytope> {
    let u = (c1 - c0).normalize();
    let (v, w) = frame(&u, cfg.planar);
    let facets = rng.gen_range(cfg.facets.0..=cfg.facets.1);
    let mut rows = Vec::with_capacity(facets);
    let mut push = |n: Vector3<f64>, r: f64| {
        let b = n.dot(c0).max(n.dot(c1)) + r;
        rows.push(vec![n.x, n.y, n.z, b]);
    };
    let (lo, hi) = cfg.clearance;
    for n in [u, -u, v, -v] {
        push(n, rng.gen_range(lo..hi));
    }
    if cfg.planar {
        push(w, 1.0);
        push(-w, 1.0);
    } else {
        for n in [w, -w] {
            push(n, rng.gen_range(lo..hi));
        }
    }
    for _ in 6..facets {
        let n = random_unit(rng, cfg.planar);
        push(n, rng.gen_range(lo..hi));
    }
    HPolytope::from_rows(&rows)
}

/// Random chain of primitives along a route with bounded turns.
///
/// Each polytope contains a tube of radius `clearance.0` around its route
/// segment; each ball is centered at the segment midpoint with radius
/// `0.6 L`. Elements two apart are redrawn until they are disjoint.
pub fn generate_corridor(seed: u64, cfg: &GeneratorConfig) -> Result<Scene> {
    if cfg.count == 0 {
        return Err(Error::InvalidInput("corridor needs at least one element".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_turn = cfg.max_turn_deg.to_radians();
    let mut nodes = vec![Vector3::zeros()];
    let mut dir = random_unit(&mut rng, cfg.planar);
    let mut polys: Vec<HPolytope> = Vec::new();
    let mut balls: Vec<Ball> = Vec::new();
    let mut attempts = 0;
    while nodes.len() <= cfg.count {
        attempts += 1;
        if attempts > 200 * cfg.count {
            return Err(Error::InvalidInput("corridor generation did not converge".into()));
        }
        let k = nodes.len() - 1;
        let cand_dir = if k == 0 { dir } else { turn(&mut rng, &dir, max_turn, cfg.planar) };
        let len = rng.gen_range(cfg.segment_length.0..cfg.segment_length.1);
        let c0 = nodes[k];
        let c1 = c0 + cand_dir * len;
        let ok = match cfg.kind {
            PrimitiveKind::Polytope => {
                let p = segment_polytope(&mut rng, &c0, &c1, cfg)?;
                let clash = k >= 2 && Corridor::Polytopes(vec![polys[k - 2].clone(), p.clone()]).overlaps(0, 1);
                if !clash {
                    polys.push(p);
                }
                !clash
            }
            PrimitiveKind::Ball => {
                let mid = (c0 + c1) * 0.5;
                let b = Ball::new(vec![mid.x, mid.y, mid.z], 0.6 * len)?;
                let clash = k >= 2 && {
                    let other = &balls[k - 2];
                    (b.center_vec() - other.center_vec()).norm() <= b.radius + other.radius
                };
                if !clash {
                    balls.push(b);
                }
                !clash
            }
        };
        if ok {
            nodes.push(c1);
            dir = cand_dir;
        }
    }
    let corridor = match cfg.kind {
        PrimitiveKind::Polytope => Corridor::Polytopes(polys),
        PrimitiveKind::Ball => Corridor::Balls(balls),
    };
    Ok(Scene { corridor, start: nodes[0], goal: nodes[cfg.count] })
}

/// `count` overlapping boxes along the x axis, each `length` long with a
/// square cross-section of half-width `half_width`.
pub fn straight_corridor(count: usize, length: f64, half_width: f64) -> Result<Scene> {
    if count == 0 {
        return Err(Error::InvalidInput("corridor needs at least one element".into()));
    }
    let overlap = 0.25 * length;
    let polys = (0..count)
        .map(|k| {
            let x0 = k as f64 * (length - overlap);
            HPolytope::from_box(&[x0, -half_width, -half_width], &[x0 + length, half_width, half_width])
        })
        .collect::<Result<Vec<_>>>()?;
    let end = (count - 1) as f64 * (length - overlap) + length;
    Ok(Scene {
        corridor: Corridor::Polytopes(polys),
        start: Vector3::new(0.5, 0.0, 0.0),
        goal: Vector3::new(end - 0.5, 0.0, 0.0),
    })
}

/// Gap width for a nominal roll angle; `None` off the table.
pub fn gap_width_for_angle(angle_deg: f64) -> Option<f64> {
    const TABLE: [(f64, f64); 5] = [(30.0, 0.88), (45.0, 0.76), (60.0, 0.60), (75.0, 0.40), (85.0, 0.25)];
    TABLE.iter().find(|(a, _)| (a - angle_deg).abs() < 1e-9).map(|(_, d)| *d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapGeometry {
    pub gap_width: f64,
    pub wall_thickness: f64,
    /// Half-length of the slot primitive along x.
    pub slot_half_length: f64,
    pub slot_half_height: f64,
}

impl GapGeometry {
    pub fn new(gap_width: f64) -> Self {
        Self { gap_width, wall_thickness: 0.3, slot_half_length: 1.5, slot_half_height: 1.0 }
    }
}

/// Free space on both sides of a wall at `x = 0`, joined by a slot of width
/// `gap_width` along y.
pub fn narrow_gap(geom: &GapGeometry) -> Result<Scene> {
    let w = 0.5 * geom.wall_thickness;
    let before = HPolytope::from_box(&[-4.5, -2.5, -2.0], &[-w, 2.5, 2.0])?;
    let slot = HPolytope::from_box(
        &[-geom.slot_half_length, -0.5 * geom.gap_width, -geom.slot_half_height],
        &[geom.slot_half_length, 0.5 * geom.gap_width, geom.slot_half_height],
    )?;
    let after = HPolytope::from_box(&[w, -2.5, -2.0], &[4.5, 2.5, 2.0])?;
    Ok(Scene {
        corridor: Corridor::Polytopes(vec![before, slot, after]),
        start: Vector3::new(-3.5, -0.6, 0.0),
        goal: Vector3::new(3.5, 0.6, 0.0),
    })
}

pub fn to_dvector(v: &Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}
