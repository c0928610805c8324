//! Multicopter flatness map with zero yaw: translation derivatives to
//! attitude, specific thrust and body rate, and its reverse-mode adjoint.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.81;
const SINGULAR_TOL: f64 = 1e-6;

/// Position and its first three derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlatSignal {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
    pub j: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadState {
    pub rotation: Matrix3<f64>,
    /// Thrust over mass, m/s^2.
    pub f_spec: f64,
    /// Body rate, rad/s.
    pub omega: Vector3<f64>,
}

impl QuadState {
    /// Roll angle about the body x axis (rad).
    pub fn roll(&self) -> f64 {
        self.rotation[(2, 1)].atan2(self.rotation[(2, 2)])
    }
}

/// Ellipsoid semi-axes `Q = diag(r_e, r_e, h_e)` in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleShape {
    pub radius: f64,
    pub height: f64,
}

impl VehicleShape {
    pub fn new(radius: f64, height: f64) -> Result<Self> {
        if !(radius > 0.0 && height > 0.0) {
            return Err(Error::InvalidInput("vehicle semi-axes must be positive".into()));
        }
        Ok(Self { radius, height })
    }

    pub fn q(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(self.radius, self.radius, self.height))
    }

    /// Support extent `|Q R^T n|` along a world direction `n`.
    pub fn extent(&self, rotation: &Matrix3<f64>, n: &Vector3<f64>) -> f64 {
        (self.q() * rotation.transpose() * n).norm()
    }
}

/// Gradients with respect to the flat derivatives. Position never enters
/// the map, so its gradient is always zero and omitted.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlatGradient {
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
    pub j: Vector3<f64>,
}

struct Forward {
    f: f64,
    z: Vector3<f64>,
    zd: Vector3<f64>,
    nu: f64,
    y: Vector3<f64>,
    ud: Vector3<f64>,
    yd: Vector3<f64>,
    x: Vector3<f64>,
    xd: Vector3<f64>,
}

fn forward(sig: &FlatSignal, gravity: f64) -> Result<Forward> {
    let e1 = Vector3::x();
    let tau = sig.a + Vector3::z() * gravity;
    let f = tau.norm();
    if !(f >= SINGULAR_TOL) {
        return Err(Error::SingularThrust);
    }
    let z = tau / f;
    let zd = (sig.j - z * z.dot(&sig.j)) / f;
    let u = z.cross(&e1);
    let nu = u.norm();
    if !(nu >= SINGULAR_TOL) {
        return Err(Error::SingularYaw);
    }
    let y = u / nu;
    let ud = zd.cross(&e1);
    let yd = (ud - y * y.dot(&ud)) / nu;
    let x = y.cross(&z);
    let xd = yd.cross(&z) + y.cross(&zd);
    Ok(Forward { f, z, zd, nu, y, ud, yd, x, xd })
}

pub fn flat_to_state(sig: &FlatSignal, gravity: f64) -> Result<QuadState> {
    let fw = forward(sig, gravity)?;
    Ok(QuadState {
        rotation: Matrix3::from_columns(&[fw.x, fw.y, fw.z]),
        f_spec: fw.f,
        omega: Vector3::new(fw.z.dot(&fw.yd), fw.x.dot(&fw.zd), fw.y.dot(&fw.xd)),
    })
}

/// Adjoint of [`flat_to_state`] for output gradients `(g_rotation, g_f, g_omega)`.
pub fn flat_to_state_pullback(
    sig: &FlatSignal,
    gravity: f64,
    g_rotation: &Matrix3<f64>,
    g_f: f64,
    g_omega: &Vector3<f64>,
) -> Result<FlatGradient> {
    let Forward { f, z, zd, nu, y, ud, yd, x, xd } = forward(sig, gravity)?;
    let e1 = Vector3::x();
    let mut bx: Vector3<f64> = g_rotation.column(0).into();
    let mut by: Vector3<f64> = g_rotation.column(1).into();
    let mut bz: Vector3<f64> = g_rotation.column(2).into();
    let mut bf = g_f;

    // omega = (z.yd, x.zd, y.xd)
    bz += yd * g_omega[0];
    let mut byd = z * g_omega[0];
    bx += zd * g_omega[1];
    let mut bzd = x * g_omega[1];
    by += xd * g_omega[2];
    let bxd = y * g_omega[2];

    // xd = yd x z + y x zd
    byd += z.cross(&bxd);
    bz += bxd.cross(&yd);
    by += zd.cross(&bxd);
    bzd += bxd.cross(&y);

    // x = y x z
    by += z.cross(&bx);
    bz += bx.cross(&y);

    // yd = (I - y y^T) ud / nu
    let h = byd / nu;
    let bud = h - y * y.dot(&h);
    by += -(h * y.dot(&ud)) - ud * h.dot(&y);
    let bnu = -byd.dot(&yd) / nu;

    // ud = zd x e1
    bzd += e1.cross(&bud);

    // y = u / |u|
    let bu = (by - y * y.dot(&by)) / nu + y * bnu;

    // u = z x e1
    bz += e1.cross(&bu);

    // zd = (I - z z^T) j / f
    let h = bzd / f;
    let bj = h - z * z.dot(&h);
    bz += -(h * z.dot(&sig.j)) - sig.j * h.dot(&z);
    bf += -bzd.dot(&zd) / f;

    // z = tau / |tau|
    let btau = (bz - z * z.dot(&bz)) / f + z * bf;

    Ok(FlatGradient { v: Vector3::zeros(), a: btau, j: bj })
}
