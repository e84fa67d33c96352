//! Node coordinates, path angles, delays and array steering vectors.
//!
//! Everything here is generic over the float type so the geometric kernel can
//! run in `f32` as well as `f64`. The estimation pipeline itself uses the `f64`
//! aliases exported at the crate root.
//!
//! Layout conventions: the BS array is a ULA along x, the RIS is a UPA in the
//! x-z plane (azimuth index fastest), the MS array is a ULA rotated by `alpha`
//! about the z axis.

use nalgebra::{DVector, Scalar};
use num_complex::Complex;
use num_traits::{Float, FloatConst};
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::params::{ChannelParams, PathParams, PositionParams};

/// Propagation speed used for every delay computation, m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Slack allowed on arcsin/arccos arguments before the geometry is rejected.
pub const TRIG_CLAMP_TOL: f64 = 1e-9;

/// Float types usable by the geometric kernel.
pub trait Real: Float + FloatConst + Scalar {
    fn lit(v: f64) -> Self {
        Self::from(v).expect("literal representable")
    }
}
impl<T: Float + FloatConst + Scalar> Real for T {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    /// Length of the projection on the x-y plane.
    pub fn norm_xy(self) -> T {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Unit vector along spherical angles as used for RIS arrivals:
    /// `[sin(phi)cos(psi), sin(phi)sin(psi), cos(phi)]`.
    pub fn from_spherical(phi: T, psi: T) -> Self {
        Self::new(phi.sin() * psi.cos(), phi.sin() * psi.sin(), phi.cos())
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Antenna counts and element spacings of the three arrays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayLayout<T> {
    pub n_b: usize,
    pub n_m: usize,
    pub n_a: usize,
    pub n_e: usize,
    pub d_bs: T,
    pub d_ms: T,
    pub d_ris_a: T,
    pub d_ris_e: T,
    pub wavelength: T,
}

impl<T: Real> ArrayLayout<T> {
    pub fn n_ris(&self) -> usize {
        self.n_a * self.n_e
    }

    pub fn bs_ratio(&self) -> T {
        self.d_bs / self.wavelength
    }

    pub fn ms_ratio(&self) -> T {
        self.d_ms / self.wavelength
    }

    pub fn ris_a_ratio(&self) -> T {
        self.d_ris_a / self.wavelength
    }

    pub fn ris_e_ratio(&self) -> T {
        self.d_ris_e / self.wavelength
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_b == 0 || self.n_m == 0 || self.n_a == 0 || self.n_e == 0 {
            return Err(Error::Config("array sizes must be positive".into()));
        }
        let half = self.wavelength * T::lit(0.5) * T::lit(1.0 + 1e-12);
        for (name, d) in [
            ("d_bs", self.d_bs),
            ("d_ms", self.d_ms),
            ("d_ris_a", self.d_ris_a),
            ("d_ris_e", self.d_ris_e),
        ] {
            if !(d > T::zero() && d <= half) {
                return Err(Error::Config(format!("{name} must lie in (0, lambda/2]")));
            }
        }
        Ok(())
    }
}

/// Ground-truth layout: BS, RIS, MS, MS rotation and the scatterers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioGeometry<T> {
    pub bs: Vec3<T>,
    pub ris: Vec3<T>,
    pub ms: Vec3<T>,
    /// MS array rotation about z, in [0, pi).
    pub alpha: T,
    pub scatterers: Vec<Vec3<T>>,
    pub arrays: ArrayLayout<T>,
}

impl<T: Real> ScenarioGeometry<T> {
    /// Number of scatterer paths Q.
    pub fn q(&self) -> usize {
        self.scatterers.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.arrays.validate()?;
        if !(self.alpha >= T::zero() && self.alpha < T::PI()) {
            return Err(Error::Config("alpha must lie in [0, pi)".into()));
        }
        let pts = [self.bs, self.ris, self.ms];
        if pts.iter().chain(self.scatterers.iter()).any(|p| !p.is_finite()) {
            return Err(Error::Config("non-finite coordinate".into()));
        }
        Ok(())
    }
}

/// Angles of one MS-to-RIS path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathAngles<T> {
    /// AOD at the MS.
    pub theta_t: T,
    /// Elevation AOA at the RIS.
    pub phi_in: T,
    /// Azimuth AOA at the RIS.
    pub psi_in: T,
}

/// Angles of the fixed RIS-to-BS leg. These are known to the receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkAngles<T> {
    pub theta_r0: T,
    pub phi_out0: T,
    pub psi_out0: T,
}

/// Which azimuth range a path's RIS arrival must land in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathClass {
    /// Direct MS-RIS path, psi in [pi, 3pi/2].
    Vlos,
    /// Scatterer path, psi in [pi/2, pi].
    Nlos,
}

impl PathClass {
    pub fn of(q: usize) -> Self {
        if q == 0 {
            PathClass::Vlos
        } else {
            PathClass::Nlos
        }
    }

    pub fn psi_range<T: Real>(self) -> (T, T) {
        let pi = T::PI();
        match self {
            PathClass::Vlos => (pi, pi * T::lit(1.5)),
            PathClass::Nlos => (pi * T::lit(0.5), pi),
        }
    }
}

fn checked_unit<T: Real>(v: T, what: &str) -> Result<T> {
    if !v.is_finite() {
        return Err(Error::DegenerateGeometry(format!("{what}: non-finite argument")));
    }
    let tol = T::lit(TRIG_CLAMP_TOL);
    if v.abs() > T::one() + tol {
        return Err(Error::DegenerateGeometry(format!(
            "{what}: trig argument {} outside [-1, 1]",
            v.to_f64().unwrap_or(f64::NAN)
        )));
    }
    Ok(v.max(-T::one()).min(T::one()))
}

/// `asin` with the clamp-or-reject guard.
pub fn guarded_asin<T: Real>(v: T, what: &str) -> Result<T> {
    checked_unit(v, what).map(|v| v.asin())
}

/// `acos` with the clamp-or-reject guard.
pub fn guarded_acos<T: Real>(v: T, what: &str) -> Result<T> {
    checked_unit(v, what).map(|v| v.acos())
}

fn nonzero<T: Real>(d: T, what: &str) -> Result<T> {
    if d > T::zero() && d.is_finite() {
        Ok(d)
    } else {
        Err(Error::DegenerateGeometry(format!("{what}: zero distance")))
    }
}

/// ULA response `[exp(-j 2 pi k u)]`, k = 0..n.
pub fn steer_ula<T: Real>(u: T, n: usize) -> DVector<Complex<T>> {
    let w = -T::TAU() * u;
    DVector::from_iterator(
        n,
        (0..n).map(|k| Complex::from_polar(T::one(), w * T::from(k).unwrap())),
    )
}

/// UPA response `f(u_el, n_e) kron f(u_az, n_a)`.
pub fn steer_upa<T: Real>(u_az: T, u_el: T, n_a: usize, n_e: usize) -> DVector<Complex<T>> {
    let az = steer_ula(u_az, n_a);
    let el = steer_ula(u_el, n_e);
    let mut out = DVector::from_element(n_a * n_e, Complex::new(T::zero(), T::zero()));
    for ke in 0..n_e {
        for ka in 0..n_a {
            out[ke * n_a + ka] = el[ke] * az[ka];
        }
    }
    out
}

/// AOD at the MS towards `target`: `asin(a^T (target - m) / |target - m|)` with
/// `a = [cos(alpha), -sin(alpha), 0]`.
pub fn departure_angle<T: Real>(ms: Vec3<T>, alpha: T, target: Vec3<T>) -> Result<T> {
    let w = target - ms;
    let d = nonzero(w.norm(), "MS to next hop")?;
    guarded_asin((w.x * alpha.cos() - w.y * alpha.sin()) / d, "theta_t")
}

/// Elevation and azimuth of arrival at the RIS for a wave coming from `from`.
///
/// The azimuth uses the `pi - asin` form; `class` is only used to check that the
/// result falls in the expected range.
pub fn ris_arrival<T: Real>(ris: Vec3<T>, from: Vec3<T>, class: PathClass) -> Result<(T, T)> {
    let w = ris - from;
    let d = nonzero(w.norm(), "RIS incoming leg")?;
    let rho = nonzero(w.norm_xy(), "RIS incoming leg (horizontal)")?;
    let phi = guarded_acos(w.z / d, "phi_in")?;
    let psi = T::PI() - guarded_asin(w.y / rho, "psi_in")?;
    let (lo, hi) = class.psi_range::<T>();
    let tol = T::lit(TRIG_CLAMP_TOL);
    if psi < lo - tol || psi > hi + tol {
        return Err(Error::DegenerateGeometry(format!(
            "psi_in = {} outside its range for {:?}",
            psi.to_f64().unwrap_or(f64::NAN),
            class
        )));
    }
    Ok((phi, psi))
}

/// Angles of the RIS-to-BS leg.
pub fn link_angles<T: Real>(bs: Vec3<T>, ris: Vec3<T>) -> Result<LinkAngles<T>> {
    let w = bs - ris;
    let d = nonzero(w.norm(), "RIS to BS")?;
    let rho = nonzero(w.norm_xy(), "RIS to BS (horizontal)")?;
    Ok(LinkAngles {
        theta_r0: guarded_asin(w.x / d, "theta_r0")?,
        phi_out0: guarded_acos(w.z / d, "phi_out0")?,
        psi_out0: guarded_asin(w.y / rho, "psi_out0")?,
    })
}

/// Angles of every path, q = 0 (virtual LoS through the RIS) first.
pub fn angles_from_geometry<T: Real>(g: &ScenarioGeometry<T>) -> Result<Vec<PathAngles<T>>> {
    let mut out = Vec::with_capacity(g.q() + 1);
    let theta0 = departure_angle(g.ms, g.alpha, g.ris)?;
    let (phi0, psi0) = ris_arrival(g.ris, g.ms, PathClass::Vlos)?;
    out.push(PathAngles {
        theta_t: theta0,
        phi_in: phi0,
        psi_in: psi0,
    });
    for s in &g.scatterers {
        let theta = departure_angle(g.ms, g.alpha, *s)?;
        let (phi, psi) = ris_arrival(g.ris, *s, PathClass::Nlos)?;
        out.push(PathAngles {
            theta_t: theta,
            phi_in: phi,
            psi_in: psi,
        });
    }
    Ok(out)
}

/// Path delays in seconds, q = 0 first.
pub fn toas_from_geometry<T: Real>(g: &ScenarioGeometry<T>) -> Result<Vec<T>> {
    toas(g.bs, g.ris, g.ms, &g.scatterers)
}

fn toas<T: Real>(bs: Vec3<T>, ris: Vec3<T>, ms: Vec3<T>, scatterers: &[Vec3<T>]) -> Result<Vec<T>> {
    let c = T::lit(SPEED_OF_LIGHT);
    let d_rb = nonzero((ris - bs).norm(), "RIS to BS")?;
    let d_mr = nonzero((ms - ris).norm(), "MS to RIS")?;
    let mut out = vec![(d_rb + d_mr) / c];
    for s in scatterers {
        let d_sr = nonzero((*s - ris).norm(), "scatterer to RIS")?;
        let d_ms = nonzero((ms - *s).norm(), "MS to scatterer")?;
        out.push((d_rb + d_sr + d_ms) / c);
    }
    Ok(out)
}

/// Physical angle to spatial frequency on a ULA: `(d / lambda) sin(theta)`.
pub fn ula_frequency<T: Real>(theta: T, spacing_ratio: T) -> T {
    spacing_ratio * theta.sin()
}

/// Inverse of [`ula_frequency`] on the principal branch.
pub fn ula_angle<T: Real>(u: T, spacing_ratio: T) -> Result<T> {
    guarded_asin(u / spacing_ratio, "spatial frequency")
}

/// Maps position parameters to channel parameters (`eta = G(eta~)`).
///
/// The RIS-to-BS angles are taken from `bs` and `ris`; gains pass through.
pub fn forward_map_g(p: &PositionParams, bs: Vec3<f64>, ris: Vec3<f64>) -> Result<ChannelParams> {
    if p.gains.len() != p.scatterers.len() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} gains for {} paths",
            p.gains.len(),
            p.scatterers.len() + 1
        )));
    }
    let link = link_angles(bs, ris)?;
    let taus = toas(bs, ris, p.ms, &p.scatterers)?;
    let mut paths = Vec::with_capacity(p.gains.len());
    for (q, (&tau, &delta)) in taus.iter().zip(&p.gains).enumerate() {
        let (target, class) = if q == 0 {
            (ris, PathClass::Vlos)
        } else {
            (p.scatterers[q - 1], PathClass::Nlos)
        };
        let theta_t = departure_angle(p.ms, p.alpha, target)?;
        let from = if q == 0 { p.ms } else { p.scatterers[q - 1] };
        let (phi_in, psi_in) = ris_arrival(ris, from, class)?;
        paths.push(PathParams {
            tau,
            delta,
            theta_t,
            phi_in,
            psi_in,
        });
    }
    Ok(ChannelParams { paths, link })
}

/// Forward map evaluated without the azimuth range check; used inside solvers
/// whose iterates may temporarily leave the nominal layout.
pub(crate) fn forward_map_unchecked(p: &PositionParams, bs: Vec3<f64>, ris: Vec3<f64>) -> Option<ChannelParams> {
    let link = link_angles(bs, ris).ok()?;
    let taus = toas(bs, ris, p.ms, &p.scatterers).ok()?;
    let mut paths = Vec::with_capacity(p.gains.len());
    for (q, (&tau, &delta)) in taus.iter().zip(&p.gains).enumerate() {
        let from = if q == 0 { p.ms } else { p.scatterers[q - 1] };
        let target = if q == 0 { ris } else { p.scatterers[q - 1] };
        let theta_t = departure_angle(p.ms, p.alpha, target).ok()?;
        let w = ris - from;
        let phi_in = guarded_acos(w.z / w.norm(), "phi_in").ok()?;
        let psi_in = std::f64::consts::PI - guarded_asin(w.y / w.norm_xy(), "psi_in").ok()?;
        paths.push(PathParams {
            tau,
            delta,
            theta_t,
            phi_in,
            psi_in,
        });
    }
    Some(ChannelParams { paths, link })
}

/// Channel parameters of a scenario given per-path gains.
pub fn channel_params(g: &ScenarioGeometry<f64>, gains: &[Complex<f64>]) -> Result<ChannelParams> {
    forward_map_g(&PositionParams::from_geometry(g, gains.to_vec())?, g.bs, g.ris)
}
