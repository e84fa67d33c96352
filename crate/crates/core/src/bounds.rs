//! Fisher information of the channel parameters, its transformation to the
//! position domain, and the resulting CRLB / PEB / OEB.

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::TAU;

use crate::channel::Sounding;
use crate::error::{Error, Result};
use crate::geometry::{departure_angle, link_angles, Vec3, SPEED_OF_LIGHT};
use crate::params::{eta, eta_tilde, ChannelParams, PositionParams};
use crate::{CMat, C64};

/// Condition number above which inverses fall back to the pseudo-inverse.
pub const MAX_CONDITION: f64 = 1e12;

/// Which parameter vector a FIM refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    /// eta, six entries per path.
    Channel { n_paths: usize },
    /// eta~, gains then MS position, rotation and scatterers.
    Position { n_paths: usize },
}

impl Ordering {
    pub fn dim(self) -> usize {
        match self {
            Ordering::Channel { n_paths } => eta::PER_PATH * n_paths,
            Ordering::Position { n_paths } => eta_tilde::len(n_paths),
        }
    }

    /// Human-readable name of entry `i`.
    pub fn name(self, i: usize) -> String {
        match self {
            Ordering::Channel { .. } => format!("{}_{}", eta::NAMES[i % eta::PER_PATH], i / eta::PER_PATH),
            Ordering::Position { n_paths } => {
                let m0 = eta_tilde::ms(n_paths);
                if i < m0 {
                    format!("h{}_{}", if i % 2 == 0 { "R" } else { "I" }, i / 2)
                } else if i < m0 + 3 {
                    ["m_x", "m_y", "m_z"][i - m0].to_string()
                } else if i == m0 + 3 {
                    "alpha".to_string()
                } else {
                    let k = i - m0 - 4;
                    format!("s{}_{}", ["x", "y", "z"][k % 3], k / 3 + 1)
                }
            }
        }
    }
}

/// A real symmetric Fisher information matrix with its parameter ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Fim {
    pub matrix: DMatrix<f64>,
    pub ordering: Ordering,
}

impl Fim {
    /// `T J T^T`.
    pub fn transform(&self, t: &DMatrix<f64>, n_paths: usize) -> Result<Fim> {
        if t.ncols() != self.matrix.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "T has {} columns, FIM is {}x{}",
                t.ncols(),
                self.matrix.nrows(),
                self.matrix.nrows()
            )));
        }
        let m = t * &self.matrix * t.transpose();
        Ok(Fim {
            matrix: symmetrize(&m),
            ordering: Ordering::Position { n_paths },
        })
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Per-path derivatives of the beamformed signal s_t[n] (T x N each) in the
/// eta ordering. The noiseless received vector is `a_B s_t[n]`.
fn signal_derivatives(s: &Sounding, params: &ChannelParams) -> Vec<CMat> {
    let (nt, nn) = (s.n_slots(), s.n_sub());
    let a = &s.arrays;
    let ms_ratio = a.ms_ratio();
    let (ra, re) = (a.ris_a_ratio(), a.ris_e_ratio());
    let x = &s.pilots.x;
    let b = s.cfg.bandwidth_hz;
    let j = C64::new(0.0, 1.0);
    let mut out = Vec::with_capacity(params.dim());

    for p in &params.paths {
        let e = s.delay_phasors(p.tau);
        let sig = s.slot_responses(p.phi_in, p.psi_in);
        let pp = s.pilot_projections(p.theta_t);

        // d p_t / d theta = sum_k j 2 pi k r cos(theta) conj(a_k) x_{k,t}
        let am = s.a_m(p.theta_t);
        let dam: Vec<C64> = (0..a.n_m)
            .map(|k| j * (TAU * k as f64 * ms_ratio * p.theta_t.cos()) * am[k].conj())
            .collect();
        let dpp: Vec<C64> = (0..nt)
            .map(|t| (0..a.n_m).map(|k| dam[k] * x[(k, t)]).sum())
            .collect();

        // d sigma / d phi and d sigma / d psi through diagonal index weights.
        let ar = s.a_r_diff(p.phi_in, p.psi_in);
        let (sphi, cphi) = p.phi_in.sin_cos();
        let (spsi, cpsi) = p.psi_in.sin_cos();
        let mut d_phi = ar.clone();
        let mut d_psi = ar.clone();
        for ke in 0..a.n_e {
            for ka in 0..a.n_a {
                let i = ke * a.n_a + ka;
                d_phi[i] *= j * (TAU * (re * sphi * ke as f64 - ra * spsi * cphi * ka as f64));
                d_psi[i] *= -j * (TAU * ka as f64 * ra * cpsi * sphi);
            }
        }
        let g = s.schedule.block_matrix();
        let dsig_phi_b = &g * d_phi;
        let dsig_psi_b = &g * d_psi;
        let blk = &s.schedule.slot_block;

        let base = DMatrix::from_fn(nt, nn, |t, n| e[n] * sig[t] * pp[t]);
        out.push(DMatrix::from_fn(nt, nn, |t, n| {
            -j * (TAU * n as f64 * b / nn as f64) * p.delta * base[(t, n)]
        }));
        out.push(base.clone());
        out.push(base.map(|v| j * v));
        out.push(DMatrix::from_fn(nt, nn, |t, n| p.delta * e[n] * sig[t] * dpp[t]));
        out.push(DMatrix::from_fn(nt, nn, |t, n| p.delta * e[n] * dsig_phi_b[blk[t]] * pp[t]));
        out.push(DMatrix::from_fn(nt, nn, |t, n| p.delta * e[n] * dsig_psi_b[blk[t]] * pp[t]));
    }
    out
}

/// J_eta with `[J]_{u,v} = (2/sigma^2) sum_{n,t} Re{x_t^H dH_t[n]^H/du dH_t[n]/dv x_t}`.
///
/// Because every channel matrix is `a_B (.)`, the quadratic form reduces to
/// `2 N_b / sigma^2 sum Re{conj(ds/du) ds/dv}` on the beamformed signal.
pub fn fim_channel(s: &Sounding, params: &ChannelParams) -> Fim {
    let d = signal_derivatives(s, params);
    let dim = d.len();
    let scale = 2.0 * s.arrays.n_b as f64 / s.noise_var();
    let mut m = DMatrix::zeros(dim, dim);
    for u in 0..dim {
        for v in u..dim {
            let acc: f64 = d[u].iter().zip(d[v].iter()).map(|(a, b)| (a.conj() * b).re).sum();
            m[(u, v)] = scale * acc;
            m[(v, u)] = scale * acc;
        }
    }
    Fim {
        matrix: m,
        ordering: Ordering::Channel {
            n_paths: params.n_paths(),
        },
    }
}

/// dH_t[n]/d eta_u as an N_b x N_m matrix, built term by term from the
/// cascaded channel.
pub fn channel_derivative(s: &Sounding, params: &ChannelParams, u: usize, t: usize, n: usize) -> Result<CMat> {
    if u >= params.dim() || t >= s.n_slots() || n >= s.n_sub() {
        return Err(Error::DimensionMismatch(format!(
            "derivative index (u={u}, t={t}, n={n}) out of range"
        )));
    }
    let a = &s.arrays;
    let p = &params.paths[u / eta::PER_PATH];
    let j = C64::new(0.0, 1.0);
    let phase = s.delay_phasors(p.tau)[n];
    let g = s.schedule.g_t(t);
    let ar = s.a_r_diff(p.phi_in, p.psi_in);
    let sigma = (g.transpose() * &ar)[0];
    let am_h = s.a_m(p.theta_t).adjoint();
    let outer = s.a_b() * &am_h;

    let m = match u % eta::PER_PATH {
        eta::TAU => outer * (-j * TAU * (n as f64) * s.cfg.bandwidth_hz / s.n_sub() as f64 * p.delta * phase * sigma),
        eta::DELTA_R => outer * (phase * sigma),
        eta::DELTA_I => outer * (j * phase * sigma),
        eta::THETA_T => {
            let d_n = DMatrix::from_fn(a.n_m, a.n_m, |r, c| {
                if r == c {
                    C64::new(r as f64, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            });
            let w = j * (TAU * a.ms_ratio() * p.theta_t.cos());
            s.a_b() * (am_h * d_n) * (w * p.delta * phase * sigma)
        }
        k => {
            let (sphi, cphi) = p.phi_in.sin_cos();
            let (spsi, cpsi) = p.psi_in.sin_cos();
            let (ra, re) = (a.ris_a_ratio(), a.ris_e_ratio());
            let diag = DMatrix::from_fn(a.n_ris(), a.n_ris(), |r, c| {
                if r != c {
                    return C64::new(0.0, 0.0);
                }
                let (ke, ka) = ((r / a.n_a) as f64, (r % a.n_a) as f64);
                if k == eta::PHI_IN {
                    j * (TAU * (re * sphi * ke - ra * spsi * cphi * ka))
                } else {
                    -j * (TAU * ka * ra * cpsi * sphi)
                }
            });
            let dsigma = (g.transpose() * diag * &ar)[0];
            outer * (p.delta * phase * dsigma)
        }
    };
    Ok(m)
}

fn unit(v: Vec3<f64>, what: &str) -> Result<(Vec3<f64>, f64)> {
    let d = v.norm();
    if !(d > 1e-12) || !d.is_finite() {
        return Err(Error::DegenerateGeometry(format!("{what}: zero distance")));
    }
    Ok((v * (1.0 / d), d))
}

/// Gradient of the AOD `asin(a^T w / |w|)` with respect to `w`.
fn aod_gradient(w: Vec3<f64>, alpha: f64) -> Result<Vec3<f64>> {
    let (_, d) = unit(w, "MS to next hop")?;
    let av = Vec3::new(alpha.cos(), -alpha.sin(), 0.0);
    let s = av.dot(w) / d;
    let c = (1.0 - s * s).sqrt();
    if !(c > 1e-12) {
        return Err(Error::DegenerateGeometry("AOD at endfire".into()));
    }
    Ok((av - w * (s / d)) * (1.0 / (d * c)))
}

/// Gradients of (phi_in, psi_in) with respect to `w = r - source`.
fn aoa_gradients(w: Vec3<f64>) -> Result<(Vec3<f64>, Vec3<f64>)> {
    let (_, d) = unit(w, "RIS incoming leg")?;
    let rho = w.norm_xy();
    if !(rho > 1e-12) || !(w.x.abs() > 1e-12) {
        return Err(Error::DegenerateGeometry("RIS azimuth derivative undefined".into()));
    }
    let dphi = Vec3::new(w.x * w.z, w.y * w.z, -rho * rho) * (1.0 / (d * d * rho));
    let dpsi = Vec3::new(w.x * w.y, -w.x * w.x, 0.0) * (1.0 / (rho * rho * w.x.abs()));
    Ok((dphi, dpsi))
}

/// T = d eta^T / d eta~, (5Q+6) x 6(Q+1): row i holds the derivatives of
/// every channel parameter with respect to position parameter i.
pub fn transformation_matrix(p: &PositionParams, ris: Vec3<f64>, bs: Vec3<f64>) -> Result<DMatrix<f64>> {
    let np = p.n_paths();
    if np == 0 || p.scatterers.len() + 1 != np {
        return Err(Error::DimensionMismatch("position parameters need Q+1 gains and Q scatterers".into()));
    }
    link_angles(bs, ris)?;
    let mut t = DMatrix::zeros(eta_tilde::len(np), eta::PER_PATH * np);
    let m0 = eta_tilde::ms(np);
    let ia = eta_tilde::alpha(np);
    let set3 = |t: &mut DMatrix<f64>, row0: usize, col: usize, v: Vec3<f64>, sign: f64| {
        for (k, c) in v.to_array().into_iter().enumerate() {
            t[(row0 + k, col)] += sign * c;
        }
    };

    for q in 0..np {
        t[(eta_tilde::gain(q), eta::index(q, eta::DELTA_R))] = 1.0;
        t[(eta_tilde::gain(q) + 1, eta::index(q, eta::DELTA_I))] = 1.0;

        let (next, source) = if q == 0 {
            (ris, p.ms)
        } else {
            (p.scatterers[q - 1], p.scatterers[q - 1])
        };
        let c_tau = eta::index(q, eta::TAU);
        let c_th = eta::index(q, eta::THETA_T);
        let c_phi = eta::index(q, eta::PHI_IN);
        let c_psi = eta::index(q, eta::PSI_IN);

        // Delays.
        let (u_ms, _) = unit(p.ms - next, "MS to next hop")?;
        set3(&mut t, m0, c_tau, u_ms, 1.0 / SPEED_OF_LIGHT);
        if q > 0 {
            let (u_sr, _) = unit(source - ris, "scatterer to RIS")?;
            let r0 = eta_tilde::scatterer(np, q);
            set3(&mut t, r0, c_tau, u_sr - u_ms, 1.0 / SPEED_OF_LIGHT);
        }

        // AOD: theta depends on w = next - m and on alpha.
        let w = next - p.ms;
        let g = aod_gradient(w, p.alpha)?;
        set3(&mut t, m0, c_th, g, -1.0);
        if q > 0 {
            set3(&mut t, eta_tilde::scatterer(np, q), c_th, g, 1.0);
        }
        let theta = departure_angle(p.ms, p.alpha, next)?;
        let d = w.norm();
        t[(ia, c_th)] = -(w.x * p.alpha.sin() + w.y * p.alpha.cos()) / (d * theta.cos());

        // RIS AOA: depends on w = r - source.
        let (dphi, dpsi) = aoa_gradients(ris - source)?;
        let r0 = if q == 0 { m0 } else { eta_tilde::scatterer(np, q) };
        set3(&mut t, r0, c_phi, dphi, -1.0);
        set3(&mut t, r0, c_psi, dpsi, -1.0);
    }
    Ok(t)
}

/// Inverse of a symmetric PSD matrix through Jacobi scaling and an
/// eigendecomposition. Returns the inverse, the condition number of the
/// scaled matrix, and whether the pseudo-inverse was used.
pub fn inverse_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, f64, bool) {
    let n = m.nrows();
    let sym = symmetrize(m);
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = sym[(i, i)];
            if d > 0.0 && d.is_finite() {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| sym[(i, j)] * scale[i] * scale[j]);
    let eig = SymmetricEigen::new(scaled);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    let singular = !(condition <= MAX_CONDITION);
    let floor = lmax / MAX_CONDITION;
    let inv_vals = eig.eigenvalues.map(|l| if singular && l <= floor { 0.0 } else { 1.0 / l });
    let inv_scaled = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let inv = DMatrix::from_fn(n, n, |i, j| inv_scaled[(i, j)] * scale[i] * scale[j]);
    (symmetrize(&inv), condition, singular)
}

/// Bounds derived from J_eta and T.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    /// Diagonal of J_eta^-1, eta ordering.
    pub crlb_channel: Vec<f64>,
    /// Diagonal of J_eta~^-1, eta~ ordering.
    pub crlb_position: Vec<f64>,
    /// Meters.
    pub peb: f64,
    /// Radians.
    pub oeb: f64,
    /// Either inverse needed the pseudo-inverse fallback.
    pub singular: bool,
    pub condition_channel: f64,
    pub condition_position: f64,
}

pub fn position_bounds(j_eta: &Fim, t: &DMatrix<f64>) -> Result<BoundReport> {
    let n_paths = match j_eta.ordering {
        Ordering::Channel { n_paths } => n_paths,
        Ordering::Position { .. } => {
            return Err(Error::DimensionMismatch("position_bounds expects J_eta".into()))
        }
    };
    let j_pos = j_eta.transform(t, n_paths)?;
    let (inv_c, cond_c, sing_c) = inverse_psd(&j_eta.matrix);
    let (inv_p, cond_p, sing_p) = inverse_psd(&j_pos.matrix);
    let m0 = eta_tilde::ms(n_paths);
    let peb = (0..3).map(|k| inv_p[(m0 + k, m0 + k)]).sum::<f64>().max(0.0).sqrt();
    let ia = eta_tilde::alpha(n_paths);
    let oeb = inv_p[(ia, ia)].max(0.0).sqrt();
    Ok(BoundReport {
        crlb_channel: inv_c.diagonal().iter().map(|v| v.max(0.0)).collect(),
        crlb_position: inv_p.diagonal().iter().map(|v| v.max(0.0)).collect(),
        peb,
        oeb,
        singular: sing_c || sing_p,
        condition_channel: cond_c,
        condition_position: cond_p,
    })
}

/// FIM, T and bounds for a scenario in one call.
pub fn bounds_at(s: &Sounding, p: &PositionParams, params: &ChannelParams) -> Result<BoundReport> {
    let j = fim_channel(s, params);
    let t = transformation_matrix(p, s.ris, s.bs)?;
    position_bounds(&j, &t)
}
