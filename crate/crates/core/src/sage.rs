//! SAGE refinement of all channel parameters over every slot and subcarrier.
//!
//! Every received vector of the model lies along `a_B`, so all likelihood
//! terms only involve the beamformed observation `z_t[n] = a_B^H y_t[n]` (a
//! T x N matrix). The per-path objective and the global log-likelihood are
//! evaluated on that projection; [`reconstruct_complete_data`] also offers the
//! full-array form.

use std::f64::consts::TAU;

use crate::channel::{RxSignal, Sounding};
use crate::error::{Error, Result};
use crate::geometry::PathClass;
use crate::params::{eta, ChannelParams, PathParams};
use crate::search::{maximize_1d, SearchSettings};
use crate::{CMat, C64};

/// Global log-likelihood with the data-only constant dropped:
///
/// `2 Re sum_q a_M,q^H (sum_n delta_q e_q[n] X Sigma_q Y^H[n]) a_B
///  - N_b sum_{q1,q2} delta_q1^* delta_q2 a_M,q2^H (sum_n e^{j2pi(tau_q1-tau_q2)nB/N} X Sigma_q2 Sigma_q1^H X^H) a_M,q1`.
pub fn global_log_likelihood(params: &ChannelParams, z: &CMat, s: &Sounding) -> f64 {
    let terms: Vec<(Vec<C64>, Vec<C64>, Vec<C64>, C64)> = params
        .paths
        .iter()
        .map(|p| {
            (
                s.delay_phasors(p.tau),
                s.slot_responses(p.phi_in, p.psi_in),
                s.pilot_projections(p.theta_t),
                p.delta,
            )
        })
        .collect();
    let (n_t, n_n) = (s.n_slots(), s.n_sub());

    let mut single = 0.0;
    for (e, sig, pp, d) in &terms {
        let mut acc = C64::new(0.0, 0.0);
        for n in 0..n_n {
            let mut inner = C64::new(0.0, 0.0);
            for t in 0..n_t {
                inner += pp[t] * sig[t] * z[(t, n)].conj();
            }
            acc += d * e[n] * inner;
        }
        single += 2.0 * acc.re;
    }

    let mut cross = C64::new(0.0, 0.0);
    for (e1, sig1, pp1, d1) in &terms {
        for (e2, sig2, pp2, d2) in &terms {
            let mut acc = C64::new(0.0, 0.0);
            for n in 0..n_n {
                let ph = e1[n].conj() * e2[n];
                let mut inner = C64::new(0.0, 0.0);
                for t in 0..n_t {
                    inner += pp2[t] * sig2[t] * sig1[t].conj() * pp1[t].conj();
                }
                acc += ph * inner;
            }
            cross += d1.conj() * d2 * acc;
        }
    }
    single - s.arrays.n_b as f64 * cross.re
}

/// `y - sum_{q' != q} mu_q'` using the newest estimate of every other path
/// (paths before `q` already updated in the current cycle, later paths from
/// the previous one).
pub fn reconstruct_complete_data(rx: &RxSignal, s: &Sounding, current: &ChannelParams, q: usize) -> Vec<CMat> {
    let mut others = CMat::zeros(s.n_slots(), s.n_sub());
    for (i, p) in current.paths.iter().enumerate() {
        if i != q {
            others += s.path_beam(p);
        }
    }
    let mu = s.expand_beam(&others);
    rx.y.iter().zip(mu).map(|(y, m)| y - m).collect()
}

/// Beamformed counterpart of [`reconstruct_complete_data`] (`a_B^H` applied).
pub fn complete_beam(z: &CMat, s: &Sounding, current: &ChannelParams, q: usize) -> CMat {
    let nb = C64::new(s.arrays.n_b as f64, 0.0);
    let mut out = z.clone();
    for (i, p) in current.paths.iter().enumerate() {
        if i != q {
            out -= s.path_beam(p) * nb;
        }
    }
    out
}

/// Concentrated single-path likelihood on the beamformed complete data of
/// one path.
///
/// `F = |a_B^H {sum_n e^{+j2pi tau nB/N} Y_q[n] Sigma^H X^H} a_M|^2
///      / (N_b a_M^H {sum_n X Sigma Sigma^H X^H} a_M)`.
pub struct SinglePathObjective<'a> {
    s: &'a Sounding,
    zq: CMat,
    nb_n: f64,
}

impl<'a> SinglePathObjective<'a> {
    pub fn new(s: &'a Sounding, zq: CMat) -> Self {
        let nb_n = (s.arrays.n_b * s.n_sub()) as f64;
        Self { s, zq, nb_n }
    }

    fn phasors_conj(&self, tau: f64) -> Vec<C64> {
        self.s.delay_phasors(tau).into_iter().map(|e| e.conj()).collect()
    }

    /// Gain numerator and (real) denominator.
    pub fn num_den(&self, tau: f64, theta: f64, phi: f64, psi: f64) -> (C64, f64) {
        let ep = self.phasors_conj(tau);
        let sig = self.s.slot_responses(phi, psi);
        let pp = self.s.pilot_projections(theta);
        let mut num = C64::new(0.0, 0.0);
        let mut den = 0.0;
        for t in 0..self.s.n_slots() {
            let w = (sig[t] * pp[t]).conj();
            let mut row = C64::new(0.0, 0.0);
            for (n, e) in ep.iter().enumerate() {
                row += e * self.zq[(t, n)];
            }
            num += row * w;
            den += w.norm_sqr();
        }
        (num, den * self.nb_n)
    }

    pub fn value(&self, tau: f64, theta: f64, phi: f64, psi: f64) -> Result<f64> {
        let (num, den) = self.num_den(tau, theta, phi, psi);
        if !(den > 0.0) {
            return Err(Error::ZeroDenominator("single-path objective"));
        }
        Ok(num.norm_sqr() / den)
    }

    /// Closed-form ML gain at the given delay and angles.
    pub fn gain(&self, tau: f64, theta: f64, phi: f64, psi: f64) -> Result<C64> {
        let (num, den) = self.num_den(tau, theta, phi, psi);
        if !(den > 0.0) {
            return Err(Error::ZeroDenominator("gain closed form"));
        }
        Ok(num / den)
    }

    /// F as a function of the delay with the angles frozen.
    pub fn tau_profile(&self, theta: f64, phi: f64, psi: f64) -> impl Fn(f64) -> f64 + '_ {
        let sig = self.s.slot_responses(phi, psi);
        let pp = self.s.pilot_projections(theta);
        let n_sub = self.s.n_sub();
        let mut d = vec![C64::new(0.0, 0.0); n_sub];
        let mut den = 0.0;
        for t in 0..self.s.n_slots() {
            let w = (sig[t] * pp[t]).conj();
            den += w.norm_sqr();
            for (n, dn) in d.iter_mut().enumerate() {
                *dn += self.zq[(t, n)] * w;
            }
        }
        let den = den * self.nb_n;
        let step = TAU * self.s.cfg.bandwidth_hz / n_sub as f64;
        move |tau: f64| {
            let num: C64 = d
                .iter()
                .enumerate()
                .map(|(n, v)| v * C64::from_polar(1.0, step * tau * n as f64))
                .sum();
            num.norm_sqr() / den
        }
    }

    /// F as a function of the AOD with delay and RIS angles frozen.
    pub fn theta_profile(&self, tau: f64, phi: f64, psi: f64) -> impl Fn(f64) -> f64 + '_ {
        let ep = self.phasors_conj(tau);
        let sig = self.s.slot_responses(phi, psi);
        let x = &self.s.pilots.x;
        let n_m = x.nrows();
        let mut w = vec![C64::new(0.0, 0.0); n_m];
        let mut m = CMat::zeros(n_m, n_m);
        for t in 0..self.s.n_slots() {
            let mut row = C64::new(0.0, 0.0);
            for (n, e) in ep.iter().enumerate() {
                row += e * self.zq[(t, n)];
            }
            let h = sig[t].conj() * row;
            let xt = x.column(t);
            for k in 0..n_m {
                w[k] += h * xt[k].conj();
            }
            m += xt * xt.adjoint() * C64::new(sig[t].norm_sqr(), 0.0);
        }
        let nb_n = self.nb_n;
        move |theta: f64| {
            let a = self.s.a_m(theta);
            let num: C64 = w.iter().zip(a.iter()).map(|(wk, ak)| wk * ak).sum();
            let den = (a.adjoint() * &m * &a)[(0, 0)].re * nb_n;
            num.norm_sqr() / den
        }
    }

    /// F as a function of (phi, psi) with delay and AOD frozen.
    pub fn ris_profile(&self, tau: f64, theta: f64) -> impl Fn(f64, f64) -> f64 + '_ {
        let ep = self.phasors_conj(tau);
        let pp = self.s.pilot_projections(theta);
        let nb = self.s.schedule.n_blocks();
        let mut c = vec![C64::new(0.0, 0.0); nb];
        let mut e = vec![0.0; nb];
        for t in 0..self.s.n_slots() {
            let i = self.s.schedule.slot_block[t];
            let mut row = C64::new(0.0, 0.0);
            for (n, ph) in ep.iter().enumerate() {
                row += ph * self.zq[(t, n)];
            }
            c[i] += row * pp[t].conj();
            e[i] += pp[t].norm_sqr();
        }
        let nb_n = self.nb_n;
        move |phi: f64, psi: f64| {
            let sig = self.s.block_responses(phi, psi);
            let mut num = C64::new(0.0, 0.0);
            let mut den = 0.0;
            for i in 0..nb {
                num += sig[i].conj() * c[i];
                den += sig[i].norm_sqr() * e[i];
            }
            num.norm_sqr() / (den * nb_n)
        }
    }
}

/// Closed-form gain of path `path` on its complete data.
pub fn gain_closed_form(s: &Sounding, zq: &CMat, path: &PathParams) -> Result<C64> {
    SinglePathObjective::new(s, zq.clone()).gain(path.tau, path.theta_t, path.phi_in, path.psi_in)
}

/// Thresholds and search brackets of [`run_sage`].
#[derive(Debug, Clone, Copy)]
pub struct SageSettings {
    /// Per-parameter change threshold: delay in units of 1/B, angles in
    /// radians, gains relative to their magnitude.
    pub eps_param: f64,
    /// Log-likelihood change threshold relative to |Lambda|.
    pub eps_loglik_rel: f64,
    pub max_cycles: usize,
    /// Angle brackets in dictionary grid cells on each side.
    pub angle_cells: f64,
    pub search: SearchSettings,
}

impl Default for SageSettings {
    fn default() -> Self {
        Self {
            eps_param: 1e-6,
            eps_loglik_rel: 1e-8,
            max_cycles: 50,
            angle_cells: 2.0,
            search: SearchSettings::default(),
        }
    }
}

/// Which coordinate a 1-D update touched, in visiting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    Tau,
    ThetaT,
    PhiIn,
    PsiIn,
    Gain,
}

/// Visiting order of one path update.
pub const UPDATE_ORDER: [Coordinate; 5] = [
    Coordinate::Tau,
    Coordinate::ThetaT,
    Coordinate::PhiIn,
    Coordinate::PsiIn,
    Coordinate::Gain,
];

/// Updates path `q` of `params` in place on its complete data `zq`:
/// delay, AOD, elevation and azimuth by bracketed 1-D maximization of F,
/// then the gain in closed form. Returns F after each angle/delay step.
pub fn coordinate_update_cycle(
    s: &Sounding,
    zq: CMat,
    params: &mut ChannelParams,
    q: usize,
    settings: &SageSettings,
) -> Result<Vec<f64>> {
    let obj = SinglePathObjective::new(s, zq);
    let b = s.cfg.bandwidth_hz;
    let mut p = params.paths[q];
    let mut trace = Vec::with_capacity(4);
    let cells = settings.angle_cells;

    for coord in UPDATE_ORDER {
        match coord {
            Coordinate::Tau => {
                let f = obj.tau_profile(p.theta_t, p.phi_in, p.psi_in);
                let x0 = p.tau * b;
                let (x, v) = maximize_1d(|x| f(x / b), x0 - 0.5, x0 + 0.5, Some(x0), settings.search);
                p.tau = x / b;
                trace.push(v);
            }
            Coordinate::ThetaT => {
                let f = obj.theta_profile(p.tau, p.phi_in, p.psi_in);
                let u0 = p.theta_t.sin();
                let half = cells * 2.0 / s.cfg.grid_ms as f64;
                let (u, v) = maximize_1d(
                    |u| f(u.asin()),
                    (u0 - half).max(-1.0),
                    (u0 + half).min(1.0),
                    Some(u0),
                    settings.search,
                );
                if u != u0 {
                    p.theta_t = u.asin();
                }
                trace.push(v);
            }
            Coordinate::PhiIn => {
                let f = obj.ris_profile(p.tau, p.theta_t);
                let c0 = p.phi_in.cos();
                let half = cells * 2.0 / s.cfg.grid_el as f64;
                let psi = p.psi_in;
                let (c, v) = maximize_1d(
                    |c| f(c.acos(), psi),
                    (c0 - half).max(-1.0),
                    (c0 + half).min(1.0),
                    Some(c0),
                    settings.search,
                );
                if c != c0 {
                    p.phi_in = c.acos();
                }
                trace.push(v);
            }
            Coordinate::PsiIn => {
                let f = obj.ris_profile(p.tau, p.theta_t);
                let w0 = p.psi_in.sin();
                let sphi = p.phi_in.sin().abs().max(1e-9);
                let half = cells * 2.0 / s.cfg.grid_az as f64 / sphi;
                let (lo_c, hi_c) = match PathClass::of(q) {
                    PathClass::Vlos => (-1.0, 0.0),
                    PathClass::Nlos => (0.0, 1.0),
                };
                let phi = p.phi_in;
                let to_psi = |w: f64| std::f64::consts::PI - w.asin();
                let (w, v) = maximize_1d(
                    |w| f(phi, to_psi(w)),
                    (w0 - half).max(lo_c),
                    (w0 + half).min(hi_c),
                    Some(w0),
                    settings.search,
                );
                if w != w0 {
                    p.psi_in = to_psi(w);
                }
                trace.push(v);
            }
            Coordinate::Gain => {
                p.delta = obj.gain(p.tau, p.theta_t, p.phi_in, p.psi_in)?;
            }
        }
    }
    params.paths[q] = p;
    Ok(trace)
}

/// Result of [`run_sage`].
#[derive(Debug, Clone)]
pub struct SageResult {
    pub params: ChannelParams,
    /// Lambda at the start and after every full cycle over all paths.
    pub loglik: Vec<f64>,
    pub cycles: usize,
    /// False when `max_cycles` stopped the iteration.
    pub converged: bool,
}

fn max_change(a: &ChannelParams, b: &ChannelParams, bandwidth: f64) -> f64 {
    let mut worst = 0.0f64;
    for (pa, pb) in a.paths.iter().zip(&b.paths) {
        let mag = pa.delta.norm().max(pb.delta.norm()).max(f64::MIN_POSITIVE);
        for k in 0..eta::PER_PATH {
            let d = (pa.get(k) - pb.get(k)).abs();
            let scaled = match k {
                eta::TAU => d * bandwidth,
                eta::DELTA_R | eta::DELTA_I => d / mag,
                _ => d,
            };
            worst = worst.max(scaled);
        }
    }
    worst
}

/// Alternates single-path updates q = k mod (Q+1) until the parameters or
/// the global log-likelihood stop changing over a full cycle.
pub fn run_sage(rx: &RxSignal, s: &Sounding, init: &ChannelParams, settings: &SageSettings) -> Result<SageResult> {
    let z = rx.beamformed(s.a_b());
    let mut params = init.clone();
    let mut loglik = vec![global_log_likelihood(&params, &z, s)];
    let n_paths = params.n_paths();
    let mut converged = false;
    let mut cycles = 0;

    while cycles < settings.max_cycles {
        let before = params.clone();
        for q in 0..n_paths {
            let zq = complete_beam(&z, s, &params, q);
            coordinate_update_cycle(s, zq, &mut params, q, settings)?;
        }
        cycles += 1;
        let l = global_log_likelihood(&params, &z, s);
        let prev = *loglik.last().unwrap();
        loglik.push(l);
        if max_change(&params, &before, s.cfg.bandwidth_hz) <= settings.eps_param
            || (l - prev).abs() <= settings.eps_loglik_rel * l.abs()
        {
            converged = true;
            break;
        }
    }
    Ok(SageResult {
        params,
        loglik,
        cycles,
        converged,
    })
}
