//! First-stage channel estimation.
//!
//! 1. AODs from the first T_1 slots by DCS-SOMP over the MS dictionary, then
//!    refined on the concentrated likelihood.
//! 2. Per-path RIS arrival angles: beamform towards the BS, de-mix paths block
//!    by block with the known AODs, then 1-sparse recovery over `G^T A_R`.
//! 3. Delay and gain of each path from its per-subcarrier hybrid gain, by a DFT
//!    peak plus a fractional rotation search.

use nalgebra::DMatrix;
use std::f64::consts::{PI, TAU};

use crate::channel::{Dictionary, RisDictionary, RxSignal, Sounding};
use crate::error::{Error, Result};
use crate::geometry::{LinkAngles, PathClass, TRIG_CLAMP_TOL};
use crate::params::{ChannelParams, PathParams};
use crate::search::{maximize_1d, SearchSettings};
use crate::{CMat, CVec, C64};

/// Output of [`dcs_somp`].
#[derive(Debug, Clone)]
pub struct SompResult {
    /// Selected dictionary columns, in selection order.
    pub support: Vec<usize>,
    /// The selected columns of the sensing matrix.
    pub columns: CMat,
    /// Least-squares coefficients per subcarrier (|support| x cols of Y[n]).
    pub coeffs: Vec<CMat>,
    /// Frobenius norm of the residual summed over subcarriers: entry 0 is the
    /// input energy, entry i the residual after i selections.
    pub residual_norms: Vec<f64>,
}

fn total_norm(m: &[CMat]) -> f64 {
    m.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

/// Simultaneous OMP with a support shared across subcarriers.
///
/// Atoms are scored by their correlation with the residual summed over all
/// subcarriers, normalized by the part of the atom energy not already
/// explained by the selected atoms. After each selection the
/// original measurements are projected on the selected atoms.
pub fn dcs_somp(meas: &[CMat], theta: &CMat, k: usize) -> Result<SompResult> {
    let rows = theta.nrows();
    if k == 0 || k > rows || k > theta.ncols() {
        return Err(Error::SparsityInfeasible { k, rows });
    }
    if meas.iter().any(|m| m.nrows() != rows) {
        return Err(Error::DimensionMismatch("measurement rows differ from dictionary rows".into()));
    }
    let theta_h = theta.adjoint();
    // Energy of each atom outside the span of the selected ones; starts as
    // the plain column energy and shrinks as atoms are picked.
    let mut energy: Vec<f64> = theta.column_iter().map(|c| c.norm_squared()).collect();
    let mut basis: Vec<CVec> = Vec::with_capacity(k);

    let mut residual: Vec<CMat> = meas.to_vec();
    let mut support = Vec::with_capacity(k);
    let mut residual_norms = vec![total_norm(meas)];
    let mut coeffs = Vec::new();
    let mut selected = CMat::zeros(rows, 0);

    let energy_scale = energy.iter().cloned().fold(0.0, f64::max);
    for _ in 0..k {
        let mut score = vec![0.0; theta.ncols()];
        for r in &residual {
            let psi = &theta_h * r;
            for (l, row) in psi.row_iter().enumerate() {
                score[l] += row.norm_squared();
            }
        }
        let best = (0..theta.ncols())
            .filter(|l| !support.contains(l) && energy[*l] > 1e-12 * energy_scale)
            .max_by(|&a, &b| (score[a] / energy[a]).total_cmp(&(score[b] / energy[b])))
            .ok_or_else(|| Error::RankDeficient("no admissible atom left".into()))?;
        support.push(best);
        let mut q: CVec = theta.column(best).into();
        for b in &basis {
            let c = b.dotc(&q);
            q -= b * c;
        }
        let qn = q.norm();
        if qn > 0.0 {
            q /= C64::new(qn, 0.0);
            let proj = &theta_h * &q;
            for (e, p) in energy.iter_mut().zip(proj.iter()) {
                *e = (*e - p.norm_sqr()).max(0.0);
            }
            basis.push(q);
        }
        let n_sel = selected.ncols();
        selected = std::mem::replace(&mut selected, CMat::zeros(0, 0)).insert_column(n_sel, C64::new(0.0, 0.0));
        let last = selected.ncols() - 1;
        selected.set_column(last, &theta.column(best));

        let sel_h = selected.adjoint();
        let gram_inv = (&sel_h * &selected)
            .try_inverse()
            .ok_or_else(|| Error::RankDeficient("singular Gram matrix of selected atoms".into()))?;
        let proj = gram_inv * &sel_h;
        coeffs = meas.iter().map(|y| &proj * y).collect::<Vec<_>>();
        residual = meas
            .iter()
            .zip(&coeffs)
            .map(|(y, g)| y - &selected * g)
            .collect();
        residual_norms.push(total_norm(&residual));
    }

    Ok(SompResult {
        support,
        columns: selected,
        coeffs,
        residual_norms,
    })
}

/// Grid AOD estimates and the SOMP run behind them.
#[derive(Debug, Clone)]
pub struct AodCoarse {
    pub thetas: Vec<f64>,
    pub somp: SompResult,
}

/// AODs on the dictionary grid from `Y_1^H[n] = X_1^H A_M Gamma[n] + noise`.
pub fn estimate_aod_coarse(rx: &RxSignal, s: &Sounding, dict: &Dictionary, n_paths: usize) -> Result<AodCoarse> {
    let t1 = s.cfg.first_block_slots;
    let x1 = rx.pilots.slots(0..t1);
    let theta = x1.adjoint() * &dict.atoms;
    let meas: Vec<CMat> = rx.y.iter().map(|y| y.columns(0, t1).adjoint()).collect();
    let somp = dcs_somp(&meas, &theta, n_paths)?;
    let thetas = somp.support.iter().map(|&k| dict.grid_value(k).asin()).collect();
    Ok(AodCoarse { thetas, somp })
}

/// Concentrated AOD cost over the first T_1 slots (smaller is better):
/// `-2 Re tr(D S) + tr(S D C D^H)` with `S = sum_n B[n]^H E B[n]`,
/// `B[n] = Y_1[n] X_1^H`, `C = X_1 X_1^H`, `E = a_B a_B^H / N_b` and
/// `D = A (A^H C A)^-1 A^H`.
#[derive(Debug, Clone)]
pub struct AodObjective {
    s_mat: CMat,
    c_mat: CMat,
    ms_ratio: f64,
    n_m: usize,
}

impl AodObjective {
    pub fn new(rx: &RxSignal, s: &Sounding) -> Self {
        let t1 = s.cfg.first_block_slots;
        let x1 = rx.pilots.slots(0..t1);
        let a_b = s.a_b();
        let e = a_b * a_b.adjoint() / C64::new(s.arrays.n_b as f64, 0.0);
        let mut s_mat = CMat::zeros(s.arrays.n_m, s.arrays.n_m);
        for y in &rx.y {
            let b = y.columns(0, t1) * x1.adjoint();
            s_mat += b.adjoint() * &e * &b;
        }
        Self {
            s_mat,
            c_mat: &x1 * x1.adjoint(),
            ms_ratio: s.arrays.ms_ratio(),
            n_m: s.arrays.n_m,
        }
    }

    pub fn d_matrix(&self, thetas: &[f64]) -> Result<CMat> {
        let mut a = CMat::zeros(self.n_m, thetas.len());
        for (q, th) in thetas.iter().enumerate() {
            a.set_column(q, &crate::geometry::steer_ula(self.ms_ratio * th.sin(), self.n_m));
        }
        let g = a.adjoint() * &self.c_mat * &a;
        let scale = g.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let inv = g.clone().try_inverse().ok_or(Error::SingularConcentration)?;
        // Reject near-collisions whose inverse is numerically meaningless.
        let inv_scale = inv.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if !(scale * inv_scale < 1e12) {
            return Err(Error::SingularConcentration);
        }
        Ok(&a * inv * a.adjoint())
    }

    pub fn cost(&self, thetas: &[f64]) -> Result<f64> {
        let d = self.d_matrix(thetas)?;
        let ds = &d * &self.s_mat;
        let sdcd = &self.s_mat * &d * &self.c_mat * d.adjoint();
        Ok(-2.0 * ds.trace().re + sdcd.trace().re)
    }
}

/// Cyclic per-coordinate refinement of the AODs on [`AodObjective`], each
/// coordinate searched in sin-space within one grid cell of its start value.
pub fn refine_aod_mle(rx: &RxSignal, s: &Sounding, dict: &Dictionary, init: &[f64], search: SearchSettings) -> Result<Vec<f64>> {
    let obj = AodObjective::new(rx, s);
    obj.cost(init)?;
    let mut th = init.to_vec();
    let cell = dict.cell();
    for _cycle in 0..20 {
        let mut moved = 0.0f64;
        for q in 0..th.len() {
            let u0 = init[q].sin();
            let (lo, hi) = ((u0 - cell).max(-1.0), (u0 + cell).min(1.0));
            let mut trial = th.clone();
            let (u, _) = maximize_1d(
                |u| {
                    trial[q] = u.asin();
                    obj.cost(&trial).map(|c| -c).unwrap_or(f64::NEG_INFINITY)
                },
                lo,
                hi,
                Some(th[q].sin()),
                search,
            );
            let new = u.asin();
            moved = moved.max((new - th[q]).abs());
            th[q] = new;
        }
        if moved < 1e-13 {
            break;
        }
    }
    Ok(th)
}

/// RIS arrival estimate of one path before its azimuth branch is fixed.
#[derive(Debug, Clone)]
pub struct RisAoa {
    /// Selected (elevation, azimuth) grid indices.
    pub k_e: usize,
    pub k_a: usize,
    /// `cos(phi_in) - cos(phi_out0)` and `sin(psi_in)sin(phi_in) - sin(psi_out0)sin(phi_out0)`
    /// read off the grid.
    pub cos_diff: f64,
    pub sin_diff: f64,
    pub phi_in: f64,
    /// sin(psi_in) implied by the grid point, before clamping.
    pub sin_psi: f64,
    /// Hybrid gain delta_q e^{-j2pi tau_q nB/N} per subcarrier.
    pub delta_tilde: Vec<C64>,
    /// Set when a grid point implied a cosine or sine outside [-1, 1].
    pub clamped: bool,
}

impl RisAoa {
    pub fn psi_in(&self, class: PathClass, path: usize) -> Result<f64> {
        resolve_psi(self.sin_psi.clamp(-1.0, 1.0), class, path)
    }
}

/// Picks between `pi - asin(w)` and `asin(w) + 2pi` by the range of `class`.
pub fn resolve_psi(w: f64, class: PathClass, path: usize) -> Result<f64> {
    let (lo, hi) = class.psi_range::<f64>();
    let a = w.asin();
    [PI - a, a + TAU]
        .into_iter()
        .find(|c| *c >= lo - TRIG_CLAMP_TOL && *c <= hi + TRIG_CLAMP_TOL)
        .map(|c| c.clamp(lo, hi))
        .ok_or(Error::BranchAmbiguity { path, sin_psi: w })
}

/// Elevation of arrival and the sine of the azimuth implied by a grid point of
/// the RIS dictionary. Returns (phi, sin psi, clamped).
pub fn ris_angles_from_grid(cos_diff: f64, sin_diff: f64, link: &LinkAngles<f64>) -> (f64, f64, bool) {
    let c = link.phi_out0.cos() + cos_diff;
    let clamped_c = c.abs() > 1.0;
    let phi = c.clamp(-1.0, 1.0).acos();
    let w = (link.psi_out0.sin() * link.phi_out0.sin() + sin_diff) / phi.sin();
    (phi, w, clamped_c || !(w.abs() <= 1.0))
}

/// Per-path RIS arrival recovery given the AODs.
pub fn estimate_ris_aoa(rx: &RxSignal, s: &Sounding, dict: &RisDictionary, thetas: &[f64]) -> Result<Vec<RisAoa>> {
    let n_paths = thetas.len();
    let nb = s.schedule.n_blocks();
    let n_sub = rx.y.len();
    let z = rx.beamformed(s.a_b()) / C64::new(s.arrays.n_b as f64, 0.0);

    let mut a_m = CMat::zeros(s.arrays.n_m, n_paths);
    for (q, th) in thetas.iter().enumerate() {
        a_m.set_column(q, &s.a_m(*th));
    }

    // Rows of Ycheck[n], one per block: the de-mixed per-path block gains.
    let mut ycheck = vec![CMat::zeros(nb, n_paths); n_sub];
    for i in 0..nb {
        let range = s.schedule.block_range(i);
        let b = a_m.adjoint() * rx.pilots.slots(range.clone());
        let bbh_inv = (&b * b.adjoint())
            .try_inverse()
            .ok_or_else(|| Error::RankDeficient(format!("block {i} pilot matrix has no right inverse")))?;
        let right_inv = b.adjoint() * bbh_inv;
        for (n, yc) in ycheck.iter_mut().enumerate() {
            let row = z.view((range.start, n), (range.len(), 1)).transpose() * &right_inv;
            yc.set_row(i, &row.row(0));
        }
    }

    let theta_r = s.schedule.block_matrix() * &dict.atoms;
    let mut out = Vec::with_capacity(n_paths);
    for q in 0..n_paths {
        let meas: Vec<CMat> = ycheck.iter().map(|yc| yc.columns(q, 1).into_owned()).collect();
        let res = dcs_somp(&meas, &theta_r, 1)?;
        let (k_e, k_a) = dict.split(res.support[0]);
        let cos_diff = dict.el.grid_value(k_e);
        let sin_diff = dict.az.grid_value(k_a);
        let (phi_in, sin_psi, clamped) = ris_angles_from_grid(cos_diff, sin_diff, &s.link);
        out.push(RisAoa {
            k_e,
            k_a,
            cos_diff,
            sin_diff,
            phi_in,
            sin_psi,
            delta_tilde: res.coeffs.iter().map(|g| g[(0, 0)]).collect(),
            clamped,
        });
    }
    Ok(out)
}

fn rotated_bin(dt: &[C64], m: usize, shift: f64) -> f64 {
    let n = dt.len() as f64;
    dt.iter()
        .enumerate()
        .map(|(k, v)| v * C64::from_polar(1.0, TAU * k as f64 * (m as f64 - shift) / n))
        .sum::<C64>()
        .norm()
}

/// Delay and gain from the hybrid gains of one path.
///
/// The DFT peak gives the integer bin `m`; a rotation `dtau` in
/// `[-1/(2B), 1/(2B)]` then maximizes the energy in that bin, and
/// `tau = m/B - dtau`. The gain is `t(v)^H delta_tilde / N` with `v = tau B / N`.
pub fn estimate_toa(delta_tilde: &[C64], bandwidth_hz: f64, search: SearchSettings) -> Result<(f64, C64)> {
    let n = delta_tilde.len();
    if n == 0 {
        return Err(Error::DimensionMismatch("no subcarriers".into()));
    }
    let m = (0..n)
        .max_by(|&a, &b| rotated_bin(delta_tilde, a, 0.0).total_cmp(&rotated_bin(delta_tilde, b, 0.0)))
        .unwrap_or(0);
    // Search variable x = dtau * B.
    let (x, _) = maximize_1d(|x| rotated_bin(delta_tilde, m, x), -0.5, 0.5, Some(0.0), search);
    let tau = (m as f64 - x) / bandwidth_hz;
    let upsilon = tau * bandwidth_hz / n as f64;
    if !(upsilon > 0.0 && upsilon < 1.0) {
        return Err(Error::OutOfRange(format!("normalized delay {upsilon} outside (0, 1)")));
    }
    let delta = delta_tilde
        .iter()
        .enumerate()
        .map(|(k, v)| v * C64::from_polar(1.0, TAU * upsilon * k as f64))
        .sum::<C64>()
        / n as f64;
    Ok((tau, delta))
}

/// Full first-stage estimate.
#[derive(Debug, Clone)]
pub struct CoarseEstimate {
    /// Paths ordered by increasing delay; path 0 is taken as the RIS LoS path.
    pub params: ChannelParams,
    pub hybrid_gains: Vec<Vec<C64>>,
    /// Grid AODs before likelihood refinement, same order as `params`.
    pub aod_grid: Vec<f64>,
    pub aoa: Vec<RisAoa>,
    pub somp_residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct CoarseSettings {
    pub refine_aod: bool,
    pub search: SearchSettings,
}

impl Default for CoarseSettings {
    fn default() -> Self {
        Self {
            refine_aod: true,
            search: SearchSettings::default(),
        }
    }
}

/// Runs the three first-stage sub-steps.
pub fn coarse_estimate(
    rx: &RxSignal,
    s: &Sounding,
    dicts: &(Dictionary, RisDictionary),
    n_paths: usize,
    settings: CoarseSettings,
) -> Result<CoarseEstimate> {
    let aod = estimate_aod_coarse(rx, s, &dicts.0, n_paths)?;
    let thetas = if settings.refine_aod {
        refine_aod_mle(rx, s, &dicts.0, &aod.thetas, settings.search)?
    } else {
        aod.thetas.clone()
    };
    let aoa = estimate_ris_aoa(rx, s, &dicts.1, &thetas)?;
    let mut toa = Vec::with_capacity(n_paths);
    for a in &aoa {
        toa.push(estimate_toa(&a.delta_tilde, s.cfg.bandwidth_hz, settings.search)?);
    }

    let mut order: Vec<usize> = (0..n_paths).collect();
    order.sort_by(|&a, &b| toa[a].0.total_cmp(&toa[b].0));

    let mut paths = Vec::with_capacity(n_paths);
    for (rank, &q) in order.iter().enumerate() {
        let psi_in = aoa[q].psi_in(PathClass::of(rank), rank)?;
        paths.push(PathParams {
            tau: toa[q].0,
            delta: toa[q].1,
            theta_t: thetas[q],
            phi_in: aoa[q].phi_in,
            psi_in,
        });
    }
    Ok(CoarseEstimate {
        params: ChannelParams { paths, link: s.link },
        hybrid_gains: order.iter().map(|&q| aoa[q].delta_tilde.clone()).collect(),
        aod_grid: order.iter().map(|&q| aod.thetas[q]).collect(),
        aoa: order.iter().map(|&q| aoa[q].clone()).collect(),
        somp_residuals: aod.somp.residual_norms.clone(),
    })
}

/// Normalized correlation matrix of the columns of `theta` (diagonal = 1).
pub fn column_coherence(theta: &CMat) -> DMatrix<f64> {
    let g = theta.adjoint() * theta;
    DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| {
        g[(i, j)].norm() / (g[(i, i)].re * g[(j, j)].re).sqrt()
    })
}
