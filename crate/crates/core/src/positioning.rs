//! From channel parameters to MS position, rotation and scatterer positions.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::TAU;

use crate::bounds::transformation_matrix;
use crate::error::{Error, Result};
use crate::geometry::{forward_map_unchecked, Vec3, SPEED_OF_LIGHT, TRIG_CLAMP_TOL};
use crate::lm::{self, LmReport, LmSettings, Problem};
use crate::params::{wrap_pi, ChannelParams, PathParams, PositionParams};

/// Closed-form MS position and rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsEstimate {
    pub ms: Vec3<f64>,
    pub alpha: f64,
    /// The raw rotation formula landed outside [0, pi) and was wrapped.
    pub alpha_wrapped: bool,
}

/// Unit vector pointing from the source of a path towards the RIS, reversed:
/// `[-sin(phi)cos(psi), -sin(phi)sin(psi), -cos(phi)]` leads from the RIS to
/// the source.
fn back_direction(phi: f64, psi: f64) -> Vec3<f64> {
    Vec3::new(-phi.sin() * psi.cos(), -phi.sin() * psi.sin(), -phi.cos())
}

fn excess_range(tau: f64, ris: Vec3<f64>, bs: Vec3<f64>) -> f64 {
    tau * SPEED_OF_LIGHT - (ris - bs).norm()
}

/// MS position from the VLoS delay and RIS arrival, and rotation from the
/// VLoS AOD.
pub fn closed_form_ms(path0: &PathParams, ris: Vec3<f64>, bs: Vec3<f64>) -> Result<MsEstimate> {
    let d = excess_range(path0.tau, ris, bs);
    if !(d > 0.0) {
        return Err(Error::InfeasibleGeometry(format!(
            "VLoS range {d} m is not positive"
        )));
    }
    let ms = ris + back_direction(path0.phi_in, path0.psi_in) * d;
    let sphi = path0.phi_in.sin();
    if sphi.abs() < 1e-12 {
        return Err(Error::InfeasibleGeometry("VLoS arrives along the RIS normal".into()));
    }
    let ratio = path0.theta_t.sin() / sphi;
    if !ratio.is_finite() || ratio.abs() > 1.0 + TRIG_CLAMP_TOL {
        return Err(Error::ArccosDomain(ratio));
    }
    let raw = (TAU - path0.psi_in) - ratio.clamp(-1.0, 1.0).acos();
    let alpha = wrap_pi(raw);
    Ok(MsEstimate {
        ms,
        alpha,
        alpha_wrapped: (alpha - raw).abs() > 1e-12,
    })
}

/// Scatterer position of path `path` given the MS estimate.
///
/// Uses the coordinate formulas with `A` in the denominator of the y and z
/// components; when `|A| < 1e-12` the same system is solved through the
/// RIS-scatterer distance instead.
pub fn closed_form_scatterer(path: &PathParams, ms: Vec3<f64>, alpha: f64, ris: Vec3<f64>, bs: Vec3<f64>) -> Result<Vec3<f64>> {
    let dir = back_direction(path.phi_in, path.psi_in);
    let (a, b, c) = (dir.x, dir.y, dir.z);
    let d = excess_range(path.tau, ris, bs);
    let st = path.theta_t.sin();
    let (sa, ca) = alpha.sin_cos();
    let den = st + a * ca - b * sa;
    if den.abs() < 1e-12 || !den.is_finite() {
        return Err(Error::SingularDenominator);
    }
    if a.abs() >= 1e-12 {
        let sx = ((a * d + ris.x) * st + ms.x * a * ca + (ris.y * a - ris.x * b - ms.y * a) * sa) / den;
        Ok(Vec3::new(sx, ris.y + (sx - ris.x) * b / a, ris.z + (sx - ris.x) * c / a))
    } else {
        let w = ris - ms;
        let d_sr = (st * d - (w.x * ca - w.y * sa)) / den;
        Ok(ris + dir * d_sr)
    }
}

/// Closed-form eta~ from channel parameters (path 0 is the VLoS path).
pub fn closed_form_position(eta: &ChannelParams, ris: Vec3<f64>, bs: Vec3<f64>) -> Result<(PositionParams, MsEstimate)> {
    let first = eta
        .paths
        .first()
        .ok_or_else(|| Error::DimensionMismatch("no paths".into()))?;
    let est = closed_form_ms(first, ris, bs)?;
    let scatterers = eta.paths[1..]
        .iter()
        .map(|p| closed_form_scatterer(p, est.ms, est.alpha, ris, bs))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        PositionParams {
            gains: eta.paths.iter().map(|p| p.delta).collect(),
            ms: est.ms,
            alpha: est.alpha,
            scatterers,
        },
        est,
    ))
}

/// `r(eta~) = eta_hat - G(eta~)` with Jacobian `-T^T`.
pub struct PositionProblem<'a> {
    pub eta_hat: &'a DVector<f64>,
    pub n_paths: usize,
    pub ris: Vec3<f64>,
    pub bs: Vec3<f64>,
}

impl PositionProblem<'_> {
    fn params(&self, x: &DVector<f64>) -> Option<PositionParams> {
        PositionParams::from_vector(x, self.n_paths).ok()
    }
}

impl Problem for PositionProblem<'_> {
    fn residual(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let p = self.params(x)?;
        let g = forward_map_unchecked(&p, self.bs, self.ris)?;
        let r = self.eta_hat - g.to_vector();
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let p = self.params(x)?;
        let t = transformation_matrix(&p, self.ris, self.bs).ok()?;
        Some(-t.transpose())
    }
}

/// Refined eta~ and the solver trace.
#[derive(Debug, Clone)]
pub struct PositionFit {
    pub params: PositionParams,
    pub report: LmReport,
}

/// Minimizes `(eta_hat - G(eta~))^T W (eta_hat - G(eta~))` from `init`, with
/// `W` the FIM at the estimate (symmetrized and eigenvalue-floored here).
pub fn refine_position_lm(
    eta_hat: &ChannelParams,
    weight: &DMatrix<f64>,
    init: &PositionParams,
    ris: Vec3<f64>,
    bs: Vec3<f64>,
    settings: &LmSettings,
) -> Result<PositionFit> {
    let v = eta_hat.to_vector();
    let problem = PositionProblem {
        eta_hat: &v,
        n_paths: eta_hat.n_paths(),
        ris,
        bs,
    };
    let w = lm::regularize_weight(weight);
    let report = lm::minimize(&problem, init.to_vector(), &w, settings)?;
    let mut params = PositionParams::from_vector(&report.x, eta_hat.n_paths())?;
    params.alpha = wrap_alpha_keep_aod(params.alpha);
    Ok(PositionFit { params, report })
}

/// Removes full turns from alpha. The model is not invariant under
/// alpha + pi, so the LM iterate is not folded into [0, pi).
fn wrap_alpha_keep_aod(alpha: f64) -> f64 {
    let w = alpha.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}
