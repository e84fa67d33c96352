//! Scenario setup shared by all trials of a sweep, including the optional
//! move of the geometry onto the dictionary grids.

use std::f64::consts::{PI, TAU};

use crate::channel::{build_dictionaries, grid_value, path_loss_db, Dictionary, RisDictionary, Sounding, SystemConfig};
use crate::error::{Error, Result};
use crate::geometry::{channel_params, departure_angle, link_angles, LinkAngles, ScenarioGeometry, Vec3};
use crate::params::{ChannelParams, PositionParams};
use crate::positioning::closed_form_position;
use crate::C64;

use super::config::{ExperimentConfig, StageToggles};

/// Everything fixed across the trials of one sweep.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub geometry: ScenarioGeometry<f64>,
    /// Pilots and RIS schedule at the configured reference power.
    pub sounding: Sounding,
    pub dicts: (Dictionary, RisDictionary),
    pub stages: StageToggles,
    pub master_seed: u64,
}

impl Scenario {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let mut geometry = cfg.geometry();
        if cfg.stages.on_grid {
            geometry = snap_on_grid(&geometry, &cfg.system)?;
        }
        let sounding = Sounding::generate(
            cfg.system.clone(),
            geometry.arrays,
            geometry.bs,
            geometry.ris,
            geometry.q() + 1,
            cfg.sweep.master_seed,
        )?;
        // Fails early on geometries the channel model cannot represent.
        channel_params(&geometry, &nominal_gains(&cfg.system, &geometry))?;
        Ok(Self {
            dicts: build_dictionaries(&cfg.system, &geometry.arrays),
            geometry,
            sounding,
            stages: cfg.stages,
            master_seed: cfg.sweep.master_seed,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.geometry.q() + 1
    }

    pub fn at_power(&self, power_dbm: f64) -> Sounding {
        self.sounding.with_power(power_dbm)
    }

    /// Channel and position parameters with the nominal gains.
    pub fn nominal_truth(&self) -> Result<(ChannelParams, PositionParams)> {
        let gains = nominal_gains(&self.sounding.cfg, &self.geometry);
        let eta = channel_params(&self.geometry, &gains)?;
        Ok((eta, PositionParams::from_geometry(&self.geometry, gains)?))
    }
}

/// Zero shadowing, mean path loss and zero phase for every path.
pub fn nominal_gains(cfg: &SystemConfig, g: &ScenarioGeometry<f64>) -> Vec<C64> {
    path_loss_db(cfg, g, 0.0)
        .iter()
        .map(|pl| C64::new(10f64.powf(-pl / 20.0), 0.0))
        .collect()
}

/// Grid indices ordered by distance of their value from `v`.
fn grid_candidates(v: f64, grid: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (0..grid).collect();
    ks.sort_by(|&a, &b| (grid_value(a, grid) - v).abs().total_cmp(&(grid_value(b, grid) - v).abs()));
    ks
}

fn nearest_grid(v: f64, grid: usize) -> f64 {
    grid_value(grid_candidates(v, grid)[0], grid)
}

/// Moves `src` on its sphere around the RIS so that its arrival differences
/// to the RIS-BS leg fall on the RIS grids.
fn snap_source(ris: Vec3<f64>, src: Vec3<f64>, link: &LinkAngles<f64>, cfg: &SystemConfig) -> Result<Vec3<f64>> {
    let w = ris - src;
    let d = w.norm();
    let u = w * (1.0 / d);
    let c_el = link.phi_out0.cos();
    let c_az = link.psi_out0.sin() * link.phi_out0.sin();
    let uz = c_el + nearest_grid(u.z - c_el, cfg.grid_el);
    let uy = c_az + nearest_grid(u.y - c_az, cfg.grid_az);
    let rem = 1.0 - uy * uy - uz * uz;
    if !(rem > 0.0) {
        return Err(Error::InfeasibleGeometry(format!(
            "no on-grid arrival direction near ({}, {}, {})",
            u.x, u.y, u.z
        )));
    }
    let ux = rem.sqrt().copysign(u.x);
    Ok(ris - Vec3::new(ux, uy, uz) * d)
}

/// Rotations in [0, pi) that put the VLoS AOD at `sin(theta) = u`, closest to
/// `alpha` first.
fn alphas_for_aod(ms: Vec3<f64>, alpha: f64, ris: Vec3<f64>, u: f64) -> Vec<f64> {
    let v = ris - ms;
    let v = v * (1.0 / v.norm());
    let r = v.x.hypot(v.y);
    if u.abs() > r {
        return Vec::new();
    }
    let beta = v.y.atan2(v.x);
    let c = (u / r).acos();
    let mut out: Vec<f64> = [c - beta, -c - beta]
        .into_iter()
        .map(|a| a.rem_euclid(TAU))
        .filter(|a| *a < PI)
        .collect();
    out.sort_by(|a, b| (a - alpha).abs().total_cmp(&(b - alpha).abs()));
    out
}

/// Slides a scatterer along its RIS arrival direction until its AOD is on the
/// MS grid. The root closest to the current distance wins.
fn snap_scatterer_range(s: Vec3<f64>, ms: Vec3<f64>, alpha: f64, ris: Vec3<f64>, grid: usize) -> Result<Vec3<f64>> {
    let w = ris - s;
    let rho0 = w.norm();
    let u = w * (1.0 / rho0);
    let at = |rho: f64| ris - u * rho;
    let sin_theta = |rho: f64| departure_angle(ms, alpha, at(rho)).map(f64::sin).unwrap_or(f64::NAN);
    const SCAN: usize = 400;
    let (lo, hi) = (0.5 * rho0, 2.0 * rho0);
    let rhos: Vec<f64> = (0..=SCAN).map(|i| lo + (hi - lo) * i as f64 / SCAN as f64).collect();
    let vals: Vec<f64> = rhos.iter().map(|&r| sin_theta(r)).collect();

    for k in grid_candidates(sin_theta(rho0), grid).into_iter().take(6) {
        let target = grid_value(k, grid);
        let mut best: Option<f64> = None;
        for i in 0..SCAN {
            let (fa, fb) = (vals[i] - target, vals[i + 1] - target);
            if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
                continue;
            }
            let (mut a, mut b, mut fa) = (rhos[i], rhos[i + 1], fa);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                let fm = sin_theta(m) - target;
                if fm.signum() == fa.signum() {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
                if b - a <= 1e-15 * rho0 {
                    break;
                }
            }
            let root = 0.5 * (a + b);
            if best.is_none_or(|r| (root - rho0).abs() < (r - rho0).abs()) {
                best = Some(root);
            }
        }
        if let Some(rho) = best {
            return Ok(at(rho));
        }
    }
    Err(Error::InfeasibleGeometry("no on-grid AOD along the scatterer direction".into()))
}

/// Moves the MS, its rotation and the scatterers by the smallest grid step so
/// that every AOD and every RIS arrival lies exactly on a dictionary point.
///
/// The MS and scatterers keep their distance to the RIS when their direction is
/// snapped; the rotation fixes the VLoS AOD; each scatterer then slides along
/// its (already on-grid) RIS direction to fix its own AOD.
pub fn snap_on_grid(g: &ScenarioGeometry<f64>, cfg: &SystemConfig) -> Result<ScenarioGeometry<f64>> {
    let link = link_angles(g.bs, g.ris)?;
    let mut out = g.clone();
    out.ms = snap_source(g.ris, g.ms, &link, cfg)?;
    for s in out.scatterers.iter_mut() {
        *s = snap_source(g.ris, *s, &link, cfg)?;
    }

    let sin0 = departure_angle(out.ms, g.alpha, g.ris)?.sin();
    let gains = nominal_gains(cfg, &out);
    for k in grid_candidates(sin0, cfg.grid_ms).into_iter().take(6) {
        for alpha in alphas_for_aod(out.ms, g.alpha, g.ris, grid_value(k, cfg.grid_ms)) {
            let mut cand = out.clone();
            cand.alpha = alpha;
            let snapped: Result<Vec<_>> = cand
                .scatterers
                .iter()
                .map(|s| snap_scatterer_range(*s, cand.ms, alpha, g.ris, cfg.grid_ms))
                .collect();
            let Ok(scatterers) = snapped else { continue };
            cand.scatterers = scatterers;
            if closed_form_recovers(&cand, &gains) {
                return Ok(cand);
            }
        }
    }
    Err(Error::InfeasibleGeometry("no on-grid rotation keeps the closed-form branch".into()))
}

/// The closed form applied to the exact channel parameters returns the
/// geometry itself (right rotation branch, valid azimuth ranges).
fn closed_form_recovers(g: &ScenarioGeometry<f64>, gains: &[C64]) -> bool {
    let Ok(eta) = channel_params(g, gains) else { return false };
    let Ok((p, _)) = closed_form_position(&eta, g.ris, g.bs) else { return false };
    let tol = 1e-6 * (g.ms - g.ris).norm();
    (p.ms - g.ms).norm() < tol
        && (p.alpha - g.alpha).abs() < 1e-9
        && p.scatterers.iter().zip(&g.scatterers).all(|(a, b)| (*a - *b).norm() < tol)
}
