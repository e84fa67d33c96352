#![allow(dead_code)]

pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use risloc::channel::{Sounding, SystemConfig};
use risloc::geometry::{channel_params, ArrayLayout, ScenarioGeometry, Vec3};
use risloc::params::ChannelParams;
use risloc::{CMat, C64};

pub fn default_cfg() -> SystemConfig {
    SystemConfig::default()
}

pub fn default_arrays() -> ArrayLayout<f64> {
    let lam = default_cfg().wavelength();
    ArrayLayout {
        n_b: 40,
        n_m: 16,
        n_a: 10,
        n_e: 10,
        d_bs: lam / 2.0,
        d_ms: lam / 2.0,
        d_ris_a: lam / 3.0,
        d_ris_e: lam / 3.0,
        wavelength: lam,
    }
}

pub fn default_geometry() -> ScenarioGeometry<f64> {
    ScenarioGeometry {
        bs: Vec3::new(0.0, 0.0, 28.0),
        ris: Vec3::new(-6.0, 8.0, 20.0),
        ms: Vec3::new(22.0, 35.0, 1.5),
        alpha: 75f64.to_radians(),
        scatterers: vec![Vec3::new(6.0, 5.0, 3.0)],
        arrays: default_arrays(),
    }
}

pub fn sounding(seed: u64) -> Sounding {
    let g = default_geometry();
    Sounding::generate(default_cfg(), g.arrays, g.bs, g.ris, g.q() + 1, seed).unwrap()
}

/// Gains of unit order scaled so the received SNR matches the nominal link.
pub fn nominal_gains() -> Vec<C64> {
    vec![C64::new(3.0e-7, 1.0e-7), C64::new(-1.5e-7, 2.0e-7)]
}

pub fn default_params() -> ChannelParams {
    channel_params(&default_geometry(), &nominal_gains()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_cmat(r: &mut impl Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
}

/// Perturbs every angle and delay of `p` by small random amounts.
pub fn jitter(p: &ChannelParams, r: &mut impl Rng, scale: f64) -> ChannelParams {
    let mut out = p.clone();
    for path in out.paths.iter_mut() {
        path.tau += scale * r.random_range(-1.0..1.0) * 1e-9;
        path.theta_t += scale * r.random_range(-1.0..1.0) * 0.01;
        path.phi_in += scale * r.random_range(-1.0..1.0) * 0.01;
        path.psi_in += scale * r.random_range(-1.0..1.0) * 0.01;
        path.delta *= C64::new(1.0 + scale * r.random_range(-0.1..0.1), scale * r.random_range(-0.1..0.1));
    }
    out
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
