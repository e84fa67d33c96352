//! Channel-parameter vector (eta) and position-parameter vector (eta~).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::{LinkAngles, ScenarioGeometry, Vec3};
use crate::C64;

/// Offsets of the six per-path entries inside eta.
pub mod eta {
    pub const TAU: usize = 0;
    pub const DELTA_R: usize = 1;
    pub const DELTA_I: usize = 2;
    pub const THETA_T: usize = 3;
    pub const PHI_IN: usize = 4;
    pub const PSI_IN: usize = 5;
    pub const PER_PATH: usize = 6;

    pub fn index(q: usize, k: usize) -> usize {
        q * PER_PATH + k
    }

    pub const NAMES: [&str; PER_PATH] = ["tau", "delta_r", "delta_i", "theta_t", "phi_in", "psi_in"];
}

/// Offsets inside eta~ = [h_0 .. h_Q, m, alpha, s^1 .. s^Q].
pub mod eta_tilde {
    pub fn gain(q: usize) -> usize {
        2 * q
    }
    pub fn ms(n_paths: usize) -> usize {
        2 * n_paths
    }
    pub fn alpha(n_paths: usize) -> usize {
        2 * n_paths + 3
    }
    pub fn scatterer(n_paths: usize, q: usize) -> usize {
        debug_assert!(q >= 1);
        2 * n_paths + 4 + 3 * (q - 1)
    }
    pub fn len(n_paths: usize) -> usize {
        5 * (n_paths - 1) + 6
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    /// Delay, seconds.
    pub tau: f64,
    pub delta: C64,
    pub theta_t: f64,
    pub phi_in: f64,
    pub psi_in: f64,
}

impl PathParams {
    pub fn get(&self, k: usize) -> f64 {
        match k {
            eta::TAU => self.tau,
            eta::DELTA_R => self.delta.re,
            eta::DELTA_I => self.delta.im,
            eta::THETA_T => self.theta_t,
            eta::PHI_IN => self.phi_in,
            eta::PSI_IN => self.psi_in,
            _ => panic!("path parameter index {k} out of range"),
        }
    }

    pub fn set(&mut self, k: usize, v: f64) {
        match k {
            eta::TAU => self.tau = v,
            eta::DELTA_R => self.delta.re = v,
            eta::DELTA_I => self.delta.im = v,
            eta::THETA_T => self.theta_t = v,
            eta::PHI_IN => self.phi_in = v,
            eta::PSI_IN => self.psi_in = v,
            _ => panic!("path parameter index {k} out of range"),
        }
    }
}

/// eta: per-path delay, gain and angles, plus the known RIS-to-BS angles.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub paths: Vec<PathParams>,
    pub link: LinkAngles<f64>,
}

impl ChannelParams {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn dim(&self) -> usize {
        eta::PER_PATH * self.paths.len()
    }

    /// Flattened eta, length 6(Q+1).
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.paths
                .iter()
                .flat_map(|p| (0..eta::PER_PATH).map(move |k| p.get(k))),
        )
    }

    pub fn from_vector(v: &DVector<f64>, link: LinkAngles<f64>) -> Result<Self> {
        if v.len() % eta::PER_PATH != 0 || v.is_empty() {
            return Err(Error::DimensionMismatch(format!("eta of length {}", v.len())));
        }
        let paths = v
            .as_slice()
            .chunks(eta::PER_PATH)
            .map(|c| PathParams {
                tau: c[0],
                delta: C64::new(c[1], c[2]),
                theta_t: c[3],
                phi_in: c[4],
                psi_in: c[5],
            })
            .collect();
        Ok(Self { paths, link })
    }

    pub fn get(&self, i: usize) -> f64 {
        self.paths[i / eta::PER_PATH].get(i % eta::PER_PATH)
    }

    pub fn set(&mut self, i: usize, v: f64) {
        self.paths[i / eta::PER_PATH].set(i % eta::PER_PATH, v)
    }
}

/// eta~: per-path gains, MS position and rotation, scatterer positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionParams {
    pub gains: Vec<C64>,
    pub ms: Vec3<f64>,
    pub alpha: f64,
    pub scatterers: Vec<Vec3<f64>>,
}

impl PositionParams {
    pub fn from_geometry(g: &ScenarioGeometry<f64>, gains: Vec<C64>) -> Result<Self> {
        if gains.len() != g.q() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} gains for {} paths",
                gains.len(),
                g.q() + 1
            )));
        }
        Ok(Self {
            gains,
            ms: g.ms,
            alpha: g.alpha,
            scatterers: g.scatterers.clone(),
        })
    }

    pub fn n_paths(&self) -> usize {
        self.gains.len()
    }

    pub fn dim(&self) -> usize {
        eta_tilde::len(self.n_paths())
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.dim());
        for g in &self.gains {
            v.push(g.re);
            v.push(g.im);
        }
        v.extend(self.ms.to_array());
        v.push(self.alpha);
        for s in &self.scatterers {
            v.extend(s.to_array());
        }
        DVector::from_vec(v)
    }

    pub fn from_vector(v: &DVector<f64>, n_paths: usize) -> Result<Self> {
        if n_paths == 0 || v.len() != eta_tilde::len(n_paths) {
            return Err(Error::DimensionMismatch(format!(
                "eta~ of length {} for {n_paths} paths",
                v.len()
            )));
        }
        let gains = (0..n_paths).map(|q| C64::new(v[2 * q], v[2 * q + 1])).collect();
        let m0 = eta_tilde::ms(n_paths);
        let ms = Vec3::new(v[m0], v[m0 + 1], v[m0 + 2]);
        let alpha = v[eta_tilde::alpha(n_paths)];
        let scatterers = (1..n_paths)
            .map(|q| {
                let s0 = eta_tilde::scatterer(n_paths, q);
                Vec3::new(v[s0], v[s0 + 1], v[s0 + 2])
            })
            .collect();
        Ok(Self {
            gains,
            ms,
            alpha,
            scatterers,
        })
    }
}

/// Wraps an angle into [0, pi).
pub fn wrap_pi(a: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let w = a.rem_euclid(pi);
    if w >= pi {
        0.0
    } else {
        w
    }
}

/// Smallest distance between two orientations defined modulo pi.
pub fn orientation_error(a: f64, b: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let d = (a - b).rem_euclid(pi);
    d.min(pi - d)
}
