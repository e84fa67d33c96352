//! Cascaded MS-RIS-BS channel, RIS phase schedule, pilots, dictionaries and
//! received-signal synthesis.
//!
//! Subcarrier and slot indices are 0-based throughout: subcarrier `n` carries
//! the delay phase `exp(-j 2 pi tau n B / N)`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::TAU;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::geometry::{self, steer_ula, steer_upa, ArrayLayout, LinkAngles, ScenarioGeometry, Vec3};
use crate::params::{ChannelParams, PathParams};
use crate::rng;
use crate::{CMat, CVec, C64};

/// Radio and frame parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    /// Number of subcarriers N.
    pub subcarriers: usize,
    /// Slots in the first block (T_1), where the RIS phases are frozen.
    pub first_block_slots: usize,
    /// Number of later blocks (Upsilon).
    pub blocks: usize,
    /// Slots per later block (V).
    pub block_slots: usize,
    pub tx_power_dbm: f64,
    pub noise_dbm_per_hz: f64,
    /// Dictionary sizes G_m, G_a, G_e.
    pub grid_ms: usize,
    pub grid_az: usize,
    pub grid_el: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            carrier_hz: 4.9e9,
            bandwidth_hz: 20e6,
            subcarriers: 20,
            first_block_slots: 16,
            blocks: 7,
            block_slots: 3,
            tx_power_dbm: 20.0,
            noise_dbm_per_hz: -174.0,
            grid_ms: 128,
            grid_az: 10,
            grid_el: 10,
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl SystemConfig {
    /// T = T_1 + Upsilon V.
    pub fn total_slots(&self) -> usize {
        self.first_block_slots + self.blocks * self.block_slots
    }

    pub fn wavelength(&self) -> f64 {
        geometry::SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn tx_power_w(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    /// Per-subcarrier noise power: density times B / N.
    pub fn noise_var(&self) -> f64 {
        dbm_to_watts(self.noise_dbm_per_hz) * self.bandwidth_hz / self.subcarriers as f64
    }

    /// Checks the slot schedule against the number of paths to be resolved.
    pub fn validate(&self, n_paths: usize) -> Result<()> {
        let fail = |m: String| Err(Error::ScheduleInfeasible(m));
        if self.subcarriers == 0 || !(self.bandwidth_hz > 0.0) || !(self.carrier_hz > 0.0) {
            return fail("bandwidth, carrier and subcarrier count must be positive".into());
        }
        if n_paths == 0 {
            return fail("at least one path is required".into());
        }
        if self.first_block_slots + 2 < 8 * n_paths {
            return fail(format!(
                "T_1 = {} below 8(Q+1)-2 = {}",
                self.first_block_slots,
                8 * n_paths - 2
            ));
        }
        if self.block_slots < n_paths {
            return fail(format!("V = {} below Q+1 = {n_paths}", self.block_slots));
        }
        if self.blocks + 1 < 6 {
            return fail(format!("Upsilon + 1 = {} below 6", self.blocks + 1));
        }
        if self.grid_ms < 2 || self.grid_az < 2 || self.grid_el < 2 {
            return fail("dictionary grids need at least two points".into());
        }
        Ok(())
    }
}

/// RIS reflection vectors, one per block, and the slot-to-block map.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSchedule {
    /// Column i is g_i (length N_r, unit modulus).
    pub blocks: CMat,
    pub slot_block: Vec<usize>,
}

impl PhaseSchedule {
    pub fn n_blocks(&self) -> usize {
        self.blocks.ncols()
    }

    pub fn n_slots(&self) -> usize {
        self.slot_block.len()
    }

    pub fn g_t(&self, t: usize) -> CVec {
        self.blocks.column(self.slot_block[t]).into_owned()
    }

    /// G^T: row i is g_i^T.
    pub fn block_matrix(&self) -> CMat {
        self.blocks.transpose()
    }

    /// Slots belonging to block `i` (blocks are contiguous).
    pub fn block_range(&self, i: usize) -> Range<usize> {
        let start = self.slot_block.iter().position(|&b| b == i).unwrap_or(0);
        let len = self.slot_block.iter().filter(|&&b| b == i).count();
        start..start + len
    }
}

/// Draws one uniform-phase RIS vector per block: block 0 spans the first T_1
/// slots, then Upsilon blocks of V slots each.
pub fn make_phase_schedule(cfg: &SystemConfig, n_ris: usize, n_paths: usize, seed: u64) -> Result<PhaseSchedule> {
    cfg.validate(n_paths)?;
    let mut r = rng::stream(seed, &[rng::tag::SCHEDULE]);
    let nb = cfg.blocks + 1;
    let blocks = DMatrix::from_fn(n_ris, nb, |_, _| C64::from_polar(1.0, r.random_range(0.0..TAU)));
    let mut slot_block = vec![0; cfg.first_block_slots];
    for i in 1..nb {
        slot_block.extend(std::iter::repeat(i).take(cfg.block_slots));
    }
    Ok(PhaseSchedule { blocks, slot_block })
}

/// Pilot matrix X, N_m x T; column t is x_t. The same pilots are sent on every
/// subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct Pilots {
    pub x: CMat,
}

impl Pilots {
    pub fn slot(&self, t: usize) -> CVec {
        self.x.column(t).into_owned()
    }

    /// Pilots of slots `range`, as columns.
    pub fn slots(&self, range: Range<usize>) -> CMat {
        self.x.columns(range.start, range.len()).into_owned()
    }
}

/// Random +-sqrt(P_m / N_m) pilots, so every slot carries power P_m.
pub fn make_pilots(cfg: &SystemConfig, n_m: usize, seed: u64) -> Pilots {
    let mut r = rng::stream(seed, &[rng::tag::PILOTS]);
    let amp = (cfg.tx_power_w() / n_m as f64).sqrt();
    let x = DMatrix::from_fn(n_m, cfg.total_slots(), |_, _| {
        C64::new(if r.random::<bool>() { amp } else { -amp }, 0.0)
    });
    Pilots { x }
}

/// Grid dictionary of ULA responses over `(-1 + 2k/G) d/lambda`, k = 0..G.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub atoms: CMat,
    pub grid: usize,
    pub spacing_ratio: f64,
}

impl Dictionary {
    pub fn new(n_ant: usize, grid: usize, spacing_ratio: f64) -> Self {
        let mut atoms = DMatrix::zeros(n_ant, grid);
        for k in 0..grid {
            atoms.set_column(k, &steer_ula(grid_value(k, grid) * spacing_ratio, n_ant));
        }
        Self {
            atoms,
            grid,
            spacing_ratio,
        }
    }

    /// Grid point in the normalized domain (sin of the angle for a ULA).
    pub fn grid_value(&self, k: usize) -> f64 {
        grid_value(k, self.grid)
    }

    pub fn frequency(&self, k: usize) -> f64 {
        self.grid_value(k) * self.spacing_ratio
    }

    /// Grid spacing in the normalized domain.
    pub fn cell(&self) -> f64 {
        2.0 / self.grid as f64
    }
}

pub fn grid_value(k: usize, grid: usize) -> f64 {
    -1.0 + 2.0 * k as f64 / grid as f64
}

/// RIS dictionary `A_e kron A_a`; column `k = k_e G_a + k_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct RisDictionary {
    pub atoms: CMat,
    pub az: Dictionary,
    pub el: Dictionary,
}

impl RisDictionary {
    pub fn new(arrays: &ArrayLayout<f64>, grid_az: usize, grid_el: usize) -> Self {
        let az = Dictionary::new(arrays.n_a, grid_az, arrays.ris_a_ratio());
        let el = Dictionary::new(arrays.n_e, grid_el, arrays.ris_e_ratio());
        let atoms = el.atoms.kronecker(&az.atoms);
        Self { atoms, az, el }
    }

    /// Column index to (k_e, k_a).
    pub fn split(&self, k: usize) -> (usize, usize) {
        (k / self.az.grid, k % self.az.grid)
    }

    pub fn join(&self, k_e: usize, k_a: usize) -> usize {
        k_e * self.az.grid + k_a
    }
}

/// A_M over G_m points and A_R over G_e x G_a points.
pub fn build_dictionaries(cfg: &SystemConfig, arrays: &ArrayLayout<f64>) -> (Dictionary, RisDictionary) {
    (
        Dictionary::new(arrays.n_m, cfg.grid_ms, arrays.ms_ratio()),
        RisDictionary::new(arrays, cfg.grid_az, cfg.grid_el),
    )
}

/// Path loss in dB for each path given the shadowing draw `xi_db`.
/// The carrier enters in GHz.
pub fn path_loss_db(cfg: &SystemConfig, g: &ScenarioGeometry<f64>, xi_db: f64) -> Vec<f64> {
    let d_mr = (g.ms - g.ris).norm();
    let d_rb = (g.ris - g.bs).norm();
    let pl0 = 28.0 + 40.0 * (cfg.carrier_hz / 1e9).log10() + 10.0 * 2.2 * (d_mr * d_rb).log10() + xi_db;
    (0..=g.q()).map(|q| if q == 0 { pl0 } else { pl0 + 3.0 }).collect()
}

/// Draws xi ~ N(0, 4^2) dB and delta_q ~ CN(0, 10^(-PL_q / 10)).
pub fn draw_gains(cfg: &SystemConfig, g: &ScenarioGeometry<f64>, seed: u64) -> Vec<C64> {
    let mut r = rng::stream(seed, &[rng::tag::GAINS]);
    let xi: f64 = 4.0 * r.sample::<f64, _>(StandardNormal);
    gains_for_loss(&path_loss_db(cfg, g, xi), &mut r)
}

/// Complex Gaussian gains with the given path losses.
pub fn gains_for_loss<R: Rng>(loss_db: &[f64], r: &mut R) -> Vec<C64> {
    loss_db
        .iter()
        .map(|pl| complex_gaussian(r, 10f64.powf(-pl / 10.0)))
        .collect()
}

pub fn complex_gaussian<R: Rng>(r: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(r);
    let im: f64 = StandardNormal.sample(r);
    C64::new(s * re, s * im)
}

/// Everything the receiver knows about a sounding: frame configuration, array
/// layout, RIS schedule, pilots and the fixed RIS-BS geometry.
#[derive(Debug, Clone)]
pub struct Sounding {
    pub cfg: SystemConfig,
    pub arrays: ArrayLayout<f64>,
    pub schedule: PhaseSchedule,
    pub pilots: Pilots,
    pub bs: Vec3<f64>,
    pub ris: Vec3<f64>,
    pub link: LinkAngles<f64>,
    a_b: CVec,
    a_r_out: CVec,
}

impl Sounding {
    pub fn new(
        cfg: SystemConfig,
        arrays: ArrayLayout<f64>,
        schedule: PhaseSchedule,
        pilots: Pilots,
        bs: Vec3<f64>,
        ris: Vec3<f64>,
    ) -> Result<Self> {
        let link = geometry::link_angles(bs, ris)?;
        let t = cfg.total_slots();
        if pilots.x.nrows() != arrays.n_m || pilots.x.ncols() != t {
            return Err(Error::DimensionMismatch(format!(
                "pilots are {}x{}, expected {}x{t}",
                pilots.x.nrows(),
                pilots.x.ncols(),
                arrays.n_m
            )));
        }
        if schedule.n_slots() != t || schedule.blocks.nrows() != arrays.n_ris() {
            return Err(Error::DimensionMismatch("phase schedule does not match the frame".into()));
        }
        let a_b = steer_ula(arrays.bs_ratio() * link.theta_r0.sin(), arrays.n_b);
        let a_r_out = steer_upa(
            arrays.ris_a_ratio() * link.psi_out0.sin() * link.phi_out0.sin(),
            arrays.ris_e_ratio() * link.phi_out0.cos(),
            arrays.n_a,
            arrays.n_e,
        );
        Ok(Self {
            cfg,
            arrays,
            schedule,
            pilots,
            bs,
            ris,
            link,
            a_b,
            a_r_out,
        })
    }

    /// Builds the schedule and pilots from `seed`.
    pub fn generate(
        cfg: SystemConfig,
        arrays: ArrayLayout<f64>,
        bs: Vec3<f64>,
        ris: Vec3<f64>,
        n_paths: usize,
        seed: u64,
    ) -> Result<Self> {
        let schedule = make_phase_schedule(&cfg, arrays.n_ris(), n_paths, seed)?;
        let pilots = make_pilots(&cfg, arrays.n_m, seed);
        Self::new(cfg, arrays, schedule, pilots, bs, ris)
    }

    /// Same sounding with the pilots rescaled to another transmit power.
    pub fn with_power(&self, tx_power_dbm: f64) -> Self {
        let mut out = self.clone();
        let scale = 10f64.powf((tx_power_dbm - self.cfg.tx_power_dbm) / 20.0);
        out.pilots.x *= C64::new(scale, 0.0);
        out.cfg.tx_power_dbm = tx_power_dbm;
        out
    }

    pub fn n_slots(&self) -> usize {
        self.cfg.total_slots()
    }

    pub fn n_sub(&self) -> usize {
        self.cfg.subcarriers
    }

    pub fn a_b(&self) -> &CVec {
        &self.a_b
    }

    pub fn a_r_out(&self) -> &CVec {
        &self.a_r_out
    }

    pub fn a_m(&self, theta: f64) -> CVec {
        steer_ula(self.arrays.ms_ratio() * theta.sin(), self.arrays.n_m)
    }

    pub fn a_r_in(&self, phi: f64, psi: f64) -> CVec {
        steer_upa(
            self.arrays.ris_a_ratio() * psi.sin() * phi.sin(),
            self.arrays.ris_e_ratio() * phi.cos(),
            self.arrays.n_a,
            self.arrays.n_e,
        )
    }

    /// Spatial-frequency differences (azimuth, elevation) between the incoming
    /// wave at (phi, psi) and the outgoing wave towards the BS.
    pub fn delta_omega(&self, phi: f64, psi: f64) -> (f64, f64) {
        let l = &self.link;
        (
            self.arrays.ris_a_ratio() * (psi.sin() * phi.sin() - l.psi_out0.sin() * l.phi_out0.sin()),
            self.arrays.ris_e_ratio() * (phi.cos() - l.phi_out0.cos()),
        )
    }

    /// `a_R(dw) = a_R,in o conj(a_R,out)`.
    pub fn a_r_diff(&self, phi: f64, psi: f64) -> CVec {
        let (wa, we) = self.delta_omega(phi, psi);
        steer_upa(wa, we, self.arrays.n_a, self.arrays.n_e)
    }

    /// sigma_i = g_i^T a_R(dw) for every block i.
    pub fn block_responses(&self, phi: f64, psi: f64) -> Vec<C64> {
        let a = self.a_r_diff(phi, psi);
        (self.schedule.blocks.transpose() * a).iter().copied().collect()
    }

    /// sigma per slot.
    pub fn slot_responses(&self, phi: f64, psi: f64) -> Vec<C64> {
        let b = self.block_responses(phi, psi);
        self.schedule.slot_block.iter().map(|&i| b[i]).collect()
    }

    /// p_t = a_M(theta)^H x_t for every slot.
    pub fn pilot_projections(&self, theta: f64) -> Vec<C64> {
        let a = self.a_m(theta);
        (self.pilots.x.transpose() * a.conjugate())
            .iter()
            .copied()
            .collect()
    }

    /// exp(-j 2 pi tau n B / N) for n = 0..N.
    pub fn delay_phasors(&self, tau: f64) -> Vec<C64> {
        let w = -TAU * tau * self.cfg.bandwidth_hz / self.cfg.subcarriers as f64;
        (0..self.cfg.subcarriers)
            .map(|n| C64::from_polar(1.0, w * n as f64))
            .collect()
    }

    /// Beamformed single-path signal s_t[n] (T x N): the noiseless received
    /// vector of this path is `a_B s_t[n]`.
    pub fn path_beam(&self, p: &PathParams) -> CMat {
        let e = self.delay_phasors(p.tau);
        let sig = self.slot_responses(p.phi_in, p.psi_in);
        let pp = self.pilot_projections(p.theta_t);
        DMatrix::from_fn(self.n_slots(), self.n_sub(), |t, n| p.delta * e[n] * sig[t] * pp[t])
    }

    /// Sum of [`Sounding::path_beam`] over all paths.
    pub fn beam_signal(&self, params: &ChannelParams) -> CMat {
        let mut s = DMatrix::zeros(self.n_slots(), self.n_sub());
        for p in &params.paths {
            s += self.path_beam(p);
        }
        s
    }

    /// Expands a beamformed T x N signal into per-subcarrier N_b x T matrices.
    pub fn expand_beam(&self, s: &CMat) -> Vec<CMat> {
        (0..self.n_sub())
            .map(|n| &self.a_b * s.column(n).transpose())
            .collect()
    }

    pub fn noise_var(&self) -> f64 {
        self.cfg.noise_var()
    }
}

/// Observed signal: `y[n]` is N_b x T (column t is y_t[n]); `pilots` are the
/// transmitted pilots, identical on every subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct RxSignal {
    pub y: Vec<CMat>,
    pub pilots: Pilots,
}

impl RxSignal {
    /// a_B^H y_t[n] as a T x N matrix.
    pub fn beamformed(&self, a_b: &CVec) -> CMat {
        let t = self.pilots.x.ncols();
        let mut z = DMatrix::zeros(t, self.y.len());
        for (n, yn) in self.y.iter().enumerate() {
            z.set_column(n, &(yn.adjoint() * a_b).conjugate());
        }
        z
    }

    pub fn energy(&self) -> f64 {
        self.y.iter().map(|m| m.norm_squared()).sum()
    }
}

/// H_t[n] (N_b x N_m) through the combined form
/// `sum_q delta_q e^{-j2pi tau_q nB/N} (g_t^T a_R(dw_q)) a_B a_M(theta_q)^H`.
pub fn build_channel(s: &Sounding, params: &ChannelParams, g_t: &CVec, n: usize) -> Result<CMat> {
    check_channel_args(s, g_t, n)?;
    let mut h = DMatrix::zeros(s.arrays.n_b, s.arrays.n_m);
    for p in &params.paths {
        let phase = s.delay_phasors(p.tau)[n];
        let sigma = g_t.transpose() * s.a_r_diff(p.phi_in, p.psi_in);
        h += s.a_b() * s.a_m(p.theta_t).adjoint() * (p.delta * phase * sigma[0]);
    }
    Ok(h)
}

/// H_t[n] through the cascade `H_RB diag(g_t) H_MR[n]`, with
/// `H_RB = a_B a_R,out^H` and `H_MR[n] = sum_q delta_q e^{..} a_R,in a_M^H`.
pub fn build_channel_cascaded(s: &Sounding, params: &ChannelParams, g_t: &CVec, n: usize) -> Result<CMat> {
    check_channel_args(s, g_t, n)?;
    let h_rb = s.a_b() * s.a_r_out().adjoint();
    let mut h_mr = DMatrix::zeros(s.arrays.n_ris(), s.arrays.n_m);
    for p in &params.paths {
        let phase = s.delay_phasors(p.tau)[n];
        h_mr += s.a_r_in(p.phi_in, p.psi_in) * s.a_m(p.theta_t).adjoint() * (p.delta * phase);
    }
    let omega = DMatrix::from_diagonal(g_t);
    Ok(h_rb * omega * h_mr)
}

fn check_channel_args(s: &Sounding, g_t: &CVec, n: usize) -> Result<()> {
    if g_t.len() != s.arrays.n_ris() {
        return Err(Error::DimensionMismatch(format!(
            "g_t has {} entries, RIS has {}",
            g_t.len(),
            s.arrays.n_ris()
        )));
    }
    if n >= s.n_sub() {
        return Err(Error::DimensionMismatch(format!("subcarrier {n} of {}", s.n_sub())));
    }
    Ok(())
}

/// y_t[n] = H_t[n] x_t + z_t[n] with z ~ CN(0, sigma^2 I). `noise_seed = None`
/// gives the noiseless signal.
pub fn synthesize_rx(s: &Sounding, params: &ChannelParams, noise_seed: Option<u64>) -> RxSignal {
    let mut y = s.expand_beam(&s.beam_signal(params));
    if let Some(seed) = noise_seed {
        add_noise(&mut y, s.noise_var(), seed);
    }
    RxSignal {
        y,
        pilots: s.pilots.clone(),
    }
}

/// Adds CN(0, var) noise to every entry, drawn from the stream of `seed`.
pub fn add_noise(y: &mut [CMat], var: f64, seed: u64) {
    let mut r = rng::stream(seed, &[rng::tag::NOISE]);
    for m in y.iter_mut() {
        for v in m.iter_mut() {
            *v += complex_gaussian(&mut r, var);
        }
    }
}
