//! One Monte Carlo trial: synthesize, estimate, position, score.

use std::f64::consts::{PI, TAU};

use crate::bounds::{bounds_at, fim_channel, BoundReport};
use crate::channel::{draw_gains, synthesize_rx, Sounding};
use crate::coarse_est::{coarse_estimate, CoarseSettings};
use crate::error::Error;
use crate::geometry::channel_params;
use crate::lm::{LmSettings, StopReason};
use crate::params::{eta, ChannelParams, PositionParams};
use crate::positioning::{closed_form_position, refine_position_lm};
use crate::rng::{derive_seed, tag};
use crate::sage::{run_sage, SageSettings};
use crate::C64;

use super::scenario::Scenario;

/// Seed of trial `index` under `master`. The same seed is used at every power,
/// so gains are shared across the sweep and only the noise differs.
pub fn trial_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, &[index as u64])
}

/// Noise seed of a trial at one power.
pub fn noise_seed(seed: u64, power_dbm: f64) -> u64 {
    derive_seed(seed, &[tag::NOISE, power_dbm.to_bits()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Truth,
    Bounds,
    Coarse,
    Sage,
    ClosedForm,
    Lm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageFailure {
    pub stage: Stage,
    pub error: Error,
}

/// Squared errors per path in eta ordering (tau, delta_r, delta_i, theta_t,
/// phi_in, psi_in), SI units, after association with the true paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelErrors {
    pub sq: Vec<[f64; eta::PER_PATH]>,
    /// `assignment[q]` is the estimated path matched to true path `q`.
    pub assignment: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseErrors {
    /// Squared MS position error, m^2.
    pub position_sq: f64,
    /// Squared rotation error, rad^2.
    pub orientation_sq: f64,
}

#[derive(Debug, Clone)]
pub struct SageSummary {
    pub params: ChannelParams,
    pub cycles: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct LmSummary {
    pub params: PositionParams,
    pub iterations: usize,
    pub reason: StopReason,
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub seed: u64,
    pub power_dbm: f64,
    pub gains: Vec<C64>,
    pub truth: Option<ChannelParams>,
    pub truth_position: Option<PositionParams>,
    /// Bounds at the true parameters of this trial.
    pub bounds: Option<BoundReport>,
    pub coarse: Option<ChannelParams>,
    pub sage: Option<SageSummary>,
    pub closed_form: Option<PositionParams>,
    pub lm: Option<LmSummary>,
    pub coarse_errors: Option<ChannelErrors>,
    pub sage_errors: Option<ChannelErrors>,
    pub closed_form_errors: Option<PoseErrors>,
    pub lm_errors: Option<PoseErrors>,
    /// Some path of the final channel estimate has its AOD sine off by more
    /// than one MS array beamwidth (2 / N_m).
    pub catastrophic: bool,
    /// The first stage that failed; later stages did not run.
    pub failure: Option<StageFailure>,
}

impl TrialRecord {
    fn new(seed: u64, power_dbm: f64, gains: Vec<C64>) -> Self {
        Self {
            seed,
            power_dbm,
            gains,
            truth: None,
            truth_position: None,
            bounds: None,
            coarse: None,
            sage: None,
            closed_form: None,
            lm: None,
            coarse_errors: None,
            sage_errors: None,
            closed_form_errors: None,
            lm_errors: None,
            catastrophic: false,
            failure: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    /// The channel estimate handed to positioning.
    pub fn final_channel(&self) -> Option<&ChannelParams> {
        self.sage.as_ref().map(|s| &s.params).or(self.coarse.as_ref())
    }
}

/// Difference of two angles wrapped into (-pi, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Matches estimated to true paths by minimizing the summed AOD-sine distance
/// over all permutations. Ties keep the lexicographically first assignment.
pub fn associate(truth: &ChannelParams, est: &ChannelParams) -> Vec<usize> {
    let n = truth.n_paths();
    let mut perms = permutations(n);
    perms.sort();
    let cost = |p: &[usize]| -> f64 {
        p.iter()
            .enumerate()
            .map(|(q, &e)| (truth.paths[q].theta_t.sin() - est.paths[e].theta_t.sin()).abs())
            .sum()
    };
    perms
        .into_iter()
        .fold((f64::INFINITY, Vec::new()), |(bc, bp), p| {
            let c = cost(&p);
            if c < bc {
                (c, p)
            } else {
                (bc, bp)
            }
        })
        .1
}

pub fn channel_errors(truth: &ChannelParams, est: &ChannelParams) -> ChannelErrors {
    let assignment = associate(truth, est);
    let sq = assignment
        .iter()
        .enumerate()
        .map(|(q, &e)| {
            let (t, x) = (&truth.paths[q], &est.paths[e]);
            let mut row = [0.0; eta::PER_PATH];
            for (k, v) in row.iter_mut().enumerate() {
                let d = match k {
                    eta::THETA_T | eta::PHI_IN | eta::PSI_IN => angle_diff(x.get(k), t.get(k)),
                    _ => x.get(k) - t.get(k),
                };
                *v = d * d;
            }
            row
        })
        .collect();
    ChannelErrors { sq, assignment }
}

pub fn pose_errors(truth: &PositionParams, est: &PositionParams) -> PoseErrors {
    let o = angle_diff(est.alpha, truth.alpha);
    PoseErrors {
        position_sq: (est.ms - truth.ms).dot(est.ms - truth.ms),
        orientation_sq: o * o,
    }
}

/// Catastrophic-failure test on associated paths: any AOD sine off by more
/// than 2 / N_m.
pub fn is_catastrophic(truth: &ChannelParams, est: &ChannelParams, errs: &ChannelErrors, n_m: usize) -> bool {
    errs.assignment.iter().enumerate().any(|(q, &e)| {
        (truth.paths[q].theta_t.sin() - est.paths[e].theta_t.sin()).abs() > 2.0 / n_m as f64
    })
}

/// Runs one trial at `power_dbm` with trial seed `seed`.
pub fn run_trial(sc: &Scenario, power_dbm: f64, seed: u64) -> TrialRecord {
    run_trial_with(sc, &sc.at_power(power_dbm), seed)
}

/// [`run_trial`] with the sounding already scaled to the trial power.
pub fn run_trial_with(sc: &Scenario, sp: &Sounding, seed: u64) -> TrialRecord {
    let g = &sc.geometry;
    let power_dbm = sp.cfg.tx_power_dbm;
    let gains = draw_gains(&sp.cfg, g, seed);
    let mut rec = TrialRecord::new(seed, power_dbm, gains.clone());
    let fail = |rec: &mut TrialRecord, stage, error| {
        rec.failure = Some(StageFailure { stage, error });
    };

    let truth = match channel_params(g, &gains) {
        Ok(t) => t,
        Err(e) => {
            fail(&mut rec, Stage::Truth, e);
            return rec;
        }
    };
    let truth_pos = match PositionParams::from_geometry(g, gains) {
        Ok(p) => p,
        Err(e) => {
            fail(&mut rec, Stage::Truth, e);
            return rec;
        }
    };
    rec.truth = Some(truth.clone());
    rec.truth_position = Some(truth_pos.clone());
    match bounds_at(sp, &truth_pos, &truth) {
        Ok(b) => rec.bounds = Some(b),
        Err(e) => {
            fail(&mut rec, Stage::Bounds, e);
            return rec;
        }
    }

    let noise = (!sc.stages.noiseless).then(|| noise_seed(seed, power_dbm));
    let rx = synthesize_rx(sp, &truth, noise);
    let n_paths = truth.n_paths();

    let coarse_settings = CoarseSettings {
        refine_aod: sc.stages.aod_mle,
        ..CoarseSettings::default()
    };
    match coarse_estimate(&rx, sp, &sc.dicts, n_paths, coarse_settings) {
        Ok(c) => {
            rec.coarse_errors = Some(channel_errors(&truth, &c.params));
            rec.coarse = Some(c.params);
        }
        Err(e) => {
            fail(&mut rec, Stage::Coarse, e);
            return rec;
        }
    }

    if sc.stages.sage {
        let init = rec.coarse.as_ref().expect("coarse estimate present");
        match run_sage(&rx, sp, init, &SageSettings::default()) {
            Ok(r) => {
                rec.sage_errors = Some(channel_errors(&truth, &r.params));
                rec.sage = Some(SageSummary {
                    params: r.params,
                    cycles: r.cycles,
                    converged: r.converged,
                });
            }
            Err(e) => {
                fail(&mut rec, Stage::Sage, e);
                return rec;
            }
        }
    }

    let eta_hat = rec.final_channel().expect("channel estimate present").clone();
    let errs = rec.sage_errors.as_ref().or(rec.coarse_errors.as_ref()).expect("errors present");
    rec.catastrophic = is_catastrophic(&truth, &eta_hat, errs, sp.arrays.n_m);

    let init = match closed_form_position(&eta_hat, sp.ris, sp.bs) {
        Ok((p, _)) => p,
        Err(e) => {
            fail(&mut rec, Stage::ClosedForm, e);
            return rec;
        }
    };
    rec.closed_form_errors = Some(pose_errors(&truth_pos, &init));
    rec.closed_form = Some(init.clone());

    if sc.stages.lm {
        let weight = fim_channel(sp, &eta_hat);
        match refine_position_lm(&eta_hat, &weight.matrix, &init, sp.ris, sp.bs, &LmSettings::default()) {
            Ok(fit) => {
                rec.lm_errors = Some(pose_errors(&truth_pos, &fit.params));
                rec.lm = Some(LmSummary {
                    params: fit.params,
                    iterations: fit.report.iterations,
                    reason: fit.report.reason,
                });
            }
            Err(e) => fail(&mut rec, Stage::Lm, e),
        }
    }
    rec
}
