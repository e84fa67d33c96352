//! Power sweeps and RMSE aggregation.

use rayon::prelude::*;

use crate::bounds::{bounds_at, BoundReport};
use crate::error::Result;
use crate::params::eta;

use super::config::ExperimentConfig;
use super::scenario::Scenario;
use super::trial::{run_trial_with, trial_seed, TrialRecord};

/// RMSEs and bounds of one scalar, SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamStats {
    pub rmse_coarse: f64,
    pub rmse_refined: f64,
    /// Refined RMSE over the trials that were not catastrophic.
    pub rmse_refined_filtered: f64,
    /// Root of the per-trial CRLB averaged over the scored trials.
    pub bound: f64,
    /// Root CRLB at the nominal gains.
    pub bound_nominal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSummary {
    pub power_dbm: f64,
    pub trials: usize,
    /// Trials with a stage failure; they are left out of every column.
    pub failed: usize,
    pub catastrophic: usize,
    /// Per path, in eta ordering.
    pub channel: Vec<[ParamStats; eta::PER_PATH]>,
    pub position: ParamStats,
    pub orientation: ParamStats,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub n_paths: usize,
    pub summaries: Vec<PowerSummary>,
    /// Raw records, one vector per power in sweep order.
    pub records: Vec<Vec<TrialRecord>>,
}

/// sqrt(mean(values)); NaN when empty.
fn root_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Summarizes the records of one power. `nominal` holds the bounds at the
/// nominal gains.
pub fn aggregate(power_dbm: f64, records: &[TrialRecord], nominal: &BoundReport, n_paths: usize) -> PowerSummary {
    let scored: Vec<&TrialRecord> = records.iter().filter(|r| !r.failed()).collect();
    let clean: Vec<&TrialRecord> = scored.iter().copied().filter(|r| !r.catastrophic).collect();
    let bounds = || scored.iter().map(|r| r.bounds.as_ref().expect("scored trials carry bounds"));

    let channel = (0..n_paths)
        .map(|q| {
            std::array::from_fn(|k| {
                let sq = |e: Option<&super::trial::ChannelErrors>| e.map_or(f64::NAN, |e| e.sq[q][k]);
                ParamStats {
                    rmse_coarse: root_mean(scored.iter().map(|r| sq(r.coarse_errors.as_ref()))),
                    rmse_refined: root_mean(scored.iter().map(|r| sq(r.sage_errors.as_ref()))),
                    rmse_refined_filtered: root_mean(clean.iter().map(|r| sq(r.sage_errors.as_ref()))),
                    bound: root_mean(bounds().map(|b| b.crlb_channel[eta::index(q, k)])),
                    bound_nominal: nominal.crlb_channel[eta::index(q, k)].sqrt(),
                }
            })
        })
        .collect();

    let pose = |pick: fn(&super::trial::PoseErrors) -> f64, bound: fn(&BoundReport) -> f64| ParamStats {
        rmse_coarse: root_mean(scored.iter().map(|r| r.closed_form_errors.as_ref().map_or(f64::NAN, pick))),
        rmse_refined: root_mean(scored.iter().map(|r| r.lm_errors.as_ref().map_or(f64::NAN, pick))),
        rmse_refined_filtered: root_mean(clean.iter().map(|r| r.lm_errors.as_ref().map_or(f64::NAN, pick))),
        bound: root_mean(bounds().map(|b| bound(b).powi(2))),
        bound_nominal: bound(nominal),
    };

    PowerSummary {
        power_dbm,
        trials: records.len(),
        failed: records.len() - scored.len(),
        catastrophic: scored.len() - clean.len(),
        channel,
        position: pose(|e| e.position_sq, |b| b.peb),
        orientation: pose(|e| e.orientation_sq, |b| b.oeb),
    }
}

/// Runs `trials` trials at every power of `powers`. Trials run in parallel;
/// each draws only from its own seed, so the result does not depend on the
/// thread count.
pub fn run_sweep_with(sc: &Scenario, powers: &[f64], trials: usize) -> Result<SweepReport> {
    let n_paths = sc.n_paths();
    let (eta0, pos0) = sc.nominal_truth()?;
    let mut summaries = Vec::with_capacity(powers.len());
    let mut all = Vec::with_capacity(powers.len());
    for &p in powers {
        let sp = sc.at_power(p);
        let nominal = bounds_at(&sp, &pos0, &eta0)?;
        let records: Vec<TrialRecord> = (0..trials)
            .into_par_iter()
            .map(|i| run_trial_with(sc, &sp, trial_seed(sc.master_seed, i)))
            .collect();
        summaries.push(aggregate(p, &records, &nominal, n_paths));
        all.push(records);
    }
    Ok(SweepReport {
        n_paths,
        summaries,
        records: all,
    })
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let sc = Scenario::new(cfg)?;
    run_sweep_with(&sc, &cfg.sweep.powers_dbm, cfg.sweep.trials)
}
