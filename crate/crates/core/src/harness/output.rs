//! CSV and plot-script emission.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::params::eta;

use super::sweep::{ParamStats, PowerSummary, SweepReport};

/// Gnuplot script that renders the per-figure CSV files.
pub const PLOT_SCRIPT: &str = include_str!("plots.gp");

/// Names of the per-figure files (without extension), in write order.
pub const PLOT_FILES: [&str; 8] = [
    "tau",
    "delta_r",
    "delta_i",
    "theta_t",
    "phi_in",
    "psi_in",
    "position",
    "orientation",
];

/// Multiplier from SI units to reported units: delay in ns, angles in degrees.
pub fn channel_unit(k: usize) -> f64 {
    match k {
        eta::TAU => 1e9,
        eta::THETA_T | eta::PHI_IN | eta::PSI_IN => 180.0 / std::f64::consts::PI,
        _ => 1.0,
    }
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn stats_fields(s: &ParamStats, unit: f64) -> [String; 5] {
    [
        num(s.rmse_coarse * unit),
        num(s.rmse_refined * unit),
        num(s.rmse_refined_filtered * unit),
        num(s.bound * unit),
        num(s.bound_nominal * unit),
    ]
}

const STAT_NAMES: [&str; 5] = ["rmse_coarse", "rmse_refined", "rmse_refined_filtered", "bound", "bound_nominal"];

pub fn aggregate_header(n_paths: usize) -> Vec<String> {
    let mut h: Vec<String> = ["power_dBm", "trials", "failed", "catastrophic"].map(String::from).to_vec();
    for q in 0..n_paths {
        for name in eta::NAMES {
            h.extend(STAT_NAMES.iter().map(|s| format!("{name}_p{q}_{s}")));
        }
    }
    for name in ["position", "orientation"] {
        h.extend(STAT_NAMES.iter().map(|s| format!("{name}_{s}")));
    }
    h
}

fn aggregate_row(s: &PowerSummary) -> Vec<String> {
    let mut row = vec![
        s.power_dbm.to_string(),
        s.trials.to_string(),
        s.failed.to_string(),
        s.catastrophic.to_string(),
    ];
    for path in &s.channel {
        for (k, st) in path.iter().enumerate() {
            row.extend(stats_fields(st, channel_unit(k)));
        }
    }
    row.extend(stats_fields(&s.position, 1.0));
    row.extend(stats_fields(&s.orientation, 180.0 / std::f64::consts::PI));
    row
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `aggregate.csv` (one row per power), one file per parameter group
/// and `plots.gp` into `dir`. Returns the written paths.
pub fn write_report(report: &SweepReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let agg = dir.join("aggregate.csv");
    write_csv(&agg, &aggregate_header(report.n_paths), report.summaries.iter().map(aggregate_row))?;
    written.push(agg);

    let channel_header: Vec<String> = ["power_dBm", "path", "rmse_coarse", "rmse_refined", "bound"]
        .map(String::from)
        .to_vec();
    for k in 0..eta::PER_PATH {
        let path = dir.join(format!("{}.csv", eta::NAMES[k]));
        let unit = channel_unit(k);
        let rows = report.summaries.iter().flat_map(|s| {
            s.channel.iter().enumerate().map(move |(q, st)| {
                vec![
                    s.power_dbm.to_string(),
                    q.to_string(),
                    num(st[k].rmse_coarse * unit),
                    num(st[k].rmse_refined * unit),
                    num(st[k].bound * unit),
                ]
            })
        });
        write_csv(&path, &channel_header, rows)?;
        written.push(path);
    }

    let pose_header: Vec<String> = ["power_dBm", "rmse_coarse", "rmse_refined", "bound"]
        .map(String::from)
        .to_vec();
    let pose_files: [(&str, fn(&PowerSummary) -> &ParamStats, f64); 2] = [
        ("position", |s| &s.position, 1.0),
        ("orientation", |s| &s.orientation, 180.0 / std::f64::consts::PI),
    ];
    for (name, pick, unit) in pose_files {
        let path = dir.join(format!("{name}.csv"));
        let rows = report.summaries.iter().map(|s| {
            let st = pick(s);
            vec![
                s.power_dbm.to_string(),
                num(st.rmse_coarse * unit),
                num(st.rmse_refined * unit),
                num(st.bound * unit),
            ]
        });
        write_csv(&path, &pose_header, rows)?;
        written.push(path);
    }

    let gp = dir.join("plots.gp");
    std::fs::write(&gp, PLOT_SCRIPT)?;
    written.push(gp);
    Ok(written)
}
