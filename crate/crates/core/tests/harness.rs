mod common;

use std::path::Path;
use std::sync::OnceLock;

use risloc::channel::grid_value;
use risloc::geometry::{angles_from_geometry, link_angles};
use risloc::harness::output::{aggregate_header, PLOT_FILES, PLOT_SCRIPT};
use risloc::harness::trial::{angle_diff, ChannelErrors};
use risloc::harness::*;
use risloc::params::eta;
use risloc::Error;

fn small_cfg() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.sweep.trials = 6;
    cfg.sweep.powers_dbm = vec![0.0, 10.0];
    cfg
}

/// 100 trials at 20 dBm with the default configuration.
fn mc20() -> &'static SweepReport {
    static REPORT: OnceLock<SweepReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        run_sweep_with(&Scenario::new(&cfg).unwrap(), &[20.0], 100).unwrap()
    })
}

#[test]
fn default_config_file_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), cfg);
}

#[test]
fn invalid_configs_are_rejected() {
    for text in [
        "unknown = 1",
        "[sweep]\ntrials = 0",
        "[sweep]\npowers_dbm = []",
        "[sweep]\npowers_dbm = [nan]",
        "[system]\nsubcarriers = 0",
        "[system]\nfirst_block_slots = 4",
        "[scenario]\nms = [-6.0, 8.0, 20.0]",
    ] {
        assert!(
            matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_)) | Err(Error::DegenerateGeometry(_)) | Err(Error::ScheduleInfeasible { .. })),
            "{text}"
        );
    }
}

#[test]
fn noiseless_on_grid_trial_is_exact() {
    let mut cfg = ExperimentConfig::default();
    cfg.stages.noiseless = true;
    cfg.stages.on_grid = true;
    let sc = Scenario::new(&cfg).unwrap();
    let rec = run_trial(&sc, 20.0, trial_seed(1, 0));
    assert!(rec.failure.is_none(), "{:?}", rec.failure);
    let e = rec.lm_errors.unwrap();
    assert!(e.position_sq.sqrt() < 1e-6);
    assert!(e.orientation_sq.sqrt() < 1e-6);
}

#[test]
fn on_grid_snapping_lands_on_dictionary_points() {
    let cfg = ExperimentConfig::default();
    let g = snap_on_grid(&cfg.geometry(), &cfg.system).unwrap();
    let link = link_angles(g.bs, g.ris).unwrap();
    let on = |v: f64, grid: usize| (0..grid).any(|k| (grid_value(k, grid) - v).abs() < 1e-9);
    for a in angles_from_geometry(&g).unwrap() {
        assert!(on(a.theta_t.sin(), cfg.system.grid_ms));
        assert!(on(a.phi_in.cos() - link.phi_out0.cos(), cfg.system.grid_el));
        let az = a.psi_in.sin() * a.phi_in.sin() - link.psi_out0.sin() * link.phi_out0.sin();
        assert!(on(az, cfg.system.grid_az));
    }
}

#[test]
fn same_seed_gives_identical_records() {
    let sc = Scenario::new(&ExperimentConfig::default()).unwrap();
    let a = run_trial(&sc, 5.0, 42);
    let b = run_trial(&sc, 5.0, 42);
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn coarse_only_trials_skip_sage() {
    let mut cfg = ExperimentConfig::default();
    cfg.stages.sage = false;
    cfg.stages.lm = false;
    let rec = run_trial(&Scenario::new(&cfg).unwrap(), 20.0, 3);
    assert!(rec.coarse.is_some());
    assert!(rec.sage.is_none() && rec.sage_errors.is_none());
    assert!(rec.lm.is_none() && rec.lm_errors.is_none());
}

#[test]
fn angle_errors_wrap() {
    assert!((angle_diff(0.1, 2.0 * std::f64::consts::PI - 0.1) - 0.2).abs() < 1e-12);
    assert!((angle_diff(-3.0, 3.0) - (2.0 * std::f64::consts::PI - 6.0)).abs() < 1e-12);
}

#[test]
fn csv_files_follow_the_schema() {
    let cfg = small_cfg();
    let report = run_sweep(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = write_report(&report, dir.path()).unwrap();
    assert_eq!(written.len(), 1 + PLOT_FILES.len() + 1);
    for name in PLOT_FILES {
        assert!(dir.path().join(format!("{name}.csv")).exists(), "{name}");
    }

    let read = |name: &str| {
        let mut r = csv::Reader::from_path(dir.path().join(name)).unwrap();
        let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        (header, rows)
    };
    let (h, rows) = read("aggregate.csv");
    assert_eq!(h, aggregate_header(2));
    assert_eq!(rows.len(), cfg.sweep.powers_dbm.len());
    let (h, rows) = read("tau.csv");
    assert_eq!(h, ["power_dBm", "path", "rmse_coarse", "rmse_refined", "bound"]);
    assert_eq!(rows.len(), 2 * cfg.sweep.powers_dbm.len());
    let (h, rows) = read("position.csv");
    assert_eq!(h, ["power_dBm", "rmse_coarse", "rmse_refined", "bound"]);
    assert_eq!(rows.len(), cfg.sweep.powers_dbm.len());
    for r in &rows {
        assert!(r.iter().all(|v| v.parse::<f64>().is_ok()));
    }
}

#[test]
fn plot_script_reads_every_file() {
    assert!(PLOT_SCRIPT.contains("separator ','"));
    assert!(PLOT_SCRIPT.contains("every ::1"));
    for name in PLOT_FILES {
        assert!(PLOT_SCRIPT.contains(name), "{name}");
    }
    // Channel files have five columns, pose files four.
    let max_col = |text: &str| {
        text.match_indices('$')
            .filter_map(|(i, _)| text[i + 1..].chars().next()?.to_digit(10))
            .chain(text.match_indices("using 1:").filter_map(|(i, _)| text[i + 8..].chars().next()?.to_digit(10)))
            .max()
            .unwrap()
    };
    let split = PLOT_SCRIPT.find("'position orientation'").unwrap();
    assert_eq!(max_col(&PLOT_SCRIPT[..split]), 5);
    assert_eq!(max_col(&PLOT_SCRIPT[split..]), 4);
}

#[test]
fn aggregation_matches_the_records() {
    let report = run_sweep(&small_cfg()).unwrap();
    for (s, recs) in report.summaries.iter().zip(&report.records) {
        let scored: Vec<_> = recs.iter().filter(|r| r.failure.is_none()).collect();
        assert_eq!(s.failed, recs.len() - scored.len());
        for q in 0..2 {
            for k in 0..eta::PER_PATH {
                let mse: f64 = scored.iter().map(|r| r.sage_errors.as_ref().unwrap().sq[q][k]).sum::<f64>() / scored.len() as f64;
                assert!((s.channel[q][k].rmse_refined - mse.sqrt()).abs() <= 1e-12 * mse.sqrt());
                let crlb: f64 = scored.iter().map(|r| r.bounds.as_ref().unwrap().crlb_channel[eta::index(q, k)]).sum::<f64>()
                    / scored.len() as f64;
                assert!((s.channel[q][k].bound - crlb.sqrt()).abs() <= 1e-12 * crlb.sqrt());
            }
        }
        let mse: f64 = scored.iter().map(|r| r.lm_errors.as_ref().unwrap().position_sq).sum::<f64>() / scored.len() as f64;
        assert!((s.position.rmse_refined - mse.sqrt()).abs() <= 1e-12 * mse.sqrt());
    }
}

#[test]
fn nominal_peb_follows_the_power_law() {
    let report = run_sweep(&small_cfg()).unwrap();
    let (a, b) = (&report.summaries[0], &report.summaries[1]);
    let ratio = a.position.bound_nominal / b.position.bound_nominal;
    assert!((ratio - 10f64.sqrt()).abs() < 1e-8 * ratio);
    let ratio = a.orientation.bound_nominal / b.orientation.bound_nominal;
    assert!((ratio - 10f64.sqrt()).abs() < 1e-8 * ratio);
}

#[test]
fn bound_column_is_reproducible() {
    let a = run_sweep(&small_cfg()).unwrap();
    let b = run_sweep(&small_cfg()).unwrap();
    for (x, y) in a.summaries.iter().zip(&b.summaries) {
        assert_eq!(x.position.bound.to_bits(), y.position.bound.to_bits());
        assert_eq!(x.orientation.bound.to_bits(), y.orientation.bound.to_bits());
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = small_cfg();
    let sc = Scenario::new(&cfg).unwrap();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| format!("{:?}", run_sweep_with(&sc, &cfg.sweep.powers_dbm, cfg.sweep.trials).unwrap().summaries))
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn sage_improves_on_coarse_estimates_at_20_dbm() {
    let recs = &mc20().records[0];
    // Catastrophic trials (a wrong AOD support) are left out here: a single
    // one dominates the squared error of every parameter.
    let clean: Vec<_> = recs.iter().filter(|r| r.failure.is_none() && !r.catastrophic).collect();
    assert!(clean.len() >= 95);
    let rmse = |f: &dyn Fn(&TrialRecord) -> f64| (clean.iter().map(|r| f(r)).sum::<f64>() / clean.len() as f64).sqrt();
    // Parameter classes pool both paths.
    for k in 0..eta::PER_PATH {
        let pooled = |f: fn(&TrialRecord) -> Option<&ChannelErrors>| {
            rmse(&|r| f(r).unwrap().sq.iter().map(|row| row[k]).sum::<f64>() / 2.0)
        };
        let coarse = pooled(|r| r.coarse_errors.as_ref());
        let sage = pooled(|r| r.sage_errors.as_ref());
        println!("{}: SAGE {sage:e}, coarse {coarse:e}", eta::NAMES[k]);
        assert!(sage < coarse, "{}: SAGE {sage:e}, coarse {coarse:e}", eta::NAMES[k]);
    }
}

#[test]
fn estimates_do_not_beat_the_bound_at_20_dbm() {
    let s = &mc20().summaries[0];
    for q in 0..2 {
        for k in 0..eta::PER_PATH {
            let st = &s.channel[q][k];
            assert!(st.rmse_refined >= 0.8 * st.bound, "{}[{q}]: {:e} vs {:e}", eta::NAMES[k], st.rmse_refined, st.bound);
        }
    }
}

#[test]
fn cli_rejects_a_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[sweep]\ntrials = 0\n").unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_risloc"))
        .args(["bounds", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_prints_bounds() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_risloc"))
        .args(["bounds", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("PEB"));
}
