use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use range_rte::estimators::{estimate as run_estimator, EstimatorKind, EstimatorOptions};
use range_rte::fisher::{
    confidence_intervals, det_fim_geometric, det_fim_geometric_sampled, fim as fim_at, singularity_report,
    standard_errors, Interval, SingularityFlags, MAX_EXHAUSTIVE_K,
};
use range_rte::geometry::LeverArm;
use range_rte::io::{
    matrix_rows, read_odometry_csv, read_ranges_csv, results_csv, timings_csv, write_atomic, write_json_atomic,
    write_odometry_csv, write_ranges_csv, EstimateJson, InputSection, OutputSection, Provenance, ResultRow, RunConfig,
    Thresholds, TransformJson,
};
use range_rte::measurement::{axis_variances, ingest_logs, motion_excitation_check, sliding_outlier_filter, Ingested};
use range_rte::simulation::{
    drift_monte_carlo, monte_carlo_run, simulate_trial, singular_scenario, trial_rng, ErrorStats, ScenarioConfig,
    SingularKind, NOMINAL_SIGMA_R,
};
use range_rte::{SyncedDataset, Transform};
use serde::Serialize;

use crate::{exit_for, Exit, Failure};

#[derive(Debug, Clone, Default, Serialize)]
pub struct Counts {
    pub ranges_read: usize,
    pub rejected_outliers: usize,
    pub dropped_uncovered: usize,
    pub dropped_duplicate: usize,
    pub samples_used: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Excitation {
    pub checked: bool,
    pub passed: bool,
    pub variance_threshold_m2: f64,
    pub host_variances_m2: [f64; 3],
    pub target_variances_m2: [f64; 3],
}

struct Loaded {
    ds: SyncedDataset,
    counts: Counts,
    excitation: Excitation,
}

fn load_logs(inputs: &InputSection, th: &Thresholds) -> Result<Loaded, Failure> {
    let odom_a = read_odometry_csv(&inputs.odom_a)?;
    let odom_b = read_odometry_csv(&inputs.odom_b)?;
    let raw = read_ranges_csv(&inputs.ranges)?;
    if !(inputs.sigma_r_m >= 0.0 && inputs.sigma_r_m.is_finite()) {
        return Err(Failure::new(Exit::Config, "inputs.sigma_r_m must be non-negative"));
    }
    let noise_free = inputs.sigma_r_m == 0.0;
    let mut counts = Counts {
        ranges_read: raw.len(),
        ..Counts::default()
    };
    let ranges = if th.outlier_filter {
        let (kept, rejected) = sliding_outlier_filter(&raw, th.outlier_k, th.outlier_threshold_m2, th.outlier_mode)?;
        counts.rejected_outliers = rejected;
        kept
    } else {
        raw
    };
    let ing = ingest_logs(
        &odom_a,
        &odom_b,
        &ranges,
        &LeverArm::new(Vector3::from(inputs.lever_arm_a_m)),
        &LeverArm::new(Vector3::from(inputs.lever_arm_b_m)),
        if noise_free { NOMINAL_SIGMA_R } else { inputs.sigma_r_m },
        inputs.d0_measured_m,
    )?;
    let ing = Ingested {
        dataset: ing.dataset.with_noise_free(noise_free),
        ..ing
    };
    counts.dropped_uncovered = ing.dropped_uncovered;
    counts.dropped_duplicate = ing.dropped_duplicate;
    counts.samples_used = ing.dataset.len();
    let pa: Vec<_> = ing.dataset.samples.iter().map(|s| s.pa).collect();
    let pb: Vec<_> = ing.dataset.samples.iter().map(|s| s.pb).collect();
    let n = th.excitation_n.max(1);
    let excitation = Excitation {
        checked: th.excitation_check,
        passed: !th.excitation_check || motion_excitation_check(&pa, &pb, th.excitation_variance_m2, n),
        variance_threshold_m2: th.excitation_variance_m2,
        host_variances_m2: axis_variances(&pa, n).into(),
        target_variances_m2: axis_variances(&pb, n).into(),
    };
    Ok(Loaded {
        ds: ing.dataset,
        counts,
        excitation,
    })
}

#[derive(Serialize)]
struct EstimateOutput {
    provenance: Provenance,
    status: String,
    counts: Counts,
    excitation: Excitation,
    estimate: Option<EstimateJson>,
    error: Option<String>,
}

pub fn estimate(cfg: &RunConfig, out: &Path) -> Result<Exit, Failure> {
    let inputs = cfg
        .inputs
        .as_ref()
        .ok_or_else(|| Failure::new(Exit::Config, "estimate needs an 'inputs' section"))?;
    let loaded = load_logs(inputs, &cfg.thresholds)?;
    let result = run_estimator(cfg.estimator, &loaded.ds, None, &cfg.estimator_options());
    let (estimate, error, exit, status) = match &result {
        Ok(r) if !loaded.excitation.passed => {
            (Some(EstimateJson::from(r)), None, Exit::Data, "insufficient_excitation")
        }
        Ok(r) if r.flags.configuration_singular => (Some(EstimateJson::from(r)), None, Exit::Data, "singular"),
        Ok(r) => (Some(EstimateJson::from(r)), None, Exit::Ok, "ok"),
        Err(e) => {
            let exit = if loaded.excitation.passed {
                exit_for(e)
            } else {
                Exit::Data
            };
            (None, Some(e.to_string()), exit, "failed")
        }
    };
    let report = EstimateOutput {
        provenance: Provenance::of(cfg),
        status: status.into(),
        counts: loaded.counts,
        excitation: loaded.excitation,
        estimate,
        error,
    };
    write_json_atomic(&out.join("report.json"), &report)?;
    if exit != Exit::Ok {
        eprintln!("estimate: {status}");
    }
    Ok(exit)
}

#[derive(Serialize)]
struct EstimatorSummary {
    estimator: EstimatorKind,
    rmse_t_m: f64,
    rmse_theta_rad: f64,
    mse_t_m2: f64,
    mse_theta_rad2: f64,
    crlb_t_mean_m2: Option<f64>,
    crlb_theta_mean_rad2: Option<f64>,
    trials: usize,
    failures: usize,
}

impl EstimatorSummary {
    fn new(estimator: EstimatorKind, s: &ErrorStats) -> Self {
        Self {
            estimator,
            rmse_t_m: s.rmse_t,
            rmse_theta_rad: s.rmse_theta,
            mse_t_m2: s.mse_t,
            mse_theta_rad2: s.mse_theta,
            crlb_t_mean_m2: s.crlb_t_mean,
            crlb_theta_mean_rad2: s.crlb_theta_mean,
            trials: s.trials,
            failures: s.failures,
        }
    }
}

#[derive(Serialize)]
struct CellSummary {
    cell: usize,
    d0_m: f64,
    d_max_m: f64,
    n_poses: usize,
    sigma_r_m: f64,
    sigma_o_m: f64,
    trials: usize,
    use_d0: bool,
    estimators: Vec<EstimatorSummary>,
}

#[derive(Serialize)]
struct SimulateOutput {
    provenance: Provenance,
    cells: Vec<CellSummary>,
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Exit, Failure> {
    let cells = cfg.sweep_configs()?;
    let opts = cfg.estimator_options();
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut summaries = Vec::new();
    for (ci, sc) in cells.iter().enumerate() {
        let mut per_est = Vec::new();
        for kind in cfg.estimator_list() {
            let mc = monte_carlo_run(sc, kind, &opts)?;
            for o in &mc.outcomes {
                rows.push(ResultRow {
                    cell: ci,
                    estimator: kind,
                    trial: o.trial,
                    d0: sc.d0,
                    d_max: sc.d_max,
                    e_t: o.e_t,
                    e_theta: o.e_theta,
                    crlb_t: o.crlb_t,
                    crlb_theta: o.crlb_theta,
                    status: o.error.clone().unwrap_or_else(|| "ok".into()),
                });
                timings.push((ci, kind, o.trial, o.solve_ms));
            }
            per_est.push(EstimatorSummary::new(kind, &mc.stats));
        }
        summaries.push(CellSummary {
            cell: ci,
            d0_m: sc.d0,
            d_max_m: sc.d_max,
            n_poses: sc.n_poses,
            sigma_r_m: sc.sigma_r,
            sigma_o_m: sc.sigma_o,
            trials: sc.trials,
            use_d0: sc.use_d0,
            estimators: per_est,
        });
        if cfg.output.emit_logs {
            emit_logs(cfg, sc, &out.join("logs").join(format!("cell{ci}")))?;
        }
    }
    write_atomic(&out.join("results.csv"), &results_csv(&rows)?)?;
    write_atomic(&out.join("timings.csv"), &timings_csv(&timings)?)?;
    write_json_atomic(
        &out.join("summary.json"),
        &SimulateOutput {
            provenance: Provenance::of(cfg),
            cells: summaries,
        },
    )?;
    Ok(Exit::Ok)
}

/// Writes each trial's noisy logs next to an `estimate` config that
/// reproduces the in-process estimate.
fn emit_logs(cfg: &RunConfig, sc: &ScenarioConfig, dir: &Path) -> Result<(), Failure> {
    for i in 0..sc.trials {
        let trial = simulate_trial(sc, i)?;
        let tdir = dir.join(format!("trial{i}"));
        write_odometry_csv(&tdir.join("odom_a.csv"), &trial.logs.odom_a)?;
        write_odometry_csv(&tdir.join("odom_b.csv"), &trial.logs.odom_b)?;
        write_ranges_csv(&tdir.join("ranges.csv"), &trial.logs.ranges)?;
        let run = RunConfig {
            seed: cfg.seed,
            estimator: cfg.estimator,
            estimators: None,
            sweep: None,
            drift: None,
            inputs: Some(InputSection {
                odom_a: PathBuf::from("odom_a.csv"),
                odom_b: PathBuf::from("odom_b.csv"),
                ranges: PathBuf::from("ranges.csv"),
                sigma_r_m: sc.sigma_r,
                d0_measured_m: sc.use_d0.then_some(trial.logs.d0),
                lever_arm_a_m: sc.lever_arms.0.r.into(),
                lever_arm_b_m: sc.lever_arms.1.r.into(),
            }),
            thresholds: Thresholds {
                outlier_filter: false,
                excitation_check: false,
                ..cfg.thresholds.clone()
            },
            output: OutputSection::default(),
            ..cfg.clone()
        };
        write_json_atomic(&tdir.join("estimate.json"), &run)?;
        write_json_atomic(&tdir.join("truth.json"), &TransformJson::from(trial.truth))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FimOutput {
    provenance: Provenance,
    source: String,
    samples: usize,
    theta: TransformJson,
    fim: [[f64; 4]; 4],
    rank: usize,
    kappa: f64,
    crlb: Option<[[f64; 4]; 4]>,
    crlb_t_m2: Option<f64>,
    crlb_theta_rad2: Option<f64>,
    std_errors: [Option<f64>; 4],
    confidence_95: Option<[Interval<f64>; 4]>,
    flags: SingularityFlags,
    det_direct: Option<f64>,
    det_geometric: Option<f64>,
    /// `exhaustive` or `sampled`.
    det_geometric_method: Option<String>,
    det_relative_difference: Option<f64>,
    notes: Vec<String>,
}

pub fn fim(cfg: &RunConfig, out: &Path) -> Result<Exit, Failure> {
    let (source, ds, theta) = match &cfg.inputs {
        Some(inputs) => {
            let loaded = load_logs(
                inputs,
                &Thresholds {
                    excitation_check: false,
                    ..cfg.thresholds.clone()
                },
            )?;
            let theta = match cfg.fim.theta {
                Some(t) => Transform::from(t),
                None => run_estimator(cfg.estimator, &loaded.ds, None, &cfg.estimator_options())?.theta_hat,
            };
            ("logs".to_string(), loaded.ds, theta)
        }
        None => {
            let sc = cfg.scenario_config()?;
            let (truth, ds) = if cfg.fim.scenario == "random" {
                let t = simulate_trial(&sc, cfg.fim.trial)?;
                (t.truth, t.dataset)
            } else {
                let kind: SingularKind = cfg.fim.scenario.parse()?;
                singular_scenario(kind, &sc, &mut trial_rng(sc.seed, cfg.fim.trial as u64))?
            };
            let theta = cfg.fim.theta.map(Transform::from).unwrap_or(truth);
            (format!("scenario:{}", cfg.fim.scenario), ds, theta)
        }
    };
    let k = ds.len();
    let rep = fim_at(&theta, &ds)?;
    let mut notes = Vec::new();
    let (mut det_direct, mut det_geo, mut method) = (None, None, None);
    if k < 4 {
        notes.push(format!(
            "{k} samples: the information matrix has rank at most {k}, determinant omitted"
        ));
    } else {
        det_direct = Some(rep.det_f);
        if k <= MAX_EXHAUSTIVE_K {
            det_geo = Some(det_fim_geometric(&theta, &ds)?);
            method = Some("exhaustive".to_string());
        } else {
            det_geo = Some(det_fim_geometric_sampled(&theta, &ds, cfg.fim.det_subsets, cfg.seed)?);
            method = Some("sampled".to_string());
            notes.push(format!(
                "{k} samples exceed {MAX_EXHAUSTIVE_K}; geometric determinant estimated from random subsets"
            ));
        }
    }
    let rel = match (det_direct, det_geo) {
        (Some(a), Some(b)) if a != 0.0 => Some((b - a).abs() / a.abs()),
        _ => None,
    };
    let report = FimOutput {
        provenance: Provenance::of(cfg),
        source,
        samples: k,
        theta: theta.into(),
        fim: matrix_rows(&rep.f),
        rank: rep.rank,
        kappa: rep.kappa,
        crlb: rep.crlb.as_ref().map(matrix_rows),
        crlb_t_m2: rep.crlb_t,
        crlb_theta_rad2: rep.crlb_theta,
        std_errors: standard_errors(&rep.f),
        confidence_95: confidence_intervals(&theta, &rep.f).ok(),
        flags: singularity_report(&rep.f, cfg.thresholds.kappa_threshold),
        det_direct,
        det_geometric: det_geo,
        det_geometric_method: method,
        det_relative_difference: rel,
        notes,
    };
    write_json_atomic(&out.join("fim.json"), &report)?;
    Ok(if k < 4 { Exit::Data } else { Exit::Ok })
}

#[derive(Serialize)]
struct WindowRow {
    end: usize,
    t_s: f64,
    skipped: bool,
    skip_reason: Option<String>,
    estimate: Option<TransformJson>,
    truth: TransformJson,
    e_t_m: Option<f64>,
    e_theta_rad: Option<f64>,
}

#[derive(Serialize)]
struct DriftOutput {
    provenance: Provenance,
    estimator: EstimatorKind,
    sigma_t_m: f64,
    sigma_theta_rad: f64,
    duration_s: f64,
    window: usize,
    stride: usize,
    rmse_corrected_m: f64,
    rmse_nc_m: f64,
    ratio: f64,
    runs: Vec<range_rte::simulation::DriftRun>,
    /// Window time series of the first realization.
    windows: Vec<WindowRow>,
}

pub fn drift(cfg: &RunConfig, out: &Path) -> Result<Exit, Failure> {
    let section = cfg
        .drift
        .as_ref()
        .ok_or_else(|| Failure::new(Exit::Config, "drift needs a 'drift' section"))?;
    let sc = cfg.scenario_config()?;
    let dc = sc.drift.expect("drift section present");
    let opts: EstimatorOptions<f64> = cfg.estimator_options();
    let summary = drift_monte_carlo(&sc, cfg.estimator, &opts, section.realizations)?;
    let first = &summary.results[0];
    let windows = first
        .windows
        .iter()
        .map(|w| {
            let truth = first.truth[w.end - 1];
            let est = w.report.as_ref().map(|r| r.theta_hat);
            WindowRow {
                end: w.end,
                t_s: w.t,
                skipped: w.skipped,
                skip_reason: w.skip_reason.clone(),
                estimate: est.map(TransformJson::from),
                truth: truth.into(),
                e_t_m: est.map(|e| (e.t - truth.t).norm()),
                e_theta_rad: est.map(|e| range_rte::geometry::angle_distance(e.theta, truth.theta)),
            }
        })
        .collect();
    let report = DriftOutput {
        provenance: Provenance::of(cfg),
        estimator: cfg.estimator,
        sigma_t_m: dc.sigma_t,
        sigma_theta_rad: dc.sigma_theta,
        duration_s: dc.duration,
        window: dc.window,
        stride: dc.stride,
        rmse_corrected_m: summary.rmse_corrected,
        rmse_nc_m: summary.rmse_nc,
        ratio: summary.rmse_corrected / summary.rmse_nc,
        runs: summary.runs.clone(),
        windows,
    };
    write_json_atomic(&out.join("drift_report.json"), &report)?;
    Ok(Exit::Ok)
}
