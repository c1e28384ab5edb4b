//! Monte-Carlo scenario generation: ground truth, bounded random-walk
//! trajectories, noisy logs, singular configurations and drift runs.
//!
//! Everything here is double precision. Each trial draws from its own
//! ChaCha8 substream of the configured seed, so results do not depend on how
//! trials are scheduled across threads.

use std::time::Instant;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    align_trajectory, estimate, sliding_window_estimate, EstimateReport, EstimatorKind, EstimatorOptions,
    WindowEstimate, WindowOptions,
};
use crate::fisher::fim;
use crate::geometry::{angle_distance, antenna_world_position, LeverArm, Pose, Transform4DoF};
use crate::measurement::{ingest_logs, true_range, RangeSample, SyncedDataset, SyncedSample};

/// Range weighting used when a scenario is noise-free.
pub const NOMINAL_SIGMA_R: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftConfig {
    /// Random-walk std of each translation axis, per square-root second.
    pub sigma_t: f64,
    /// Random-walk std of the heading, radians per square-root second.
    pub sigma_theta: f64,
    /// Scenario length in seconds.
    pub duration: f64,
    pub rate_hz: f64,
    pub window: usize,
    pub stride: usize,
    /// Interval `[start, end)` in seconds during which both agents hover.
    pub hover: Option<(f64, f64)>,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            sigma_t: 0.1,
            sigma_theta: 0.1,
            duration: 600.0,
            rate_hz: 10.0,
            window: 50,
            stride: 10,
            hover: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    /// Distance between the two frame origins.
    pub d0: f64,
    /// Radius of the ball each agent stays in.
    pub d_max: f64,
    pub n_poses: usize,
    pub sigma_r: f64,
    /// Odometry position noise per axis.
    pub sigma_o: f64,
    pub trials: usize,
    pub seed: u64,
    pub lever_arms: (LeverArm<f64>, LeverArm<f64>),
    /// Hand the noisy first inter-origin distance to the estimators.
    pub use_d0: bool,
    pub drift: Option<DriftConfig>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            d0: 3.0,
            d_max: 1.0,
            n_poses: 20,
            sigma_r: 0.1,
            sigma_o: 0.001,
            trials: 100,
            seed: 0,
            lever_arms: (LeverArm::zero(), LeverArm::zero()),
            use_d0: true,
            drift: None,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(what.to_string()));
        if !(self.d0 > 0.0) || !self.d0.is_finite() {
            return bad("d0 must be positive");
        }
        if !(self.d_max >= 0.0) || !self.d_max.is_finite() {
            return bad("D must be nonnegative");
        }
        if !(self.sigma_r >= 0.0 && self.sigma_o >= 0.0) || !(self.sigma_r + self.sigma_o).is_finite() {
            return bad("noise levels must be nonnegative");
        }
        if self.n_poses == 0 {
            return bad("n_poses must be at least 1");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        let arms = [self.lever_arms.0.r, self.lever_arms.1.r];
        if !arms.iter().all(|r| r.iter().all(|v| v.is_finite())) {
            return bad("lever arms must be finite");
        }
        if let Some(d) = &self.drift {
            if !(d.sigma_t >= 0.0 && d.sigma_theta >= 0.0) {
                return bad("drift noise must be nonnegative");
            }
            if !(d.duration > 0.0 && d.rate_hz > 0.0) {
                return bad("drift duration and rate must be positive");
            }
            if d.window < 10 || d.stride == 0 {
                return bad("drift window must hold at least 10 samples and stride must be positive");
            }
            if let Some((a, b)) = d.hover {
                if !(a >= 0.0 && b > a) {
                    return bad("hover interval must satisfy 0 <= start < end");
                }
            }
        }
        Ok(())
    }

    /// Range std handed to the estimators.
    pub fn weighting_sigma(&self) -> f64 {
        if self.sigma_r > 0.0 {
            self.sigma_r
        } else {
            NOMINAL_SIGMA_R
        }
    }
}

/// Generator for substream `stream` of `seed`.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("std is finite and nonnegative")
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn uniform_heading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
}

/// Truth with `|t| = d0`, direction uniform on the sphere and heading
/// uniform in `[-pi, pi)`.
pub fn sample_ground_truth<R: Rng + ?Sized>(d0: f64, rng: &mut R) -> Transform4DoF<f64> {
    let t = unit_vector(rng) * d0;
    Transform4DoF::new(t, uniform_heading(rng))
}

/// Bounded Gaussian random walk from the local origin, reflected radially at
/// the ball of radius `d_max`. One pose per second, random yaw per pose.
pub fn generate_trajectory<R: Rng + ?Sized>(d_max: f64, n_poses: usize, rng: &mut R) -> Vec<Pose<f64>> {
    let step = normal(d_max * 0.5);
    let mut p = Vector3::zeros();
    let mut out = Vec::with_capacity(n_poses);
    for i in 0..n_poses {
        if i > 0 {
            p += Vector3::from_fn(|_, _| step.sample(rng));
            let r = p.norm();
            if r > d_max {
                p *= (2.0 * d_max - r).max(0.0) / r;
                // Steps longer than the diameter can still land outside.
                if p.norm() > d_max {
                    p *= d_max / p.norm();
                }
            }
        }
        out.push(Pose::from_yaw(i as f64, p, uniform_heading(rng)));
    }
    out
}

/// Noisy odometry and range logs of one run, as a logger would record them.
#[derive(Debug, Clone)]
pub struct SimLogs {
    pub odom_a: Vec<Pose<f64>>,
    pub odom_b: Vec<Pose<f64>>,
    pub ranges: Vec<RangeSample<f64>>,
    /// Noisy first inter-origin distance.
    pub d0: f64,
}

/// Adds odometry and range noise to clean trajectories. Ranges are taken at
/// the pose timestamps and `d0` is `|t| + eta`.
pub fn synthesize_logs<R: Rng + ?Sized>(
    truth: &Transform4DoF<f64>,
    traj_a: &[Pose<f64>],
    traj_b: &[Pose<f64>],
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<SimLogs> {
    if traj_a.len() != traj_b.len() {
        return Err(Error::InvalidInput("trajectories differ in length".into()));
    }
    let (arm_a, arm_b) = cfg.lever_arms;
    let range_noise = normal(cfg.sigma_r);
    let odom_noise = normal(cfg.sigma_o);
    let mut odom_a = Vec::with_capacity(traj_a.len());
    let mut odom_b = Vec::with_capacity(traj_b.len());
    let mut ranges = Vec::with_capacity(traj_a.len());
    for (a, b) in traj_a.iter().zip(traj_b) {
        let d = true_range(
            truth,
            &antenna_world_position(a, &arm_a),
            &antenna_world_position(b, &arm_b),
        );
        // A sensor never reports a negative range.
        ranges.push(RangeSample {
            t: a.t,
            d: (d + range_noise.sample(rng)).abs(),
        });
        let mut na = *a;
        let mut nb = *b;
        na.p += Vector3::from_fn(|_, _| odom_noise.sample(rng));
        nb.p += Vector3::from_fn(|_, _| odom_noise.sample(rng));
        odom_a.push(na);
        odom_b.push(nb);
    }
    let d0 = (truth.t.norm() + range_noise.sample(rng)).abs();
    Ok(SimLogs {
        odom_a,
        odom_b,
        ranges,
        d0,
    })
}

/// Pairs simulated logs through the regular ingestion path.
pub fn ingest_sim_logs(logs: &SimLogs, cfg: &ScenarioConfig) -> Result<SyncedDataset<f64>> {
    let (arm_a, arm_b) = cfg.lever_arms;
    let ingested = ingest_logs(
        &logs.odom_a,
        &logs.odom_b,
        &logs.ranges,
        &arm_a,
        &arm_b,
        cfg.weighting_sigma(),
        cfg.use_d0.then_some(logs.d0),
    )?;
    Ok(ingested.dataset.with_noise_free(cfg.sigma_r == 0.0))
}

pub fn synthesize_measurements<R: Rng + ?Sized>(
    truth: &Transform4DoF<f64>,
    traj_a: &[Pose<f64>],
    traj_b: &[Pose<f64>],
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<SyncedDataset<f64>> {
    ingest_sim_logs(&synthesize_logs(truth, traj_a, traj_b, cfg, rng)?, cfg)
}

/// Noise-free dataset at the true antenna positions and ranges.
pub fn clean_dataset(
    truth: &Transform4DoF<f64>,
    traj_a: &[Pose<f64>],
    traj_b: &[Pose<f64>],
    cfg: &ScenarioConfig,
) -> Result<SyncedDataset<f64>> {
    let (arm_a, arm_b) = cfg.lever_arms;
    let samples = traj_a
        .iter()
        .zip(traj_b)
        .map(|(a, b)| {
            let pa = antenna_world_position(a, &arm_a);
            let pb = antenna_world_position(b, &arm_b);
            SyncedSample {
                t: a.t,
                d: true_range(truth, &pa, &pb),
                pa,
                pb,
            }
        })
        .collect();
    Ok(SyncedDataset::new(samples, cfg.weighting_sigma(), cfg.use_d0.then_some(truth.t.norm()))?.with_noise_free(true))
}

/// Everything generated for one Monte-Carlo trial.
#[derive(Debug, Clone)]
pub struct Trial {
    pub index: usize,
    pub truth: Transform4DoF<f64>,
    pub traj_a: Vec<Pose<f64>>,
    pub traj_b: Vec<Pose<f64>>,
    pub logs: SimLogs,
    pub dataset: SyncedDataset<f64>,
}

/// Draws trial `index` of the scenario.
pub fn simulate_trial(cfg: &ScenarioConfig, index: usize) -> Result<Trial> {
    let mut rng = trial_rng(cfg.seed, index as u64);
    let truth = sample_ground_truth(cfg.d0, &mut rng);
    let traj_a = generate_trajectory(cfg.d_max, cfg.n_poses, &mut rng);
    let traj_b = generate_trajectory(cfg.d_max, cfg.n_poses, &mut rng);
    let logs = synthesize_logs(&truth, &traj_a, &traj_b, cfg, &mut rng)?;
    let dataset = ingest_sim_logs(&logs, cfg)?;
    Ok(Trial {
        index,
        truth,
        traj_a,
        traj_b,
        logs,
        dataset,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularKind {
    /// Both agents translate identically in the host frame.
    Parallel,
    /// Both trajectories are straight lines in one plane.
    PlanarLinear,
    /// The target stays at its origin.
    StaticTarget,
    /// The host stays at its origin.
    StaticHost,
}

impl SingularKind {
    pub const ALL: [SingularKind; 4] = [Self::Parallel, Self::PlanarLinear, Self::StaticTarget, Self::StaticHost];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Parallel => "parallel",
            Self::PlanarLinear => "planar_linear",
            Self::StaticTarget => "static_target",
            Self::StaticHost => "static_host",
        }
    }

    /// Parameters `(t_x, t_y, t_z, theta)` this configuration cannot resolve.
    pub fn unobservable(self) -> [bool; 4] {
        match self {
            Self::Parallel | Self::PlanarLinear => [true, true, true, false],
            Self::StaticTarget => [false, false, false, true],
            Self::StaticHost => [true; 4],
        }
    }
}

impl std::str::FromStr for SingularKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown singular scenario '{s}'")))
    }
}

fn random_in_ball<R: Rng + ?Sized>(d_max: f64, rng: &mut R) -> Vector3<f64> {
    unit_vector(rng) * d_max * rng.random::<f64>().cbrt()
}

/// Antenna positions realizing a singular configuration exactly. Lever arms
/// are not used; odometry noise and range noise follow `cfg`.
pub fn singular_scenario<R: Rng + ?Sized>(
    kind: SingularKind,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<(Transform4DoF<f64>, SyncedDataset<f64>)> {
    let truth = sample_ground_truth(cfg.d0, rng);
    let ct = truth.rotation().transpose();
    let n = cfg.n_poses;
    let d = cfg.d_max;
    let positions: Vec<(Vector3<f64>, Vector3<f64>)> = match kind {
        SingularKind::Parallel => (0..n)
            .map(|i| {
                let pa = if i == 0 {
                    Vector3::zeros()
                } else {
                    random_in_ball(d, rng)
                };
                // Target world position pa + t, so every relative vector is t.
                (pa, ct * pa)
            })
            .collect(),
        SingularKind::PlanarLinear => {
            let t_hat = truth.t / truth.t.norm();
            let mut v = unit_vector(rng);
            v -= t_hat * t_hat.dot(&v);
            let v = v.normalize();
            let dir = |phi: f64| t_hat * phi.cos() + v * phi.sin();
            let a = dir(uniform_heading(rng));
            let b = dir(uniform_heading(rng));
            (0..n)
                .map(|i| {
                    let (s, r) = if i == 0 {
                        (0.0, 0.0)
                    } else {
                        (rng.random_range(-d..=d), rng.random_range(-d..=d))
                    };
                    (a * s, ct * (b * r))
                })
                .collect()
        }
        SingularKind::StaticTarget => (0..n)
            .map(|i| {
                (
                    if i == 0 {
                        Vector3::zeros()
                    } else {
                        random_in_ball(d, rng)
                    },
                    Vector3::zeros(),
                )
            })
            .collect(),
        SingularKind::StaticHost => (0..n)
            .map(|i| {
                (
                    Vector3::zeros(),
                    if i == 0 {
                        Vector3::zeros()
                    } else {
                        random_in_ball(d, rng)
                    },
                )
            })
            .collect(),
    };
    let traj = |sel: fn(&(Vector3<f64>, Vector3<f64>)) -> Vector3<f64>| -> Vec<Pose<f64>> {
        positions
            .iter()
            .enumerate()
            .map(|(i, p)| Pose::from_yaw(i as f64, sel(p), 0.0))
            .collect()
    };
    let traj_a = traj(|p| p.0);
    let traj_b = traj(|p| p.1);
    let plain = ScenarioConfig {
        lever_arms: (LeverArm::zero(), LeverArm::zero()),
        ..*cfg
    };
    let ds = synthesize_measurements(&truth, &traj_a, &traj_b, &plain, rng)?;
    Ok((truth, ds))
}

/// Outcome of one Monte-Carlo trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: usize,
    pub truth: Transform4DoF<f64>,
    pub e_t: Option<f64>,
    pub e_theta: Option<f64>,
    /// Bounds at the truth and the noise-free positions; absent when the
    /// information matrix is singular or the scenario is noise-free.
    pub crlb_t: Option<f64>,
    pub crlb_theta: Option<f64>,
    pub solve_ms: f64,
    pub error: Option<String>,
    pub report: Option<EstimateReport<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorStats {
    pub e_t: Vec<f64>,
    pub e_theta: Vec<f64>,
    pub rmse_t: f64,
    pub rmse_theta: f64,
    pub mse_t: f64,
    pub mse_theta: f64,
    pub crlb_t_mean: Option<f64>,
    pub crlb_theta_mean: Option<f64>,
    pub trials: usize,
    pub failures: usize,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl ErrorStats {
    /// Aggregates successful trials; failures are counted, not averaged.
    pub fn from_outcomes(outcomes: &[TrialOutcome]) -> Self {
        let ok: Vec<&TrialOutcome> = outcomes.iter().filter(|o| o.error.is_none()).collect();
        let e_t: Vec<f64> = ok.iter().filter_map(|o| o.e_t).collect();
        let e_theta: Vec<f64> = ok.iter().filter_map(|o| o.e_theta).collect();
        let sq = |v: &[f64]| v.iter().map(|e| e * e).collect::<Vec<_>>();
        let mse_t = mean(&sq(&e_t)).unwrap_or(f64::NAN);
        let mse_theta = mean(&sq(&e_theta)).unwrap_or(f64::NAN);
        let crlb_t: Vec<f64> = outcomes.iter().filter_map(|o| o.crlb_t).collect();
        let crlb_theta: Vec<f64> = outcomes.iter().filter_map(|o| o.crlb_theta).collect();
        Self {
            rmse_t: mse_t.sqrt(),
            rmse_theta: mse_theta.sqrt(),
            mse_t,
            mse_theta,
            crlb_t_mean: mean(&crlb_t),
            crlb_theta_mean: mean(&crlb_theta),
            trials: outcomes.len(),
            failures: outcomes.len() - ok.len(),
            e_t,
            e_theta,
        }
    }
}

fn run_trial(cfg: &ScenarioConfig, index: usize, kind: EstimatorKind, opts: &EstimatorOptions<f64>) -> TrialOutcome {
    let mut out = TrialOutcome {
        trial: index,
        truth: Transform4DoF::identity(),
        e_t: None,
        e_theta: None,
        crlb_t: None,
        crlb_theta: None,
        solve_ms: 0.0,
        error: None,
        report: None,
    };
    let trial = match simulate_trial(cfg, index) {
        Ok(t) => t,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.truth = trial.truth;
    if cfg.sigma_r > 0.0 {
        let clean =
            clean_dataset(&trial.truth, &trial.traj_a, &trial.traj_b, cfg).and_then(|ds| fim(&trial.truth, &ds));
        if let Ok(r) = clean {
            out.crlb_t = r.crlb_t;
            out.crlb_theta = r.crlb_theta;
        }
    }
    let start = Instant::now();
    let res = estimate(kind, &trial.dataset, None, opts);
    out.solve_ms = start.elapsed().as_secs_f64() * 1e3;
    match res {
        Ok(r) => {
            out.e_t = Some((r.theta_hat.t - trial.truth.t).norm());
            out.e_theta = Some(angle_distance(r.theta_hat.theta, trial.truth.theta));
            out.report = Some(r);
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

/// Per-trial outcomes in trial order plus their aggregate.
#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub outcomes: Vec<TrialOutcome>,
    pub stats: ErrorStats,
}

/// Runs `cfg.trials` independent trials in parallel.
pub fn monte_carlo_run(
    cfg: &ScenarioConfig,
    kind: EstimatorKind,
    opts: &EstimatorOptions<f64>,
) -> Result<MonteCarloResult> {
    cfg.validate()?;
    let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, i, kind, opts))
        .collect();
    let stats = ErrorStats::from_outcomes(&outcomes);
    Ok(MonteCarloResult { outcomes, stats })
}

/// Stream, truth and alignment errors of one drift run.
#[derive(Debug, Clone)]
pub struct DriftResult {
    pub stream: SyncedDataset<f64>,
    /// Drift-free transform at the start; the no-correction baseline.
    pub initial: Transform4DoF<f64>,
    /// Drifting true transform per sample.
    pub truth: Vec<Transform4DoF<f64>>,
    pub windows: Vec<WindowEstimate<f64>>,
    pub err_corrected: Vec<f64>,
    pub err_nc: Vec<f64>,
    pub rmse_corrected: f64,
    pub rmse_nc: f64,
}

fn host_path(tau: f64) -> Vector3<f64> {
    let w = |p: f64| 2.0 * std::f64::consts::PI * tau / p;
    Vector3::new(6.0 * (w(3.0) + 0.5).sin(), 6.0 * w(4.0).cos(), 6.0 * w(5.0).sin())
}

fn target_path(tau: f64) -> Vector3<f64> {
    let w = |p: f64| 2.0 * std::f64::consts::PI * tau / p;
    Vector3::new(
        6.0 * w(3.5).sin(),
        6.0 * (w(4.5) + 1.0).sin(),
        6.0 * (w(5.5) + 2.0).sin(),
    )
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|e| e * e).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// Two agents sweeping sinuous paths while the target odometry frame drifts
/// as a random walk. The host frame is exact. The target reports its
/// position in its drifting frame; sliding-window estimates re-align it.
pub fn drift_scenario(cfg: &ScenarioConfig, kind: EstimatorKind, opts: &EstimatorOptions<f64>) -> Result<DriftResult> {
    drift_realization(cfg, kind, opts, 0)
}

/// One drift scenario drawn from RNG stream `realization` of `cfg.seed`.
pub fn drift_realization(
    cfg: &ScenarioConfig,
    kind: EstimatorKind,
    opts: &EstimatorOptions<f64>,
    realization: u64,
) -> Result<DriftResult> {
    cfg.validate()?;
    let drift = cfg
        .drift
        .ok_or_else(|| Error::InvalidInput("drift scenario needs a drift configuration".into()))?;
    let mut rng = trial_rng(cfg.seed, realization);
    let initial = sample_ground_truth(cfg.d0, &mut rng);
    let dt = 1.0 / drift.rate_hz;
    let n = (drift.duration * drift.rate_hz).round() as usize;
    let step_t = normal(drift.sigma_t * dt.sqrt());
    let step_theta = normal(drift.sigma_theta * dt.sqrt());
    let range_noise = normal(cfg.sigma_r);
    let odom_noise = normal(cfg.sigma_o);

    let mut truth = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    let mut world_target = Vec::with_capacity(n);
    let mut offset = Vector4::<f64>::zeros();
    for k in 0..n {
        let t = k as f64 * dt;
        let tau = match drift.hover {
            Some((a, b)) if t >= b => t - (b - a),
            Some((a, _)) if t >= a => a,
            _ => t,
        };
        if k > 0 {
            offset += Vector4::new(
                step_t.sample(&mut rng),
                step_t.sample(&mut rng),
                step_t.sample(&mut rng),
                step_theta.sample(&mut rng),
            );
        }
        let tk = Transform4DoF::new(initial.t + offset.xyz(), initial.theta + offset[3]);
        let pa = host_path(tau);
        let p_world = initial.apply(&target_path(tau));
        let pb = tk.rotation().transpose() * (p_world - tk.t);
        let d = ((p_world - pa).norm() + range_noise.sample(&mut rng)).abs();
        samples.push(SyncedSample {
            t,
            d,
            pa: pa + Vector3::from_fn(|_, _| odom_noise.sample(&mut rng)),
            pb: pb + Vector3::from_fn(|_, _| odom_noise.sample(&mut rng)),
        });
        truth.push(tk);
        world_target.push(p_world);
    }
    let stream = SyncedDataset::new(samples, cfg.weighting_sigma(), None)?.with_noise_free(cfg.sigma_r == 0.0);
    let wopts = WindowOptions {
        window: drift.window,
        stride: drift.stride,
        estimator: kind,
        ..WindowOptions::default()
    };
    let windows = sliding_window_estimate(&stream, &wopts, opts)?;
    let aligned = align_trajectory(&stream, &windows, Some(initial));
    let err_corrected: Vec<f64> = aligned
        .iter()
        .zip(&world_target)
        .map(|(p, w)| (p.expect("initial transform supplied") - w).norm())
        .collect();
    let err_nc: Vec<f64> = stream
        .samples
        .iter()
        .zip(&world_target)
        .map(|(s, w)| (initial.apply(&s.pb) - w).norm())
        .collect();
    Ok(DriftResult {
        rmse_corrected: rms(&err_corrected),
        rmse_nc: rms(&err_nc),
        stream,
        initial,
        truth,
        windows,
        err_corrected,
        err_nc,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftRun {
    pub realization: u64,
    pub rmse_corrected: f64,
    pub rmse_nc: f64,
    pub windows: usize,
    pub skipped_windows: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftSummary {
    pub runs: Vec<DriftRun>,
    /// RMSE over all samples of all realizations.
    pub rmse_corrected: f64,
    pub rmse_nc: f64,
    #[serde(skip)]
    pub results: Vec<DriftResult>,
}

/// Repeats the drift scenario over independent drift realizations and pools
/// the errors.
pub fn drift_monte_carlo(
    cfg: &ScenarioConfig,
    kind: EstimatorKind,
    opts: &EstimatorOptions<f64>,
    realizations: u64,
) -> Result<DriftSummary> {
    if realizations == 0 {
        return Err(Error::InvalidInput("need at least one drift realization".into()));
    }
    let results: Vec<DriftResult> = (0..realizations)
        .into_par_iter()
        .map(|r| drift_realization(cfg, kind, opts, r))
        .collect::<Result<_>>()?;
    let pooled = |f: fn(&DriftResult) -> &Vec<f64>| {
        let all: Vec<f64> = results.iter().flat_map(|r| f(r).iter().copied()).collect();
        rms(&all)
    };
    Ok(DriftSummary {
        rmse_corrected: pooled(|r| &r.err_corrected),
        rmse_nc: pooled(|r| &r.err_nc),
        runs: results
            .iter()
            .enumerate()
            .map(|(i, r)| DriftRun {
                realization: i as u64,
                rmse_corrected: r.rmse_corrected,
                rmse_nc: r.rmse_nc,
                windows: r.windows.len(),
                skipped_windows: r.windows.iter().filter(|w| w.skipped).count(),
            })
            .collect(),
        results,
    })
}
