//! Log file formats, run configuration and report emission.
//!
//! Odometry CSV: `t,px,py,pz,qx,qy,qz,qw` (seconds, meters, quaternion
//! scalar-last). Range CSV: `t,d`. Floats are written in shortest
//! round-trip form so a log read back is bit-identical to the one written.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Quaternion, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{EstimateReport, EstimatorKind, EstimatorOptions, SolverDiagnostics};
use crate::fisher::{Interval, SingularityFlags, DEFAULT_KAPPA_THRESHOLD};
use crate::geometry::{LeverArm, Pose, Transform4DoF};
use crate::measurement::{OutlierMode, RangeSample};
use crate::simulation::{DriftConfig, ScenarioConfig};

pub const ODOMETRY_HEADER: [&str; 8] = ["t", "px", "py", "pz", "qx", "qy", "qz", "qw"];
pub const RANGE_HEADER: [&str; 2] = ["t", "d"];

fn parse_field(field: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: column '{column}' is not a number: '{field}'")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("line {line}: column '{column}' is not finite")));
    }
    Ok(v)
}

fn read_table<R: Read>(reader: R, header: &[&str]) -> Result<Vec<(u64, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let found: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if found != header {
        return Err(Error::Parse(format!(
            "expected header '{}', found '{}'",
            header.join(","),
            found.join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let vals = rec
            .iter()
            .zip(header)
            .map(|(f, c)| parse_field(f, line, c))
            .collect::<Result<Vec<_>>>()?;
        rows.push((line, vals));
    }
    Ok(rows)
}

fn write_table<W: Write>(writer: W, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_odometry<R: Read>(reader: R) -> Result<Vec<Pose<f64>>> {
    read_table(reader, &ODOMETRY_HEADER)?
        .into_iter()
        .map(|(line, v)| {
            Pose::new(
                v[0],
                Vector3::new(v[1], v[2], v[3]),
                Quaternion::new(v[7], v[4], v[5], v[6]),
            )
            .map_err(|e| Error::Parse(format!("line {line}: {e}")))
        })
        .collect()
}

pub fn write_odometry<W: Write>(writer: W, poses: &[Pose<f64>]) -> Result<()> {
    let rows = poses.iter().map(|p| {
        let q = p.q.quaternion();
        vec![p.t, p.p.x, p.p.y, p.p.z, q.i, q.j, q.k, q.w]
    });
    write_table(writer, &ODOMETRY_HEADER, rows)
}

pub fn read_ranges<R: Read>(reader: R) -> Result<Vec<RangeSample<f64>>> {
    read_table(reader, &RANGE_HEADER)?
        .into_iter()
        .map(|(line, v)| {
            if v[1] <= 0.0 {
                return Err(Error::Parse(format!("line {line}: range must be positive")));
            }
            Ok(RangeSample { t: v[0], d: v[1] })
        })
        .collect()
}

pub fn write_ranges<W: Write>(writer: W, ranges: &[RangeSample<f64>]) -> Result<()> {
    write_table(writer, &RANGE_HEADER, ranges.iter().map(|r| vec![r.t, r.d]))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::Parse(format!("cannot open {}: {e}", path.display())))
}

pub fn read_odometry_csv(path: &Path) -> Result<Vec<Pose<f64>>> {
    read_odometry(open(path)?)
}

pub fn read_ranges_csv(path: &Path) -> Result<Vec<RangeSample<f64>>> {
    read_ranges(open(path)?)
}

pub fn write_odometry_csv(path: &Path, poses: &[Pose<f64>]) -> Result<()> {
    let mut buf = Vec::new();
    write_odometry(&mut buf, poses)?;
    write_atomic(path, &buf)
}

pub fn write_ranges_csv(path: &Path, ranges: &[RangeSample<f64>]) -> Result<()> {
    let mut buf = Vec::new();
    write_ranges(&mut buf, ranges)?;
    write_atomic(path, &buf)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json_atomic<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

// ---------------------------------------------------------------------------
// Configuration

fn default_estimator() -> EstimatorKind {
    EstimatorKind::Qcqp
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(default = "d::d0")]
    pub d0_m: f64,
    #[serde(default = "d::d_max")]
    pub d_max_m: f64,
    #[serde(default = "d::n_poses")]
    pub n_poses: usize,
    #[serde(default = "d::sigma_r")]
    pub sigma_r_m: f64,
    #[serde(default = "d::sigma_o")]
    pub sigma_o_m: f64,
    #[serde(default = "d::trials")]
    pub trials: usize,
    #[serde(default)]
    pub lever_arm_a_m: [f64; 3],
    #[serde(default)]
    pub lever_arm_b_m: [f64; 3],
    /// Pass the noisy first inter-origin distance to the estimators.
    #[serde(default = "default_true")]
    pub use_d0: bool,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

mod d {
    pub fn d0() -> f64 {
        3.0
    }
    pub fn d_max() -> f64 {
        1.0
    }
    pub fn n_poses() -> usize {
        20
    }
    pub fn sigma_r() -> f64 {
        0.1
    }
    pub fn sigma_o() -> f64 {
        0.001
    }
    pub fn trials() -> usize {
        100
    }
    pub fn duration() -> f64 {
        600.0
    }
    pub fn rate() -> f64 {
        10.0
    }
    pub fn window() -> usize {
        50
    }
    pub fn stride() -> usize {
        10
    }
    pub fn one() -> u64 {
        1
    }
    pub fn outlier_k() -> usize {
        20
    }
    pub fn outlier_threshold() -> f64 {
        0.005
    }
    pub fn kappa() -> f64 {
        super::DEFAULT_KAPPA_THRESHOLD
    }
    pub fn excitation_var() -> f64 {
        0.05
    }
    pub fn excitation_n() -> usize {
        50
    }
    pub fn restarts() -> usize {
        8
    }
}

/// One cell of a parameter sweep; unset fields keep the scenario value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    pub d0_m: Option<f64>,
    pub d_max_m: Option<f64>,
    pub sigma_r_m: Option<f64>,
    pub sigma_o_m: Option<f64>,
    pub n_poses: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub sigma_t_m: f64,
    /// Heading random-walk std; give exactly one of the two units.
    pub sigma_theta_rad: Option<f64>,
    pub sigma_theta_deg: Option<f64>,
    #[serde(default = "d::duration")]
    pub duration_s: f64,
    #[serde(default = "d::rate")]
    pub rate_hz: f64,
    #[serde(default = "d::window")]
    pub window: usize,
    #[serde(default = "d::stride")]
    pub stride: usize,
    pub hover_s: Option<[f64; 2]>,
    #[serde(default = "d::one")]
    pub realizations: u64,
}

impl DriftSection {
    pub fn sigma_theta(&self) -> Result<f64> {
        match (self.sigma_theta_rad, self.sigma_theta_deg) {
            (Some(r), None) => Ok(r),
            (None, Some(g)) => Ok(g.to_radians()),
            _ => Err(Error::InvalidInput(
                "drift needs exactly one of sigma_theta_rad and sigma_theta_deg".into(),
            )),
        }
    }

    pub fn to_drift_config(&self) -> Result<DriftConfig> {
        Ok(DriftConfig {
            sigma_t: self.sigma_t_m,
            sigma_theta: self.sigma_theta()?,
            duration: self.duration_s,
            rate_hz: self.rate_hz,
            window: self.window,
            stride: self.stride,
            hover: self.hover_s.map(|[a, b]| (a, b)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformJson {
    pub t_m: [f64; 3],
    pub theta_rad: f64,
}

impl From<Transform4DoF<f64>> for TransformJson {
    fn from(tf: Transform4DoF<f64>) -> Self {
        Self {
            t_m: [tf.t.x, tf.t.y, tf.t.z],
            theta_rad: tf.theta,
        }
    }
}

impl From<TransformJson> for Transform4DoF<f64> {
    fn from(j: TransformJson) -> Self {
        Transform4DoF::new(Vector3::from(j.t_m), j.theta_rad)
    }
}

/// Log files for `estimate` (and `fim` on recorded data). Relative paths are
/// resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub odom_a: PathBuf,
    pub odom_b: PathBuf,
    pub ranges: PathBuf,
    /// Range noise std; 0 marks exact ranges.
    #[serde(default = "d::sigma_r")]
    pub sigma_r_m: f64,
    /// Measured first inter-origin distance, used as a constraint when set.
    pub d0_measured_m: Option<f64>,
    #[serde(default)]
    pub lever_arm_a_m: [f64; 3],
    #[serde(default)]
    pub lever_arm_b_m: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FimSection {
    /// `random` or one of the singular scenario names.
    #[serde(default = "FimSection::default_scenario")]
    pub scenario: String,
    #[serde(default)]
    pub trial: usize,
    /// Point at which to evaluate; defaults to the truth (scenarios) or the
    /// estimate (logs).
    pub theta: Option<TransformJson>,
    /// Subset draws for the determinant beyond the exhaustive limit.
    #[serde(default = "FimSection::default_sets")]
    pub det_subsets: usize,
}

impl FimSection {
    fn default_scenario() -> String {
        "random".into()
    }
    fn default_sets() -> usize {
        20_000
    }
}

impl Default for FimSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Off by default: a moving agent's range varies faster than a
    /// stationary-noise threshold allows.
    #[serde(default)]
    pub outlier_filter: bool,
    #[serde(default = "d::outlier_k")]
    pub outlier_k: usize,
    #[serde(default = "d::outlier_threshold")]
    pub outlier_threshold_m2: f64,
    #[serde(default)]
    pub outlier_mode: OutlierMode,
    #[serde(default = "d::kappa")]
    pub kappa_threshold: f64,
    #[serde(default = "default_true")]
    pub excitation_check: bool,
    #[serde(default = "d::excitation_var")]
    pub excitation_variance_m2: f64,
    #[serde(default = "d::excitation_n")]
    pub excitation_n: usize,
    #[serde(default = "d::restarts")]
    pub qcqp_restarts: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; `--out` overrides it.
    pub dir: Option<PathBuf>,
    /// Write the noisy logs of every simulated trial, with a ready-to-run
    /// `estimate` config.
    #[serde(default)]
    pub emit_logs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorKind,
    /// Estimators compared by `simulate`; defaults to `[estimator]`.
    pub estimators: Option<Vec<EstimatorKind>>,
    #[serde(default)]
    pub scenario: ScenarioSection,
    pub sweep: Option<Vec<SweepPoint>>,
    pub drift: Option<DriftSection>,
    pub inputs: Option<InputSection>,
    #[serde(default)]
    pub fim: FimSection,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        Ok(cfg)
    }

    /// Reads a config and resolves its relative input paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(inputs), Some(base)) = (cfg.inputs.as_mut(), path.parent()) {
            for p in [&mut inputs.odom_a, &mut inputs.odom_b, &mut inputs.ranges] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn estimator_list(&self) -> Vec<EstimatorKind> {
        self.estimators.clone().unwrap_or_else(|| vec![self.estimator])
    }

    pub fn estimator_options(&self) -> EstimatorOptions<f64> {
        EstimatorOptions {
            restarts: self.thresholds.qcqp_restarts,
            kappa_threshold: self.thresholds.kappa_threshold,
            ..EstimatorOptions::default()
        }
    }

    pub fn scenario_config(&self) -> Result<ScenarioConfig> {
        let s = &self.scenario;
        let cfg = ScenarioConfig {
            d0: s.d0_m,
            d_max: s.d_max_m,
            n_poses: s.n_poses,
            sigma_r: s.sigma_r_m,
            sigma_o: s.sigma_o_m,
            trials: s.trials,
            seed: self.seed,
            lever_arms: (
                LeverArm::new(Vector3::from(s.lever_arm_a_m)),
                LeverArm::new(Vector3::from(s.lever_arm_b_m)),
            ),
            use_d0: s.use_d0,
            drift: self.drift.as_ref().map(|d| d.to_drift_config()).transpose()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// One scenario per sweep cell, or the base scenario when there is no
    /// sweep.
    pub fn sweep_configs(&self) -> Result<Vec<ScenarioConfig>> {
        let base = self.scenario_config()?;
        let Some(points) = &self.sweep else {
            return Ok(vec![base]);
        };
        if points.is_empty() {
            return Err(Error::InvalidInput("sweep must list at least one cell".into()));
        }
        points
            .iter()
            .map(|p| {
                let cfg = ScenarioConfig {
                    d0: p.d0_m.unwrap_or(base.d0),
                    d_max: p.d_max_m.unwrap_or(base.d_max),
                    sigma_r: p.sigma_r_m.unwrap_or(base.sigma_r),
                    sigma_o: p.sigma_o_m.unwrap_or(base.sigma_o),
                    n_poses: p.n_poses.unwrap_or(base.n_poses),
                    ..base
                };
                cfg.validate()?;
                Ok(cfg)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Reports

/// Reproducibility stamp carried by every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool_version: &'static str,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn of(cfg: &RunConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            config_sha256: cfg.hash(),
            seed: cfg.seed,
        }
    }
}

pub fn matrix_rows(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateJson {
    pub estimator: EstimatorKind,
    pub theta_hat: TransformJson,
    /// `[t_x, t_y, t_z, theta]`; absent when the information matrix is singular.
    pub std_errors: Option<[f64; 4]>,
    pub confidence_95: Option<[Interval<f64>; 4]>,
    pub kappa: f64,
    pub flags: SingularityFlags,
    pub fim: [[f64; 4]; 4],
    pub solver: SolverDiagnostics,
}

impl From<&EstimateReport<f64>> for EstimateJson {
    fn from(r: &EstimateReport<f64>) -> Self {
        Self {
            estimator: r.estimator,
            theta_hat: r.theta_hat.into(),
            std_errors: r.std_errors,
            confidence_95: crate::fisher::confidence_intervals(&r.theta_hat, &r.fim).ok(),
            kappa: r.kappa,
            flags: r.flags,
            fim: matrix_rows(&r.fim),
            solver: r.solver.clone(),
        }
    }
}

/// Per-trial CSV rows, without timing so that reruns are byte-identical.
pub const RESULTS_HEADER: [&str; 10] = [
    "cell",
    "estimator",
    "trial",
    "d0_m",
    "d_max_m",
    "e_t_m",
    "e_theta_rad",
    "crlb_t_m2",
    "crlb_theta_rad2",
    "status",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub cell: usize,
    pub estimator: EstimatorKind,
    pub trial: usize,
    pub d0: f64,
    pub d_max: f64,
    pub e_t: Option<f64>,
    pub e_theta: Option<f64>,
    pub crlb_t: Option<f64>,
    pub crlb_theta: Option<f64>,
    /// `ok` or the error message.
    pub status: String,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn results_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.cell.to_string(),
            r.estimator.to_string(),
            r.trial.to_string(),
            r.d0.to_string(),
            r.d_max.to_string(),
            opt(r.e_t),
            opt(r.e_theta),
            opt(r.crlb_t),
            opt(r.crlb_theta),
            r.status.clone(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub const TIMINGS_HEADER: [&str; 4] = ["cell", "estimator", "trial", "solve_ms"];

pub fn timings_csv(rows: &[(usize, EstimatorKind, usize, f64)]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(TIMINGS_HEADER)?;
    for (cell, est, trial, ms) in rows {
        w.write_record([cell.to_string(), est.to_string(), trial.to_string(), ms.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}
