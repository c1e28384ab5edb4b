//! Relative-transform estimators: SDP relaxation, constrained QCQP refinement,
//! a range-domain NLS baseline and sliding-window drift tracking.

mod lift;
mod nls;
mod refine;
mod relax;
mod window;

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::{fim_report_from, singularity_report, spectral_inverse, SingularityFlags};
use crate::geometry::Transform4DoF;
use crate::measurement::SyncedDataset;
use crate::num::Real;
use crate::solvers::{LmOptions, SdpOptions};

pub use lift::{assemble_qcqp, build_data_row, constraint_matrices, LiftedState, Matrix9, QcqpProblem, Vector9};
pub use nls::nls_estimate;
pub use refine::{solve_qcqp, solve_qcqp_warm};
pub use relax::{extract_transform, recover_rank_one, sdp_estimate, solve_sdp_relaxation, Relaxation};
pub use window::{align_trajectory, sliding_window_estimate, WindowEstimate, WindowOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Qcqp,
    Sdp,
    Nls,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Qcqp => "qcqp",
            Self::Sdp => "sdp",
            Self::Nls => "nls",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qcqp" => Ok(Self::Qcqp),
            "sdp" => Ok(Self::Sdp),
            "nls" => Ok(Self::Nls),
            other => Err(Error::Parse(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EstimatorOptions<T: Real> {
    pub sdp: SdpOptions<T>,
    pub lm: LmOptions<T>,
    /// Number of refinement starts for the QCQP estimator.
    pub restarts: usize,
    /// Seed for the random refinement starts.
    pub seed: u64,
    pub kappa_threshold: T,
}

impl<T: Real> Default for EstimatorOptions<T> {
    fn default() -> Self {
        Self {
            sdp: SdpOptions::default(),
            lm: LmOptions::default(),
            restarts: 8,
            seed: 0x5eed,
            kappa_threshold: T::lit(crate::fisher::DEFAULT_KAPPA_THRESHOLD),
        }
    }
}

/// Solver-side details attached to every estimate.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolverDiagnostics {
    pub converged: bool,
    pub status: String,
    pub iterations: usize,
    /// Weighted squared-range cost for SDP/QCQP, `0.5 |e_r|^2 / sigma_r^2` for NLS.
    pub final_cost: f64,
    pub duality_gap: Option<f64>,
    /// Numerical rank of the relaxation solution.
    pub sdp_rank: Option<usize>,
    /// `lambda_2 / lambda_1` of the relaxation solution.
    pub eig_ratio: Option<f64>,
    /// `| |(x_4, x_5)| - 1 |` before heading renormalization.
    pub heading_renorm_residual: Option<f64>,
    pub restarts: Option<usize>,
    pub best_restart: Option<usize>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct EstimateReport<T: Real> {
    pub estimator: EstimatorKind,
    pub theta_hat: Transform4DoF<T>,
    /// Present iff the estimated information matrix is invertible.
    pub std_errors: Option<[T; 4]>,
    pub kappa: T,
    pub flags: SingularityFlags,
    pub fim: Matrix4<T>,
    pub solver: SolverDiagnostics,
}

/// Attaches the information-matrix based uncertainty at the estimate.
pub(crate) fn finish_report<T: Real>(
    estimator: EstimatorKind,
    theta_hat: Transform4DoF<T>,
    ds: &SyncedDataset<T>,
    solver: SolverDiagnostics,
    kappa_threshold: T,
) -> EstimateReport<T> {
    let f = match crate::fisher::fim(&theta_hat, ds) {
        Ok(r) => r.f,
        // A sample coincides with the estimate; no usable curvature.
        Err(_) => Matrix4::zeros(),
    };
    let report = fim_report_from(f);
    let spec = spectral_inverse(&f);
    let std_errors = (spec.rank == 4).then(|| std::array::from_fn(|i| spec.inverse[(i, i)].max(T::ZERO).sqrt()));
    EstimateReport {
        estimator,
        theta_hat,
        std_errors,
        kappa: report.kappa,
        flags: singularity_report(&f, kappa_threshold),
        fim: f,
        solver,
    }
}

/// Runs the chosen estimator. `init` is the NLS starting point and the
/// QCQP warm start; it defaults to the zero transform for NLS.
pub fn estimate<T: Real>(
    kind: EstimatorKind,
    ds: &SyncedDataset<T>,
    init: Option<Transform4DoF<T>>,
    opts: &EstimatorOptions<T>,
) -> Result<EstimateReport<T>> {
    match kind {
        EstimatorKind::Sdp => sdp_estimate(ds, opts),
        EstimatorKind::Qcqp => {
            let stats = crate::measurement::debias_squared(ds);
            let problem = assemble_qcqp(ds, &stats)?;
            solve_qcqp_warm(&problem, ds, init, opts)
        }
        EstimatorKind::Nls => nls_estimate(ds, init.unwrap_or_else(Transform4DoF::identity), opts),
    }
}
