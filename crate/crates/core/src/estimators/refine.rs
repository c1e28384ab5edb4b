use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Transform4DoF;
use crate::measurement::SyncedDataset;
use crate::num::Real;
use crate::solvers::{lm_minimize, LmResult};

use super::lift::QcqpProblem;
use super::relax::sdp_point;
use super::{finish_report, EstimateReport, EstimatorKind, EstimatorOptions, SolverDiagnostics};

/// `sum_i w_i (|t + C pb_i - pa_i|^2 - s_i)^2`, equal to `x^T P0 x` at the
/// lifted transform.
pub(crate) fn weighted_cost<T: Real>(problem: &QcqpProblem<T>, ds: &SyncedDataset<T>, tf: &Transform4DoF<T>) -> T {
    let c = tf.rotation();
    ds.samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let w = tf.t + c * s.pb - s.pa;
            let r = w.norm_squared() - problem.s[i];
            problem.weights[i] * r * r
        })
        .fold(T::ZERO, |a, v| a + v)
}

/// How the translation is parameterized during refinement.
#[derive(Clone, Copy)]
enum Param<T: Real> {
    Free,
    /// `t = d0 R [cos a cos b, sin a cos b, sin b]`, `R` chosen so the start
    /// sits at `a = b = 0`.
    Sphere {
        d0: T,
        basis: Matrix3<T>,
    },
}

impl<T: Real> Param<T> {
    fn for_start(d0: Option<T>, t: &Vector3<T>) -> Self {
        match d0 {
            None => Self::Free,
            Some(d0) => {
                let e1 = if t.norm() > T::ZERO {
                    t.normalize()
                } else {
                    Vector3::x()
                };
                let helper = if e1.x.abs() < T::lit(0.9) {
                    Vector3::x()
                } else {
                    Vector3::y()
                };
                let e2 = e1.cross(&helper).normalize();
                let e3 = e1.cross(&e2);
                Self::Sphere {
                    d0,
                    basis: Matrix3::from_columns(&[e1, e2, e3]),
                }
            }
        }
    }

    fn initial(&self, tf: &Transform4DoF<T>) -> DVector<T> {
        match self {
            Self::Free => DVector::from_column_slice(&tf.params()),
            Self::Sphere { .. } => DVector::from_column_slice(&[T::ZERO, T::ZERO, tf.theta]),
        }
    }

    /// Translation, its Jacobian with respect to the translational
    /// parameters, and the heading.
    fn decode(&self, x: &DVector<T>) -> (Vector3<T>, DMatrix<T>, T) {
        match *self {
            Self::Free => (Vector3::new(x[0], x[1], x[2]), DMatrix::identity(3, 3), x[3]),
            Self::Sphere { d0, basis } => {
                let (sa, ca) = x[0].sin_cos();
                let (sb, cb) = x[1].sin_cos();
                let dir = Vector3::new(ca * cb, sa * cb, sb);
                let da = Vector3::new(-sa * cb, ca * cb, T::ZERO);
                let db = Vector3::new(-ca * sb, -sa * sb, cb);
                let t = basis * dir * d0;
                let mut j = DMatrix::zeros(3, 2);
                j.set_column(0, &(basis * da * d0));
                j.set_column(1, &(basis * db * d0));
                (t, j, x[2])
            }
        }
    }

    fn transform(&self, x: &DVector<T>) -> Transform4DoF<T> {
        let (t, _, theta) = self.decode(x);
        Transform4DoF::new(t, theta)
    }
}

fn refine_from<T: Real>(
    problem: &QcqpProblem<T>,
    ds: &SyncedDataset<T>,
    start: &Transform4DoF<T>,
    opts: &EstimatorOptions<T>,
) -> Result<(Transform4DoF<T>, LmResult<T>)> {
    let param = Param::for_start(problem.d0, &start.t);
    let sqrt_w: Vec<T> = problem.weights.iter().map(|w| w.sqrt()).collect();
    let k = ds.len();
    let residuals = |x: &DVector<T>| {
        let (t, _, theta) = param.decode(x);
        let c = crate::geometry::heading_rotation(theta);
        DVector::from_iterator(
            k,
            ds.samples.iter().enumerate().map(|(i, s)| {
                let w = t + c * s.pb - s.pa;
                sqrt_w[i] * (w.norm_squared() - problem.s[i])
            }),
        )
    };
    let jacobian = |x: &DVector<T>| {
        let (t, jt, theta) = param.decode(x);
        let c = crate::geometry::heading_rotation(theta);
        let nt = jt.ncols();
        let mut j = DMatrix::zeros(k, nt + 1);
        for (i, s) in ds.samples.iter().enumerate() {
            let cpb = c * s.pb;
            let w = t + cpb - s.pa;
            let g = w * (T::TWO * sqrt_w[i]);
            let row_t = jt.transpose() * &g;
            for col in 0..nt {
                j[(i, col)] = row_t[col];
            }
            j[(i, nt)] = g.dot(&Vector3::z().cross(&cpb));
        }
        j
    };
    let lm = lm_minimize(residuals, jacobian, param.initial(start), &opts.lm)?;
    Ok((param.transform(&lm.x), lm))
}

fn random_start<T: Real>(rng: &mut ChaCha8Rng, radius: T) -> Transform4DoF<T> {
    let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
    let dir = v / v.norm();
    let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    Transform4DoF::new(dir.map(T::lit) * radius, T::lit(theta))
}

/// Constrained minimization of the lifted cost from an SDP warm start plus
/// deterministic random restarts.
pub fn solve_qcqp<T: Real>(
    problem: &QcqpProblem<T>,
    ds: &SyncedDataset<T>,
    opts: &EstimatorOptions<T>,
) -> Result<EstimateReport<T>> {
    solve_qcqp_warm(problem, ds, None, opts)
}

/// As [`solve_qcqp`], with an extra start at `warm`.
pub fn solve_qcqp_warm<T: Real>(
    problem: &QcqpProblem<T>,
    ds: &SyncedDataset<T>,
    warm: Option<Transform4DoF<T>>,
    opts: &EstimatorOptions<T>,
) -> Result<EstimateReport<T>> {
    let timer = Instant::now();
    if ds.len() != problem.s.len() {
        return Err(Error::InvalidInput("problem and dataset sizes differ".into()));
    }
    let project = |tf: Transform4DoF<T>| match problem.d0 {
        Some(d0) => {
            let n = tf.t.norm();
            let t = if n > T::ZERO {
                tf.t * (d0 / n)
            } else {
                Vector3::x() * d0
            };
            Transform4DoF::new(t, tf.theta)
        }
        None => tf,
    };

    let sdp = sdp_point(problem, &opts.sdp);
    let mut starts = Vec::with_capacity(opts.restarts + 1);
    if let Some(w) = warm {
        starts.push(project(w));
    }
    if let Ok(p) = &sdp {
        let s = project(p.transform);
        starts.push(s);
        let mut mirror = s;
        mirror.t.z = -mirror.t.z;
        starts.push(mirror);
    }
    let radius = problem.d0.unwrap_or_else(|| {
        let k = T::from_usize(problem.s.len()).unwrap();
        (problem.s.iter().fold(T::ZERO, |a, v| a + v.max(T::ZERO)) / k).sqrt()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n_random = opts.restarts.saturating_sub(if sdp.is_ok() { 2 } else { 0 });
    for _ in 0..n_random {
        starts.push(random_start(&mut rng, radius));
    }

    let results: Vec<Option<(Transform4DoF<T>, LmResult<T>, T)>> = starts
        .par_iter()
        .map(|s| {
            refine_from(problem, ds, s, opts).ok().map(|(tf, lm)| {
                let cost = weighted_cost(problem, ds, &tf);
                (tf, lm, cost)
            })
        })
        .collect();

    let mut best: Option<(usize, &(Transform4DoF<T>, LmResult<T>, T))> = None;
    for (i, r) in results.iter().enumerate() {
        if let Some(r) = r {
            if !r.2.is_finite_val() || !r.0.is_finite() {
                continue;
            }
            if best.is_none_or(|(_, b)| r.2 < b.2) {
                best = Some((i, r));
            }
        }
    }
    let Some((idx, (tf, lm, cost))) = best else {
        return Err(Error::AllRestartsFailed(starts.len()));
    };

    let (gap, rank, ratio, hres) = match &sdp {
        Ok(p) => (
            Some(p.diagnostics.gap),
            Some(p.rank),
            Some(p.eig_ratio.to_f64_lossy()),
            Some(p.heading_residual.to_f64_lossy()),
        ),
        Err(_) => (None, None, None, None),
    };
    let mut status = format!("{:?}", lm.status).to_lowercase();
    if let Err(e) = &sdp {
        status.push_str(&format!("; warm start unavailable: {e}"));
    }
    let solver = SolverDiagnostics {
        converged: lm.status.converged(),
        status,
        iterations: lm.iterations,
        final_cost: cost.to_f64_lossy(),
        duality_gap: gap,
        sdp_rank: rank,
        eig_ratio: ratio,
        heading_renorm_residual: hres,
        restarts: Some(starts.len()),
        best_restart: Some(idx),
        wall_ms: timer.elapsed().as_secs_f64() * 1e3,
    };
    Ok(finish_report(
        EstimatorKind::Qcqp,
        *tf,
        ds,
        solver,
        opts.kappa_threshold,
    ))
}
