use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::Transform4DoF;
use crate::measurement::{debias_squared, SyncedDataset};
use crate::num::Real;
use crate::solvers::{eig_sym, sdp_solve, SdpOptions, SdpStandardForm, SolveDiagnostics};

use super::lift::{assemble_qcqp, LiftedState, Matrix9, QcqpProblem, Vector9};
use super::refine::weighted_cost;
use super::{finish_report, EstimateReport, EstimatorKind, EstimatorOptions, SolverDiagnostics};

/// Solution of the semidefinite relaxation.
#[derive(Debug, Clone)]
pub struct Relaxation<T: Real> {
    /// Optimal `X`: the polished rank-one solution when available, else the
    /// interior-point iterate.
    pub x: Matrix9<T>,
    /// Final interior-point iterate.
    pub interior: Matrix9<T>,
    /// Rank-one factor refined against the optimality conditions, when the
    /// refinement converged and kept the dual certificate.
    pub polished: Option<LiftedState<T>>,
    pub diagnostics: SolveDiagnostics,
}

fn to_dmatrix<T: Real>(m: &Matrix9<T>) -> DMatrix<T> {
    DMatrix::from_iterator(9, 9, m.iter().copied())
}

fn amax_or_one<T: Real>(m: &Matrix9<T>) -> T {
    let a = m.amax();
    if a > T::ZERO {
        a
    } else {
        T::ONE
    }
}

/// Length scale used to balance the lifted variables.
fn length_scale<T: Real>(problem: &QcqpProblem<T>) -> T {
    if let Some(d0) = problem.d0 {
        return d0;
    }
    let k = T::from_usize(problem.s.len().max(1)).unwrap();
    let mean = problem.s.iter().fold(T::ZERO, |a, v| a + v.max(T::ZERO)) / k;
    if mean > T::ZERO {
        mean.sqrt()
    } else {
        T::ONE
    }
}

impl<T: Real> Relaxation<T> {
    /// The polished factor if available, else the leading factor of `X`.
    pub fn rank_one(&self) -> Result<LiftedState<T>> {
        match self.polished {
            Some(l) => Ok(l),
            None => recover_rank_one(&self.x),
        }
    }
}

/// Solves `min Tr(P0 X) s.t. Tr(P_i X) = r_i, X_99 = 1, X >= 0`.
///
/// The lifted variables are rescaled by a common length before solving and
/// every matrix is normalized to unit max entry; the returned `X` and the
/// objective values are in the original units.
pub fn solve_sdp_relaxation<T: Real>(problem: &QcqpProblem<T>, opts: &SdpOptions<T>) -> Result<Relaxation<T>> {
    let l = length_scale(problem);
    let scale = Vector9::from_column_slice(&[l, l, l, T::ONE, T::ONE, l, l, l * l, T::ONE]);
    let s = Matrix9::from_diagonal(&scale);
    let c = s * problem.p0 * s;
    let c_scale = amax_or_one(&c);
    let mut a = Vec::with_capacity(problem.constraints.len() + 1);
    let mut b = Vec::with_capacity(problem.constraints.len() + 1);
    for (p, r) in &problem.constraints {
        let m = s * p * s;
        let n = amax_or_one(&m);
        a.push(to_dmatrix(&(m / n)));
        b.push(*r / n);
    }
    let mut e99 = DMatrix::zeros(9, 9);
    e99[(8, 8)] = T::ONE;
    a.push(e99);
    b.push(T::ONE);
    let sdp = SdpStandardForm {
        c: to_dmatrix(&(c / c_scale)),
        a,
        b: DVector::from_vec(b),
    };
    let sol = sdp_solve(&sdp, opts)?;
    let xs = Matrix9::from_iterator(sol.x.iter().copied());
    let interior = s * xs * s;
    let interior = (interior + interior.transpose()) * T::HALF;
    let mut d = sol.diagnostics;
    let mut x = interior;
    let mut polished = None;
    if let Some((v, y)) = polish_rank_one(&sdp, &sol.x, &sol.y) {
        let v9 = s * Vector9::from_iterator(v.iter().copied());
        if v9[8] > T::ZERO {
            let vv = &v * v.transpose();
            let z = &sdp.c - sdp.apply_at(&y);
            let pobj = sdp.c.dot(&vv);
            let dobj = sdp.b.dot(&y);
            d.primal_obj = pobj.to_f64_lossy();
            d.dual_obj = dobj.to_f64_lossy();
            d.gap = (pobj - dobj).abs().to_f64_lossy();
            d.complementarity = z.dot(&vv).to_f64_lossy();
            d.primal_infeasibility = ((&sdp.b - sdp.apply_a(&vv)).norm() / (T::ONE + sdp.b.norm())).to_f64_lossy();
            d.dual_infeasibility = (-eig_sym(&z).min()).max(T::ZERO).to_f64_lossy();
            x = v9 * v9.transpose();
            polished = Some(LiftedState { x: v9 / v9[8] });
        }
    }
    let cs = c_scale.to_f64_lossy();
    d.primal_obj *= cs;
    d.dual_obj *= cs;
    d.gap *= cs;
    d.complementarity *= cs;
    Ok(Relaxation {
        x,
        interior,
        polished,
        diagnostics: d,
    })
}

/// Newton iterations on the rank-one optimality conditions
/// `(C - sum y_i A_i) v = 0`, `v^T A_i v = b_i`, started from the leading
/// factor of an interior-point solution. Returns `None` unless the residual
/// drops below the start and `C - sum y_i A_i` stays positive semidefinite.
fn polish_rank_one<T: Real>(
    p: &SdpStandardForm<T>,
    x: &DMatrix<T>,
    y: &DVector<T>,
) -> Option<(DVector<T>, DVector<T>)> {
    let n = p.n();
    let m = p.m();
    let e = eig_sym(x);
    if !(e.max() > T::ZERO) {
        return None;
    }
    let mut v = DVector::from_iterator(n, e.vectors.column(0).iter().copied()) * e.max().sqrt();
    let mut y = y.clone();
    let residual = |v: &DVector<T>, y: &DVector<T>| {
        let z = &p.c - p.apply_at(y);
        let mut r = DVector::zeros(n + m);
        r.rows_mut(0, n).copy_from(&(&z * v));
        for (i, a) in p.a.iter().enumerate() {
            r[n + i] = v.dot(&(a * v)) - p.b[i];
        }
        r
    };
    let mut r = residual(&v, &y);
    let r0 = r.norm();
    for _ in 0..8 {
        let z = &p.c - p.apply_at(&y);
        let mut j = DMatrix::zeros(n + m, n + m);
        j.view_mut((0, 0), (n, n)).copy_from(&z);
        for (i, a) in p.a.iter().enumerate() {
            let av = a * &v;
            j.view_mut((0, n + i), (n, 1)).copy_from(&(-&av));
            j.view_mut((n + i, 0), (1, n)).copy_from(&(av.transpose() * T::TWO));
        }
        let step = j.lu().solve(&(-&r))?;
        let v_new = &v + step.rows(0, n);
        let y_new = &y + step.rows(n, m);
        let r_new = residual(&v_new, &y_new);
        if !(r_new.norm() < r.norm()) {
            break;
        }
        v = v_new;
        y = y_new;
        r = r_new;
    }
    let z = &p.c - p.apply_at(&y);
    let zmin = eig_sym(&z).min();
    let certified = zmin >= -T::lit(1e-8) * (T::ONE + z.amax());
    (r.norm() < r0 && certified && v.iter().all(|c| c.is_finite_val())).then(|| {
        let v = if v[n - 1] < T::ZERO { -v } else { v };
        (v, y)
    })
}

/// Best rank-one factor of `X`, sign-fixed and scaled so that `x_9 = 1`.
pub fn recover_rank_one<T: Real>(x: &Matrix9<T>) -> Result<LiftedState<T>> {
    let e = eig_sym(&to_dmatrix(x));
    let l1 = e.max();
    if !(l1 > T::ZERO) {
        return Err(Error::DegenerateSolution(l1.to_f64_lossy()));
    }
    let mut v: Vector9<T> = Vector9::from_iterator(e.vectors.column(0).iter().copied()) * l1.sqrt();
    if v[8] < T::ZERO {
        v = -v;
    }
    if !(v[8] > T::lit(1e-12) * v.amax()) {
        return Err(Error::InvalidInput(
            "homogenizing coordinate of the rank-one factor vanishes".into(),
        ));
    }
    Ok(LiftedState { x: v / v[8] })
}

/// Reads `(t, theta)` from a lifted state, renormalizing `(x_4, x_5)`.
pub fn extract_transform<T: Real>(x: &LiftedState<T>) -> Result<Transform4DoF<T>> {
    let n = (x.x[3] * x.x[3] + x.x[4] * x.x[4]).sqrt();
    if !(n >= T::lit(1e-6)) {
        return Err(Error::HeadingUndefined(n.to_f64_lossy()));
    }
    let theta = (x.x[4] / n).atan2(x.x[3] / n);
    Ok(Transform4DoF::new(x.translation(), theta))
}

pub(crate) struct SdpPoint<T: Real> {
    pub transform: Transform4DoF<T>,
    pub diagnostics: SolveDiagnostics,
    pub rank: usize,
    pub eig_ratio: T,
    pub heading_residual: T,
}

pub(crate) fn sdp_point<T: Real>(problem: &QcqpProblem<T>, opts: &SdpOptions<T>) -> Result<SdpPoint<T>> {
    let relax = solve_sdp_relaxation(problem, opts)?;
    let e = eig_sym(&to_dmatrix(&relax.interior));
    let lifted = relax.rank_one()?;
    let transform = extract_transform(&lifted)?;
    let heading_residual = ((lifted.x[3] * lifted.x[3] + lifted.x[4] * lifted.x[4]).sqrt() - T::ONE).abs();
    Ok(SdpPoint {
        transform,
        diagnostics: relax.diagnostics,
        rank: e.numerical_rank(T::lit(1e-6)),
        eig_ratio: e.values[1].max(T::ZERO) / e.max(),
        heading_residual,
    })
}

/// Relax, recover the rank-one factor and read off the transform.
pub fn sdp_estimate<T: Real>(ds: &SyncedDataset<T>, opts: &EstimatorOptions<T>) -> Result<EstimateReport<T>> {
    let start = Instant::now();
    let stats = debias_squared(ds);
    let problem = assemble_qcqp(ds, &stats)?;
    let p = sdp_point(&problem, &opts.sdp)?;
    let solver = SolverDiagnostics {
        converged: true,
        status: "optimal".into(),
        iterations: p.diagnostics.iterations,
        final_cost: weighted_cost(&problem, ds, &p.transform).to_f64_lossy(),
        duality_gap: Some(p.diagnostics.gap),
        sdp_rank: Some(p.rank),
        eig_ratio: Some(p.eig_ratio.to_f64_lossy()),
        heading_renorm_residual: Some(p.heading_residual.to_f64_lossy()),
        restarts: None,
        best_restart: None,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(finish_report(
        EstimatorKind::Sdp,
        p.transform,
        ds,
        solver,
        opts.kappa_threshold,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angle_distance;
    use crate::measurement::{true_range, SquaredStats, SyncedSample};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noiseless(
        rng: &mut ChaCha8Rng,
        k: usize,
        d0: f64,
        radius: f64,
        use_d0: bool,
    ) -> (Transform4DoF<f64>, SyncedDataset<f64>) {
        let dir = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
        let tf = Transform4DoF::new(dir * d0, rng.random_range(-3.1..3.1));
        let samples = (0..k)
            .map(|i| {
                let pa = Vector3::from_fn(|_, _| rng.random_range(-radius..radius));
                let pb = Vector3::from_fn(|_, _| rng.random_range(-radius..radius));
                SyncedSample {
                    t: i as f64,
                    d: true_range(&tf, &pa, &pb),
                    pa,
                    pb,
                }
            })
            .collect();
        // sigma_r only weights; ranges are exact and debiasing is bypassed.
        let ds = SyncedDataset::new(samples, 1e-3, use_d0.then_some(d0)).unwrap();
        (tf, ds)
    }

    fn exact_problem(ds: &SyncedDataset<f64>) -> QcqpProblem<f64> {
        let stats = SquaredStats {
            s: ds.ranges().map(|d| d * d),
            sigma_s_diag: debias_squared(ds).sigma_s_diag,
        };
        assemble_qcqp(ds, &stats).unwrap()
    }

    #[test]
    fn rank_one_recovery_cases() {
        let tf = Transform4DoF::new(Vector3::new(1.0, 2.0, 3.0), 0.5);
        let x = LiftedState::from_transform(&tf).x;
        let got = recover_rank_one(&(x * x.transpose())).unwrap();
        assert_relative_eq!(got.x, x, epsilon = 1e-9);
        let neg = -x;
        let got = recover_rank_one(&(neg * neg.transpose())).unwrap();
        assert_relative_eq!(got.x, x, epsilon = 1e-9);

        // Dominant direction wins.
        let mut y = Vector9::zeros();
        y[0] = x[1];
        y[1] = -x[0];
        let xn = x.normalize();
        let yn = y.normalize();
        let mix = xn * xn.transpose() * 0.9 + yn * yn.transpose() * 0.1;
        let got = recover_rank_one(&mix).unwrap();
        assert_relative_eq!(got.x, x, epsilon = 1e-9);

        assert!(matches!(
            recover_rank_one(&Matrix9::<f64>::zeros()),
            Err(Error::DegenerateSolution(_))
        ));
    }

    #[test]
    fn extraction_cases() {
        let tf = Transform4DoF::new(Vector3::new(1.0, 2.0, 3.0), 0.5);
        let got = extract_transform(&LiftedState::from_transform(&tf)).unwrap();
        assert_relative_eq!(got.t, tf.t);
        assert_relative_eq!(got.theta, 0.5, epsilon = 1e-15);

        let mut x = LiftedState::from_transform(&tf);
        x.x[3] = 0.59;
        x.x[4] = 0.81;
        let n = (0.59f64 * 0.59 + 0.81 * 0.81).sqrt();
        assert_relative_eq!(
            extract_transform(&x).unwrap().theta,
            (0.81 / n).atan2(0.59 / n),
            epsilon = 1e-15
        );

        let x = LiftedState::from_transform(&Transform4DoF {
            t: Vector3::zeros(),
            theta: -std::f64::consts::PI,
        });
        let th = extract_transform(&x).unwrap().theta;
        assert!((-std::f64::consts::PI..std::f64::consts::PI).contains(&th));

        let mut x = LiftedState::from_transform(&tf);
        x.x[3] = 1e-8;
        x.x[4] = 0.0;
        assert!(matches!(extract_transform(&x), Err(Error::HeadingUndefined(_))));
    }

    #[test]
    fn noiseless_relaxation_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for use_d0 in [true, false] {
            for _ in 0..5 {
                let (tf, ds) = noiseless(&mut rng, 20, 3.0, 1.0, use_d0);
                let problem = exact_problem(&ds);
                let relax = solve_sdp_relaxation(&problem, &SdpOptions::default()).unwrap();
                let x = LiftedState::from_transform(&tf).x;
                let e = eig_sym(&to_dmatrix(&relax.interior));
                assert!(e.values[1] / e.values[0] <= 1e-6, "ratio {}", e.values[1] / e.values[0]);
                let xx = x * x.transpose();
                assert!((relax.x - xx).amax() <= 1e-6 * xx.amax(), "use_d0={use_d0}");
                assert!(relax.polished.is_some());
                let est = extract_transform(&relax.rank_one().unwrap()).unwrap();
                assert!((est.t - tf.t).norm() <= 1e-6);
                assert!(angle_distance(est.theta, tf.theta) <= 1e-6);
            }
        }
    }

    #[test]
    fn relaxation_is_a_lower_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (_, mut ds) = noiseless(&mut rng, 15, 3.0, 1.0, true);
        let noise = rand_distr::Normal::new(0.0, 0.1).unwrap();
        for s in &mut ds.samples {
            s.d += rand_distr::Distribution::sample(&noise, &mut rng);
        }
        ds.sigma_r = 0.1;
        let problem = assemble_qcqp(&ds, &debias_squared(&ds)).unwrap();
        let relax = solve_sdp_relaxation(&problem, &SdpOptions::default()).unwrap();
        let lower = relax.diagnostics.primal_obj;
        for _ in 0..200 {
            let dir = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            let tf = Transform4DoF::new(dir * 3.0, rng.random_range(-3.1..3.1));
            let x = LiftedState::from_transform(&tf).x;
            assert!(lower <= problem.cost(&x) * (1.0 + 1e-8) + 1e-8);
        }
        for (p, r) in &problem.constraints {
            let v = (p * relax.x).trace();
            assert!((v - r).abs() <= 1e-7 * r.abs().max(1.0));
        }
        assert!(relax.diagnostics.gap <= 1e-7 * (1.0 + lower.abs()));
    }

    #[test]
    fn similarity_scaling() {
        // Scaling all positions and ranges by c scales the translation by c.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (tf, ds) = noiseless(&mut rng, 20, 3.0, 1.0, true);
        let c = 2.5;
        let mut scaled = ds.clone();
        for s in &mut scaled.samples {
            s.pa *= c;
            s.pb *= c;
            s.d *= c;
        }
        scaled.d0 = ds.d0.map(|d| d * c);
        let opts = SdpOptions::default();
        let a = extract_transform(
            &solve_sdp_relaxation(&exact_problem(&ds), &opts)
                .unwrap()
                .rank_one()
                .unwrap(),
        )
        .unwrap();
        let b = extract_transform(
            &solve_sdp_relaxation(&exact_problem(&scaled), &opts)
                .unwrap()
                .rank_one()
                .unwrap(),
        )
        .unwrap();
        assert_relative_eq!(b.t, a.t * c, epsilon = 1e-6);
        assert!(angle_distance(a.theta, b.theta) < 1e-6);
        assert!((a.t - tf.t).norm() < 1e-6);
    }
}
