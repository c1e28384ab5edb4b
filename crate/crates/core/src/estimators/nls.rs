use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::fisher::range_jacobian;
use crate::geometry::Transform4DoF;
use crate::measurement::{true_range, SyncedDataset};
use crate::num::Real;
use crate::solvers::lm_minimize;

use super::{finish_report, EstimateReport, EstimatorKind, EstimatorOptions, SolverDiagnostics};

/// Damped least squares on the range residuals `(|w_i| - d_i) / sigma_r`
/// from `init`. Non-convergence is reported in the diagnostics, not as an
/// error.
pub fn nls_estimate<T: Real>(
    ds: &SyncedDataset<T>,
    init: Transform4DoF<T>,
    opts: &EstimatorOptions<T>,
) -> Result<EstimateReport<T>> {
    let timer = Instant::now();
    let k = ds.len();
    let inv = T::ONE / ds.sigma_r;
    let tf_of = |x: &DVector<T>| Transform4DoF::new(nalgebra::Vector3::new(x[0], x[1], x[2]), x[3]);
    let residuals = |x: &DVector<T>| {
        let tf = tf_of(x);
        DVector::from_iterator(
            k,
            ds.samples.iter().map(|s| (true_range(&tf, &s.pa, &s.pb) - s.d) * inv),
        )
    };
    let jacobian = |x: &DVector<T>| {
        let tf = tf_of(x);
        let mut j = DMatrix::zeros(k, 4);
        for (i, s) in ds.samples.iter().enumerate() {
            // The range is not differentiable at zero; leave that row empty.
            if let Ok(g) = range_jacobian(&tf, &s.pa, &s.pb) {
                let r = g.row() * inv;
                for c in 0..4 {
                    j[(i, c)] = r[c];
                }
            }
        }
        j
    };
    let lm = lm_minimize(
        residuals,
        jacobian,
        DVector::from_column_slice(&init.params()),
        &opts.lm,
    )?;
    let tf = tf_of(&lm.x);
    let solver = SolverDiagnostics {
        converged: lm.status.converged(),
        status: format!("{:?}", lm.status).to_lowercase(),
        iterations: lm.iterations,
        final_cost: lm.cost.to_f64_lossy(),
        wall_ms: timer.elapsed().as_secs_f64() * 1e3,
        ..Default::default()
    };
    Ok(finish_report(EstimatorKind::Nls, tf, ds, solver, opts.kappa_threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angle_distance;
    use crate::measurement::SyncedSample;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn dataset(rng: &mut ChaCha8Rng, sigma: f64) -> (Transform4DoF<f64>, SyncedDataset<f64>) {
        let tf = Transform4DoF::new(Vector3::new(2.0, -1.5, 0.7), 1.1);
        let noise = Normal::new(0.0, sigma.max(1e-12)).unwrap();
        let samples = (0..30)
            .map(|i| {
                let pa = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                let pb = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                let eta = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                SyncedSample {
                    t: i as f64,
                    d: true_range(&tf, &pa, &pb) + eta,
                    pa,
                    pb,
                }
            })
            .collect();
        (tf, SyncedDataset::new(samples, sigma.max(1e-3), None).unwrap())
    }

    #[test]
    fn from_truth_on_noiseless_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (tf, ds) = dataset(&mut rng, 0.0);
        let r = nls_estimate(&ds, tf, &EstimatorOptions::default()).unwrap();
        assert!(r.solver.iterations <= 2);
        assert!(r.solver.final_cost < 1e-20);
        assert!((r.theta_hat.t - tf.t).norm() < 1e-9);
    }

    #[test]
    fn basin_of_attraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (tf, ds) = dataset(&mut rng, 0.001);
        let p = tf.params();
        let init = Transform4DoF::from_params([p[0] + 0.1, p[1] - 0.1, p[2] + 0.1, p[3] - 0.1]);
        let r = nls_estimate(&ds, init, &EstimatorOptions::default()).unwrap();
        assert!(r.solver.converged);
        assert!(r.solver.iterations <= 10);
        assert!((r.theta_hat.t - tf.t).norm() < 0.01);
        assert!(angle_distance(r.theta_hat.theta, tf.theta) < 0.01);
    }
}
