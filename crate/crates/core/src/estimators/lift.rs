use nalgebra::{DMatrix, DVector, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Transform4DoF;
use crate::measurement::{SquaredStats, SyncedDataset, SyncedSample};
use crate::num::Real;

pub type Vector9<T> = SVector<T, 9>;
pub type Matrix9<T> = SMatrix<T, 9, 9>;

/// Monomial vector
/// `[t_x, t_y, t_z, c, s, t_x c + t_y s, t_y c - t_x s, |t|^2, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftedState<T: Real> {
    pub x: Vector9<T>,
}

impl<T: Real> LiftedState<T> {
    pub fn from_transform(tf: &Transform4DoF<T>) -> Self {
        let (s, c) = tf.theta.sin_cos();
        let t = tf.t;
        Self {
            x: Vector9::from_column_slice(&[
                t.x,
                t.y,
                t.z,
                c,
                s,
                t.x * c + t.y * s,
                t.y * c - t.x * s,
                t.norm_squared(),
                T::ONE,
            ]),
        }
    }

    pub fn translation(&self) -> Vector3<T> {
        Vector3::new(self.x[0], self.x[1], self.x[2])
    }

    /// Largest violation of the defining relations.
    pub fn infeasibility(&self) -> T {
        let x = &self.x;
        let r = [
            x[3] * x[3] + x[4] * x[4] - T::ONE,
            x[0] * x[3] + x[1] * x[4] - x[5] * x[8],
            x[1] * x[3] - x[0] * x[4] - x[6] * x[8],
            x[0] * x[0] + x[1] * x[1] + x[2] * x[2] - x[7] * x[8],
            x[8] - T::ONE,
        ];
        r.iter().fold(T::ZERO, |m, v| m.max(v.abs()))
    }
}

/// Row `A_i` with `A_i x = |t + C pb - pa|^2 - s` for the lifted `x`.
pub fn build_data_row<T: Real>(sample: &SyncedSample<T>, s: T) -> Vector9<T> {
    let (p1, p2) = (sample.pa, sample.pb);
    let two = T::TWO;
    let eps = p1.norm_squared() + p2.norm_squared() - two * p1.z * p2.z - s;
    Vector9::from_column_slice(&[
        -two * p1.x,
        -two * p1.y,
        two * (p2.z - p1.z),
        -two * (p1.x * p2.x + p1.y * p2.y),
        two * (p1.x * p2.y - p2.x * p1.y),
        two * p2.x,
        two * p2.y,
        T::ONE,
        eps,
    ])
}

/// Quadratic cost `x^T P0 x` with the consistency constraints
/// `x^T P_i x = r_i`.
#[derive(Debug, Clone)]
pub struct QcqpProblem<T: Real> {
    pub p0: Matrix9<T>,
    pub constraints: Vec<(Matrix9<T>, T)>,
    /// Stacked data rows, `k x 9`.
    pub b: DMatrix<T>,
    /// Reciprocal variances of the debiased squared ranges.
    pub weights: DVector<T>,
    /// Debiased squared ranges.
    pub s: DVector<T>,
    pub has_d0: bool,
    pub d0: Option<T>,
}

impl<T: Real> QcqpProblem<T> {
    pub fn cost(&self, x: &Vector9<T>) -> T {
        (x.transpose() * self.p0 * x)[(0, 0)]
    }

    /// Constraint residuals `x^T P_i x - r_i`.
    pub fn constraint_residuals(&self, x: &Vector9<T>) -> Vec<T> {
        self.constraints
            .iter()
            .map(|(p, r)| (x.transpose() * p * x)[(0, 0)] - *r)
            .collect()
    }
}

fn sym_entry<T: Real>(m: &mut Matrix9<T>, i: usize, j: usize, v: T) {
    if i == j {
        m[(i, i)] += v;
    } else {
        m[(i, j)] += v * T::HALF;
        m[(j, i)] += v * T::HALF;
    }
}

/// Constraint matrices built from `(row, col, value)` triplets (1-based).
fn from_triplets<T: Real>(triplets: &[(usize, usize, f64)]) -> Matrix9<T> {
    let mut m = Matrix9::zeros();
    for &(i, j, v) in triplets {
        sym_entry(&mut m, i - 1, j - 1, T::lit(v));
    }
    m
}

/// The four (five with `d0`) quadratic relations between the monomials.
pub fn constraint_matrices<T: Real>(d0: Option<T>) -> Vec<(Matrix9<T>, T)> {
    let norm_t = [(1, 1, 1.0), (2, 2, 1.0), (3, 3, 1.0)];
    let mut out = vec![
        (from_triplets(&[(4, 4, 1.0), (5, 5, 1.0)]), T::ONE),
        (from_triplets(&[(1, 4, 1.0), (2, 5, 1.0), (6, 9, -1.0)]), T::ZERO),
        (from_triplets(&[(2, 4, 1.0), (1, 5, -1.0), (7, 9, -1.0)]), T::ZERO),
        (from_triplets(&[norm_t[0], norm_t[1], norm_t[2], (8, 9, -1.0)]), T::ZERO),
    ];
    if let Some(d0) = d0 {
        out.push((from_triplets(&norm_t), d0 * d0));
    }
    out
}

pub fn assemble_qcqp<T: Real>(ds: &SyncedDataset<T>, stats: &SquaredStats<T>) -> Result<QcqpProblem<T>> {
    let k = ds.len();
    if k == 0 {
        return Err(Error::InsufficientData { need: 1, have: 0 });
    }
    if stats.s.len() != k || stats.sigma_s_diag.len() != k {
        return Err(Error::InvalidInput("statistics do not match the dataset".into()));
    }
    if stats.sigma_s_diag.iter().any(|v| !(*v > T::ZERO)) {
        return Err(Error::InvalidInput("squared-range variances must be positive".into()));
    }
    let mut b = DMatrix::zeros(k, 9);
    for (i, sample) in ds.samples.iter().enumerate() {
        b.set_row(i, &build_data_row(sample, stats.s[i]).transpose());
    }
    let weights = stats.sigma_s_diag.map(|v| T::ONE / v);
    let mut p0 = Matrix9::zeros();
    for i in 0..k {
        let row: Vector9<T> = Vector9::from_iterator(b.row(i).iter().copied());
        p0 += row * row.transpose() * weights[i];
    }
    let p0 = (p0 + p0.transpose()) * T::HALF;
    Ok(QcqpProblem {
        p0,
        constraints: constraint_matrices(ds.d0),
        b,
        weights,
        s: stats.s.clone(),
        has_d0: ds.d0.is_some(),
        d0: ds.d0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{debias_squared, true_range};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(pa: Vector3<f64>, pb: Vector3<f64>) -> SyncedSample<f64> {
        SyncedSample { t: 0.0, d: 1.0, pa, pb }
    }

    #[test]
    fn data_row_examples() {
        let a = build_data_row(&sample(Vector3::zeros(), Vector3::zeros()), 4.0);
        assert_eq!(a.as_slice(), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -4.0]);
        let a = build_data_row(&sample(Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)), 0.0);
        assert_eq!(a.as_slice(), &[-2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 2.0, 1.0, 2.0]);
    }

    fn random_dataset(rng: &mut ChaCha8Rng, k: usize, d0: bool) -> (Transform4DoF<f64>, SyncedDataset<f64>) {
        let tf = Transform4DoF::new(
            Vector3::from_fn(|_, _| rng.random_range(-4.0..4.0)),
            rng.random_range(-3.1..3.1),
        );
        let samples = (0..k)
            .map(|i| {
                let pa = Vector3::from_fn(|_, _| rng.random_range(-1.5..1.5));
                let pb = Vector3::from_fn(|_, _| rng.random_range(-1.5..1.5));
                SyncedSample {
                    t: i as f64,
                    d: true_range(&tf, &pa, &pb),
                    pa,
                    pb,
                }
            })
            .collect();
        let d0 = d0.then(|| tf.t.norm());
        (tf, SyncedDataset::new(samples, 0.1, d0).unwrap())
    }

    #[test]
    fn lifted_truth_satisfies_all_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (tf, ds) = random_dataset(&mut rng, 10, true);
        let p = assemble_qcqp(&ds, &debias_squared(&ds)).unwrap();
        assert_eq!(p.constraints.len(), 5);
        let x = LiftedState::from_transform(&tf).x;
        for r in p.constraint_residuals(&x) {
            assert!(r.abs() <= 1e-12 * (1.0 + tf.t.norm_squared()));
        }
        let (_, ds) = random_dataset(&mut rng, 10, false);
        assert_eq!(assemble_qcqp(&ds, &debias_squared(&ds)).unwrap().constraints.len(), 4);
    }

    #[test]
    fn unit_circle_constraint() {
        let p1 = &constraint_matrices::<f64>(None)[0];
        for phi in [-2.0, 0.0, 0.4, 3.0] {
            let mut x = Vector9::from_element(0.7);
            x[3] = f64::cos(phi);
            x[4] = f64::sin(phi);
            assert_relative_eq!((x.transpose() * p1.0 * x)[(0, 0)], 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn noiseless_truth_has_zero_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (tf, ds) = random_dataset(&mut rng, 15, true);
        // Exact squared ranges: s = d^2.
        let stats = SquaredStats {
            s: ds.ranges().map(|d| d * d),
            sigma_s_diag: DVector::from_element(ds.len(), 1.0),
        };
        let p = assemble_qcqp(&ds, &stats).unwrap();
        let x = LiftedState::from_transform(&tf).x;
        // x^T P0 x cancels to zero; allow for rounding in the quadratic form.
        assert!(p.cost(&x).abs() < 1e-12 * p.p0.norm() * x.norm_squared());
        for i in 0..ds.len() {
            let a: Vector9<f64> = Vector9::from_iterator(p.b.row(i).iter().copied());
            assert!(a.dot(&x).abs() < 1e-10);
        }
    }

    #[test]
    fn quadratic_form_matches_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, ds) = random_dataset(&mut rng, 12, false);
        let stats = debias_squared(&ds);
        let p = assemble_qcqp(&ds, &stats).unwrap();
        for _ in 0..10 {
            let tf = Transform4DoF::new(
                Vector3::from_fn(|_, _| rng.random_range(-4.0..4.0)),
                rng.random_range(-3.0..3.0),
            );
            let direct: f64 = ds
                .samples
                .iter()
                .zip(stats.s.iter().zip(stats.sigma_s_diag.iter()))
                .map(|(smp, (s, v))| {
                    let d2 = true_range(&tf, &smp.pa, &smp.pb).powi(2);
                    (d2 - s).powi(2) / v
                })
                .sum();
            let q = p.cost(&LiftedState::from_transform(&tf).x);
            assert_relative_eq!(q, direct, max_relative = 1e-10);
        }
    }

    #[test]
    fn p0_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, ds) = random_dataset(&mut rng, 20, true);
        let p = assemble_qcqp(&ds, &debias_squared(&ds)).unwrap();
        assert_eq!(p.p0, p.p0.transpose());
        let e = crate::solvers::eig_sym(&DMatrix::from_iterator(9, 9, p.p0.iter().copied()));
        assert!(e.min() >= -1e-9 * e.max());
    }

    proptest! {
        #[test]
        fn data_row_identity(
            t in prop::array::uniform3(-5.0..5.0f64), th in -3.1..3.1f64,
            pa in prop::array::uniform3(-3.0..3.0f64), pb in prop::array::uniform3(-3.0..3.0f64),
            s in 0.0..30.0f64,
        ) {
            let tf = Transform4DoF::new(Vector3::from(t), th);
            let smp = sample(Vector3::from(pa), Vector3::from(pb));
            let a = build_data_row(&smp, s);
            let d = true_range(&tf, &smp.pa, &smp.pb);
            let lhs = a.dot(&LiftedState::from_transform(&tf).x);
            prop_assert!((lhs - (d * d - s)).abs() < 1e-10 * (1.0 + d * d + s));
        }

        #[test]
        fn lifted_state_is_feasible(t in prop::array::uniform3(-5.0..5.0f64), th in -10.0..10.0f64) {
            let x = LiftedState::from_transform(&Transform4DoF::new(Vector3::from(t), th));
            prop_assert!(x.infeasibility() < 1e-12);
        }
    }
}
