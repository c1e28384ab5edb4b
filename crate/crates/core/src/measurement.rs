//! Range measurements, log synchronization, squared-distance debiasing,
//! outlier rejection and the motion-excitation check.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{antenna_world_position, interpolate_pose, LeverArm, Pose, Transform4DoF};
use crate::num::Real;

/// One raw range reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeSample<T: Real> {
    pub t: T,
    pub d: T,
}

/// A range paired with both antenna positions at the same instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncedSample<T: Real> {
    pub t: T,
    pub d: T,
    /// Host antenna in the host local frame.
    pub pa: Vector3<T>,
    /// Target antenna in the target local frame.
    pub pb: Vector3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncedDataset<T: Real> {
    pub samples: Vec<SyncedSample<T>>,
    pub sigma_r: T,
    /// Measured distance between the two frame origins, if available.
    pub d0: Option<T>,
    /// Ranges are exact; `sigma_r` then only weights and no debiasing is applied.
    pub noise_free: bool,
}

impl<T: Real> SyncedDataset<T> {
    pub fn new(samples: Vec<SyncedSample<T>>, sigma_r: T, d0: Option<T>) -> Result<Self> {
        if !(sigma_r > T::ZERO) || !sigma_r.is_finite_val() {
            return Err(Error::InvalidInput("sigma_r must be positive".into()));
        }
        if let Some(d0) = d0 {
            if !(d0 > T::ZERO) || !d0.is_finite_val() {
                return Err(Error::InvalidInput("d0 must be positive".into()));
            }
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.d > T::ZERO) || !s.d.is_finite_val() {
                return Err(Error::InvalidInput(format!("sample {i}: range must be positive")));
            }
            if !s.pa.iter().chain(s.pb.iter()).all(|v| v.is_finite_val()) {
                return Err(Error::InvalidInput(format!("sample {i}: non-finite position")));
            }
            if i > 0 && !(s.t > samples[i - 1].t) {
                return Err(Error::InvalidInput(format!(
                    "sample {i}: timestamps not strictly increasing"
                )));
            }
        }
        Ok(Self {
            samples,
            sigma_r,
            d0,
            noise_free: false,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ranges(&self) -> DVector<T> {
        DVector::from_iterator(self.len(), self.samples.iter().map(|s| s.d))
    }

    /// Contiguous sub-range of samples, without the origin distance.
    pub fn window(&self, start: usize, end: usize) -> Self {
        Self {
            samples: self.samples[start..end].to_vec(),
            sigma_r: self.sigma_r,
            d0: None,
            noise_free: self.noise_free,
        }
    }

    pub fn with_noise_free(mut self, noise_free: bool) -> Self {
        self.noise_free = noise_free;
        self
    }
}

/// Debiased squared ranges and the diagonal of their covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredStats<T: Real> {
    pub s: DVector<T>,
    pub sigma_s_diag: DVector<T>,
}

/// Output of [`ingest_logs`].
#[derive(Debug, Clone)]
pub struct Ingested<T: Real> {
    pub dataset: SyncedDataset<T>,
    /// Ranges without odometry coverage on both agents.
    pub dropped_uncovered: usize,
    /// Ranges sharing a timestamp with the previous kept range.
    pub dropped_duplicate: usize,
}

fn check_sorted<T: Real>(poses: &[Pose<T>], name: &str) -> Result<()> {
    if poses.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::InvalidInput(format!(
            "{name} odometry timestamps not strictly increasing"
        )));
    }
    Ok(())
}

/// Pose at `t`, or `None` when `t` lies outside the stream.
fn pose_at<T: Real>(poses: &[Pose<T>], t: T) -> Option<Pose<T>> {
    let idx = poses.partition_point(|p| p.t < t);
    if idx < poses.len() && poses[idx].t == t {
        return Some(poses[idx]);
    }
    if idx == 0 || idx == poses.len() {
        return None;
    }
    interpolate_pose(&poses[idx - 1], &poses[idx], t).ok()
}

/// Pairs every range reading with interpolated antenna positions of both
/// agents. Ranges outside the odometry coverage of either agent are dropped.
pub fn ingest_logs<T: Real>(
    odom_a: &[Pose<T>],
    odom_b: &[Pose<T>],
    ranges: &[RangeSample<T>],
    arm_a: &LeverArm<T>,
    arm_b: &LeverArm<T>,
    sigma_r: T,
    d0: Option<T>,
) -> Result<Ingested<T>> {
    check_sorted(odom_a, "host")?;
    check_sorted(odom_b, "target")?;
    if ranges.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(Error::InvalidInput("range timestamps not sorted".into()));
    }
    let mut samples: Vec<SyncedSample<T>> = Vec::with_capacity(ranges.len());
    let mut dropped_uncovered = 0;
    let mut dropped_duplicate = 0;
    for r in ranges {
        if samples.last().is_some_and(|s| s.t == r.t) {
            dropped_duplicate += 1;
            continue;
        }
        match (pose_at(odom_a, r.t), pose_at(odom_b, r.t)) {
            (Some(a), Some(b)) => samples.push(SyncedSample {
                t: r.t,
                d: r.d,
                pa: antenna_world_position(&a, arm_a),
                pb: antenna_world_position(&b, arm_b),
            }),
            _ => dropped_uncovered += 1,
        }
    }
    if samples.is_empty() {
        return Err(Error::NoData("no range falls inside both odometry streams".into()));
    }
    Ok(Ingested {
        dataset: SyncedDataset::new(samples, sigma_r, d0)?,
        dropped_uncovered,
        dropped_duplicate,
    })
}

/// `|t + C(theta) pb - pa|`.
pub fn true_range<T: Real>(tf: &Transform4DoF<T>, pa: &Vector3<T>, pb: &Vector3<T>) -> T {
    (tf.apply(pb) - pa).norm()
}

/// `s_i = d_i^2 - sigma_r^2`, `var(s_i) = sigma_r^2 (4 d_i^2 + 2 sigma_r^2)`.
/// A noise-free dataset keeps `s_i = d_i^2`.
pub fn debias_squared<T: Real>(dataset: &SyncedDataset<T>) -> SquaredStats<T> {
    let var = dataset.sigma_r * dataset.sigma_r;
    let bias = if dataset.noise_free { T::ZERO } else { var };
    let k = dataset.len();
    let s = DVector::from_iterator(k, dataset.samples.iter().map(|x| x.d * x.d - bias));
    let sigma_s_diag = DVector::from_iterator(
        k,
        dataset
            .samples
            .iter()
            .map(|x| var * (T::lit(4.0) * x.d * x.d + T::TWO * var)),
    );
    SquaredStats { s, sigma_s_diag }
}

/// Debiasing under a general range covariance `sigma_r`.
///
/// Returns the debiased squared ranges and the full covariance
/// `(Sigma_s)_ij = (Sigma_r)_ij (4 d_i d_j + 2 (Sigma_r)_ij)`.
pub fn debias_squared_full<T: Real>(d: &DVector<T>, sigma_r: &DMatrix<T>) -> Result<(DVector<T>, DMatrix<T>)> {
    let k = d.len();
    if sigma_r.nrows() != k || sigma_r.ncols() != k {
        return Err(Error::InvalidInput("range covariance has wrong shape".into()));
    }
    let s = DVector::from_fn(k, |i, _| d[i] * d[i] - sigma_r[(i, i)]);
    let cov = DMatrix::from_fn(k, k, |i, j| {
        let r = sigma_r[(i, j)];
        r * (T::lit(4.0) * d[i] * d[j] + T::TWO * r)
    });
    Ok((s, cov))
}

/// How a candidate sample is compared against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierMode {
    /// Reject when the window variance including the candidate exceeds the
    /// threshold.
    #[default]
    Absolute,
    /// Reject when including the candidate raises the window variance by
    /// more than the threshold.
    Increase,
}

fn window_variance<T: Real>(values: impl Iterator<Item = T> + Clone, n: usize) -> T {
    let nf = T::from_usize(n).unwrap();
    let mean = values.clone().fold(T::ZERO, |a, v| a + v) / nf;
    values.fold(T::ZERO, |a, v| a + (v - mean) * (v - mean)) / nf
}

/// Streaming sliding-window variance filter.
///
/// The window holds the last `k` accepted ranges. The first `k` samples are
/// accepted unconditionally to fill it.
#[derive(Debug, Clone)]
pub struct OutlierFilter<T: Real> {
    k: usize,
    threshold: T,
    mode: OutlierMode,
    window: VecDeque<T>,
    accepted: usize,
    rejected: usize,
}

impl<T: Real> OutlierFilter<T> {
    pub fn new(k: usize, threshold: T, mode: OutlierMode) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidInput(
                "outlier window must hold at least 2 samples".into(),
            ));
        }
        Ok(Self {
            k,
            threshold,
            mode,
            window: VecDeque::with_capacity(k),
            accepted: 0,
            rejected: 0,
        })
    }

    /// Offers one range; returns whether it was accepted.
    pub fn push(&mut self, d: T) -> bool {
        if self.window.len() < self.k {
            self.window.push_back(d);
            self.accepted += 1;
            return true;
        }
        let candidate = self.window.iter().skip(1).copied().chain(std::iter::once(d));
        let var_new = window_variance(candidate, self.k);
        let reject = match self.mode {
            OutlierMode::Absolute => var_new > self.threshold,
            OutlierMode::Increase => {
                let var_old = window_variance(self.window.iter().copied(), self.k);
                var_new - var_old > self.threshold
            }
        };
        if reject {
            self.rejected += 1;
            return false;
        }
        self.window.pop_front();
        self.window.push_back(d);
        self.accepted += 1;
        true
    }

    pub fn accepted(&self) -> usize {
        self.accepted
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }
}

/// Filters a whole stream, preserving order.
pub fn sliding_outlier_filter<T: Real>(
    ranges: &[RangeSample<T>],
    k: usize,
    threshold: T,
    mode: OutlierMode,
) -> Result<(Vec<RangeSample<T>>, usize)> {
    let mut filter = OutlierFilter::new(k, threshold, mode)?;
    let kept: Vec<_> = ranges.iter().copied().filter(|r| filter.push(r.d)).collect();
    Ok((kept, filter.rejected()))
}

/// Unbiased per-axis sample variance of the last `n` positions.
pub fn axis_variances<T: Real>(positions: &[Vector3<T>], n: usize) -> Vector3<T> {
    let tail = &positions[positions.len().saturating_sub(n)..];
    if tail.len() < 2 {
        return Vector3::zeros();
    }
    let m = T::from_usize(tail.len()).unwrap();
    let mean = tail.iter().fold(Vector3::zeros(), |a, p| a + p) / m;
    tail.iter()
        .fold(Vector3::zeros(), |a, p| a + (p - mean).component_mul(&(p - mean)))
        / (m - T::ONE)
}

/// True when both agents move enough on every axis over their last `n`
/// positions.
pub fn motion_excitation_check<T: Real>(
    recent_a: &[Vector3<T>],
    recent_b: &[Vector3<T>],
    var_threshold: T,
    n: usize,
) -> bool {
    if recent_a.is_empty() || recent_b.is_empty() {
        return false;
    }
    [recent_a, recent_b]
        .iter()
        .all(|p| axis_variances(p, n).iter().all(|&v| v > var_threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn static_stream(p: Vector3<f64>, t0: f64, t1: f64, n: usize) -> Vec<Pose<f64>> {
        (0..n)
            .map(|i| Pose::from_yaw(t0 + (t1 - t0) * i as f64 / (n - 1) as f64, p, 0.0))
            .collect()
    }

    #[test]
    fn ingest_uses_exact_pose_on_matching_timestamp() {
        let a = vec![
            Pose::from_yaw(0.0, Vector3::new(1.0, 2.0, 3.0), 0.3),
            Pose::from_yaw(1.0, Vector3::new(4.0, 2.0, 3.0), 0.3),
        ];
        let b = static_stream(Vector3::zeros(), 0.0, 1.0, 2);
        let r = [RangeSample { t: 1.0, d: 2.0 }];
        let out = ingest_logs(&a, &b, &r, &LeverArm::zero(), &LeverArm::zero(), 0.1, None).unwrap();
        assert_eq!(out.dataset.samples[0].pa, Vector3::new(4.0, 2.0, 3.0));
    }

    #[test]
    fn ingest_static_zero_arms() {
        let pa = Vector3::new(5.0, 0.0, 0.0);
        let a = static_stream(pa, 0.0, 10.0, 11);
        let b = static_stream(Vector3::zeros(), 0.0, 10.0, 11);
        let r = [RangeSample { t: 2.5, d: 5.0 }];
        let out = ingest_logs(&a, &b, &r, &LeverArm::zero(), &LeverArm::zero(), 0.1, None).unwrap();
        assert_eq!(out.dataset.samples[0].pa, pa);
        assert_eq!(out.dataset.samples[0].pb, Vector3::zeros());
    }

    #[test]
    fn ingest_counts_37hz_against_200hz() {
        let odom = |off: f64| -> Vec<Pose<f64>> {
            (0..=2000)
                .map(|i| {
                    let t = i as f64 / 200.0;
                    Pose::from_yaw(t, Vector3::new(t.sin() + off, t.cos(), 0.1 * t), 0.2 * t)
                })
                .collect()
        };
        let ranges: Vec<_> = (0..400)
            .map(|i| RangeSample {
                t: i as f64 / 37.0,
                d: 3.0,
            })
            .collect();
        let out = ingest_logs(
            &odom(0.0),
            &odom(3.0),
            &ranges,
            &LeverArm::new(Vector3::new(-0.02, 0.1, -0.05)),
            &LeverArm::new(Vector3::new(-0.05, 0.15, -0.15)),
            0.1,
            None,
        )
        .unwrap();
        // Counting oracle: every reading with t <= 10 s is covered.
        let expected = ranges.iter().filter(|r| r.t <= 10.0).count();
        assert_eq!(out.dataset.len(), expected);
        assert!((369..=371).contains(&out.dataset.len()));
        assert_eq!(out.dropped_uncovered, ranges.len() - expected);
    }

    #[test]
    fn ingest_rejects_empty_overlap() {
        let a = static_stream(Vector3::zeros(), 0.0, 1.0, 2);
        let b = static_stream(Vector3::zeros(), 2.0, 3.0, 2);
        let r = [RangeSample { t: 0.5, d: 1.0 }, RangeSample { t: 2.5, d: 1.0 }];
        assert!(matches!(
            ingest_logs(&a, &b, &r, &LeverArm::zero(), &LeverArm::zero(), 0.1, None),
            Err(Error::NoData(_))
        ));
    }

    #[test]
    fn lever_arm_is_rotated_into_local_frame() {
        let q = UnitQuaternion::from_euler_angles(0.1, -0.2, 1.3);
        let pose = Pose {
            t: 0.0,
            p: Vector3::new(1.0, 2.0, 3.0),
            q,
        };
        let arm = Vector3::new(-0.02, 0.1, -0.05);
        let a = vec![pose, Pose { t: 1.0, ..pose }];
        let b = static_stream(Vector3::zeros(), 0.0, 1.0, 2);
        let r = [RangeSample { t: 0.0, d: 1.0 }];
        let out = ingest_logs(&a, &b, &r, &LeverArm::new(arm), &LeverArm::zero(), 0.1, None).unwrap();
        let expected = pose.p + q.to_rotation_matrix().matrix() * arm;
        assert_relative_eq!(out.dataset.samples[0].pa, expected, epsilon = 1e-14);
    }

    #[test]
    fn true_range_cases() {
        let tf = Transform4DoF::new(Vector3::new(3.0, 0.0, 0.0), 0.0);
        assert_eq!(true_range(&tf, &Vector3::zeros(), &Vector3::zeros()), 3.0);
        let pb = Vector3::new(0.3, -1.2, 0.7);
        for th in [-3.0, -1.0, 0.0, 0.5, 2.9] {
            let tf = Transform4DoF::new(Vector3::zeros(), th);
            assert_relative_eq!(true_range(&tf, &Vector3::zeros(), &pb), pb.norm(), epsilon = 1e-14);
        }
    }

    #[test]
    fn debias_example_values() {
        let s = SyncedSample {
            t: 0.0,
            d: 1.0,
            pa: Vector3::zeros(),
            pb: Vector3::zeros(),
        };
        let ds = SyncedDataset::new(vec![s, SyncedSample { t: 1.0, ..s }], 0.1, None).unwrap();
        let st = debias_squared(&ds);
        assert_relative_eq!(st.s[0], 0.99, epsilon = 1e-15);
        assert_relative_eq!(st.sigma_s_diag[0], 0.0402, epsilon = 1e-15);
        assert_eq!(st.s[0], st.s[1]);
        assert_eq!(st.sigma_s_diag[0], st.sigma_s_diag[1]);

        let exact = debias_squared(&ds.clone().with_noise_free(true));
        assert_eq!(exact.s[0], 1.0);
        assert_eq!(exact.sigma_s_diag, st.sigma_s_diag);
        assert!(ds.window(0, 1).with_noise_free(true).window(0, 1).noise_free);
    }

    #[test]
    fn debias_matches_monte_carlo() {
        // nu = 2 d eta + eta^2; debiasing removes E[nu] and reports Var[nu].
        let (d, sigma) = (1.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, sigma).unwrap();
        let n = 1_000_000;
        let nus: Vec<f64> = (0..n)
            .map(|_| {
                let eta = normal.sample(&mut rng);
                2.0 * d * eta + eta * eta
            })
            .collect();
        let mean = nus.iter().sum::<f64>() / n as f64;
        let var = nus.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let s = SyncedSample {
            t: 0.0,
            d,
            pa: Vector3::zeros(),
            pb: Vector3::zeros(),
        };
        let st = debias_squared(&SyncedDataset::new(vec![s], sigma, None).unwrap());
        assert_relative_eq!(d * d - mean, st.s[0], epsilon = 3.0 * (var / n as f64).sqrt());
        assert_relative_eq!(var, st.sigma_s_diag[0], max_relative = 0.01);
    }

    #[test]
    fn debias_noiseless_limit() {
        let s = SyncedSample {
            t: 0.0,
            d: 2.0,
            pa: Vector3::zeros(),
            pb: Vector3::zeros(),
        };
        let st = debias_squared(&SyncedDataset::new(vec![s], 1e-9, None).unwrap());
        assert_relative_eq!(st.s[0], 4.0, epsilon = 1e-12);
        assert!(st.sigma_s_diag[0] < 1e-16);
    }

    #[test]
    fn full_covariance_reduces_to_diagonal_case() {
        let d = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (s, cov) = debias_squared_full(&d, &(DMatrix::identity(3, 3) * 0.01)).unwrap();
        assert_relative_eq!(s, DVector::from_vec(vec![0.99, 3.99, 8.99]), epsilon = 1e-14);
        assert_relative_eq!(cov[(1, 1)], 0.01 * (16.0 + 0.02), epsilon = 1e-14);
        assert_eq!(cov[(0, 1)], 0.0);

        let mut sr = DMatrix::identity(2, 2) * 0.04;
        sr[(0, 1)] = 0.01;
        sr[(1, 0)] = 0.01;
        let (_, cov) = debias_squared_full(&DVector::from_vec(vec![1.0, 2.0]), &sr).unwrap();
        assert_relative_eq!(cov[(0, 1)], 0.01 * (8.0 + 0.02), epsilon = 1e-14);
    }

    fn stream(values: &[f64]) -> Vec<RangeSample<f64>> {
        values
            .iter()
            .enumerate()
            .map(|(i, &d)| RangeSample { t: i as f64, d })
            .collect()
    }

    #[test]
    fn constant_stream_passes() {
        let s = stream(&[3.0; 50]);
        let (kept, rej) = sliding_outlier_filter(&s, 20, 0.005, OutlierMode::Absolute).unwrap();
        assert_eq!(kept.len(), 50);
        assert_eq!(rej, 0);
    }

    #[test]
    fn single_spike_rejected() {
        let mut v = vec![3.0; 30];
        v.push(4.0);
        v.extend([3.0; 5]);
        let (kept, rej) = sliding_outlier_filter(&stream(&v), 20, 0.005, OutlierMode::Absolute).unwrap();
        assert_eq!(rej, 1);
        assert!(kept.iter().all(|r| r.d == 3.0));
        // Oracle: variance of nineteen 3.0 and one 4.0 with 1/K normalization.
        let var = 19.0 / 20.0 * (1.0 / 20.0);
        assert!(var > 0.005);
    }

    #[test]
    fn slow_ramp_passes() {
        let v: Vec<f64> = (0..200).map(|i| 3.0 + 0.001 * i as f64).collect();
        let (kept, _) = sliding_outlier_filter(&stream(&v), 20, 0.005, OutlierMode::Absolute).unwrap();
        assert_eq!(kept.len(), v.len());
        // Largest window variance of a 1 mm ramp over 20 samples.
        let w: Vec<f64> = (0..20).map(|i| 0.001 * i as f64).collect();
        let m = w.iter().sum::<f64>() / 20.0;
        assert!(w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 20.0 < 0.005);
    }

    #[test]
    fn increase_mode_ignores_existing_spread() {
        // A noisy but stable window: absolute variance is high, increase small.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..100).map(|_| 3.0 + rng.random_range(-0.2..0.2)).collect();
        let (abs_kept, _) = sliding_outlier_filter(&stream(&v), 20, 0.005, OutlierMode::Absolute).unwrap();
        let (inc_kept, _) = sliding_outlier_filter(&stream(&v), 20, 0.005, OutlierMode::Increase).unwrap();
        assert!(inc_kept.len() > abs_kept.len());
    }

    #[test]
    fn filter_rejects_tiny_window() {
        assert!(OutlierFilter::<f64>::new(1, 0.005, OutlierMode::Absolute).is_err());
    }

    #[test]
    fn excitation_cases() {
        let stat = vec![Vector3::new(1.0, 2.0, 3.0); 100];
        assert!(!motion_excitation_check(&stat, &stat, 0.05, 100));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rich: Vec<Vector3<f64>> = (0..100)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let z_only: Vec<Vector3<f64>> = (0..100)
            .map(|i| Vector3::new(0.0, 0.0, (i as f64 * 0.3).sin()))
            .collect();
        assert!(!motion_excitation_check(&rich, &z_only, 0.05, 100));

        let rich_b: Vec<Vector3<f64>> = (0..100)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        assert!(motion_excitation_check(&rich, &rich_b, 0.05, 100));
    }

    proptest! {
        #[test]
        fn true_range_invariant_under_common_motion(
            tx in -5.0..5.0f64, ty in -5.0..5.0f64, tz in -5.0..5.0f64, th in -3.0..3.0f64,
            a in prop::array::uniform3(-3.0..3.0f64), b in prop::array::uniform3(-3.0..3.0f64),
            off in prop::array::uniform3(-3.0..3.0f64), psi in -3.0..3.0f64,
        ) {
            // Moving the host frame rigidly moves pa and the transform together.
            let tf = Transform4DoF::new(Vector3::new(tx, ty, tz), th);
            let pa = Vector3::from(a);
            let pb = Vector3::from(b);
            let g = Transform4DoF::new(Vector3::from(off), psi);
            let moved = Transform4DoF::new(g.apply(&tf.t), th + psi);
            let d0 = true_range(&tf, &pa, &pb);
            let d1 = true_range(&moved, &g.apply(&pa), &pb);
            prop_assert!((d0 - d1).abs() < 1e-10);
        }

        #[test]
        fn filter_keeps_order_and_is_idempotent(values in prop::collection::vec(2.5..3.5f64, 1..120)) {
            let s = stream(&values);
            let (kept, _) = sliding_outlier_filter(&s, 20, 0.005, OutlierMode::Absolute).unwrap();
            prop_assert!(kept.windows(2).all(|w| w[0].t < w[1].t));
            let (again, rej) = sliding_outlier_filter(&kept, 20, 0.005, OutlierMode::Absolute).unwrap();
            prop_assert_eq!(rej, 0);
            prop_assert_eq!(again, kept);
        }

        #[test]
        fn ingested_timestamps_subset_of_ranges(ts in prop::collection::vec(-1.0..12.0f64, 1..60)) {
            let mut ts = ts;
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let ranges: Vec<_> = ts.iter().map(|&t| RangeSample { t, d: 1.0 }).collect();
            let a = static_stream(Vector3::new(1.0, 0.0, 0.0), 0.0, 10.0, 21);
            let b = static_stream(Vector3::zeros(), 0.0, 10.0, 21);
            if let Ok(out) = ingest_logs(&a, &b, &ranges, &LeverArm::zero(), &LeverArm::zero(), 0.1, None) {
                for s in &out.dataset.samples {
                    prop_assert!(ts.contains(&s.t));
                }
            }
        }
    }
}
