use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Transform4DoF;
use crate::measurement::{motion_excitation_check, SyncedDataset};
use crate::num::Real;

use super::{estimate, EstimateReport, EstimatorKind, EstimatorOptions};

#[derive(Debug, Clone, Copy)]
pub struct WindowOptions<T: Real> {
    pub window: usize,
    pub stride: usize,
    pub estimator: EstimatorKind,
    /// Skip windows that fail the motion-excitation check.
    pub check_excitation: bool,
    pub excitation_threshold: T,
}

impl<T: Real> Default for WindowOptions<T> {
    fn default() -> Self {
        Self {
            window: 50,
            stride: 10,
            estimator: EstimatorKind::Qcqp,
            check_excitation: true,
            excitation_threshold: T::lit(0.05),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WindowEstimate<T: Real> {
    /// One past the last sample of the window.
    pub end: usize,
    /// Timestamp of the last sample.
    pub t: T,
    pub skipped: bool,
    /// Why the window produced no new estimate.
    pub skip_reason: Option<String>,
    /// Estimate in force after this window (held over skipped windows).
    pub current: Option<Transform4DoF<T>>,
    pub report: Option<EstimateReport<T>>,
}

/// Re-estimates the transform on the latest `window` samples every `stride`
/// samples, warm-starting from the previous estimate.
pub fn sliding_window_estimate<T: Real>(
    stream: &SyncedDataset<T>,
    wopts: &WindowOptions<T>,
    eopts: &EstimatorOptions<T>,
) -> Result<Vec<WindowEstimate<T>>> {
    if wopts.window < 10 {
        return Err(Error::InvalidInput("window must hold at least 10 samples".into()));
    }
    if wopts.stride == 0 {
        return Err(Error::InvalidInput("stride must be positive".into()));
    }
    if stream.len() < wopts.window {
        return Err(Error::InsufficientData {
            need: wopts.window,
            have: stream.len(),
        });
    }
    let mut out = Vec::new();
    let mut current: Option<Transform4DoF<T>> = None;
    let mut end = wopts.window;
    while end <= stream.len() {
        let ds = stream.window(end - wopts.window, end);
        let excited = !wopts.check_excitation || {
            let pa: Vec<Vector3<T>> = ds.samples.iter().map(|s| s.pa).collect();
            let pb: Vec<Vector3<T>> = ds.samples.iter().map(|s| s.pb).collect();
            motion_excitation_check(&pa, &pb, wopts.excitation_threshold, wopts.window)
        };
        let (report, reason) = if excited {
            match estimate(wopts.estimator, &ds, current, eopts) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            }
        } else {
            (None, Some("insufficient motion excitation".to_string()))
        };
        if let Some(r) = &report {
            current = Some(r.theta_hat);
        }
        out.push(WindowEstimate {
            end,
            t: ds.samples[ds.len() - 1].t,
            skipped: report.is_none(),
            skip_reason: reason,
            current,
            report,
        });
        end += wopts.stride;
    }
    Ok(out)
}

/// Target positions mapped into the host frame, `t_k + C_k pb_k`, using for
/// each sample the latest estimate available at that sample. Samples before
/// the first estimate use `initial`.
pub fn align_trajectory<T: Real>(
    stream: &SyncedDataset<T>,
    windows: &[WindowEstimate<T>],
    initial: Option<Transform4DoF<T>>,
) -> Vec<Option<Vector3<T>>> {
    let mut wi = 0;
    let mut current = initial;
    stream
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            while wi < windows.len() && windows[wi].end <= i + 1 {
                if let Some(c) = windows[wi].current {
                    current = Some(c);
                }
                wi += 1;
            }
            current.map(|tf| tf.apply(&s.pb))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{true_range, SyncedSample};

    fn circling(n: usize, hover: Option<(usize, usize)>) -> (Transform4DoF<f64>, SyncedDataset<f64>) {
        let tf = Transform4DoF::new(Vector3::new(6.0, 2.0, 1.0), 0.8);
        let samples = (0..n)
            .map(|i| {
                let tau = match hover {
                    Some((a, b)) if i >= a && i < b => a as f64,
                    Some((a, b)) if i >= b => (i - (b - a)) as f64,
                    _ => i as f64,
                } * 0.1;
                let pa = Vector3::new(2.0 * (tau * 0.9).sin(), 2.0 * (tau * 0.7).cos(), (tau * 1.3).sin());
                let pb = Vector3::new(
                    2.0 * (tau * 0.8 + 1.0).sin(),
                    2.0 * (tau * 1.1).sin(),
                    (tau * 0.6).cos(),
                );
                SyncedSample {
                    t: i as f64 * 0.1,
                    d: true_range(&tf, &pa, &pb),
                    pa,
                    pb,
                }
            })
            .collect();
        (tf, SyncedDataset::new(samples, 1e-3, None).unwrap())
    }

    #[test]
    fn constant_truth_gives_constant_estimates() {
        let (tf, ds) = circling(200, None);
        let w = sliding_window_estimate(&ds, &WindowOptions::default(), &EstimatorOptions::default()).unwrap();
        assert_eq!(w.len(), (200 - 50) / 10 + 1);
        for e in &w {
            assert!(!e.skipped, "{:?}", e.skip_reason);
            let c = e.current.unwrap();
            assert!((c.t - tf.t).norm() < 1e-5);
        }
        let aligned = align_trajectory(&ds, &w, None);
        assert!(aligned[..49].iter().all(|p| p.is_none()));
        for (s, p) in ds.samples.iter().zip(&aligned).skip(49) {
            assert!((p.unwrap() - tf.apply(&s.pb)).norm() < 1e-5);
        }
    }

    #[test]
    fn hovering_windows_are_skipped_and_estimate_held() {
        let (_, ds) = circling(300, Some((100, 220)));
        let w = sliding_window_estimate(&ds, &WindowOptions::default(), &EstimatorOptions::default()).unwrap();
        let skipped: Vec<_> = w.iter().filter(|e| e.skipped).collect();
        assert!(!skipped.is_empty());
        for e in &skipped {
            assert!(e.end > 100 && e.end <= 270);
        }
        for pair in w.windows(2) {
            if pair[1].skipped {
                assert_eq!(pair[1].current, pair[0].current);
            }
        }
    }

    #[test]
    fn rejects_tiny_windows() {
        let (_, ds) = circling(100, None);
        let o = WindowOptions {
            window: 5,
            ..WindowOptions::default()
        };
        assert!(sliding_window_estimate(&ds, &o, &EstimatorOptions::<f64>::default()).is_err());
    }
}
