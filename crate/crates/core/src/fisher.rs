//! Fisher information analysis: range Jacobians, FIM and CRLB, the
//! Cauchy-Binet determinant decomposition, reduced sub-problems, singularity
//! flags and confidence intervals.

use nalgebra::{DMatrix, Matrix4, Vector3, Vector4};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Transform4DoF;
use crate::measurement::SyncedDataset;
use crate::num::{compensated_sum, Real};
use crate::solvers::eig_sym;

/// Default condition-number threshold above which a configuration is
/// reported singular.
pub const DEFAULT_KAPPA_THRESHOLD: f64 = 1e6;
/// Relative eigenvalue cutoff used for (pseudo-)inversion.
pub const EIG_CUTOFF: f64 = 1e-12;
/// A standard error this many times the median is flagged unobservable.
pub const SE_MEDIAN_FACTOR: f64 = 10.0;
/// Largest sample count for exhaustive 4-subset enumeration.
pub const MAX_EXHAUSTIVE_K: usize = 40;

/// Gradient of one range with respect to `[t_x, t_y, t_z, theta]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeJacobian<T: Real> {
    /// Unit vector along `t + C pb - pa`.
    pub u: Vector3<T>,
    /// Derivative with respect to the heading.
    pub phi: T,
    /// Range at the evaluation point.
    pub d: T,
}

impl<T: Real> RangeJacobian<T> {
    pub fn row(&self) -> Vector4<T> {
        Vector4::new(self.u.x, self.u.y, self.u.z, self.phi)
    }
}

pub fn range_jacobian<T: Real>(tf: &Transform4DoF<T>, pa: &Vector3<T>, pb: &Vector3<T>) -> Result<RangeJacobian<T>> {
    let cpb = tf.rotation() * pb;
    let w = tf.t + cpb - pa;
    let d = w.norm();
    if !(d > T::ZERO) {
        return Err(Error::SingularGeometry);
    }
    let u = w / d;
    let phi = Vector3::z().cross(&cpb).dot(&u);
    Ok(RangeJacobian { u, phi, d })
}

fn jacobians<T: Real>(tf: &Transform4DoF<T>, ds: &SyncedDataset<T>) -> Result<Vec<RangeJacobian<T>>> {
    ds.samples.iter().map(|s| range_jacobian(tf, &s.pa, &s.pb)).collect()
}

/// Inverse (or pseudo-inverse) of a symmetric PSD matrix plus its spectrum
/// summary.
#[derive(Debug, Clone)]
pub struct SpectralInverse<T: Real> {
    pub inverse: Matrix4<T>,
    /// Eigenvalues, descending.
    pub eigenvalues: Vector4<T>,
    /// Number of eigenvalues above the cutoff.
    pub rank: usize,
    /// Per-parameter: whether the parameter has a component in the numerical
    /// null space.
    pub in_null_space: [bool; 4],
}

pub fn spectral_inverse<T: Real>(f: &Matrix4<T>) -> SpectralInverse<T> {
    let dm = DMatrix::from_iterator(4, 4, f.iter().copied());
    let e = eig_sym(&dm);
    let lmax = e.max().max(T::ZERO);
    let cut = T::lit(EIG_CUTOFF) * lmax;
    let mut inverse = Matrix4::zeros();
    let mut rank = 0;
    let mut in_null = [false; 4];
    let null_tol = T::lit(1e-6);
    for i in 0..4 {
        let q = Vector4::from_iterator(e.vectors.column(i).iter().copied());
        let l = e.values[i];
        if lmax > T::ZERO && l > cut {
            rank += 1;
            inverse += q * q.transpose() / l;
        } else {
            for (j, flag) in in_null.iter_mut().enumerate() {
                if q[j].abs() > null_tol {
                    *flag = true;
                }
            }
        }
    }
    SpectralInverse {
        inverse,
        eigenvalues: Vector4::from_iterator(e.values.iter().copied()),
        rank,
        in_null_space: in_null,
    }
}

/// `lambda_max / lambda_min`; infinite when `lambda_min <= 0`.
pub fn condition_number<T: Real>(eigenvalues: &Vector4<T>) -> T {
    let lmax = eigenvalues[0];
    let lmin = eigenvalues[3];
    if lmin > T::ZERO {
        lmax / lmin
    } else {
        T::max_value().unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct FimReport<T: Real> {
    pub f: Matrix4<T>,
    /// `F^-1`, present when `F` is numerically invertible.
    pub crlb: Option<Matrix4<T>>,
    /// Trace of the translation block of `F^-1`.
    pub crlb_t: Option<T>,
    pub crlb_theta: Option<T>,
    pub det_f: T,
    pub kappa: T,
    pub rank: usize,
}

/// `F = sigma_r^-2 sum_i G_i^T G_i` and the derived CRLB.
pub fn fim<T: Real>(tf: &Transform4DoF<T>, ds: &SyncedDataset<T>) -> Result<FimReport<T>> {
    let inv_var = T::ONE / (ds.sigma_r * ds.sigma_r);
    let mut f = Matrix4::zeros();
    for g in jacobians(tf, ds)? {
        let r = g.row();
        f += r * r.transpose();
    }
    f *= inv_var;
    Ok(fim_report_from(f))
}

/// Wraps an already assembled information matrix.
pub fn fim_report_from<T: Real>(f: Matrix4<T>) -> FimReport<T> {
    let spec = spectral_inverse(&f);
    let invertible = spec.rank == 4;
    let crlb = invertible.then_some(spec.inverse);
    FimReport {
        f,
        crlb,
        crlb_t: crlb.map(|c| c[(0, 0)] + c[(1, 1)] + c[(2, 2)]),
        crlb_theta: crlb.map(|c| c[(3, 3)]),
        det_f: f.determinant(),
        kappa: condition_number(&spec.eigenvalues),
        rank: spec.rank,
    }
}

fn triple<T: Real>(a: &Vector3<T>, b: &Vector3<T>, c: &Vector3<T>) -> T {
    a.cross(b).dot(c)
}

/// Signed 4x4 minor of the Jacobian for one 4-subset, as the combination of
/// triple products `T_1..T_4` with alternating signs.
fn subset_minor<T: Real>(g: [&RangeJacobian<T>; 4]) -> T {
    let [g1, g2, g3, g4] = g;
    let t1 = triple(&g2.u, &g3.u, &g4.u);
    let t2 = triple(&g1.u, &g3.u, &g4.u);
    let t3 = triple(&g1.u, &g2.u, &g4.u);
    let t4 = triple(&g1.u, &g2.u, &g3.u);
    -g1.phi * t1 + g2.phi * t2 - g3.phi * t3 + g4.phi * t4
}

/// Sums `term(i)` over `0..k` in parallel with a result independent of the
/// thread count.
fn ordered_parallel_sum<T: Real, F>(k: usize, term: F) -> T
where
    F: Fn(usize) -> T + Sync + Send,
{
    let parts: Vec<T> = (0..k).into_par_iter().map(term).collect();
    compensated_sum(parts)
}

/// `det(F)` as a sum over all 4-subsets of squared Jacobian minors.
///
/// The prefactor is `sigma_r^-8`, so the result equals the determinant of the
/// 4x4 information matrix.
pub fn det_fim_geometric<T: Real>(tf: &Transform4DoF<T>, ds: &SyncedDataset<T>) -> Result<T> {
    let k = ds.len();
    if k < 4 {
        return Err(Error::InsufficientData { need: 4, have: k });
    }
    if k > MAX_EXHAUSTIVE_K {
        return Err(Error::TooManySamples {
            have: k,
            max: MAX_EXHAUSTIVE_K,
        });
    }
    let g = jacobians(tf, ds)?;
    let sum = ordered_parallel_sum(k, |a| {
        let mut terms = Vec::new();
        for b in (a + 1)..k {
            for c in (b + 1)..k {
                for d in (c + 1)..k {
                    let m = subset_minor([&g[a], &g[b], &g[c], &g[d]]);
                    terms.push(m * m);
                }
            }
        }
        compensated_sum(terms)
    });
    let s2 = ds.sigma_r * ds.sigma_r;
    Ok(sum / (s2 * s2 * s2 * s2))
}

/// Unbiased estimate of [`det_fim_geometric`] from `n_sets` uniformly drawn
/// 4-subsets, for sample counts beyond the exhaustive limit.
pub fn det_fim_geometric_sampled<T: Real>(
    tf: &Transform4DoF<T>,
    ds: &SyncedDataset<T>,
    n_sets: usize,
    seed: u64,
) -> Result<T> {
    let k = ds.len();
    if k < 4 {
        return Err(Error::InsufficientData { need: 4, have: k });
    }
    if n_sets == 0 {
        return Err(Error::InvalidInput("need at least one subset".into()));
    }
    let g = jacobians(tf, ds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms = (0..n_sets).map(|_| {
        let mut idx = sample(&mut rng, k, 4).into_vec();
        idx.sort_unstable();
        let m = subset_minor([&g[idx[0]], &g[idx[1]], &g[idx[2]], &g[idx[3]]]);
        m * m
    });
    let mean = compensated_sum(terms) / T::from_usize(n_sets).unwrap();
    let kf = T::from_usize(k).unwrap();
    let subsets = kf * (kf - T::ONE) * (kf - T::TWO) * (kf - T::lit(3.0)) / T::lit(24.0);
    let s2 = ds.sigma_r * ds.sigma_r;
    Ok(mean * subsets / (s2 * s2 * s2 * s2))
}

/// Reduced estimation problems with some parameters known or dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubProblem {
    /// Heading known, translation in 3D.
    #[serde(rename = "3d_known_theta")]
    ThreeDKnownTheta,
    /// Planar motion, unknown `(t_x, t_y, theta)`.
    #[serde(rename = "2d_unknown_theta")]
    TwoDUnknownTheta,
    /// Planar motion, heading known, unknown `(t_x, t_y)`.
    #[serde(rename = "2d_known_theta")]
    TwoDKnownTheta,
}

impl SubProblem {
    pub fn dim(self) -> usize {
        match self {
            Self::ThreeDKnownTheta | Self::TwoDUnknownTheta => 3,
            Self::TwoDKnownTheta => 2,
        }
    }

    fn planar(self) -> bool {
        !matches!(self, Self::ThreeDKnownTheta)
    }
}

/// Projects inputs onto the `z = 0` plane for the planar variants.
pub fn project_planar<T: Real>(tf: &Transform4DoF<T>, ds: &SyncedDataset<T>) -> (Transform4DoF<T>, SyncedDataset<T>) {
    let flat = |v: &Vector3<T>| Vector3::new(v.x, v.y, T::ZERO);
    let tf = Transform4DoF::new(flat(&tf.t), tf.theta);
    let mut ds = ds.clone();
    for s in &mut ds.samples {
        s.pa = flat(&s.pa);
        s.pb = flat(&s.pb);
    }
    (tf, ds)
}

/// Determinant of the information matrix of a reduced problem, expanded over
/// subsets of measurements like [`det_fim_geometric`].
pub fn det_fim_subproblem<T: Real>(variant: SubProblem, ds: &SyncedDataset<T>, tf: &Transform4DoF<T>) -> Result<T> {
    let k = ds.len();
    let n = variant.dim();
    if k < n {
        return Err(Error::InsufficientData { need: n, have: k });
    }
    if k > MAX_EXHAUSTIVE_K {
        return Err(Error::TooManySamples {
            have: k,
            max: MAX_EXHAUSTIVE_K,
        });
    }
    let (tf, ds) = if variant.planar() {
        project_planar(tf, ds)
    } else {
        (*tf, ds.clone())
    };
    let g = jacobians(&tf, &ds)?;
    let cz = |a: &Vector3<T>, b: &Vector3<T>| a.x * b.y - a.y * b.x;
    let sum = match variant {
        SubProblem::ThreeDKnownTheta => ordered_parallel_sum(k, |a| {
            let mut terms = Vec::new();
            for b in (a + 1)..k {
                for c in (b + 1)..k {
                    let m = triple(&g[a].u, &g[b].u, &g[c].u);
                    terms.push(m * m);
                }
            }
            compensated_sum(terms)
        }),
        SubProblem::TwoDUnknownTheta => ordered_parallel_sum(k, |a| {
            let mut terms = Vec::new();
            for b in (a + 1)..k {
                for c in (b + 1)..k {
                    let m = g[a].phi * cz(&g[b].u, &g[c].u) - g[b].phi * cz(&g[a].u, &g[c].u)
                        + g[c].phi * cz(&g[a].u, &g[b].u);
                    terms.push(m * m);
                }
            }
            compensated_sum(terms)
        }),
        SubProblem::TwoDKnownTheta => ordered_parallel_sum(k, |a| {
            compensated_sum(((a + 1)..k).map(|b| {
                let m = cz(&g[a].u, &g[b].u);
                m * m
            }))
        }),
    };
    let s2 = ds.sigma_r * ds.sigma_r;
    let pref = (0..n).fold(T::ONE, |acc, _| acc / s2);
    Ok(sum * pref)
}

/// Outcome of the singularity test on an (estimated) information matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingularityFlags {
    pub configuration_singular: bool,
    /// `[t_x, t_y, t_z, theta]`.
    pub per_param_unobservable: [bool; 4],
    pub kappa: f64,
    pub kappa_threshold: f64,
}

/// Standard errors `sqrt([F^-1]_ii)`; `None` for parameters with a component
/// in the numerical null space.
pub fn standard_errors<T: Real>(f: &Matrix4<T>) -> [Option<T>; 4] {
    let spec = spectral_inverse(f);
    std::array::from_fn(|i| {
        if spec.in_null_space[i] || spec.rank == 0 {
            None
        } else {
            Some(spec.inverse[(i, i)].max(T::ZERO).sqrt())
        }
    })
}

pub fn singularity_report<T: Real>(f_hat: &Matrix4<T>, kappa_threshold: T) -> SingularityFlags {
    let spec = spectral_inverse(f_hat);
    let kappa = condition_number(&spec.eigenvalues);
    let se = standard_errors(f_hat);
    let mut finite: Vec<T> = se.iter().flatten().copied().collect();
    finite.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let median = match finite.len() {
        0 => None,
        n if n % 2 == 1 => Some(finite[n / 2]),
        n => Some((finite[n / 2 - 1] + finite[n / 2]) * T::HALF),
    };
    let ceiling = median.map(|m| m * T::lit(SE_MEDIAN_FACTOR));
    let per = std::array::from_fn(|i| match (se[i], ceiling) {
        (None, _) | (_, None) => true,
        (Some(s), Some(c)) => s > c,
    });
    SingularityFlags {
        configuration_singular: kappa > kappa_threshold,
        per_param_unobservable: per,
        kappa: kappa.to_f64_lossy(),
        kappa_threshold: kappa_threshold.to_f64_lossy(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval<T: Real> {
    pub lower: T,
    pub upper: T,
}

/// 95% intervals `theta_i +- 1.96 sqrt([F^-1]_ii)`. Fails with the singularity
/// flags when `F` is not invertible.
pub fn confidence_intervals<T: Real>(
    t_hat: &Transform4DoF<T>,
    f_hat: &Matrix4<T>,
) -> Result<[Interval<T>; 4], SingularityFlags> {
    let spec = spectral_inverse(f_hat);
    if spec.rank < 4 {
        return Err(singularity_report(f_hat, T::lit(DEFAULT_KAPPA_THRESHOLD)));
    }
    let p = t_hat.params();
    let z = T::lit(1.96);
    Ok(std::array::from_fn(|i| {
        let hw = z * spec.inverse[(i, i)].max(T::ZERO).sqrt();
        Interval {
            lower: p[i] - hw,
            upper: p[i] + hw,
        }
    }))
}
