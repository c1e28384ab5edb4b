//! Damped Gauss-Newton (Levenberg-Marquardt) for small dense problems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::num::Real;

#[derive(Debug, Clone, Copy)]
pub struct LmOptions<T: Real> {
    /// Stop when `max |J^T r| <= gtol`.
    pub gtol: T,
    /// Stop when the step is below `xtol * (|x| + xtol)`.
    pub xtol: T,
    /// Stop when the relative cost reduction of an accepted step is below `ftol`.
    pub ftol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for LmOptions<T> {
    fn default() -> Self {
        Self {
            gtol: T::lit(1e-10),
            xtol: T::lit(1e-12),
            ftol: T::lit(1e-14),
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LmStatus {
    Gradient,
    StepSize,
    CostReduction,
    ZeroResidual,
    MaxIterations,
    /// The damping grew without finding a descent step.
    Stalled,
}

impl LmStatus {
    pub fn converged(self) -> bool {
        !matches!(self, LmStatus::MaxIterations | LmStatus::Stalled)
    }
}

#[derive(Debug, Clone)]
pub struct LmResult<T: Real> {
    pub x: DVector<T>,
    /// `0.5 |r|^2` at `x`.
    pub cost: T,
    pub iterations: usize,
    pub status: LmStatus,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<T>,
}

fn half_sq<T: Real>(r: &DVector<T>) -> T {
    r.norm_squared() * T::HALF
}

fn finite<T: Real>(v: &DVector<T>) -> bool {
    v.iter().all(|x| x.is_finite_val())
}

/// Minimizes `0.5 |r(x)|^2` starting from `x0`.
///
/// Each iteration first tries the undamped Gauss-Newton step and only
/// introduces damping after a rejected step, so quadratic objectives finish
/// in a single step. Accepted steps never increase the cost.
pub fn lm_minimize<T, R, J>(residuals: R, jacobian: J, x0: DVector<T>, opts: &LmOptions<T>) -> Result<LmResult<T>>
where
    T: Real,
    R: Fn(&DVector<T>) -> DVector<T>,
    J: Fn(&DVector<T>) -> DMatrix<T>,
{
    let mut x = x0;
    let mut r = residuals(&x);
    if !finite(&r) || !finite(&x) {
        return Err(Error::LeastSquares("non-finite residual at start".into()));
    }
    let mut cost = half_sq(&r);
    let mut history = vec![cost];
    if cost == T::ZERO {
        return Ok(LmResult {
            x,
            cost,
            iterations: 0,
            status: LmStatus::ZeroResidual,
            cost_history: history,
        });
    }

    let p = x.len();
    let mut lambda = T::ZERO;
    let mut nu = T::TWO;
    let tau = T::lit(1e-3);

    for iter in 1..=opts.max_iter {
        let jac = jacobian(&x);
        if !jac.iter().all(|v| v.is_finite_val()) {
            return Err(Error::LeastSquares("non-finite Jacobian".into()));
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        if g.amax() <= opts.gtol {
            return Ok(LmResult {
                x,
                cost,
                iterations: iter - 1,
                status: LmStatus::Gradient,
                cost_history: history,
            });
        }
        let max_diag = (0..p).fold(T::ZERO, |m, i| m.max(jtj[(i, i)]));
        let diag_floor = max_diag * T::lit(1e-15) + T::lit(1e-300);

        let mut accepted = false;
        for _ in 0..60 {
            let mut a = jtj.clone();
            for i in 0..p {
                a[(i, i)] += lambda * jtj[(i, i)].max(diag_floor);
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => match a.lu().solve(&(-&g)) {
                    Some(s) => s,
                    None => {
                        lambda = if lambda == T::ZERO {
                            tau * max_diag.max(T::ONE)
                        } else {
                            lambda * nu
                        };
                        nu *= T::TWO;
                        continue;
                    }
                },
            };
            if !finite(&step) {
                lambda = if lambda == T::ZERO {
                    tau * max_diag.max(T::ONE)
                } else {
                    lambda * nu
                };
                nu *= T::TWO;
                continue;
            }
            if step.norm() <= opts.xtol * (x.norm() + opts.xtol) {
                return Ok(LmResult {
                    x,
                    cost,
                    iterations: iter,
                    status: LmStatus::StepSize,
                    cost_history: history,
                });
            }
            let x_new = &x + &step;
            let r_new = residuals(&x_new);
            let cost_new = if finite(&r_new) {
                half_sq(&r_new)
            } else {
                T::max_value().unwrap()
            };
            // Predicted reduction of the (damped) quadratic model.
            let predicted = -(g.dot(&step) + (&jac * &step).norm_squared() * T::HALF);
            let actual = cost - cost_new;
            let rho = if predicted > T::ZERO {
                actual / predicted
            } else {
                -T::ONE
            };
            if actual > T::ZERO && rho > T::lit(1e-4) {
                let rel = actual / cost;
                x = x_new;
                r = r_new;
                cost = cost_new;
                history.push(cost);
                if lambda > T::ZERO {
                    let f = T::ONE - (T::TWO * rho - T::ONE).powi(3);
                    lambda *= f.max(T::ONE / T::lit(3.0));
                    if lambda < T::lit(1e-12) * max_diag {
                        lambda = T::ZERO;
                    }
                }
                nu = T::TWO;
                accepted = true;
                if cost == T::ZERO {
                    return Ok(LmResult {
                        x,
                        cost,
                        iterations: iter,
                        status: LmStatus::ZeroResidual,
                        cost_history: history,
                    });
                }
                if rel <= opts.ftol {
                    return Ok(LmResult {
                        x,
                        cost,
                        iterations: iter,
                        status: LmStatus::CostReduction,
                        cost_history: history,
                    });
                }
                break;
            }
            lambda = if lambda == T::ZERO {
                tau * max_diag.max(T::lit(1e-12))
            } else {
                lambda * nu
            };
            nu *= T::TWO;
        }
        if !accepted {
            return Ok(LmResult {
                x,
                cost,
                iterations: iter,
                status: LmStatus::Stalled,
                cost_history: history,
            });
        }
    }
    Ok(LmResult {
        x,
        cost,
        iterations: opts.max_iter,
        status: LmStatus::MaxIterations,
        cost_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_least_squares_in_two_iterations() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.2, 2.9, 4.1]);
        let res = lm_minimize(|x| &a * x - &b, |_| a.clone(), DVector::zeros(2), &LmOptions::default()).unwrap();
        let normal = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * &b));
        assert!(res.iterations <= 2, "took {} iterations", res.iterations);
        assert_relative_eq!(res.x, normal, epsilon = 1e-12);
    }

    #[test]
    fn rosenbrock_reaches_minimum() {
        let res = lm_minimize(
            |x| DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]),
            |x| DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0]),
            DVector::from_vec(vec![-1.2f64, 1.0]),
            &LmOptions::default(),
        )
        .unwrap();
        assert!(res.status.converged());
        assert!((res.x[0] - 1.0).abs() < 1e-6 && (res.x[1] - 1.0).abs() < 1e-6);
        assert!(res.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_residual_start_returns_immediately() {
        let res = lm_minimize(
            |x: &DVector<f64>| x.clone(),
            |_| DMatrix::identity(3, 3),
            DVector::zeros(3),
            &LmOptions::default(),
        )
        .unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.status, LmStatus::ZeroResidual);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let res = lm_minimize(
            |x: &DVector<f64>| x.map(|v| v.ln()),
            |_| DMatrix::identity(1, 1),
            DVector::from_vec(vec![-1.0]),
            &LmOptions::default(),
        );
        assert!(res.is_err());
    }

    #[test]
    fn max_iterations_reported() {
        let opts = LmOptions {
            max_iter: 1,
            gtol: 0.0,
            xtol: 0.0,
            ftol: 0.0,
        };
        let res = lm_minimize(
            |x| DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]),
            |x| DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0]),
            DVector::from_vec(vec![-1.2f64, 1.0]),
            &opts,
        )
        .unwrap();
        assert_eq!(res.status, LmStatus::MaxIterations);
    }
}
