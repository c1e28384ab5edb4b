//! Dense primal-dual interior-point method for small semidefinite programs.
//!
//! Primal: `min <C, X>  s.t. <A_i, X> = b_i, X >= 0`.
//! Dual:   `max b^T y   s.t. sum_i y_i A_i + Z = C, Z >= 0`.
//!
//! Infeasible-start path following with the HKM search direction and a
//! Mehrotra predictor-corrector. Everything is dense; the intended envelope is
//! `n <= 16`, `m <= 8`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::Real;

use super::eig::eig_sym;

/// Semidefinite program in standard form.
#[derive(Debug, Clone)]
pub struct SdpStandardForm<T: Real> {
    pub c: DMatrix<T>,
    pub a: Vec<DMatrix<T>>,
    pub b: DVector<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct SdpOptions<T: Real> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for SdpOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Optimal,
    MaxIter,
    Infeasible,
    Numerical,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub primal_obj: f64,
    pub dual_obj: f64,
    /// `|primal_obj - dual_obj|`.
    pub gap: f64,
    /// `<X, Z>` at the final iterate.
    pub complementarity: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub status: SdpStatus,
}

#[derive(Debug, Clone)]
pub struct SdpSolution<T: Real> {
    pub x: DMatrix<T>,
    pub y: DVector<T>,
    pub z: DMatrix<T>,
    pub diagnostics: SolveDiagnostics,
}

/// Frobenius inner product.
fn inner<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    a.dot(b)
}

fn sym<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::HALF
}

impl<T: Real> SdpStandardForm<T> {
    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if !self.c.is_square() {
            return Err(Error::InvalidInput("objective matrix not square".into()));
        }
        if self.b.len() != self.m() || self.m() == 0 {
            return Err(Error::InvalidInput(format!(
                "{} constraint matrices but {} right-hand sides",
                self.m(),
                self.b.len()
            )));
        }
        let sym_tol = T::lit(1e-12);
        let check = |m: &DMatrix<T>, what: &str| -> Result<()> {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::InvalidInput(format!("{what} has wrong shape")));
            }
            if !m.iter().all(|v| v.is_finite_val()) {
                return Err(Error::InvalidInput(format!("{what} has non-finite entries")));
            }
            let asym = (m - m.transpose()).amax();
            if asym > sym_tol * (T::ONE + m.amax()) {
                return Err(Error::InvalidInput(format!("{what} is not symmetric")));
            }
            Ok(())
        };
        check(&self.c, "C")?;
        for (i, a) in self.a.iter().enumerate() {
            check(a, &format!("A[{i}]"))?;
        }
        Ok(())
    }

    /// `A(X)_i = <A_i, X>`.
    pub fn apply_a(&self, x: &DMatrix<T>) -> DVector<T> {
        DVector::from_iterator(self.m(), self.a.iter().map(|a| inner(a, x)))
    }

    /// `A^*(y) = sum_i y_i A_i`.
    pub fn apply_at(&self, y: &DVector<T>) -> DMatrix<T> {
        let n = self.n();
        let mut out = DMatrix::zeros(n, n);
        for (a, &yi) in self.a.iter().zip(y.iter()) {
            out += a * yi;
        }
        out
    }
}

/// Largest `alpha` in `(0, inf]` keeping `x + alpha dx` positive semidefinite,
/// given a Cholesky factor of `x`.
fn max_step<T: Real>(chol_l: &DMatrix<T>, dx: &DMatrix<T>) -> T {
    let n = chol_l.nrows();
    let linv = chol_l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .unwrap_or_else(|| DMatrix::identity(n, n));
    let w = &linv * dx * linv.transpose();
    let lmin = eig_sym(&w).min();
    if lmin >= T::ZERO {
        T::max_value().unwrap()
    } else {
        -T::ONE / lmin
    }
}

struct Direction<T: Real> {
    dx: DMatrix<T>,
    dy: DVector<T>,
    dz: DMatrix<T>,
}

/// Solves the HKM Newton system for a given complementarity right-hand side
/// `rc` (target for `X dZ + dX Z`).
#[allow(clippy::too_many_arguments)]
fn newton_direction<T: Real>(
    p: &SdpStandardForm<T>,
    x: &DMatrix<T>,
    zinv: &DMatrix<T>,
    schur: &SchurFactor<T>,
    rp: &DVector<T>,
    rd: &DMatrix<T>,
    rc: &DMatrix<T>,
) -> Option<Direction<T>> {
    let base = rc * zinv - x * rd * zinv;
    let h = p.apply_a(&sym(&base));
    let dy = schur.solve(&(rp - h))?;
    let dz = sym(&(rd - p.apply_at(&dy)));
    let dx = sym(&((rc - x * &dz) * zinv));
    Some(Direction { dx, dy, dz })
}

enum SchurFactor<T: Real> {
    Chol(nalgebra::Cholesky<T, nalgebra::Dyn>),
    Lu(nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>),
}

impl<T: Real> SchurFactor<T> {
    fn new(m: DMatrix<T>) -> Option<Self> {
        if let Some(c) = m.clone().cholesky() {
            return Some(Self::Chol(c));
        }
        let lu = m.lu();
        if lu.is_invertible() {
            Some(Self::Lu(lu))
        } else {
            None
        }
    }

    fn solve(&self, rhs: &DVector<T>) -> Option<DVector<T>> {
        let out = match self {
            Self::Chol(c) => c.solve(rhs),
            Self::Lu(l) => l.solve(rhs)?,
        };
        out.iter().all(|v| v.is_finite_val()).then_some(out)
    }
}

/// Solves a small dense SDP.
///
/// Returns the optimal primal-dual triple, or an [`Error::Sdp`] carrying the
/// terminal status when the method stops for any other reason.
pub fn sdp_solve<T: Real>(p: &SdpStandardForm<T>, opts: &SdpOptions<T>) -> Result<SdpSolution<T>> {
    p.validate()?;
    let n = p.n();
    let m = p.m();
    let nf = T::from_usize(n).unwrap();
    let sqrt_n = nf.sqrt();
    let ten = T::lit(10.0);

    let norm_b = p.b.norm();
    let norm_c = p.c.norm();
    let norms_a: Vec<T> = p.a.iter().map(|a| a.norm()).collect();

    let mut xi = ten.max(sqrt_n);
    let mut eta = ten.max(sqrt_n).max(norm_c);
    for (i, &na) in norms_a.iter().enumerate() {
        xi = xi.max(sqrt_n * (T::ONE + p.b[i].abs()) / (T::ONE + na));
        eta = eta.max(na);
    }
    let mut x = DMatrix::identity(n, n) * xi;
    let mut z = DMatrix::identity(n, n) * eta;
    let mut y = DVector::zeros(m);

    let big = T::lit(1e10);
    let mut stalls = 0;

    for iter in 0..=opts.max_iter {
        let rp = &p.b - p.apply_a(&x);
        let rd = sym(&(&p.c - &z - p.apply_at(&y)));
        let pobj = inner(&p.c, &x);
        let dobj = p.b.dot(&y);
        let xz = inner(&x, &z);
        let pinf = rp.norm() / (T::ONE + norm_b);
        let dinf = rd.norm() / (T::ONE + norm_c);
        let rel_gap = (pobj - dobj).abs() / (T::ONE + pobj.abs() + dobj.abs());
        let rel_compl = xz.abs() / (T::ONE + pobj.abs() + dobj.abs());

        let mut diag = SolveDiagnostics {
            iterations: iter,
            primal_obj: pobj.to_f64_lossy(),
            dual_obj: dobj.to_f64_lossy(),
            gap: (pobj - dobj).abs().to_f64_lossy(),
            complementarity: xz.to_f64_lossy(),
            primal_infeasibility: pinf.to_f64_lossy(),
            dual_infeasibility: dinf.to_f64_lossy(),
            status: SdpStatus::MaxIter,
        };

        if pinf <= opts.tol && dinf <= opts.tol && rel_gap <= opts.tol && rel_compl <= opts.tol {
            diag.status = SdpStatus::Optimal;
            return Ok(SdpSolution {
                x,
                y,
                z,
                diagnostics: diag,
            });
        }
        // Divergence of the dual objective certifies primal infeasibility,
        // divergence of the primal objective certifies dual infeasibility.
        if (dobj > big * (T::ONE + pobj.abs()) && dinf <= T::lit(1e-3))
            || (-pobj > big * (T::ONE + dobj.abs()) && pinf <= T::lit(1e-3))
            || x.amax() > big * big
            || y.amax() > big * big
        {
            diag.status = SdpStatus::Infeasible;
            return Err(Error::Sdp {
                status: diag.status,
                iterations: iter,
            });
        }
        if iter == opts.max_iter {
            break;
        }

        let numerical = || {
            Err(Error::Sdp {
                status: SdpStatus::Numerical,
                iterations: iter,
            })
        };

        let Some(chol_x) = x.clone().cholesky() else {
            return numerical();
        };
        let Some(chol_z) = z.clone().cholesky() else {
            return numerical();
        };
        let zinv = chol_z.inverse();
        let lx = chol_x.l();
        let lz = chol_z.l();

        // Schur complement M_ij = <A_i, X A_j Z^-1>.
        let g: Vec<DMatrix<T>> = p.a.iter().map(|a| &x * a * &zinv).collect();
        let mut schur = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                schur[(i, j)] = inner(&p.a[i], &g[j]);
            }
        }
        let schur = (&schur + schur.transpose()) * T::HALF;
        let Some(schur) = SchurFactor::new(schur) else {
            return numerical();
        };

        let mu = xz / nf;
        let xz_mat = &x * &z;

        // Predictor.
        let rc_aff = -&xz_mat;
        let Some(aff) = newton_direction(p, &x, &zinv, &schur, &rp, &rd, &rc_aff) else {
            return numerical();
        };
        let ap = max_step(&lx, &aff.dx).min(T::ONE);
        let ad = max_step(&lz, &aff.dz).min(T::ONE);
        let mu_aff = inner(&(&x + &aff.dx * ap), &(&z + &aff.dz * ad)) / nf;
        let ratio = (mu_aff / mu).max(T::ZERO).min(T::ONE);
        let sigma = ratio * ratio * ratio;

        // Corrector.
        let rc = DMatrix::identity(n, n) * (sigma * mu) - &xz_mat - &aff.dx * &aff.dz;
        let Some(dir) = newton_direction(p, &x, &zinv, &schur, &rp, &rd, &rc) else {
            return numerical();
        };
        let ap_max = max_step(&lx, &dir.dx);
        let ad_max = max_step(&lz, &dir.dz);
        let gamma = T::lit(0.9) + T::lit(0.09) * ap.min(ad);
        let alpha_p = (gamma * ap_max).min(T::ONE);
        let alpha_d = (gamma * ad_max).min(T::ONE);
        if alpha_p < T::lit(1e-10) && alpha_d < T::lit(1e-10) {
            stalls += 1;
            if stalls > 3 {
                return numerical();
            }
        } else {
            stalls = 0;
        }

        x = sym(&(&x + &dir.dx * alpha_p));
        y += &dir.dy * alpha_d;
        z = sym(&(&z + &dir.dz * alpha_d));
    }
    Err(Error::Sdp {
        status: SdpStatus::MaxIter,
        iterations: opts.max_iter,
    })
}
