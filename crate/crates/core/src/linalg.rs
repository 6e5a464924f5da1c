//! Small dense complex solvers used by OMP refits and MMSE detection.

use ndarray::{Array2, ArrayView2};

use crate::scalar::{czero, Cplx, Real};

/// `A^H B`.
pub fn adjoint_mul<T: Real>(a: ArrayView2<'_, Cplx<T>>, b: ArrayView2<'_, Cplx<T>>) -> Array2<Cplx<T>> {
    a.t().mapv(|v| v.conj()).dot(&b)
}

/// `A^H A`.
pub fn gram<T: Real>(a: ArrayView2<'_, Cplx<T>>) -> Array2<Cplx<T>> {
    adjoint_mul(a, a)
}

/// Lower Cholesky factor of a Hermitian positive-definite matrix, or `None` when a
/// pivot falls below `rel_tol` times the largest diagonal entry.
pub fn cholesky<T: Real>(a: &Array2<Cplx<T>>, rel_tol: T) -> Option<Array2<Cplx<T>>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let scale = (0..n).map(|i| a[[i, i]].re).fold(T::zero(), T::max);
    if n > 0 && !(scale > T::zero()) {
        return None;
    }
    let floor = scale * rel_tol;
    let mut l = Array2::from_elem((n, n), czero::<T>());
    for j in 0..n {
        let mut d = a[[j, j]].re;
        for p in 0..j {
            d -= l[[j, p]].norm_sqr();
        }
        if !(d > floor) {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = Cplx::new(djj, T::zero());
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for p in 0..j {
                s -= l[[i, p]] * l[[j, p]].conj();
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L L^H X = B` given the Cholesky factor.
pub fn cholesky_solve<T: Real>(l: &Array2<Cplx<T>>, b: &Array2<Cplx<T>>) -> Array2<Cplx<T>> {
    let n = l.nrows();
    let mut x = b.clone();
    for col in 0..b.ncols() {
        for i in 0..n {
            let mut s = x[[i, col]];
            for p in 0..i {
                s -= l[[i, p]] * x[[p, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = x[[i, col]];
            for p in (i + 1)..n {
                s -= l[[p, i]].conj() * x[[p, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
    }
    x
}

/// Solution of a Hermitian system, with a note on whether regularisation was needed.
#[derive(Debug, Clone)]
pub struct Solved<T: Real> {
    pub x: Array2<Cplx<T>>,
    /// The system was numerically singular and solved through a vanishing ridge
    /// (the pseudo-inverse limit).
    pub regularized: bool,
}

/// Solves `H X = B` for Hermitian positive semi-definite `H`. Singular systems fall back
/// to `(H + eps tr(H)/n I)^{-1}`, which approaches the pseudo-inverse solution.
pub fn solve_psd<T: Real>(h: &Array2<Cplx<T>>, b: &Array2<Cplx<T>>) -> Solved<T> {
    let n = h.nrows();
    let eps = T::epsilon();
    if let Some(l) = cholesky(h, eps * T::lit(1e3)) {
        return Solved {
            x: cholesky_solve(&l, b),
            regularized: false,
        };
    }
    let trace = (0..n).map(|i| h[[i, i]].re).fold(T::zero(), |a, v| a + v);
    let mut ridge = if trace > T::zero() {
        trace / T::lit(n as f64) * eps.sqrt()
    } else {
        T::one()
    };
    loop {
        let mut reg = h.clone();
        for i in 0..n {
            reg[[i, i]].re += ridge;
        }
        if let Some(l) = cholesky(&reg, eps) {
            return Solved {
                x: cholesky_solve(&l, b),
                regularized: true,
            };
        }
        ridge = ridge * T::lit(10.0);
    }
}

/// Least-squares `argmin ||A X - B||_F` through the normal equations.
pub fn least_squares<T: Real>(a: ArrayView2<'_, Cplx<T>>, b: ArrayView2<'_, Cplx<T>>) -> Solved<T> {
    solve_psd(&gram(a), &adjoint_mul(a, b))
}
