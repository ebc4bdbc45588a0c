//! Dense Hermitian positive-definite solves for the per-bin normal equations.

use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CholeskyFailure {
    pub pivot: usize,
    /// Ratio of the largest to the smallest squared pivot seen before failure.
    pub condition: f64,
}

/// In-place Cholesky factorization `A = L L^H` of a row-major `n x n`
/// Hermitian matrix. Only the lower triangle of `a` is read; on success it
/// holds `L`. Returns the condition estimate `max(L_ii^2) / min(L_ii^2)`.
pub fn cholesky_in_place(a: &mut [Complex64], n: usize) -> Result<f64, CholeskyFailure> {
    debug_assert_eq!(a.len(), n * n);
    let mut max_piv = 0.0f64;
    let mut min_piv = f64::INFINITY;
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= a[j * n + k].norm_sqr();
        }
        max_piv = max_piv.max(d);
        let scale = max_piv.max(f64::MIN_POSITIVE);
        if !(d > scale * 1e-15) || !d.is_finite() {
            return Err(CholeskyFailure {
                pivot: j,
                condition: if d > 0.0 { max_piv / d } else { f64::INFINITY },
            });
        }
        min_piv = min_piv.min(d);
        let ljj = d.sqrt();
        a[j * n + j] = Complex64::new(ljj, 0.0);
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k].conj();
            }
            a[i * n + j] = s / ljj;
        }
    }
    Ok(max_piv / min_piv)
}

/// Solve `L L^H x = b` given the factor produced by [`cholesky_in_place`].
pub fn cholesky_solve(l: &[Complex64], n: usize, b: &mut [Complex64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i].re;
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i].conj() * b[k];
        }
        b[i] = s / l[i * n + i].re;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn solves_random_hpd_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 6;
        // A = B B^H + I
        let b: Vec<Complex64> = (0..n * n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let mut a = vec![c(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = c(0.0, 0.0);
                for k in 0..n {
                    s += b[i * n + k] * b[j * n + k].conj();
                }
                a[i * n + j] = s;
            }
            a[i * n + i] += 1.0;
        }
        let x_true: Vec<Complex64> = (0..n).map(|i| c(i as f64, -(i as f64) * 0.5)).collect();
        let mut rhs: Vec<Complex64> = (0..n)
            .map(|i| (0..n).map(|j| a[i * n + j] * x_true[j]).sum())
            .collect();
        let mut l = a.clone();
        cholesky_in_place(&mut l, n).unwrap();
        cholesky_solve(&l, n, &mut rhs);
        for i in 0..n {
            assert!((rhs[i] - x_true[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn rejects_singular_matrix() {
        // rank one
        let v = [c(1.0, 0.0), c(0.0, 1.0)];
        let mut a: Vec<Complex64> = (0..4).map(|i| v[i / 2] * v[i % 2].conj()).collect();
        let err = cholesky_in_place(&mut a, 2).unwrap_err();
        assert_eq!(err.pivot, 1);
    }
}
