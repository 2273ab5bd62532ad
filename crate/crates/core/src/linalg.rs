//! Dense helpers for the small (dim ≤ 3) matrices that show up in diffusion
//! coefficients, plus a tridiagonal solver for cubic-spline interpolation.
//!
//! Matrices are row-major `&[f64]` of length `n * n`.

use crate::error::Error;
use crate::Result;

/// y = A x
pub fn matvec(a: &[f64], x: &[f64], y: &mut [f64]) {
    let n = x.len();
    debug_assert_eq!(a.len(), n * n);
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += a[i * n + j] * x[j];
        }
        y[i] = s;
    }
}

/// y = A' x
pub fn matvec_t(a: &[f64], x: &[f64], y: &mut [f64]) {
    let n = x.len();
    debug_assert_eq!(a.len(), n * n);
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += a[j * n + i] * x[j];
        }
        y[i] = s;
    }
}

/// C = A B
pub fn matmul(a: &[f64], b: &[f64], c: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i * n + k] * b[k * n + j];
            }
            c[i * n + j] = s;
        }
    }
}

/// C = A A'
pub fn aat(a: &[f64], c: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i * n + k] * a[j * n + k];
            }
            c[i * n + j] = s;
        }
    }
}

/// Invert a square matrix by Gauss-Jordan with partial pivoting.
pub fn invert(a: &[f64], inv: &mut [f64], n: usize) -> Result<()> {
    let mut m = a.to_vec();
    for i in 0..n {
        for j in 0..n {
            inv[i * n + j] = if i == j { 1.0 } else { 0.0 };
        }
    }
    for col in 0..n {
        let mut piv = col;
        let mut best = m[col * n + col].abs();
        for r in (col + 1)..n {
            let v = m[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(Error::invalid(format!(
                "singular matrix in invert (pivot {best:.3e} at column {col})"
            )));
        }
        if piv != col {
            for j in 0..n {
                m.swap(col * n + j, piv * n + j);
                inv.swap(col * n + j, piv * n + j);
            }
        }
        let d = m[col * n + col];
        for j in 0..n {
            m[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r * n + col];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                m[r * n + j] -= f * m[col * n + j];
                inv[r * n + j] -= f * inv[col * n + j];
            }
        }
    }
    Ok(())
}

/// Solve A x = b (small dense system, partial pivoting).
pub fn solve(a: &[f64], b: &[f64], x: &mut [f64]) -> Result<()> {
    let n = b.len();
    let mut inv = vec![0.0; n * n];
    invert(a, &mut inv, n)?;
    matvec(&inv, b, x);
    Ok(())
}

/// 1-norm condition estimate ‖A‖₁ ‖A⁻¹‖₁; `f64::INFINITY` for singular input.
pub fn cond_1(a: &[f64], n: usize) -> f64 {
    let mut inv = vec![0.0; n * n];
    if invert(a, &mut inv, n).is_err() {
        return f64::INFINITY;
    }
    norm_1(a, n) * norm_1(&inv, n)
}

fn norm_1(a: &[f64], n: usize) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            s += a[i * n + j].abs();
        }
        best = best.max(s);
    }
    best
}

/// Cholesky factor L (lower triangular, row-major) of an SPD matrix.
pub fn cholesky(a: &[f64], l: &mut [f64], n: usize) -> Result<()> {
    l.fill(0.0);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::invalid(format!(
                        "matrix not positive definite in cholesky (pivot {s:.3e})"
                    )));
                }
                l[i * n + j] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(())
}

/// Solve a tridiagonal system (Thomas algorithm). `sub`/`sup` have length n-1.
pub fn solve_tridiag(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut den = diag[0];
    if den == 0.0 {
        return Err(Error::invalid("zero pivot in tridiagonal solve"));
    }
    c[0] = if n > 1 { sup[0] / den } else { 0.0 };
    d[0] = rhs[0] / den;
    for i in 1..n {
        den = diag[i] - sub[i - 1] * c[i - 1];
        if den == 0.0 {
            return Err(Error::invalid("zero pivot in tridiagonal solve"));
        }
        if i < n - 1 {
            c[i] = sup[i] / den;
        }
        d[i] = (rhs[i] - sub[i - 1] * d[i - 1]) / den;
    }
    let mut x = d;
    for i in (0..n.saturating_sub(1)).rev() {
        let next = x[i + 1];
        x[i] -= c[i] * next;
    }
    Ok(x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invert_2x2() {
        let a = [4.0, 1.0, 2.0, 3.0];
        let mut inv = [0.0; 4];
        invert(&a, &mut inv, 2).unwrap();
        let mut prod = [0.0; 4];
        matmul(&a, &inv, &mut prod, 2);
        assert!((prod[0] - 1.0).abs() < 1e-12);
        assert!(prod[1].abs() < 1e-12);
        assert!(prod[2].abs() < 1e-12);
        assert!((prod[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_roundtrip() {
        let a = [4.0, 2.0, 0.5, 2.0, 5.0, 1.0, 0.5, 1.0, 3.0];
        let mut l = [0.0; 9];
        cholesky(&a, &mut l, 3).unwrap();
        let mut back = [0.0; 9];
        aat(&l, &mut back, 3);
        for (x, y) in a.iter().zip(back.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tridiag_matches_dense() {
        let sub = [1.0, 2.0];
        let diag = [4.0, 5.0, 6.0];
        let sup = [1.5, 0.5];
        let rhs = [1.0, 2.0, 3.0];
        let x = solve_tridiag(&sub, &diag, &sup, &rhs).unwrap();
        let a = [4.0, 1.5, 0.0, 1.0, 5.0, 0.5, 0.0, 2.0, 6.0];
        let mut xd = [0.0; 3];
        solve(&a, &rhs, &mut xd).unwrap();
        for (u, v) in x.iter().zip(xd.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn cond_identity_is_one() {
        let a = [1.0, 0.0, 0.0, 1.0];
        assert!((cond_1(&a, 2) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_rejected() {
        let a = [1.0, 2.0, 2.0, 4.0];
        let mut inv = [0.0; 4];
        assert!(invert(&a, &mut inv, 2).is_err());
        assert!(cond_1(&a, 2).is_infinite());
    }
}
