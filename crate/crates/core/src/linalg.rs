//! Dense helpers for the small (d ≤ 8) symmetric matrices that show up as
//! posterior covariances. Matrices are row-major `Vec<f64>` of length `n·n`.

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Returns `None` when a pivot is not strictly positive.
pub fn cholesky_lower(n: usize, a: &[f64]) -> Option<Vec<f64>> {
    assert_eq!(a.len(), n * n, "matrix shape mismatch");
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors stored as columns
/// of a row-major `n×n` matrix, so `a ≈ V · diag(λ) · Vᵀ`.
pub fn sym_eigen(n: usize, a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n, "matrix shape mismatch");
    let mut m = a.to_vec();
    // Work on the symmetrized part so tiny asymmetries cannot stall convergence.
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = s;
            m[j * n + i] = s;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() <= 1e-14 * (1.0 + frobenius(n, &m)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let evals = (0..n).map(|i| m[i * n + i]).collect();
    (evals, v)
}

fn frobenius(_n: usize, a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `y = A·x` for a row-major `n×n` matrix.
pub fn matvec(n: usize, a: &[f64], x: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    assert_eq!(x.len(), n);
    (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().zip(x).map(|(m, v)| m * v).sum())
        .collect()
}

/// Rebuild `V · diag(λ) · Vᵀ` from `sym_eigen` output.
pub fn from_eigen(n: usize, evals: &[f64], evecs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for k in 0..n {
        let lam = evals[k];
        for i in 0..n {
            let vik = evecs[i * n + k];
            for j in 0..n {
                out[i * n + j] += lam * vik * evecs[j * n + k];
            }
        }
    }
    out
}

/// Largest absolute entry of `A − Aᵀ`.
pub fn max_asymmetry(n: usize, a: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[i * n + j] - a[j * n + i]).abs());
        }
    }
    worst
}
