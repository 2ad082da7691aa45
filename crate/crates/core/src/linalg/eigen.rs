use num_complex::Complex64;

use super::decomp::{norm2_matrix, svd};
use super::expm::matrix_exp;
use super::matrix::DenseMatrix;
use super::LinalgError;

const HQR_MAX_ITS: usize = 60;

/// Eigenvalues of a real square matrix via Hessenberg reduction and Francis double-shift QR.
pub fn eigenvalues(m: &DenseMatrix) -> Result<Vec<Complex64>, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::Shape("eigenvalues require a square matrix".into()));
    }
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = m.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based working copy keeps the classical index arithmetic readable.
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = m[(i, j)];
        }
    }
    hessenberg(&mut a, n);
    let (wr, wi) = hqr(&mut a, n)?;
    Ok((1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect())
}

fn hessenberg(a: &mut [Vec<f64>], n: usize) {
    for m in 2..n {
        let mut x: f64 = 0.0;
        let mut i = m;
        for j in m..=n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                i = j;
            }
        }
        if i != m {
            for j in (m - 1)..=n {
                let t = a[i][j];
                a[i][j] = a[m][j];
                a[m][j] = t;
            }
            for row in a.iter_mut().skip(1) {
                row.swap(i, m);
            }
        }
        if x != 0.0 {
            for i in (m + 1)..=n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..=n {
                        a[i][j] -= y * a[m][j];
                    }
                    for row in a.iter_mut().skip(1) {
                        row[m] += y * row[i];
                    }
                }
            }
        }
    }
    for i in 1..=n {
        for j in 1..=n {
            if i > j + 1 {
                a[i][j] = 0.0;
            }
        }
    }
}

#[allow(clippy::many_single_char_names, unused_assignments)]
fn hqr(a: &mut [Vec<f64>], n: usize) -> Result<(Vec<f64>, Vec<f64>), LinalgError> {
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in (i.max(2) - 1)..=n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n as isize;
    let mut t = 0.0;
    let (mut p, mut q, mut r, mut s, mut w, mut x, mut y, mut z) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    while nn >= 1 {
        let mut its = 0;
        let mut l: isize;
        loop {
            l = nn;
            while l >= 2 {
                let lu = l as usize;
                s = a[lu - 1][lu - 1].abs() + a[lu][lu].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[lu][lu - 1].abs() + s == s {
                    a[lu][lu - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let nu = nn as usize;
            x = a[nu][nu];
            if l == nn {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                nn -= 1;
            } else {
                y = a[nu - 1][nu - 1];
                w = a[nu][nu - 1] * a[nu - 1][nu];
                if l == nn - 1 {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + z.copysign(p);
                        wr[nu - 1] = x + z;
                        wr[nu] = x + z;
                        if z != 0.0 {
                            wr[nu] = x - w / z;
                        }
                        wi[nu - 1] = 0.0;
                        wi[nu] = 0.0;
                    } else {
                        wr[nu - 1] = x + p;
                        wr[nu] = x + p;
                        wi[nu - 1] = -z;
                        wi[nu] = z;
                    }
                    nn -= 2;
                } else {
                    if its == HQR_MAX_ITS {
                        return Err(LinalgError::NoConvergence("hessenberg qr"));
                    }
                    if its == 10 || its == 20 || its == 40 {
                        t += x;
                        for i in 1..=nu {
                            a[i][i] -= x;
                        }
                        s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    let lu = l as usize;
                    let mut m = nu - 2;
                    loop {
                        z = a[m][m];
                        r = x - z;
                        s = y - z;
                        p = (r * s - w) / a[m + 1][m] + a[m][m + 1];
                        q = a[m + 1][m + 1] - z - r - s;
                        r = a[m + 2][m + 1];
                        s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == lu {
                            break;
                        }
                        let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in (m + 2)..=nu {
                        a[i][i - 2] = 0.0;
                        if i != m + 2 {
                            a[i][i - 3] = 0.0;
                        }
                    }
                    let mut k = m;
                    while k + 1 <= nu {
                        if k != m {
                            p = a[k][k - 1];
                            q = a[k + 1][k - 1];
                            r = 0.0;
                            if k != nu - 1 {
                                r = a[k + 2][k - 1];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        s = (p * p + q * q + r * r).sqrt().copysign(p);
                        if s != 0.0 {
                            if k == m {
                                if l as usize != m {
                                    a[k][k - 1] = -a[k][k - 1];
                                }
                            } else {
                                a[k][k - 1] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nu {
                                p = a[k][j] + q * a[k + 1][j];
                                if k != nu - 1 {
                                    p += r * a[k + 2][j];
                                    a[k + 2][j] -= p * z;
                                }
                                a[k + 1][j] -= p * y;
                                a[k][j] -= p * x;
                            }
                            let mmin = if nu < k + 3 { nu } else { k + 3 };
                            for i in lu..=mmin {
                                p = x * a[i][k] + y * a[i][k + 1];
                                if k != nu - 1 {
                                    p += z * a[i][k + 2];
                                    a[i][k + 2] -= p * r;
                                }
                                a[i][k + 1] -= p * q;
                                a[i][k] -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if l >= nn - 1 {
                break;
            }
        }
    }
    Ok((wr, wi))
}

/// Eigenvalue/eigenvector data used for spectral bounds.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: Vec<Complex64>,
    /// Unit-norm eigenvector columns; empty when the matrix is defective.
    pub vectors: Vec<Vec<Complex64>>,
    pub defective: bool,
}

/// Eigenvalues plus a full set of eigenvectors when one exists.
///
/// Eigenvalues closer than a relative `1e-6` are treated as one cluster and the cluster's
/// eigenspace is taken from the null space of `M - λI`. A cluster whose geometric
/// multiplicity falls short of its size marks the matrix defective.
pub fn eigen_system(m: &DenseMatrix) -> Result<EigenSystem, LinalgError> {
    let values = eigenvalues(m)?;
    let n = m.rows();
    let scale = norm2_matrix(m)?.max(1.0);
    let cluster_tol = 1e-6 * scale;
    let null_tol = 1e-7 * scale;

    let mut assigned = vec![false; n];
    let mut vectors: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    let mut defective = false;
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let members: Vec<usize> = (i..n)
            .filter(|&j| !assigned[j] && (values[j] - values[i]).norm() <= cluster_tol)
            .collect();
        for &j in &members {
            assigned[j] = true;
        }
        let center = members.iter().map(|&j| values[j]).sum::<Complex64>() / members.len() as f64;
        let basis = complex_null_space(m, center, null_tol, members.len())?;
        if basis.len() < members.len() {
            defective = true;
        }
        vectors.extend(basis);
    }
    if defective {
        vectors.clear();
    }
    Ok(EigenSystem {
        values,
        vectors,
        defective,
    })
}

/// Up to `want` orthonormal complex vectors spanning the null space of `M - λI`.
fn complex_null_space(
    m: &DenseMatrix,
    lambda: Complex64,
    tol: f64,
    want: usize,
) -> Result<Vec<Vec<Complex64>>, LinalgError> {
    let n = m.rows();
    let (a, b) = (lambda.re, lambda.im);
    // real embedding of (M - λI) acting on [Re x; Im x]
    let emb = DenseMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let (bi, ii) = (i / n, i % n);
        let (bj, jj) = (j / n, j % n);
        let diag = if ii == jj { 1.0 } else { 0.0 };
        match (bi, bj) {
            (0, 0) | (1, 1) => m[(ii, jj)] - a * diag,
            (0, 1) => b * diag,
            _ => -b * diag,
        }
    });
    let d = svd(&emb)?;
    let mut out: Vec<Vec<Complex64>> = Vec::new();
    for k in (0..2 * n).rev() {
        if d.s[k] > tol || out.len() == want {
            break;
        }
        let mut z: Vec<Complex64> = (0..n)
            .map(|r| Complex64::new(d.vt[(k, r)], d.vt[(k, n + r)]))
            .collect();
        for _ in 0..2 {
            for q in &out {
                let proj: Complex64 = q.iter().zip(&z).map(|(qi, zi)| qi.conj() * zi).sum();
                for (zi, qi) in z.iter_mut().zip(q) {
                    *zi -= proj * qi;
                }
            }
        }
        let nrm = z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if nrm > 0.3 {
            z.iter_mut().for_each(|c| *c /= nrm);
            out.push(z);
        }
    }
    Ok(out)
}

/// 2-norm condition number of a complex matrix given by its columns.
fn complex_condition(cols: &[Vec<Complex64>]) -> Result<f64, LinalgError> {
    let n = cols.len();
    if n == 0 {
        return Ok(1.0);
    }
    let rows = cols[0].len();
    let emb = DenseMatrix::from_fn(2 * rows, 2 * n, |i, j| {
        let (bi, ii) = (i / rows, i % rows);
        let (bj, jj) = (j / n, j % n);
        let c = cols[jj][ii];
        match (bi, bj) {
            (0, 0) | (1, 1) => c.re,
            (0, 1) => -c.im,
            _ => c.im,
        }
    });
    let s = svd(&emb)?.s;
    let smax = s.first().copied().unwrap_or(0.0);
    let smin = s.last().copied().unwrap_or(0.0);
    if smin <= smax * f64::EPSILON {
        return Ok(f64::INFINITY);
    }
    Ok(smax / smin)
}

/// `eig_max` and the eigenvector-matrix condition number used as `cond(P)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSummary {
    pub eig_max_real: f64,
    /// Infinite when the matrix is defective.
    pub cond_jordan_proxy: f64,
    pub defective: bool,
}

pub fn spectral_summary(m: &DenseMatrix) -> Result<SpectralSummary, LinalgError> {
    let sys = eigen_system(m)?;
    let eig_max_real = sys
        .values
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let cond = if sys.defective {
        f64::INFINITY
    } else {
        complex_condition(&sys.vectors)?.max(1.0)
    };
    Ok(SpectralSummary {
        eig_max_real,
        cond_jordan_proxy: cond,
        defective: sys.defective,
    })
}

/// Right-hand side of `‖e^{Mt}‖ ≤ cond(P) m² (2 + t^{m-1}) e^{eig_max(M) t}`.
pub fn exp_norm_bound(m: &DenseMatrix, t: f64) -> Result<f64, LinalgError> {
    if t < 0.0 {
        return Err(LinalgError::Argument("t must be non-negative".into()));
    }
    let summary = spectral_summary(m)?;
    Ok(exp_norm_bound_from(&summary, m.rows(), t))
}

pub fn exp_norm_bound_from(summary: &SpectralSummary, dim: usize, t: f64) -> f64 {
    let md = dim as f64;
    let poly = 2.0 + t.powi(dim as i32 - 1);
    summary.cond_jordan_proxy * md * md * poly * (summary.eig_max_real * t).exp()
}

/// `‖e^{Mt}‖₂` computed directly.
pub fn exp_norm(m: &DenseMatrix, t: f64) -> Result<f64, LinalgError> {
    norm2_matrix(&matrix_exp(m, t)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_re(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn diagonal_spectrum() {
        let s = spectral_summary(&DenseMatrix::from_diag(&[0.95, 1.2])).unwrap();
        assert!((s.eig_max_real - 1.2).abs() < 1e-14);
        assert!((s.cond_jordan_proxy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_has_imaginary_spectrum() {
        let r = DenseMatrix::from_rows(&[&[0.0, -1.0], &[1.0, 0.0]]);
        let v = sorted_re(eigenvalues(&r).unwrap());
        assert!(v.iter().all(|c| c.re.abs() < 1e-14 && (c.im.abs() - 1.0).abs() < 1e-14));
        let s = spectral_summary(&r).unwrap();
        assert!(s.eig_max_real.abs() < 1e-14);
        assert!((s.cond_jordan_proxy - 1.0).abs() < 1e-10);
    }

    #[test]
    fn identity_condition_is_one() {
        let s = spectral_summary(&DenseMatrix::identity(3)).unwrap();
        assert!((s.cond_jordan_proxy - 1.0).abs() < 1e-12);
        assert!(!s.defective);
    }

    #[test]
    fn jordan_block_is_defective() {
        let j = DenseMatrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]);
        let s = spectral_summary(&j).unwrap();
        assert!(s.defective);
        assert!(s.cond_jordan_proxy.is_infinite());
    }

    #[test]
    fn companion_matrix_roots() {
        // x^3 - 6x^2 + 11x - 6 = (x-1)(x-2)(x-3)
        let c = DenseMatrix::from_rows(&[&[6.0, -11.0, 6.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let v = sorted_re(eigenvalues(&c).unwrap());
        for (z, e) in v.iter().zip([1.0, 2.0, 3.0]) {
            assert!((z.re - e).abs() < 1e-10 && z.im.abs() < 1e-10);
        }
    }

    #[test]
    fn exp_norm_bound_zero_matrix() {
        let b = exp_norm_bound(&DenseMatrix::zeros(2, 2), 1.0).unwrap();
        assert!((b - 12.0).abs() < 1e-12);
        assert!(exp_norm(&DenseMatrix::zeros(2, 2), 1.0).unwrap() <= b);
    }

    #[test]
    fn exp_norm_bound_toy_generator() {
        let m = DenseMatrix::from_diag(&[0.95, 1.2]);
        let b = exp_norm_bound(&m, 1.0).unwrap();
        assert!(b >= 1.2f64.exp());
    }
}
