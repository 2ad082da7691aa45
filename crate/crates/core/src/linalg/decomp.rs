use super::matrix::{dot, norm2, DenseMatrix};
use super::LinalgError;

const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `M = U diag(S) Vt`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub vt: DenseMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.s.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.mul(&self.vt)
    }

    pub fn rank(&self, tol: f64) -> usize {
        self.s.iter().filter(|&&s| s > tol).count()
    }
}

/// One-sided (Hestenes) Jacobi SVD.
/// Squared column norms below this are treated as zero columns by the Jacobi sweeps.
const TINY_SQ: f64 = f64::MIN_POSITIVE / f64::EPSILON;

pub fn svd(m: &DenseMatrix) -> Result<Svd, LinalgError> {
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    if m.rows() < m.cols() {
        let t = svd(&m.transpose())?;
        return Ok(Svd {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        });
    }
    let (rows, n) = m.shape();
    // columns of the working matrix and of V
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| m.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * alpha.sqrt() * beta.sqrt() || alpha.min(beta) < TINY_SQ {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut a, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence("jacobi svd"));
    }

    let mut order: Vec<(f64, usize)> = a.iter().enumerate().map(|(j, c)| (norm2(c), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let s_max = order.first().map_or(0.0, |o| o.0);
    let tiny = s_max * f64::EPSILON * rows as f64;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut vt = DenseMatrix::zeros(n, n);
    for (k, &(sigma, j)) in order.iter().enumerate() {
        s.push(sigma);
        for (c, &x) in v[j].iter().enumerate() {
            vt[(k, c)] = x;
        }
        if sigma > tiny && sigma > 0.0 {
            u_cols.push(a[j].iter().map(|x| x / sigma).collect());
        } else {
            u_cols.push(orthonormal_completion(&u_cols, rows));
        }
    }
    Ok(Svd {
        u: DenseMatrix::from_columns(&u_cols),
        s,
        vt,
    })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// A unit vector orthogonal to all of `basis`, found by Gram-Schmidt on coordinate axes.
fn orthonormal_completion(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for axis in 0..dim {
        let mut e = vec![0.0; dim];
        e[axis] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let d = dot(b, &e);
                for (ei, bi) in e.iter_mut().zip(b) {
                    *ei -= d * bi;
                }
            }
        }
        let nrm = norm2(&e);
        if nrm > best_norm {
            best_norm = nrm;
            best = Some(e);
        }
        if nrm > 0.5 {
            break;
        }
    }
    let mut e = best.unwrap_or_else(|| vec![0.0; dim]);
    if best_norm > 0.0 {
        e.iter_mut().for_each(|x| *x /= best_norm);
    }
    e
}

pub fn default_rcond(m: &DenseMatrix) -> f64 {
    m.rows().max(m.cols()) as f64 * f64::EPSILON
}

/// Moore-Penrose pseudo-inverse; singular values at or below `rcond * s_max` are dropped.
pub fn pseudo_inverse(m: &DenseMatrix, rcond: f64) -> Result<DenseMatrix, LinalgError> {
    if rcond < 0.0 {
        return Err(LinalgError::Argument("rcond must be non-negative".into()));
    }
    let d = svd(m)?;
    let cutoff = rcond * d.s.first().copied().unwrap_or(0.0);
    let (rows, cols) = m.shape();
    let mut out = DenseMatrix::zeros(cols, rows);
    for (k, &sigma) in d.s.iter().enumerate() {
        if sigma <= cutoff || sigma == 0.0 {
            continue;
        }
        let inv = 1.0 / sigma;
        for i in 0..cols {
            let vik = d.vt[(k, i)] * inv;
            if vik == 0.0 {
                continue;
            }
            for j in 0..rows {
                out[(i, j)] += vik * d.u[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Orthonormal basis (as columns) for the column space of `basis`.
pub fn orthonormal_columns(basis: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    let d = svd(basis)?;
    let tol = default_rcond(basis) * d.s.first().copied().unwrap_or(0.0);
    let rank = d.rank(tol);
    if rank < basis.cols() || rank == 0 {
        return Err(LinalgError::DegenerateBasis {
            rank,
            cols: basis.cols(),
        });
    }
    let cols: Vec<Vec<f64>> = (0..rank).map(|k| d.u.col(k)).collect();
    Ok(DenseMatrix::from_columns(&cols))
}

/// Orthogonal projector onto the column space of `basis`.
pub fn projector_onto_columns(basis: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    let q = orthonormal_columns(basis)?;
    Ok(q.mul(&q.transpose()))
}

/// `I - P` for the projector onto the column space of `basis`.
pub fn complement_projector(basis: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    let p = projector_onto_columns(basis)?;
    Ok(DenseMatrix::identity(p.rows()).sub(&p))
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn new(m: &DenseMatrix) -> Result<Self, LinalgError> {
        if !m.is_square() {
            return Err(LinalgError::Shape("LU requires a square matrix".into()));
        }
        let n = m.rows();
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (piv, pval) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, x| if x.1 > best.1 { x } else { best });
            if pval <= scale * f64::EPSILON * n as f64 {
                return Err(LinalgError::Singular);
            }
            if piv != k {
                perm.swap(piv, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(piv, j)];
                    lu[(piv, j)] = tmp;
                }
            }
            let d = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        let ukj = lu[(k, j)];
                        lu[(i, j)] -= f * ukj;
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[(i, j)] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|j| self.lu[(i, j)] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[(i, i)];
        }
        x
    }

    pub fn solve(&self, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let x = self.solve_vec(&b.col(j));
            out.set_col(j, &x);
        }
        out
    }
}

pub fn solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    Ok(Lu::new(a)?.solve(b))
}

pub fn inverse(a: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    solve(a, &DenseMatrix::identity(a.rows()))
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues are returned in descending order with matching eigenvector columns.
pub fn symmetric_eigen(m: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix), LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::Shape("symmetric eigen requires a square matrix".into()));
    }
    let n = m.rows();
    let mut a = m.clone();
    let mut v = DenseMatrix::identity(n);
    let total: f64 = a.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= total * 1e-15 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= total * 1e-18 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence("symmetric jacobi"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let vals = order.iter().map(|&i| a[(i, i)]).collect();
    let vecs = DenseMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((vals, vecs))
}

/// Spectral 2-norm (largest singular value).
pub fn norm2_matrix(m: &DenseMatrix) -> Result<f64, LinalgError> {
    Ok(svd(m)?.s.first().copied().unwrap_or(0.0))
}
