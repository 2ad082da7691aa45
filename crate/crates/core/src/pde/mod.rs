//! Ground-truth PDE solvers and the coarse/fine transfer operators.

pub mod dataset;
pub mod ns;
pub mod rd;

pub use dataset::{FieldKind, TrajectoryDataset};
pub use ns::{NsGrid, NsParams};
pub use rd::RdParams;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("conjugate gradient stalled at residual {residual:e} after {iters} iterations")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("solution blew up in trajectory {traj} at step {step}")]
    BlowUp { traj: usize, step: usize },
    #[error("bad dataset file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for PdeError {
    fn from(e: std::io::Error) -> Self {
        PdeError::Io(e.to_string())
    }
}

/// Cell-centred scalar field, `values[j * nx + i]` with `i` along x.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub values: Vec<f64>,
}

impl Field2D {
    pub fn new(nx: usize, ny: usize, hx: f64, hy: f64, values: Vec<f64>) -> Result<Self, PdeError> {
        if nx < 1 || ny < 1 || values.len() != nx * ny {
            return Err(PdeError::Argument(format!(
                "field {nx}x{ny} with {} values",
                values.len()
            )));
        }
        if !(hx > 0.0 && hy > 0.0) {
            return Err(PdeError::Argument("spacing must be positive".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PdeError::Argument("non-finite field value".into()));
        }
        Ok(Self {
            nx,
            ny,
            hx,
            hy,
            values,
        })
    }

    pub fn constant(nx: usize, ny: usize, h: f64, c: f64) -> Self {
        Self {
            nx,
            ny,
            hx: h,
            hy: h,
            values: vec![c; nx * ny],
        }
    }

    pub fn from_fn(nx: usize, ny: usize, h: f64, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                values.push(f(i, j));
            }
        }
        Self {
            nx,
            ny,
            hx: h,
            hy: h,
            values,
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// 2x2 block average. `fine` must have even dimensions.
pub fn restrict(fine: &Field2D) -> Result<Field2D, PdeError> {
    if fine.nx % 2 != 0 || fine.ny % 2 != 0 {
        return Err(PdeError::Argument(format!(
            "restriction needs even dims, got {}x{}",
            fine.nx, fine.ny
        )));
    }
    let (nx, ny) = (fine.nx / 2, fine.ny / 2);
    let mut values = vec![0.0; nx * ny];
    restrict_into(&fine.values, fine.nx, fine.ny, &mut values);
    Ok(Field2D {
        nx,
        ny,
        hx: 2.0 * fine.hx,
        hy: 2.0 * fine.hy,
        values,
    })
}

/// Piecewise-constant replication into 2x2 blocks.
pub fn interpolate(coarse: &Field2D) -> Field2D {
    let mut values = vec![0.0; 4 * coarse.values.len()];
    interpolate_into(&coarse.values, coarse.nx, coarse.ny, &mut values);
    Field2D {
        nx: 2 * coarse.nx,
        ny: 2 * coarse.ny,
        hx: 0.5 * coarse.hx,
        hy: 0.5 * coarse.hy,
        values,
    }
}

pub(crate) fn restrict_into(fine: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
    let cnx = nx / 2;
    for j in 0..ny / 2 {
        for i in 0..cnx {
            let a = fine[(2 * j) * nx + 2 * i];
            let b = fine[(2 * j) * nx + 2 * i + 1];
            let c = fine[(2 * j + 1) * nx + 2 * i];
            let d = fine[(2 * j + 1) * nx + 2 * i + 1];
            // pairwise sum keeps R(I(x)) = x exact
            out[j * cnx + i] = ((a + b) + (c + d)) * 0.25;
        }
    }
}

pub(crate) fn interpolate_into(coarse: &[f64], cnx: usize, cny: usize, out: &mut [f64]) {
    let nx = 2 * cnx;
    for j in 0..cny {
        for i in 0..cnx {
            let v = coarse[j * cnx + i];
            out[(2 * j) * nx + 2 * i] = v;
            out[(2 * j) * nx + 2 * i + 1] = v;
            out[(2 * j + 1) * nx + 2 * i] = v;
            out[(2 * j + 1) * nx + 2 * i + 1] = v;
        }
    }
}

/// Conjugate gradient for an SPD operator. Stops when `‖b − Ax‖₂ ≤ tol`; returns iterations.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<usize, PdeError> {
    let n = b.len();
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    if rr.sqrt() <= tol {
        return Ok(0);
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(PdeError::NoConvergence {
                iters: it,
                residual: rr.sqrt(),
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        if rr_new.sqrt() <= tol {
            // confirm against the true residual; recursive residuals drift
            apply(x, &mut ap);
            let true_rr: f64 = b.iter().zip(&ap).map(|(bi, a)| (bi - a) * (bi - a)).sum();
            if true_rr.sqrt() <= tol {
                return Ok(it);
            }
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            rr = true_rr;
            p.copy_from_slice(&r);
            continue;
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Err(PdeError::NoConvergence {
        iters: max_iter,
        residual: rr.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restrict_block_mean() {
        let f = Field2D::new(2, 2, 1.0, 1.0, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(restrict(&f).unwrap().values, vec![2.5]);
        let c = Field2D::constant(4, 6, 0.1, 1.7);
        assert!(restrict(&c).unwrap().values.iter().all(|&v| v == 1.7));
        assert!(restrict(&Field2D::constant(3, 2, 1.0, 0.0)).is_err());
    }

    #[test]
    fn interpolate_replicates() {
        let c = Field2D::new(1, 1, 2.0, 2.0, vec![5.0]).unwrap();
        let f = interpolate(&c);
        assert_eq!(f.values, vec![5.0; 4]);
        assert_eq!((f.nx, f.ny, f.hx), (2, 2, 1.0));
    }

    #[test]
    fn restrict_after_interpolate_is_identity() {
        let c = Field2D::from_fn(5, 3, 0.2, |i, j| (i as f64 * 0.37 - j as f64).sin() * 1e3 + 1.0 / 3.0);
        assert_eq!(restrict(&interpolate(&c)).unwrap().values, c.values);
    }

    #[test]
    fn cg_solves_spd_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, -1.0], [0.0, -1.0, 2.0]];
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..3 {
                y[i] = (0..3).map(|j| a[i][j] * x[j]).sum();
            }
        };
        let b = [1.0, 2.0, 3.0];
        let mut x = [0.0; 3];
        conjugate_gradient(apply, &b, &mut x, 1e-12, 50).unwrap();
        let mut ax = [0.0; 3];
        apply(&x, &mut ax);
        for i in 0..3 {
            assert!((ax[i] - b[i]).abs() < 1e-12);
        }
    }
}
