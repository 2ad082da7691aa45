use super::decomp::solve;
use super::matrix::DenseMatrix;
use super::LinalgError;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068),
];
const THETA13: f64 = 5.371920351148152;

/// `exp(M t)` by scaling and squaring with a diagonal Padé approximant of degree 3..13.
pub fn matrix_exp(m: &DenseMatrix, t: f64) -> Result<DenseMatrix, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::Shape("matrix exponential requires a square matrix".into()));
    }
    let n = m.rows();
    let a = m.scale(t);
    if !a.is_finite() {
        return Err(LinalgError::Range);
    }
    let norm = a.norm_one();
    if norm == 0.0 {
        return Ok(DenseMatrix::identity(n));
    }
    for (deg, theta) in THETA {
        if norm <= theta {
            return pade_low(&a, deg);
        }
    }
    let s = (norm / THETA13).log2().ceil().max(0.0) as i32;
    let scaled = a.scale(0.5f64.powi(s));
    let mut x = pade13(&scaled)?;
    for _ in 0..s {
        x = x.mul(&x);
    }
    if !x.is_finite() {
        return Err(LinalgError::Range);
    }
    Ok(x)
}

fn pade_low(a: &DenseMatrix, deg: usize) -> Result<DenseMatrix, LinalgError> {
    let b: &[f64] = match deg {
        3 => &B3,
        5 => &B5,
        7 => &B7,
        _ => &B9,
    };
    let n = a.rows();
    let ident = DenseMatrix::identity(n);
    let a2 = a.mul(a);
    // even/odd powers up to deg-1
    let mut powers = vec![ident.clone(), a2.clone()];
    while powers.len() * 2 <= deg {
        let next = powers.last().unwrap().mul(&a2);
        powers.push(next);
    }
    let mut u = DenseMatrix::zeros(n, n);
    let mut v = DenseMatrix::zeros(n, n);
    for (k, p) in powers.iter().enumerate() {
        if 2 * k + 1 <= deg {
            u = u.add(&p.scale(b[2 * k + 1]));
        }
        v = v.add(&p.scale(b[2 * k]));
    }
    let u = a.mul(&u);
    solve(&v.sub(&u), &v.add(&u))
}

fn pade13(a: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    let n = a.rows();
    let ident = DenseMatrix::identity(n);
    let a2 = a.mul(a);
    let a4 = a2.mul(&a2);
    let a6 = a4.mul(&a2);
    let b = &B13;
    let inner_u = a6
        .scale(b[13])
        .add(&a4.scale(b[11]))
        .add(&a2.scale(b[9]));
    let u = a.mul(
        &a6.mul(&inner_u)
            .add(&a6.scale(b[7]))
            .add(&a4.scale(b[5]))
            .add(&a2.scale(b[3]))
            .add(&ident.scale(b[1])),
    );
    let inner_v = a6
        .scale(b[12])
        .add(&a4.scale(b[10]))
        .add(&a2.scale(b[8]));
    let v = a6
        .mul(&inner_v)
        .add(&a6.scale(b[6]))
        .add(&a4.scale(b[4]))
        .add(&a2.scale(b[2]))
        .add(&ident.scale(b[0]));
    solve(&v.sub(&u), &v.add(&u))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_identity_exactly() {
        let e = matrix_exp(&DenseMatrix::zeros(3, 3), 2.5).unwrap();
        assert_eq!(e, DenseMatrix::identity(3));
        let e = matrix_exp(&DenseMatrix::from_diag(&[1.0, 2.0]), 0.0).unwrap();
        assert_eq!(e, DenseMatrix::identity(2));
    }

    #[test]
    fn diagonal_case() {
        for (a, b) in [(0.3, -0.7), (1.5, 2.0), (-8.0, 6.0)] {
            let e = matrix_exp(&DenseMatrix::from_diag(&[a, b]), 1.0).unwrap();
            assert!((e[(0, 0)] - a.exp()).abs() <= 1e-12 * a.exp().max(1.0));
            assert!((e[(1, 1)] - b.exp()).abs() <= 1e-12 * b.exp().max(1.0));
            assert!(e[(0, 1)].abs() < 1e-12 && e[(1, 0)].abs() < 1e-12);
        }
    }

    #[test]
    fn nilpotent_series_terminates() {
        let n = DenseMatrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        for t in [0.01, 0.5, 3.0, 40.0] {
            let e = matrix_exp(&n, t).unwrap();
            let want = DenseMatrix::from_rows(&[&[1.0, t], &[0.0, 1.0]]);
            assert!(e.sub(&want).max_abs() <= 1e-12 * t.max(1.0), "t = {t}");
        }
    }

    #[test]
    fn rotation_generator() {
        let r = DenseMatrix::from_rows(&[&[0.0, -1.0], &[1.0, 0.0]]);
        let t = 0.9;
        let e = matrix_exp(&r, t).unwrap();
        let want = DenseMatrix::from_rows(&[&[t.cos(), -t.sin()], &[t.sin(), t.cos()]]);
        assert!(e.sub(&want).max_abs() < 1e-14);
    }

    #[test]
    fn overflow_is_range_error() {
        let m = DenseMatrix::from_diag(&[1000.0]);
        assert!(matches!(matrix_exp(&m, 10.0), Err(LinalgError::Range)));
    }
}
