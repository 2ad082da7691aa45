//! FitzHugh–Nagumo reaction–diffusion on a periodic square, semi-implicit Crank–Nicolson.
//!
//! States are `[u, v]` concatenated, each `n x n` row-major.

use serde::{Deserialize, Serialize};

use super::{conjugate_gradient, interpolate_into, restrict_into, Field2D, PdeError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdParams {
    pub alpha: f64,
    pub beta: f64,
    /// Diffusion scale; `D = diag(γ, 2γ)`.
    pub gamma: f64,
    pub dt: f64,
    /// Side length of the periodic domain.
    pub length: f64,
    /// Cells per side.
    pub n: usize,
}

impl RdParams {
    pub fn new(gamma: f64, n: usize) -> Self {
        Self {
            alpha: 0.01,
            beta: 1.0,
            gamma,
            dt: 0.01,
            length: 6.4,
            n,
        }
    }

    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        if !(self.dt > 0.0) || !(self.gamma > 0.0) || !(self.length > 0.0) || self.n < 2 {
            return Err(PdeError::Argument(format!("invalid RD parameters {self:?}")));
        }
        Ok(())
    }

    /// Same physics on a grid with half as many cells per side.
    pub fn coarsened(&self) -> Result<Self, PdeError> {
        if self.n % 2 != 0 {
            return Err(PdeError::Argument("grid size must be even to coarsen".into()));
        }
        Ok(Self { n: self.n / 2, ..*self })
    }

    pub fn state_len(&self) -> usize {
        2 * self.n * self.n
    }
}

/// `φ(u, v) = (u − u³ − v + α, β(u − v))`.
pub fn rd_reaction(u: &Field2D, v: &Field2D, p: &RdParams) -> Result<(Field2D, Field2D), PdeError> {
    if (u.nx, u.ny) != (v.nx, v.ny) {
        return Err(PdeError::Argument("u and v dims differ".into()));
    }
    let mut fu = u.clone();
    let mut fv = v.clone();
    for k in 0..u.values.len() {
        let (a, b) = reaction_point(u.values[k], v.values[k], p);
        fu.values[k] = a;
        fv.values[k] = b;
    }
    Ok((fu, fv))
}

#[inline]
fn reaction_point(u: f64, v: f64, p: &RdParams) -> (f64, f64) {
    (u - u * u * u - v + p.alpha, p.beta * (u - v))
}

/// Five-point periodic Laplacian.
pub(crate) fn laplacian_periodic(x: &[f64], n: usize, h: f64, out: &mut [f64]) {
    let inv = 1.0 / (h * h);
    for j in 0..n {
        let jn = if j + 1 == n { 0 } else { j + 1 };
        let js = if j == 0 { n - 1 } else { j - 1 };
        for i in 0..n {
            let ie = if i + 1 == n { 0 } else { i + 1 };
            let iw = if i == 0 { n - 1 } else { i - 1 };
            out[j * n + i] = (x[j * n + ie] + x[j * n + iw] + x[jn * n + i] + x[js * n + i]
                - 4.0 * x[j * n + i])
                * inv;
        }
    }
}

/// Solves `(I − c∆) x = (I + c∆) x0 + f` in place, warm-started from `x0`.
fn cn_solve(x: &mut [f64], forcing: Option<&[f64]>, c: f64, n: usize, h: f64) -> Result<(), PdeError> {
    let len = n * n;
    let mut lap = vec![0.0; len];
    laplacian_periodic(x, n, h, &mut lap);
    let mut rhs: Vec<f64> = x.iter().zip(&lap).map(|(a, l)| a + c * l).collect();
    if let Some(f) = forcing {
        for (r, fi) in rhs.iter_mut().zip(f) {
            *r += fi;
        }
    }
    let bnorm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-10 * bnorm.max(1.0);
    let apply = |y: &[f64], out: &mut [f64]| {
        laplacian_periodic(y, n, h, out);
        for (o, yi) in out.iter_mut().zip(y) {
            *o = yi - c * *o;
        }
    };
    conjugate_gradient(apply, &rhs, x, tol, 10 * len)?;
    Ok(())
}

/// One step on a `[u, v]` state; `reaction = false` gives pure diffusion.
pub fn rd_step_state(state: &[f64], p: &RdParams, reaction: bool) -> Result<Vec<f64>, PdeError> {
    let n = p.n;
    let len = n * n;
    if state.len() != 2 * len {
        return Err(PdeError::Argument(format!(
            "RD state length {} != {}",
            state.len(),
            2 * len
        )));
    }
    let mut next = state.to_vec();
    let (nu, nv) = next.split_at_mut(len);
    let h = p.h();
    let forcing = if reaction {
        let mut fu = vec![0.0; len];
        let mut fv = vec![0.0; len];
        for k in 0..len {
            let (a, b) = reaction_point(state[k], state[len + k], p);
            fu[k] = p.dt * a;
            fv[k] = p.dt * b;
        }
        Some((fu, fv))
    } else {
        None
    };
    let half = 0.5 * p.dt;
    cn_solve(nu, forcing.as_ref().map(|f| f.0.as_slice()), half * p.gamma, n, h)?;
    cn_solve(nv, forcing.as_ref().map(|f| f.1.as_slice()), half * 2.0 * p.gamma, n, h)?;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(PdeError::BlowUp { traj: 0, step: 0 });
    }
    Ok(next)
}

/// Field-level wrapper of [`rd_step_state`].
pub fn rd_step_cn(u: &Field2D, v: &Field2D, p: &RdParams) -> Result<(Field2D, Field2D), PdeError> {
    if u.nx != p.n || u.ny != p.n || v.nx != p.n || v.ny != p.n {
        return Err(PdeError::Argument("field dims do not match RD grid".into()));
    }
    let mut state = u.values.clone();
    state.extend_from_slice(&v.values);
    let next = rd_step_state(&state, p, true)?;
    let len = p.n * p.n;
    let mut nu = u.clone();
    let mut nv = v.clone();
    nu.values.copy_from_slice(&next[..len]);
    nv.values.copy_from_slice(&next[len..]);
    Ok((nu, nv))
}

/// Restricts both components of a fine `[u, v]` state.
pub fn restrict_state(fine: &[f64], n_fine: usize) -> Vec<f64> {
    let len = n_fine * n_fine;
    let cl = len / 4;
    let mut out = vec![0.0; 2 * cl];
    restrict_into(&fine[..len], n_fine, n_fine, &mut out[..cl]);
    restrict_into(&fine[len..], n_fine, n_fine, &mut out[cl..]);
    out
}

pub fn interpolate_state(coarse: &[f64], n_coarse: usize) -> Vec<f64> {
    let cl = n_coarse * n_coarse;
    let mut out = vec![0.0; 8 * cl];
    let (a, b) = out.split_at_mut(4 * cl);
    interpolate_into(&coarse[..cl], n_coarse, n_coarse, a);
    interpolate_into(&coarse[cl..], n_coarse, n_coarse, b);
    out
}

/// `I ∘ f_n ∘ R` applied to a fine state, where `f_n` is one coarse step.
pub fn coarse_predict(fine: &[f64], p_fine: &RdParams) -> Result<Vec<f64>, PdeError> {
    let pc = p_fine.coarsened()?;
    let coarse = restrict_state(fine, p_fine.n);
    let stepped = rd_step_state(&coarse, &pc, true)?;
    Ok(interpolate_state(&stepped, pc.n))
}
