//! Incompressible Navier–Stokes in a `4 x 1` channel on a staggered MAC grid, advanced by
//! the projection method.
//!
//! Boundary conditions: Gaussian jet inflow at `x = 0`, no-slip walls at `y = 0, 1`,
//! zero-gradient outflow at `x = 4` with `p = 0` on the outlet face.
//!
//! The state vector stores the unknown face velocities: `u` on vertical faces `i = 1..=nx`
//! (the inflow face is prescribed), then `v` on interior horizontal faces `j = 1..ny-1`.
//! Pressure lives at cell centres, `p[j * nx + i]`.

use serde::{Deserialize, Serialize};

use super::{conjugate_gradient, Field2D, PdeError};

pub const CHANNEL_LENGTH: f64 = 4.0;
pub const CHANNEL_HEIGHT: f64 = 1.0;
/// Absolute residual target of the pressure solve.
pub const POISSON_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsParams {
    /// Kinematic viscosity `1/Re`.
    pub nu: f64,
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub jet_y0: f64,
    /// Inflow amplitude; zero gives the quiescent fixed point.
    pub inflow_scale: f64,
}

impl NsParams {
    /// Default time step `0.25 · min(h/u_max, h²/(4ν))` with `u_max = 1`.
    pub fn new(re: f64, ny: usize, jet_y0: f64) -> Self {
        let nx = 4 * ny;
        let nu = 1.0 / re;
        let h = CHANNEL_HEIGHT / ny as f64;
        Self {
            nu,
            nx,
            ny,
            dt: default_dt(h, nu, 1.0),
            jet_y0,
            inflow_scale: 1.0,
        }
    }

    pub fn grid(&self) -> NsGrid {
        NsGrid {
            nx: self.nx,
            ny: self.ny,
            h: CHANNEL_HEIGHT / self.ny as f64,
        }
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        if self.nx != 4 * self.ny || self.ny < 2 {
            return Err(PdeError::Argument(format!(
                "grid {}x{} must have nx = 4 ny",
                self.nx, self.ny
            )));
        }
        if !(self.nu > 0.0) || !(self.dt > 0.0) {
            return Err(PdeError::Argument("nu and dt must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.jet_y0) {
            return Err(PdeError::Argument("jet_y0 outside the channel".into()));
        }
        let g = self.grid();
        let limit = default_dt(g.h, self.nu, 1.0) * 4.0;
        if self.dt > limit {
            return Err(PdeError::Argument(format!(
                "dt {} exceeds the stability bound {limit}",
                self.dt
            )));
        }
        Ok(())
    }
}

pub fn default_dt(h: f64, nu: f64, umax: f64) -> f64 {
    0.25 * (h / umax).min(h * h / (4.0 * nu))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsGrid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

impl NsGrid {
    pub fn n_u(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_v(&self) -> usize {
        self.nx * (self.ny - 1)
    }

    pub fn state_len(&self) -> usize {
        self.n_u() + self.n_v()
    }

    pub fn n_p(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    fn iu(&self, i: usize, j: usize) -> usize {
        j * self.nx + (i - 1)
    }

    #[inline]
    fn iv(&self, ic: usize, jf: usize) -> usize {
        self.n_u() + (jf - 1) * self.nx + ic
    }
}

/// Boundary data at one instant.
struct Inflow {
    u: Vec<f64>,
    v: Vec<f64>,
}

fn inflow(p: &NsParams, g: &NsGrid, t: f64) -> Inflow {
    let prof = |y: f64| p.inflow_scale * (-50.0 * (y - p.jet_y0).powi(2)).exp();
    Inflow {
        u: (0..g.ny).map(|j| prof((j as f64 + 0.5) * g.h)).collect(),
        v: (0..=g.ny).map(|j| t.sin() * prof(j as f64 * g.h)).collect(),
    }
}

/// Inflow `u` value at height `y`.
pub fn inflow_u(p: &NsParams, y: f64) -> f64 {
    p.inflow_scale * (-50.0 * (y - p.jet_y0).powi(2)).exp()
}

struct View<'a> {
    g: NsGrid,
    s: &'a [f64],
    inflow: &'a Inflow,
}

impl View<'_> {
    /// `u` on face `i` (0..=nx+1) of row `j` (-1..=ny), ghosts included.
    #[inline]
    fn u(&self, i: isize, j: isize) -> f64 {
        let ny = self.g.ny as isize;
        if j < 0 {
            return -self.u(i, 0);
        }
        if j >= ny {
            return -self.u(i, ny - 1);
        }
        let nx = self.g.nx as isize;
        if i <= 0 {
            return self.inflow.u[j as usize];
        }
        let i = i.min(nx);
        self.s[self.g.iu(i as usize, j as usize)]
    }

    /// `v` on face row `jf` (0..=ny) of column `ic` (-1..=nx).
    #[inline]
    fn v(&self, ic: isize, jf: isize) -> f64 {
        let ny = self.g.ny as isize;
        if jf <= 0 || jf >= ny {
            return 0.0;
        }
        let nx = self.g.nx as isize;
        if ic < 0 {
            return 2.0 * self.inflow.v[jf as usize] - self.v(0, jf);
        }
        let ic = ic.min(nx - 1);
        self.s[self.g.iv(ic as usize, jf as usize)]
    }
}

#[inline]
fn upwind(vel: f64, c: f64, minus: f64, plus: f64) -> f64 {
    if vel > 0.0 {
        vel * (c - minus)
    } else {
        vel * (plus - c)
    }
}

/// Tentative velocity `û = u + dt (ν∆u − (u·∇)u)` with first-order upwind advection.
pub fn tentative_velocity(state: &[f64], p: &NsParams, t: f64) -> Vec<f64> {
    let g = p.grid();
    let inflow = inflow(p, &g, t);
    let view = View {
        g,
        s: state,
        inflow: &inflow,
    };
    let h = g.h;
    let inv_h = 1.0 / h;
    let inv_h2 = inv_h * inv_h;
    let mut out = state.to_vec();
    for j in 0..g.ny as isize {
        for i in 1..=g.nx as isize {
            let uc = view.u(i, j);
            let (ue, uw, un, us) = (view.u(i + 1, j), view.u(i - 1, j), view.u(i, j + 1), view.u(i, j - 1));
            let vbar = 0.25 * (view.v(i - 1, j) + view.v(i, j) + view.v(i - 1, j + 1) + view.v(i, j + 1));
            let adv = (upwind(uc, uc, uw, ue) + upwind(vbar, uc, us, un)) * inv_h;
            let lap = (ue + uw + un + us - 4.0 * uc) * inv_h2;
            out[g.iu(i as usize, j as usize)] = uc + p.dt * (p.nu * lap - adv);
        }
    }
    for jf in 1..g.ny as isize {
        for ic in 0..g.nx as isize {
            let vc = view.v(ic, jf);
            let (ve, vw, vn, vs) = (view.v(ic + 1, jf), view.v(ic - 1, jf), view.v(ic, jf + 1), view.v(ic, jf - 1));
            let ubar = 0.25 * (view.u(ic, jf - 1) + view.u(ic + 1, jf - 1) + view.u(ic, jf) + view.u(ic + 1, jf));
            let adv = (upwind(ubar, vc, vw, ve) + upwind(vc, vc, vs, vn)) * inv_h;
            let lap = (ve + vw + vn + vs - 4.0 * vc) * inv_h2;
            out[g.iv(ic as usize, jf as usize)] = vc + p.dt * (p.nu * lap - adv);
        }
    }
    out
}

/// Cell divergence of a face-velocity state with the given inflow profile.
pub fn divergence(state: &[f64], p: &NsParams) -> Vec<f64> {
    let g = p.grid();
    let inflow = inflow(p, &g, 0.0);
    let view = View {
        g,
        s: state,
        inflow: &inflow,
    };
    let mut div = vec![0.0; g.n_p()];
    for j in 0..g.ny as isize {
        for i in 0..g.nx as isize {
            div[j as usize * g.nx + i as usize] =
                (view.u(i + 1, j) - view.u(i, j) + view.v(i, j + 1) - view.v(i, j)) / g.h;
        }
    }
    div
}

pub fn max_divergence(state: &[f64], p: &NsParams) -> f64 {
    divergence(state, p).iter().fold(0.0, |m, d| m.max(d.abs()))
}

/// Adds `scale · G p` to the face state, with `G` the discrete gradient: Neumann at inflow and
/// walls, `p = 0` on the outlet face half a cell from the last centre.
pub fn add_pressure_gradient(state: &mut [f64], pressure: &[f64], g: &NsGrid, scale: f64) {
    let nx = g.nx;
    let inv_h = 1.0 / g.h;
    for j in 0..g.ny {
        let row = &pressure[j * nx..(j + 1) * nx];
        for i in 1..nx {
            state[g.iu(i, j)] += scale * (row[i] - row[i - 1]) * inv_h;
        }
        state[g.iu(nx, j)] += scale * (-2.0 * row[nx - 1]) * inv_h;
    }
    for jf in 1..g.ny {
        for ic in 0..nx {
            state[g.iv(ic, jf)] += scale * (pressure[jf * nx + ic] - pressure[(jf - 1) * nx + ic]) * inv_h;
        }
    }
}

/// Transpose of [`add_pressure_gradient`]: accumulates `scale · Gᵀ w` into `out` (cell-sized).
pub fn pressure_gradient_transpose(w: &[f64], g: &NsGrid, scale: f64, out: &mut [f64]) {
    let nx = g.nx;
    let inv_h = 1.0 / g.h;
    for j in 0..g.ny {
        for i in 1..nx {
            let c = scale * w[g.iu(i, j)] * inv_h;
            out[j * nx + i] += c;
            out[j * nx + i - 1] -= c;
        }
        out[j * nx + nx - 1] -= scale * 2.0 * w[g.iu(nx, j)] * inv_h;
    }
    for jf in 1..g.ny {
        for ic in 0..nx {
            let c = scale * w[g.iv(ic, jf)] * inv_h;
            out[jf * nx + ic] += c;
            out[(jf - 1) * nx + ic] -= c;
        }
    }
}

/// `−div(G p)`, symmetric positive definite.
fn neg_div_grad(pressure: &[f64], g: &NsGrid, out: &mut [f64]) {
    let nx = g.nx;
    let inv_h2 = 1.0 / (g.h * g.h);
    for j in 0..g.ny {
        for i in 0..nx {
            let pc = pressure[j * nx + i];
            let mut acc = 0.0;
            if i > 0 {
                acc += pc - pressure[j * nx + i - 1];
            }
            if i + 1 < nx {
                acc += pc - pressure[j * nx + i + 1];
            } else {
                acc += 2.0 * pc;
            }
            if j > 0 {
                acc += pc - pressure[(j - 1) * nx + i];
            }
            if j + 1 < g.ny {
                acc += pc - pressure[(j + 1) * nx + i];
            }
            out[j * nx + i] = acc * inv_h2;
        }
    }
}

/// Right-hand side `−div(û)/dt` of the SPD pressure system.
pub fn poisson_rhs(tentative: &[f64], p: &NsParams) -> Vec<f64> {
    divergence(tentative, p).iter().map(|d| -d / p.dt).collect()
}

/// `‖−div(G p) + div(û)/dt‖₂`.
pub fn poisson_residual(tentative: &[f64], pressure: &[f64], p: &NsParams) -> f64 {
    let g = p.grid();
    let rhs = poisson_rhs(tentative, p);
    let mut ap = vec![0.0; g.n_p()];
    neg_div_grad(pressure, &g, &mut ap);
    ap.iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

pub fn solve_pressure(tentative: &[f64], p: &NsParams, warm: &[f64]) -> Result<Vec<f64>, PdeError> {
    let g = p.grid();
    let rhs = poisson_rhs(tentative, p);
    let mut x = warm.to_vec();
    conjugate_gradient(|a, b| neg_div_grad(a, &g, b), &rhs, &mut x, POISSON_TOL, 20 * g.n_p())?;
    Ok(x)
}

/// `û − dt G p`.
pub fn correct_velocity(tentative: &[f64], pressure: &[f64], p: &NsParams) -> Vec<f64> {
    let mut out = tentative.to_vec();
    add_pressure_gradient(&mut out, pressure, &p.grid(), -p.dt);
    out
}

/// One projection step from time `t`; returns the new face state and the pressure used.
pub fn ns_step_state(
    state: &[f64],
    p_prev: &[f64],
    p: &NsParams,
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>), PdeError> {
    let g = p.grid();
    if state.len() != g.state_len() || p_prev.len() != g.n_p() {
        return Err(PdeError::Argument("NS state or pressure has wrong length".into()));
    }
    let tent = tentative_velocity(state, p, t);
    if tent.iter().any(|v| !v.is_finite()) {
        return Err(PdeError::BlowUp { traj: 0, step: 0 });
    }
    let pressure = solve_pressure(&tent, p, p_prev)?;
    Ok((correct_velocity(&tent, &pressure, p), pressure))
}

/// Field-level step: `u` is `(nx+1) x ny` (faces incl. inflow), `v` is `nx x (ny+1)`,
/// `p` is `nx x ny`.
pub fn ns_step_projection(
    u: &Field2D,
    v: &Field2D,
    p_prev: &Field2D,
    np: &NsParams,
    t: f64,
) -> Result<(Field2D, Field2D, Field2D), PdeError> {
    let g = np.grid();
    if (u.nx, u.ny) != (g.nx + 1, g.ny) || (v.nx, v.ny) != (g.nx, g.ny + 1) || (p_prev.nx, p_prev.ny) != (g.nx, g.ny) {
        return Err(PdeError::Argument("field shapes do not match the staggered grid".into()));
    }
    let state = pack_faces(u, v, &g);
    let (next, pressure) = ns_step_state(&state, &p_prev.values, np, t)?;
    let (nu, nv) = unpack_faces(&next, np, t + np.dt);
    Ok((nu, nv, Field2D::new(g.nx, g.ny, g.h, g.h, pressure)?))
}

fn pack_faces(u: &Field2D, v: &Field2D, g: &NsGrid) -> Vec<f64> {
    let mut s = vec![0.0; g.state_len()];
    for j in 0..g.ny {
        for i in 1..=g.nx {
            s[g.iu(i, j)] = u.at(i, j);
        }
    }
    for jf in 1..g.ny {
        for ic in 0..g.nx {
            s[g.iv(ic, jf)] = v.at(ic, jf);
        }
    }
    s
}

/// Expands a face state to full face fields, filling the prescribed boundary faces.
pub fn unpack_faces(state: &[f64], p: &NsParams, t: f64) -> (Field2D, Field2D) {
    let g = p.grid();
    let inflow = inflow(p, &g, t);
    let u = Field2D::from_fn(g.nx + 1, g.ny, g.h, |i, j| {
        if i == 0 {
            inflow.u[j]
        } else {
            state[g.iu(i, j)]
        }
    });
    let v = Field2D::from_fn(g.nx, g.ny + 1, g.h, |ic, jf| {
        if jf == 0 || jf == g.ny {
            0.0
        } else {
            state[g.iv(ic, jf)]
        }
    });
    (u, v)
}

/// Velocity interpolated linearly to cell centres, `[u_c, v_c]` each `nx x ny`.
pub fn cell_centred(state: &[f64], p: &NsParams) -> Vec<f64> {
    let (u, v) = unpack_faces(state, p, 0.0);
    let g = p.grid();
    let mut out = vec![0.0; 2 * g.n_p()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            out[j * g.nx + i] = 0.5 * (u.at(i, j) + u.at(i + 1, j));
            out[g.n_p() + j * g.nx + i] = 0.5 * (v.at(i, j) + v.at(i, j + 1));
        }
    }
    out
}
