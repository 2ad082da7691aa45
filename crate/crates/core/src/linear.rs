//! Linear hybrid dynamics `u' = A u + B y`, `y = C* u`, with training states confined to a
//! subspace `V`. Provides data generation, the OLS / tangent-regularized / ridge estimators in
//! closed form, trajectory simulation and the a-posteriori error bounds.

use rand::Rng;

use crate::linalg::{
    complement_projector, default_rcond, norm2, norm2_matrix, orthonormal_columns,
    projector_onto_columns, pseudo_inverse, solve, spectral_summary, DenseMatrix, LinalgError,
    SpectralSummary,
};
use crate::rng::{normal_vec, stream_rng};

#[derive(Debug, thiserror::Error)]
pub enum LinearError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("simulation blew up after step {last_finite}")]
    BlowUp { last_finite: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub c_star: DenseMatrix,
    /// Orthonormal columns spanning the data subspace.
    pub v_basis: DenseMatrix,
    pub dt: f64,
}

impl LinearSystem {
    pub fn new(
        a: DenseMatrix,
        b: DenseMatrix,
        c_star: DenseMatrix,
        v_basis: DenseMatrix,
        dt: f64,
    ) -> Result<Self, LinearError> {
        let m = a.rows();
        if !a.is_square() || b.rows() != m || c_star.shape() != (b.cols(), m) || v_basis.rows() != m {
            return Err(LinearError::Argument(format!(
                "inconsistent shapes A {:?}, B {:?}, C* {:?}, V {:?}",
                a.shape(),
                b.shape(),
                c_star.shape(),
                v_basis.shape()
            )));
        }
        if !(dt > 0.0) {
            return Err(LinearError::Argument("dt must be positive".into()));
        }
        let gram = v_basis.transpose().mul(&v_basis);
        if gram.sub(&DenseMatrix::identity(v_basis.cols())).max_abs() > 1e-10 {
            return Err(LinearError::Argument("V basis columns are not orthonormal".into()));
        }
        Ok(Self {
            a,
            b,
            c_star,
            v_basis,
            dt,
        })
    }

    /// Builds a system from an arbitrary spanning set for `V`, orthonormalizing it.
    pub fn with_subspace(
        a: DenseMatrix,
        b: DenseMatrix,
        c_star: DenseMatrix,
        span: &DenseMatrix,
        dt: f64,
    ) -> Result<Self, LinearError> {
        let v = orthonormal_columns(span)?;
        Self::new(a, b, c_star, v, dt)
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn label_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn p_v(&self) -> DenseMatrix {
        projector_onto_columns(&self.v_basis).expect("V basis validated at construction")
    }

    pub fn p_vperp(&self) -> DenseMatrix {
        complement_projector(&self.v_basis).expect("V basis validated at construction")
    }

    /// `A + B C` for a given unresolved map.
    pub fn closed_loop(&self, c: &DenseMatrix) -> DenseMatrix {
        self.a.add(&self.b.mul(c))
    }

    pub fn generator(&self) -> DenseMatrix {
        self.closed_loop(&self.c_star)
    }
}

/// The two-dimensional toy where `A + BC* = diag(0.95, 1.2)`, `B = I` and `V = span(e1)`.
///
/// `C*` has i.i.d. U[0,1] entries on `V` and vanishes on `V⊥`, so that `A` carries the full
/// unstable rate 1.2 in the normal direction.
pub fn toy_system(seed: u64) -> LinearSystem {
    let mut rng = stream_rng(seed, 0xC0FFEE);
    let c_rand = DenseMatrix::from_fn(2, 2, |_, _| rng.random::<f64>());
    let v = DenseMatrix::column(&[1.0, 0.0]);
    let c_star = c_rand.mul(&projector_onto_columns(&v).expect("unit vector"));
    let f = DenseMatrix::from_diag(&[0.95, 1.2]);
    let b = DenseMatrix::identity(2);
    let a = f.sub(&b.mul(&c_star));
    LinearSystem::new(a, b, c_star, v, 1.0).expect("toy system is consistent")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDataset {
    /// States as columns (m x N).
    pub u: DenseMatrix,
    /// Noisy unresolved labels as columns (n x N).
    pub y: DenseMatrix,
    pub noise_sigma: f64,
    pub n_traj: usize,
    pub n_steps: usize,
}

impl LinearDataset {
    pub fn len(&self) -> usize {
        self.u.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.u.cols() == 0
    }
}

/// Samples `n_traj` initial states `V z`, `z ~ N(0, I)`, and rolls each through the discrete
/// map `u_{k+1} = (A + BC*) u_k` for `n_steps` states; labels are `C* u_k + ε`.
pub fn generate_linear_data(
    sys: &LinearSystem,
    n_traj: usize,
    n_steps: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<LinearDataset, LinearError> {
    if n_traj == 0 || n_steps == 0 {
        return Err(LinearError::Argument("n_traj and n_steps must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, 1);
    let l = sys.v_basis.cols();
    let initial: Vec<Vec<f64>> = (0..n_traj)
        .map(|_| sys.v_basis.mul_vec(&normal_vec(&mut rng, l, 1.0)))
        .collect();
    generate_linear_data_from(sys, &initial, n_steps, noise_sigma, seed)
}

pub fn generate_linear_data_from(
    sys: &LinearSystem,
    initial: &[Vec<f64>],
    n_steps: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<LinearDataset, LinearError> {
    if noise_sigma < 0.0 {
        return Err(LinearError::Argument("noise_sigma must be non-negative".into()));
    }
    let m = sys.state_dim();
    let n = sys.label_dim();
    let g = sys.generator();
    let total = initial.len() * n_steps;
    let mut u = DenseMatrix::zeros(m, total);
    let mut col = 0;
    for u0 in initial {
        if u0.len() != m {
            return Err(LinearError::Argument("initial state has wrong length".into()));
        }
        let mut state = u0.clone();
        for _ in 0..n_steps {
            u.set_col(col, &state);
            state = g.mul_vec(&state);
            col += 1;
        }
    }
    let mut y = sys.c_star.mul(&u);
    if noise_sigma > 0.0 {
        let mut rng = stream_rng(seed, 2);
        let eps = normal_vec(&mut rng, n * total, noise_sigma);
        for (yi, e) in y.as_mut_slice().iter_mut().zip(eps) {
            *yi += e;
        }
    }
    Ok(LinearDataset {
        u,
        y,
        noise_sigma,
        n_traj: initial.len(),
        n_steps,
    })
}

#[derive(Debug, Clone)]
pub struct EstimatorReport {
    pub c_hat: DenseMatrix,
    /// `E‖(C* - Ĉ) u‖²` for `u = V z`, `z ~ N(0, I)`, i.e. `‖(C* - Ĉ) V‖_F²`.
    pub a_priori_error: f64,
    /// RMS over training states of `‖P_V⊥ (A + BĈ) u‖`.
    pub reg_residual: f64,
    pub lambda: f64,
}

fn report(sys: &LinearSystem, data: &LinearDataset, c_hat: DenseMatrix, lambda: f64) -> EstimatorReport {
    let a_priori_error = {
        let d = sys.c_star.sub(&c_hat).mul(&sys.v_basis);
        let f = d.frobenius_norm();
        f * f
    };
    let reg_residual = regularizer_rms(sys, &c_hat, &data.u);
    EstimatorReport {
        c_hat,
        a_priori_error,
        reg_residual,
        lambda,
    }
}

/// `sqrt(mean_i ‖P_V⊥ (A + BC) u_i‖²)` over the columns of `u`.
pub fn regularizer_rms(sys: &LinearSystem, c: &DenseMatrix, u: &DenseMatrix) -> f64 {
    if u.cols() == 0 {
        return 0.0;
    }
    let r = sys.p_vperp().mul(&sys.closed_loop(c)).mul(u);
    let f = r.frobenius_norm();
    (f * f / u.cols() as f64).sqrt()
}

fn check_nonempty(data: &LinearDataset) -> Result<(), LinearError> {
    if data.is_empty() {
        return Err(LinearError::Argument("dataset is empty".into()));
    }
    Ok(())
}

/// Minimum-norm least squares `Ĉ = Y U†`, reported against `sys`.
pub fn fit_ols(data: &LinearDataset, sys: &LinearSystem) -> Result<EstimatorReport, LinearError> {
    check_nonempty(data)?;
    let c = ols_matrix(data)?;
    Ok(report(sys, data, c, 0.0))
}

fn ols_matrix(data: &LinearDataset) -> Result<DenseMatrix, LinearError> {
    let pinv = pseudo_inverse(&data.u, default_rcond(&data.u))?;
    Ok(data.y.mul(&pinv))
}

/// Tangent-space regularized estimator
/// `Ĉ = (I + λ BᵀP_V⊥B)⁻¹ (Y U† − λ BᵀP_V⊥ A U U†)`,
/// the minimum-norm solution of `C UUᵀ − YUᵀ + λ BᵀP_V⊥(A + BC) UUᵀ = 0`.
/// When the columns of `U` span `V` this is `(I + λBᵀP_V⊥B)⁻¹(C*P_V + εU† − λBᵀP_V⊥AP_V)`.
pub fn fit_tr(
    data: &LinearDataset,
    sys: &LinearSystem,
    lambda: f64,
) -> Result<EstimatorReport, LinearError> {
    check_nonempty(data)?;
    if !(lambda >= 0.0) {
        return Err(LinearError::Argument("lambda must be non-negative".into()));
    }
    if lambda == 0.0 {
        return fit_ols(data, sys);
    }
    let pinv = pseudo_inverse(&data.u, default_rcond(&data.u))?;
    let proj_u = data.u.mul(&pinv);
    let bt_pperp = sys.b.transpose().mul(&sys.p_vperp());
    let lhs = DenseMatrix::identity(sys.label_dim()).add(&bt_pperp.mul(&sys.b).scale(lambda));
    let rhs = data
        .y
        .mul(&pinv)
        .sub(&bt_pperp.mul(&sys.a).mul(&proj_u).scale(lambda));
    let c = solve(&lhs, &rhs)?;
    Ok(report(sys, data, c, lambda))
}

/// Residual of the TR first-order condition, `‖C UUᵀ − YUᵀ + λBᵀP_V⊥(A+BC)UUᵀ‖_F`.
pub fn tr_first_order_residual(
    data: &LinearDataset,
    sys: &LinearSystem,
    c: &DenseMatrix,
    lambda: f64,
) -> f64 {
    let uut = data.u.mul(&data.u.transpose());
    let term = c.mul(&uut).sub(&data.y.mul(&data.u.transpose())).add(
        &sys.b
            .transpose()
            .mul(&sys.p_vperp())
            .mul(&sys.closed_loop(c))
            .mul(&uut)
            .scale(lambda),
    );
    term.frobenius_norm()
}

/// Value of `‖Y − CU‖_F² + λ‖P_V⊥(A + BC)U‖_F²`.
pub fn tr_objective(data: &LinearDataset, sys: &LinearSystem, c: &DenseMatrix, lambda: f64) -> f64 {
    let fit = data.y.sub(&c.mul(&data.u)).frobenius_norm();
    let reg = sys
        .p_vperp()
        .mul(&sys.closed_loop(c))
        .mul(&data.u)
        .frobenius_norm();
    fit * fit + lambda * reg * reg
}

/// Ridge estimator `Ĉ = Y Uᵀ (UUᵀ + λI)⁻¹`; `λ = 0` falls back to the pseudo-inverse.
pub fn fit_mols(
    data: &LinearDataset,
    sys: &LinearSystem,
    lambda: f64,
) -> Result<EstimatorReport, LinearError> {
    check_nonempty(data)?;
    if !(lambda >= 0.0) {
        return Err(LinearError::Argument("lambda must be non-negative".into()));
    }
    let c = if lambda == 0.0 {
        ols_matrix(data)?
    } else {
        let gram = data
            .u
            .mul(&data.u.transpose())
            .add(&DenseMatrix::identity(data.u.rows()).scale(lambda));
        // C (UUᵀ + λI) = Y Uᵀ  ⇔  (UUᵀ + λI) Cᵀ = U Yᵀ
        solve(&gram, &data.u.mul(&data.y.transpose()))?.transpose()
    };
    Ok(report(sys, data, c, lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// `u_{k+1} = A u_k + B Ĉ u_k`
    #[default]
    DiscreteMap,
    /// `u_{k+1} = u_k + dt (A u_k + B Ĉ u_k)`
    ForwardEuler,
}

/// Simulates `n_steps` steps from `u0`, returning `n_steps + 1` states (including `u0`).
pub fn simulate_linear(
    sys: &LinearSystem,
    c_hat: &DenseMatrix,
    u0: &[f64],
    n_steps: usize,
    mode: SimMode,
) -> Result<Vec<Vec<f64>>, LinearError> {
    if u0.len() != sys.state_dim() {
        return Err(LinearError::Argument("u0 has wrong length".into()));
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(u0.to_vec());
    for k in 0..n_steps {
        let u = &states[k];
        let next = linear_step(sys, c_hat, u, mode);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(LinearError::BlowUp { last_finite: k });
        }
        states.push(next);
    }
    Ok(states)
}

/// One step of the linear hybrid recursion with label `y`.
pub fn linear_step_with_label(sys: &LinearSystem, u: &[f64], y: &[f64], mode: SimMode) -> Vec<f64> {
    let mut rhs = sys.a.mul_vec(u);
    for (r, by) in rhs.iter_mut().zip(sys.b.mul_vec(y)) {
        *r += by;
    }
    match mode {
        SimMode::DiscreteMap => rhs,
        SimMode::ForwardEuler => u.iter().zip(rhs).map(|(ui, r)| ui + sys.dt * r).collect(),
    }
}

fn linear_step(sys: &LinearSystem, c_hat: &DenseMatrix, u: &[f64], mode: SimMode) -> Vec<f64> {
    linear_step_with_label(sys, u, &c_hat.mul_vec(u), mode)
}

/// `‖û_k − u_k‖₂` per step.
pub fn trajectory_error_curve(truth: &[Vec<f64>], sim: &[Vec<f64>]) -> Result<Vec<f64>, LinearError> {
    if truth.len() != sim.len() {
        return Err(LinearError::Argument(format!(
            "length mismatch: truth {} vs sim {}",
            truth.len(),
            sim.len()
        )));
    }
    Ok(truth
        .iter()
        .zip(sim)
        .map(|(t, s)| t.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect())
}

/// `‖P_V⊥ û_k‖₂` per step; the ground truth contributes zero.
pub fn ds_metric_linear(states: &[Vec<f64>], p_vperp: &DenseMatrix) -> Vec<f64> {
    states.iter().map(|s| norm2(&p_vperp.mul_vec(s))).collect()
}

/// `Q_m(r, T) = m² ∫₀ᵀ (2 + t^{m−1}) e^{rt} dt`, evaluated by composite Gauss-Legendre.
pub fn q_m(m: usize, r: f64, t: f64) -> f64 {
    const NODES: [f64; 5] = [
        -0.906_179_845_938_664,
        -0.538_469_310_105_683,
        0.0,
        0.538_469_310_105_683,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.236_926_885_056_189,
        0.478_628_670_499_366,
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
    ];
    if t <= 0.0 {
        return 0.0;
    }
    let panels = 400;
    let h = t / panels as f64;
    let md = m as f64;
    let f = |s: f64| (2.0 + s.powi(m as i32 - 1)) * (r * s).exp();
    let mut total = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        for (x, w) in NODES.iter().zip(WEIGHTS) {
            total += w * f(mid + 0.5 * h * x);
        }
    }
    md * md * total * 0.5 * h
}

/// Closed upper bound `3m² (1 ∨ T^m)(1 ∨ e^{rT}) ≥ Q_m(r, T)`.
pub fn q_m_upper(m: usize, r: f64, t: f64) -> f64 {
    let md = m as f64;
    3.0 * md * md * t.powi(m as i32).max(1.0) * (r * t).exp().max(1.0)
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    pub ols_bound: f64,
    pub tr_bound: f64,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Set when any of the three generators is defective; the bounds are then infinite.
    pub defective: bool,
    /// `‖P_V⊥ (A + BĈ) P_V‖₂`, to compare against `sqrt(δ/λ)`.
    pub leak_norm: f64,
}

impl BoundReport {
    pub fn assumption_holds(&self, delta: f64, lambda: f64) -> bool {
        lambda == 0.0 || self.leak_norm < (delta / lambda).sqrt()
    }
}

/// Right-hand sides of the OLS and TR trajectory-error bounds at horizon `T`:
///
/// `c1 √δ ‖B‖ Q_m(e1, T)` and
/// `c2 √δ (‖B‖ Q_m(e2, T) + 9m⁴c3/√λ (1 + 3m²c1√δ‖B‖) ‖A+BĈ‖ (1∨T^{3m})(1∨e^{e1 T}))`,
/// with `Q_m` replaced by its closed upper bound.
pub fn theorem_bound(
    sys: &LinearSystem,
    c_hat: &DenseMatrix,
    delta: f64,
    lambda: f64,
    t: f64,
) -> Result<BoundReport, LinearError> {
    if !(delta > 0.0) || !(t > 0.0) || lambda < 0.0 {
        return Err(LinearError::Argument("need delta > 0, T > 0, lambda >= 0".into()));
    }
    let m = sys.state_dim();
    let md = m as f64;
    let g = sys.closed_loop(c_hat);
    let p_v = sys.p_v();
    let p_perp = sys.p_vperp();
    let s1: SpectralSummary = spectral_summary(&g)?;
    let s2 = spectral_summary(&g.mul(&p_v))?;
    let s3 = spectral_summary(&p_perp.mul(&g))?;
    let b_norm = norm2_matrix(&sys.b)?;
    let g_norm = norm2_matrix(&g)?;
    let sd = delta.sqrt();
    let (c1, c2, c3) = (s1.cond_jordan_proxy, s2.cond_jordan_proxy, s3.cond_jordan_proxy);
    let ols_bound = c1 * sd * b_norm * q_m_upper(m, s1.eig_max_real, t);
    let tail = if lambda == 0.0 {
        f64::INFINITY
    } else {
        9.0 * md.powi(4) * c3 / lambda.sqrt()
            * (1.0 + 3.0 * md * md * c1 * sd * b_norm)
            * g_norm
            * t.powi(3 * m as i32).max(1.0)
            * (s1.eig_max_real * t).exp().max(1.0)
    };
    let tr_bound = c2 * sd * (b_norm * q_m_upper(m, s2.eig_max_real, t) + tail);
    let leak_norm = norm2_matrix(&p_perp.mul(&g).mul(&p_v))?;
    Ok(BoundReport {
        ols_bound,
        tr_bound,
        e1: s1.eig_max_real,
        e2: s2.eig_max_real,
        e3: s3.eig_max_real,
        c1,
        c2,
        c3,
        defective: s1.defective || s2.defective || s3.defective,
        leak_norm,
    })
}

/// `‖e^{(A+BĈ)T} u0 − e^{(A+BC*)T} u0‖₂`, the exact continuous-time trajectory error.
pub fn exact_flow_error(
    sys: &LinearSystem,
    c_hat: &DenseMatrix,
    u0: &[f64],
    t: f64,
) -> Result<f64, LinearError> {
    use crate::linalg::matrix_exp;
    let sim = matrix_exp(&sys.closed_loop(c_hat), t)?.mul_vec(u0);
    let truth = matrix_exp(&sys.generator(), t)?.mul_vec(u0);
    Ok(sim.iter().zip(&truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}
