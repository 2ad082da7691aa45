//! Resolved dynamics `L(u, y, t)`, surrogate models and the four training objectives.
//!
//! Every resolved model is affine in the label: `L(u, y, t) = c(u, t) + J y` with a constant
//! `J`. Training caches `∇F(u)ᵀ c` and `Jᵀ ∇F(u)` per sample, so the tangent penalty and its
//! gradient cost one dot product per sample.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::linalg::dot;
use crate::linear::{linear_step_with_label, LinearDataset, LinearSystem, SimMode};
use crate::manifold::{ds_value_and_gradient, DsIndicator, ManifoldError};
use crate::nn::{weight_decay_grads, Activation, AdamState, Mlp, NnError, PlateauScheduler, Tape};
use crate::pde::dataset::{FieldKind, TrajectoryDataset};
use crate::pde::ns::{add_pressure_gradient, correct_velocity, pressure_gradient_transpose, tentative_velocity, NsParams};
use crate::pde::rd::{coarse_predict, RdParams};
use crate::pde::PdeError;
use crate::rng::{normal_vec, stream_rng};

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("training diverged (non-finite loss at epoch {epoch})")]
    NonFinite { epoch: usize },
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Ols,
    Mols,
    Aols,
    Tr,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Ols, Objective::Mols, Objective::Aols, Objective::Tr];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Ols => "OLS",
            Objective::Mols => "mOLS",
            Objective::Aols => "aOLS",
            Objective::Tr => "TR",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ols" => Some(Objective::Ols),
            "mols" => Some(Objective::Mols),
            "aols" => Some(Objective::Aols),
            "tr" => Some(Objective::Tr),
            _ => None,
        }
    }
}

/// The known part of the dynamics.
#[derive(Debug, Clone)]
pub enum ResolvedModel {
    /// `L = A u + B y`; the step is the discrete map or forward Euler.
    Linear { sys: LinearSystem, mode: SimMode },
    /// Fine state stepped as `I f_n R(u) + y`; `L` is that displacement divided by `dt`.
    RdCoarseFine { fine: RdParams },
    /// Projection step with the label as pressure: `u⁺ = û − dt ∇p`.
    NsProjection { params: NsParams },
}

impl ResolvedModel {
    pub fn dt(&self) -> f64 {
        match self {
            ResolvedModel::Linear { sys, .. } => sys.dt,
            ResolvedModel::RdCoarseFine { fine } => fine.dt,
            ResolvedModel::NsProjection { params } => params.dt,
        }
    }

    pub fn state_len(&self) -> usize {
        match self {
            ResolvedModel::Linear { sys, .. } => sys.state_dim(),
            ResolvedModel::RdCoarseFine { fine } => fine.state_len(),
            ResolvedModel::NsProjection { params } => params.grid().state_len(),
        }
    }

    pub fn label_len(&self) -> usize {
        match self {
            ResolvedModel::Linear { sys, .. } => sys.label_dim(),
            ResolvedModel::RdCoarseFine { fine } => fine.state_len(),
            ResolvedModel::NsProjection { params } => params.grid().n_p(),
        }
    }

    /// Specializes per-trajectory parameters (the jet position for NS).
    pub fn for_trajectory(&self, param: f64) -> Self {
        match self {
            ResolvedModel::NsProjection { params } => ResolvedModel::NsProjection {
                params: NsParams { jet_y0: param, ..*params },
            },
            other => other.clone(),
        }
    }

    fn check(&self, u: &[f64], y: &[f64]) -> Result<(), TrainingError> {
        if u.len() != self.state_len() || y.len() != self.label_len() {
            return Err(TrainingError::Argument(format!(
                "state/label lengths {}/{} do not match resolved model {}/{}",
                u.len(),
                y.len(),
                self.state_len(),
                self.label_len()
            )));
        }
        Ok(())
    }

    /// One step of the resolved dynamics with the supplied label.
    pub fn step(&self, u: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>, TrainingError> {
        self.check(u, y)?;
        Ok(match self {
            ResolvedModel::Linear { sys, mode } => linear_step_with_label(sys, u, y, *mode),
            ResolvedModel::RdCoarseFine { fine } => {
                let mut pred = coarse_predict(u, fine)?;
                for (p, yi) in pred.iter_mut().zip(y) {
                    *p += yi;
                }
                pred
            }
            ResolvedModel::NsProjection { params } => {
                correct_velocity(&tentative_velocity(u, params, t), y, params)
            }
        })
    }

    /// `c(u, t) = L(u, 0, t)`.
    pub fn offset(&self, u: &[f64], t: f64) -> Result<Vec<f64>, TrainingError> {
        if u.len() != self.state_len() {
            return Err(TrainingError::Argument("state length mismatch".into()));
        }
        Ok(match self {
            ResolvedModel::Linear { sys, .. } => sys.a.mul_vec(u),
            ResolvedModel::RdCoarseFine { fine } => {
                let pred = coarse_predict(u, fine)?;
                pred.iter().zip(u).map(|(p, x)| (p - x) / fine.dt).collect()
            }
            ResolvedModel::NsProjection { params } => {
                let tent = tentative_velocity(u, params, t);
                tent.iter().zip(u).map(|(p, x)| (p - x) / params.dt).collect()
            }
        })
    }

    /// `Jᵀ g` for a state-space vector `g`.
    pub fn label_vjp(&self, g: &[f64]) -> Vec<f64> {
        match self {
            ResolvedModel::Linear { sys, .. } => sys.b.tr_mul_vec(g),
            ResolvedModel::RdCoarseFine { fine } => g.iter().map(|v| v / fine.dt).collect(),
            ResolvedModel::NsProjection { params } => {
                let mut out = vec![0.0; params.grid().n_p()];
                pressure_gradient_transpose(g, &params.grid(), -1.0, &mut out);
                out
            }
        }
    }

    /// `L(u, y, t)`.
    pub fn velocity(&self, u: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>, TrainingError> {
        self.check(u, y)?;
        let mut c = self.offset(u, t)?;
        match self {
            ResolvedModel::Linear { sys, .. } => {
                for (ci, by) in c.iter_mut().zip(sys.b.mul_vec(y)) {
                    *ci += by;
                }
            }
            ResolvedModel::RdCoarseFine { fine } => {
                for (ci, yi) in c.iter_mut().zip(y) {
                    *ci += yi / fine.dt;
                }
            }
            ResolvedModel::NsProjection { params } => {
                add_pressure_gradient(&mut c, y, &params.grid(), -1.0);
            }
        }
        Ok(c)
    }
}

/// `(∇F(u)ᵀ L(u, y, t))²`.
pub fn tr_penalty(
    rm: &ResolvedModel,
    ind: &DsIndicator,
    u: &[f64],
    y_pred: &[f64],
    t: f64,
) -> Result<f64, TrainingError> {
    let (_, g) = ds_value_and_gradient(ind, u);
    let l = rm.velocity(u, y_pred, t)?;
    let s = dot(&g, &l);
    Ok(s * s)
}

/// How states map to network rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SurrogateArch {
    /// Bias-free single linear layer `y = W u`.
    Linear,
    /// Whole state in, whole label out; optionally appends `(sin t, cos t)`.
    Dense { time_features: bool },
    /// RD fields on an `n x n` grid: each 2x2 block is predicted from its 4x4 periodic
    /// neighbourhood (both components), sharing one network across blocks.
    RdPatch { n: usize },
}

impl SurrogateArch {
    pub fn rows_per_sample(&self) -> usize {
        match self {
            SurrogateArch::RdPatch { n } => (n / 2) * (n / 2),
            _ => 1,
        }
    }

    pub fn row_dims(&self, state_len: usize, label_len: usize) -> (usize, usize) {
        match self {
            SurrogateArch::Linear => (state_len, label_len),
            SurrogateArch::Dense { time_features } => {
                (state_len + if *time_features { 2 } else { 0 }, label_len)
            }
            SurrogateArch::RdPatch { .. } => (32, 8),
        }
    }
}

/// Fixed scalar affine maps around the network: `ŷ = out_scale · net((u − in_shift)/in_scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub in_shift: f64,
    pub in_scale: f64,
    pub out_scale: f64,
}

impl Normalizer {
    pub const IDENTITY: Normalizer = Normalizer {
        in_shift: 0.0,
        in_scale: 1.0,
        out_scale: 1.0,
    };

    pub fn from_data(states: &[f64], labels: &[f64]) -> Self {
        let n = states.len().max(1) as f64;
        let mean = states.iter().sum::<f64>() / n;
        let var = states.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let lrms = (labels.iter().map(|v| v * v).sum::<f64>() / labels.len().max(1) as f64).sqrt();
        Self {
            in_shift: mean,
            in_scale: if var > 0.0 { var.sqrt() } else { 1.0 },
            out_scale: if lrms > 0.0 { lrms } else { 1.0 },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SurrogateMeta {
    pub objective: Objective,
    pub lambda: f64,
    pub noise_sigma: f64,
    pub arch: SurrogateArch,
    pub normalizer: Normalizer,
    pub state_len: usize,
    pub label_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub net: Mlp,
    pub meta: SurrogateMeta,
}

impl SurrogateModel {
    /// Network of `hidden` layers around the row dims of `arch`.
    pub fn new(
        arch: SurrogateArch,
        state_len: usize,
        label_len: usize,
        hidden: &[usize],
        activation: Activation,
        objective: Objective,
        seed: u64,
    ) -> Result<Self, TrainingError> {
        let (i, o) = arch.row_dims(state_len, label_len);
        if let SurrogateArch::RdPatch { n } = arch {
            if n % 2 != 0 || state_len != 2 * n * n || label_len != state_len {
                return Err(TrainingError::Argument("RD patch surrogate needs matching field sizes".into()));
            }
        }
        let net = if arch == SurrogateArch::Linear {
            Mlp::zeros(&[i, o], Activation::Identity)?
        } else {
            let mut dims = vec![i];
            dims.extend_from_slice(hidden);
            dims.push(o);
            Mlp::new(&dims, activation, seed)?
        };
        Ok(Self {
            net,
            meta: SurrogateMeta {
                objective,
                lambda: 0.0,
                noise_sigma: 0.0,
                arch,
                normalizer: Normalizer::IDENTITY,
                state_len,
                label_len,
            },
        })
    }

    /// Linear surrogate `y = C u`.
    pub fn from_matrix(c: &crate::linalg::DenseMatrix) -> Result<Self, TrainingError> {
        let mut m = Self::new(SurrogateArch::Linear, c.cols(), c.rows(), &[], Activation::Identity, Objective::Ols, 0)?;
        m.net.params_mut()[..c.rows() * c.cols()].copy_from_slice(c.as_slice());
        Ok(m)
    }

    pub fn with_objective(mut self, objective: Objective, lambda: f64, noise_sigma: f64) -> Self {
        self.meta.objective = objective;
        self.meta.lambda = lambda;
        self.meta.noise_sigma = noise_sigma;
        self
    }

    fn row_dims(&self) -> (usize, usize) {
        self.meta.arch.row_dims(self.meta.state_len, self.meta.label_len)
    }

    /// Writes the network rows of one sample into `out`.
    fn features(&self, u: &[f64], t: f64, out: &mut [f64]) {
        let nz = self.meta.normalizer;
        let norm = |x: f64| (x - nz.in_shift) / nz.in_scale;
        match self.meta.arch {
            SurrogateArch::Linear => out.copy_from_slice(u),
            SurrogateArch::Dense { time_features } => {
                for (o, &x) in out.iter_mut().zip(u) {
                    *o = norm(x);
                }
                if time_features {
                    let k = u.len();
                    out[k] = t.sin();
                    out[k + 1] = t.cos();
                }
            }
            SurrogateArch::RdPatch { n } => {
                let nb = n / 2;
                let len = n * n;
                let mut idx = 0;
                for bj in 0..nb {
                    for bi in 0..nb {
                        for c in 0..2 {
                            for dj in 0..4 {
                                let y = (2 * bj + n + dj - 1) % n;
                                for di in 0..4 {
                                    let x = (2 * bi + n + di - 1) % n;
                                    out[idx] = norm(u[c * len + y * n + x]);
                                    idx += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Maps network outputs of one sample to the label (`forward = true`), or label gradients
    /// back to output-row gradients (`forward = false`); the two are transposes.
    fn transfer(&self, rows: &mut [f64], label: &mut [f64], forward: bool) {
        let s = self.meta.normalizer.out_scale;
        match self.meta.arch {
            SurrogateArch::Linear | SurrogateArch::Dense { .. } => {
                if forward {
                    label.iter_mut().zip(rows.iter()).for_each(|(l, r)| *l = s * r);
                } else {
                    rows.iter_mut().zip(label.iter()).for_each(|(r, l)| *r = s * l);
                }
            }
            SurrogateArch::RdPatch { n } => {
                let nb = n / 2;
                let len = n * n;
                let mut idx = 0;
                for bj in 0..nb {
                    for bi in 0..nb {
                        for c in 0..2 {
                            for dj in 0..2 {
                                for di in 0..2 {
                                    let k = c * len + (2 * bj + dj) * n + 2 * bi + di;
                                    if forward {
                                        label[k] = s * rows[idx];
                                    } else {
                                        rows[idx] = s * label[k];
                                    }
                                    idx += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn predict(&self, u: &[f64], t: f64) -> Vec<f64> {
        if self.meta.arch == SurrogateArch::Linear {
            // same summation order as a dense matrix-vector product
            let (i, o) = self.row_dims();
            let w = &self.net.params()[..i * o];
            return (0..o).map(|r| dot(&w[r * i..(r + 1) * i], u)).collect();
        }
        self.predict_batch(u, &[t])
    }

    /// Labels for consecutive states; `times.len()` is the sample count.
    pub fn predict_batch(&self, states: &[f64], times: &[f64]) -> Vec<f64> {
        let (tape, _) = self.forward(states, times);
        self.labels_from_tape(&tape, times.len())
    }

    fn forward(&self, states: &[f64], times: &[f64]) -> (Tape, usize) {
        let b = times.len();
        let rows = self.meta.arch.rows_per_sample();
        let (i, _) = self.row_dims();
        let mut x = vec![0.0; b * rows * i];
        for (k, &t) in times.iter().enumerate() {
            let u = &states[k * self.meta.state_len..(k + 1) * self.meta.state_len];
            self.features(u, t, &mut x[k * rows * i..(k + 1) * rows * i]);
        }
        (self.net.forward_tape(&x, b * rows), rows)
    }

    fn labels_from_tape(&self, tape: &Tape, b: usize) -> Vec<f64> {
        let rows = self.meta.arch.rows_per_sample();
        let (_, o) = self.row_dims();
        let ll = self.meta.label_len;
        let mut out = vec![0.0; b * ll];
        let mut buf = tape.output().to_vec();
        for k in 0..b {
            self.transfer(
                &mut buf[k * rows * o..(k + 1) * rows * o],
                &mut out[k * ll..(k + 1) * ll],
                true,
            );
        }
        out
    }

    /// Network bytes; metadata goes to a JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<(), TrainingError> {
        std::fs::write(path, self.net.to_bytes()).map_err(|e| TrainingError::Argument(e.to_string()))?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("metadata serializes");
        std::fs::write(sidecar(path), meta).map_err(|e| TrainingError::Argument(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainingError> {
        let bytes = std::fs::read(path).map_err(|e| TrainingError::Argument(format!("{}: {e}", path.display())))?;
        let net = Mlp::from_bytes(&bytes)?;
        let meta_s = std::fs::read_to_string(sidecar(path))
            .map_err(|e| TrainingError::Argument(format!("{}: {e}", sidecar(path).display())))?;
        let meta: SurrogateMeta =
            serde_json::from_str(&meta_s).map_err(|e| TrainingError::Argument(e.to_string()))?;
        Ok(Self { net, meta })
    }
}

pub fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

impl From<&LinearDataset> for TrajectoryDataset {
    fn from(d: &LinearDataset) -> Self {
        let n = d.len();
        let m = d.u.rows();
        let k = d.y.rows();
        let mut states = Vec::with_capacity(n * m);
        let mut labels = Vec::with_capacity(n * k);
        for c in 0..n {
            states.extend(d.u.col(c));
            labels.extend(d.y.col(c));
        }
        TrajectoryDataset {
            kind: FieldKind::Linear,
            nx: m,
            ny: 1,
            dt: 1.0,
            t0: 0.0,
            n_traj: d.n_traj,
            state_len: m,
            label_len: k,
            traj_params: vec![0.0; d.n_traj],
            states,
            labels,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Samples per Adam step; 0 means one trajectory.
    pub batch_size: usize,
    pub patience: usize,
    pub factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            lr: 1e-4,
            batch_size: 0,
            patience: 100,
            factor: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub objective: Objective,
    pub loss_data: f64,
    pub loss_penalty: f64,
    pub lr: f64,
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,objective,loss_data,loss_penalty,lr")?;
    for e in log {
        writeln!(w, "{},{},{:e},{:e},{:e}", e.epoch, e.objective.name(), e.loss_data, e.loss_penalty, e.lr)?;
    }
    w.flush()
}

/// Per-sample quantities for the tangent penalty `s = gc + w·ŷ`.
#[derive(Debug, Clone)]
pub struct PenaltyCache {
    gc: Vec<f64>,
    w: Vec<f64>,
    label_len: usize,
}

impl PenaltyCache {
    pub fn build(rm: &ResolvedModel, ind: &DsIndicator, data: &TrajectoryDataset) -> Result<Self, TrainingError> {
        if ind.dim() != data.state_len {
            return Err(TrainingError::Config(format!(
                "indicator dimension {} does not match state length {}",
                ind.dim(),
                data.state_len
            )));
        }
        let mut gc = Vec::with_capacity(data.len());
        let mut w = Vec::with_capacity(data.len() * data.label_len);
        for k in 0..data.len() {
            let rmk = rm.for_trajectory(data.traj_params[data.traj_of(k)]);
            let u = data.state(k);
            let (_, g) = ds_value_and_gradient(ind, u);
            gc.push(dot(&g, &rmk.offset(u, data.time(k))?));
            w.extend(rmk.label_vjp(&g));
        }
        Ok(Self {
            gc,
            w,
            label_len: data.label_len,
        })
    }

    fn w(&self, k: usize) -> &[f64] {
        &self.w[k * self.label_len..(k + 1) * self.label_len]
    }
}

/// Batch loss pieces and parameter gradient (mean over the batch).
struct BatchEval {
    loss_data: f64,
    loss_penalty: f64,
    grads: Vec<f64>,
}

fn eval_batch(
    model: &SurrogateModel,
    data: &TrajectoryDataset,
    idx: &[usize],
    inputs: Option<&[f64]>,
    cache: Option<&PenaltyCache>,
    lambda_tr: f64,
) -> BatchEval {
    let sl = data.state_len;
    let ll = data.label_len;
    let b = idx.len();
    let mut states = Vec::with_capacity(b * sl);
    let mut times = Vec::with_capacity(b);
    for &k in idx {
        match inputs {
            Some(x) => states.extend_from_slice(&x[k * sl..(k + 1) * sl]),
            None => states.extend_from_slice(data.state(k)),
        }
        times.push(data.time(k));
    }
    let (tape, rows) = model.forward(&states, &times);
    let pred = model.labels_from_tape(&tape, b);
    let inv_b = 1.0 / b as f64;
    let mut loss_data = 0.0;
    let mut loss_penalty = 0.0;
    let mut dl = vec![0.0; b * ll];
    for (j, &k) in idx.iter().enumerate() {
        let y = data.label(k);
        let yh = &pred[j * ll..(j + 1) * ll];
        let d = &mut dl[j * ll..(j + 1) * ll];
        for i in 0..ll {
            let r = y[i] - yh[i];
            loss_data += r * r;
            d[i] = -2.0 * r * inv_b;
        }
        if let Some(c) = cache {
            if lambda_tr != 0.0 {
                let w = c.w(k);
                let s = c.gc[k] + dot(w, yh);
                loss_penalty += s * s;
                let coef = 2.0 * lambda_tr * s * inv_b;
                for i in 0..ll {
                    d[i] += coef * w[i];
                }
            }
        }
    }
    let (_, o) = model.row_dims();
    let mut up = vec![0.0; b * rows * o];
    for j in 0..b {
        model.transfer(&mut up[j * rows * o..(j + 1) * rows * o], &mut dl[j * ll..(j + 1) * ll], false);
    }
    let mut grads = vec![0.0; model.net.n_params()];
    model.net.backward(&tape, &up, &mut grads);
    if model.meta.arch == SurrogateArch::Linear {
        let (i, o) = model.row_dims();
        grads[i * o..].iter_mut().for_each(|g| *g = 0.0);
    }
    BatchEval {
        loss_data: loss_data * inv_b,
        loss_penalty: loss_penalty * inv_b,
        grads,
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SurrogateModel,
    pub log: Vec<EpochLog>,
}

/// Trains `model` with its objective. TR requires `ind`; the other objectives ignore it.
/// The normalizer is fitted to the data unless the architecture is linear.
pub fn train_surrogate(
    mut model: SurrogateModel,
    rm: &ResolvedModel,
    ind: Option<&DsIndicator>,
    data: &TrajectoryDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainingError> {
    if data.is_empty() {
        return Err(TrainingError::Argument("training set is empty".into()));
    }
    if data.state_len != model.meta.state_len || data.label_len != model.meta.label_len {
        return Err(TrainingError::Argument("dataset does not match the surrogate shape".into()));
    }
    let objective = model.meta.objective;
    let cache = match (objective, ind) {
        (Objective::Tr, None) => {
            return Err(TrainingError::Config(
                "TR training needs a trained distribution-shift indicator; run train-ae first".into(),
            ))
        }
        (Objective::Tr, Some(ind)) => Some(PenaltyCache::build(rm, ind, data)?),
        _ => None,
    };
    if model.meta.arch != SurrogateArch::Linear {
        model.meta.normalizer = Normalizer::from_data(&data.states, &data.labels);
    }
    let lambda = model.meta.lambda;
    let lambda_tr = if objective == Objective::Tr { lambda } else { 0.0 };
    let lambda_wd = if objective == Objective::Mols { lambda } else { 0.0 };
    let sigma = if objective == Objective::Aols { model.meta.noise_sigma } else { 0.0 };
    let batch = if cfg.batch_size == 0 { data.per_traj() } else { cfg.batch_size.min(data.len()) };
    let mut rng = stream_rng(cfg.seed, 31);
    let mut adam = AdamState::new(model.net.n_params(), cfg.lr);
    let mut sched = PlateauScheduler::new(cfg.patience, cfg.factor);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut noisy;
        let inputs = if sigma > 0.0 {
            noisy = data.states.clone();
            for (x, e) in noisy.iter_mut().zip(normal_vec(&mut rng, data.states.len(), sigma)) {
                *x += e;
            }
            Some(noisy.as_slice())
        } else {
            None
        };
        order.shuffle(&mut rng);
        let (mut ld, mut lp, mut nb) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(batch) {
            let mut ev = eval_batch(&model, data, chunk, inputs, cache.as_ref(), lambda_tr);
            weight_decay_grads(model.net.params(), lambda_wd, &mut ev.grads);
            ld += ev.loss_data;
            lp += ev.loss_penalty;
            nb += 1;
            adam.step(model.net.params_mut(), &ev.grads);
        }
        ld /= nb as f64;
        lp /= nb as f64;
        let total = ld + lambda_tr * lp;
        if !total.is_finite() || model.net.params().iter().any(|p| !p.is_finite()) {
            return Err(TrainingError::NonFinite { epoch });
        }
        log.push(EpochLog {
            epoch,
            objective,
            loss_data: ld,
            loss_penalty: lp,
            lr: adam.lr,
        });
        adam.lr = sched.observe(total, adam.lr);
    }
    Ok(TrainOutcome { model, log })
}

/// Full objective (data + TR penalty + weight decay) on the given samples, evaluated through
/// the resolved model and indicator directly rather than through cached affine parts.
pub fn full_loss(
    model: &SurrogateModel,
    rm: &ResolvedModel,
    ind: Option<&DsIndicator>,
    data: &TrajectoryDataset,
    idx: &[usize],
) -> Result<f64, TrainingError> {
    let objective = model.meta.objective;
    let mut total = 0.0;
    for &k in idx {
        let u = data.state(k);
        let t = data.time(k);
        let yh = model.predict_batch(u, &[t]);
        total += data.label(k).iter().zip(&yh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        if objective == Objective::Tr {
            let ind = ind.ok_or_else(|| TrainingError::Config("TR loss needs an indicator".into()))?;
            let rmk = rm.for_trajectory(data.traj_params[data.traj_of(k)]);
            total += model.meta.lambda * tr_penalty(&rmk, ind, u, &yh, t)?;
        }
    }
    total /= idx.len() as f64;
    if objective == Objective::Mols {
        total += model.meta.lambda * model.net.params().iter().map(|p| p * p).sum::<f64>();
    }
    Ok(total)
}

/// Analytic gradient of the full objective versus central differences (step `1e-5`) over all
/// parameters; returns `‖g_analytic − g_fd‖₂ / ‖g_fd‖₂`.
pub fn loss_gradient_check(
    model: &SurrogateModel,
    rm: &ResolvedModel,
    ind: Option<&DsIndicator>,
    data: &TrajectoryDataset,
    idx: &[usize],
) -> Result<f64, TrainingError> {
    let objective = model.meta.objective;
    let cache = match (objective, ind) {
        (Objective::Tr, Some(ind)) => Some(PenaltyCache::build(rm, ind, data)?),
        (Objective::Tr, None) => return Err(TrainingError::Config("TR check needs an indicator".into())),
        _ => None,
    };
    let lambda_tr = if objective == Objective::Tr { model.meta.lambda } else { 0.0 };
    let mut ev = eval_batch(model, data, idx, None, cache.as_ref(), lambda_tr);
    if objective == Objective::Mols {
        weight_decay_grads(model.net.params(), model.meta.lambda, &mut ev.grads);
    }
    let h = 1e-5;
    let mut probe = model.clone();
    let mut num = 0.0;
    let mut den = 0.0;
    for p in 0..model.net.n_params() {
        if model.meta.arch == SurrogateArch::Linear && p >= model.meta.state_len * model.meta.label_len {
            continue;
        }
        let orig = model.net.params()[p];
        probe.net.params_mut()[p] = orig + h;
        let fp = full_loss(&probe, rm, ind, data, idx)?;
        probe.net.params_mut()[p] = orig - h;
        let fm = full_loss(&probe, rm, ind, data, idx)?;
        probe.net.params_mut()[p] = orig;
        let fd = (fp - fm) / (2.0 * h);
        num += (ev.grads[p] - fd) * (ev.grads[p] - fd);
        den += fd * fd;
    }
    Ok(if den == 0.0 { num.sqrt() } else { (num / den).sqrt() })
}
