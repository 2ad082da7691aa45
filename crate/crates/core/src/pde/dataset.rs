//! Trajectory datasets of `(state, label)` tuples and their binary/CSV forms.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ns::{ns_step_state, NsParams};
use super::rd::{coarse_predict, rd_step_state, RdParams};
use super::PdeError;
use crate::nn::ByteReader;
use crate::rng::{normal_vec, stream_rng};

pub const DATASET_MAGIC: &[u8; 5] = b"MLHS1";
const HEADER_LEN: usize = 65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Linear,
    Rd,
    Ns,
}

impl FieldKind {
    fn tag(self) -> u32 {
        match self {
            FieldKind::Linear => 0,
            FieldKind::Rd => 1,
            FieldKind::Ns => 2,
        }
    }

    fn from_tag(t: u32) -> Option<Self> {
        match t {
            0 => Some(FieldKind::Linear),
            1 => Some(FieldKind::Rd),
            2 => Some(FieldKind::Ns),
            _ => None,
        }
    }
}

/// Equal-length trajectories stored back to back. Tuple `k` of trajectory `r` sits at index
/// `r * per_traj + k` and has time `t0 + k * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub kind: FieldKind,
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub t0: f64,
    pub n_traj: usize,
    pub state_len: usize,
    pub label_len: usize,
    /// One scalar per trajectory (the jet position for NS, unused otherwise).
    pub traj_params: Vec<f64>,
    pub states: Vec<f64>,
    pub labels: Vec<f64>,
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        if self.state_len == 0 {
            0
        } else {
            self.states.len() / self.state_len
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn per_traj(&self) -> usize {
        if self.n_traj == 0 {
            0
        } else {
            self.len() / self.n_traj
        }
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.state_len..(k + 1) * self.state_len]
    }

    pub fn label(&self, k: usize) -> &[f64] {
        &self.labels[k * self.label_len..(k + 1) * self.label_len]
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + (k % self.per_traj()) as f64 * self.dt
    }

    pub fn traj_of(&self, k: usize) -> usize {
        k / self.per_traj()
    }

    /// States of trajectory `r`, in order.
    pub fn trajectory_states(&self, r: usize) -> Vec<Vec<f64>> {
        let n = self.per_traj();
        (r * n..(r + 1) * n).map(|k| self.state(k).to_vec()).collect()
    }

    /// Keeps every `stride`-th tuple of each trajectory. The spacing between kept tuples becomes
    /// the dataset `dt`, so `time(k)` still reports the original times.
    pub fn thinned(&self, stride: usize) -> Self {
        if stride <= 1 {
            return self.clone();
        }
        let per = self.per_traj();
        let mut out = Self {
            dt: self.dt * stride as f64,
            states: Vec::new(),
            labels: Vec::new(),
            ..self.clone()
        };
        for r in 0..self.n_traj {
            for k in (0..per).step_by(stride) {
                out.states.extend_from_slice(self.state(r * per + k));
                out.labels.extend_from_slice(self.label(r * per + k));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(80 + 8 * (self.states.len() + self.labels.len()));
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&self.kind.tag().to_le_bytes());
        out.extend_from_slice(&(self.nx as u32).to_le_bytes());
        out.extend_from_slice(&(self.ny as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.dt.to_le_bytes());
        out.extend_from_slice(&(self.n_traj as u64).to_le_bytes());
        out.extend_from_slice(&(self.state_len as u64).to_le_bytes());
        out.extend_from_slice(&(self.label_len as u64).to_le_bytes());
        out.extend_from_slice(&self.t0.to_le_bytes());
        for v in &self.traj_params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for k in 0..self.len() {
            for v in self.state(k).iter().chain(self.label(k)) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PdeError> {
        let fmt = |e: crate::nn::NnError| PdeError::Format(e.to_string());
        let mut r = ByteReader::new(bytes);
        r.expect_magic(DATASET_MAGIC).map_err(fmt)?;
        let kind = FieldKind::from_tag(r.u32().map_err(fmt)?)
            .ok_or_else(|| PdeError::Format("unknown field kind".into()))?;
        let nx = r.u32().map_err(fmt)? as usize;
        let ny = r.u32().map_err(fmt)? as usize;
        let count = r.u64().map_err(fmt)? as usize;
        let dt = r.f64().map_err(fmt)?;
        let n_traj = r.u64().map_err(fmt)? as usize;
        let state_len = r.u64().map_err(fmt)? as usize;
        let label_len = r.u64().map_err(fmt)? as usize;
        let t0 = r.f64().map_err(fmt)?;
        let expected = count
            .checked_mul(state_len + label_len)
            .and_then(|v| v.checked_add(n_traj))
            .and_then(|v| v.checked_mul(8));
        if expected != Some(bytes.len().saturating_sub(HEADER_LEN)) {
            return Err(PdeError::Format("size does not match header".into()));
        }
        if n_traj == 0 || count % n_traj != 0 {
            return Err(PdeError::Format("tuple count not divisible by trajectory count".into()));
        }
        let traj_params = r.f64_vec(n_traj).map_err(fmt)?;
        let mut states = Vec::with_capacity(count * state_len);
        let mut labels = Vec::with_capacity(count * label_len);
        for _ in 0..count {
            states.extend(r.f64_vec(state_len).map_err(fmt)?);
            labels.extend(r.f64_vec(label_len).map_err(fmt)?);
        }
        r.finish().map_err(fmt)?;
        Ok(Self {
            kind,
            nx,
            ny,
            dt,
            t0,
            n_traj,
            state_len,
            label_len,
            traj_params,
            states,
            labels,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PdeError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PdeError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Flattened CSV: `traj,step,t,s0..,y0..`.
    pub fn export_csv(&self, path: &Path) -> Result<(), PdeError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(w, "traj,step,t")?;
        for i in 0..self.state_len {
            write!(w, ",s{i}")?;
        }
        for i in 0..self.label_len {
            write!(w, ",y{i}")?;
        }
        writeln!(w)?;
        let per = self.per_traj();
        for k in 0..self.len() {
            write!(w, "{},{},{}", k / per, k % per, self.time(k))?;
            for v in self.state(k).iter().chain(self.label(k)) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fine-grid RD trajectories with coarse-fine correction labels
/// `y_k = u_{k+1} − I f_n R(u_k)`. Each trajectory starts from i.i.d. N(0,1) fields, runs
/// `n_discard` burn-in steps, then records `n_steps − n_discard` tuples.
pub fn make_rd_dataset(
    p_fine: &RdParams,
    n_traj: usize,
    n_steps: usize,
    n_discard: usize,
    seed: u64,
) -> Result<TrajectoryDataset, PdeError> {
    p_fine.validate()?;
    p_fine.coarsened()?;
    if n_traj == 0 || n_steps <= n_discard {
        return Err(PdeError::Argument("need n_traj > 0 and n_steps > n_discard".into()));
    }
    let len = p_fine.state_len();
    let per = n_steps - n_discard;
    let mut states = Vec::with_capacity(n_traj * per * len);
    let mut labels = Vec::with_capacity(n_traj * per * len);
    for r in 0..n_traj {
        let mut rng = stream_rng(seed, 1000 + r as u64);
        let init = normal_vec(&mut rng, len, 1.0);
        let traj = rd_trajectory(p_fine, init, n_steps, n_discard).map_err(|e| match e {
            PdeError::BlowUp { step, .. } => PdeError::BlowUp { traj: r, step },
            other => other,
        })?;
        for (s, y) in traj {
            states.extend(s);
            labels.extend(y);
        }
    }
    Ok(TrajectoryDataset {
        kind: FieldKind::Rd,
        nx: p_fine.n,
        ny: p_fine.n,
        dt: p_fine.dt,
        t0: n_discard as f64 * p_fine.dt,
        n_traj,
        state_len: len,
        label_len: len,
        traj_params: vec![p_fine.gamma; n_traj],
        states,
        labels,
    })
}

fn rd_trajectory(
    p: &RdParams,
    init: Vec<f64>,
    n_steps: usize,
    n_discard: usize,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, PdeError> {
    let mut state = init;
    for step in 0..n_discard {
        state = rd_step_state(&state, p, true).map_err(|e| blow_step(e, step))?;
    }
    let mut out = Vec::with_capacity(n_steps - n_discard);
    for step in n_discard..n_steps {
        let next = rd_step_state(&state, p, true).map_err(|e| blow_step(e, step))?;
        let pred = coarse_predict(&state, p).map_err(|e| blow_step(e, step))?;
        let label: Vec<f64> = next.iter().zip(&pred).map(|(a, b)| a - b).collect();
        out.push((std::mem::replace(&mut state, next), label));
    }
    Ok(out)
}

fn blow_step(e: PdeError, step: usize) -> PdeError {
    match e {
        PdeError::BlowUp { traj, .. } => PdeError::BlowUp { traj, step },
        other => other,
    }
}

/// NS trajectories from rest with a jet position drawn from U[0.3, 0.7] per trajectory.
/// Tuples are `(face velocities u_k, pressure p_k)` where `p_k` advances `u_k` to `u_{k+1}`.
pub fn make_ns_dataset(
    base: &NsParams,
    n_traj: usize,
    n_steps: usize,
    n_discard: usize,
    seed: u64,
) -> Result<TrajectoryDataset, PdeError> {
    base.validate()?;
    if n_traj == 0 || n_steps <= n_discard {
        return Err(PdeError::Argument("need n_traj > 0 and n_steps > n_discard".into()));
    }
    let g = base.grid();
    let per = n_steps - n_discard;
    let mut states = Vec::with_capacity(n_traj * per * g.state_len());
    let mut labels = Vec::with_capacity(n_traj * per * g.n_p());
    let mut traj_params = Vec::with_capacity(n_traj);
    for r in 0..n_traj {
        let mut rng = stream_rng(seed, 2000 + r as u64);
        let y0 = rng.random_range(0.3..0.7);
        traj_params.push(y0);
        let p = NsParams { jet_y0: y0, ..*base };
        let mut state = vec![0.0; g.state_len()];
        let mut pressure = vec![0.0; g.n_p()];
        for step in 0..n_steps {
            let t = step as f64 * p.dt;
            let (next, pr) = ns_step_state(&state, &pressure, &p, t).map_err(|e| match e {
                PdeError::BlowUp { .. } => PdeError::BlowUp { traj: r, step },
                other => other,
            })?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(PdeError::BlowUp { traj: r, step });
            }
            if step >= n_discard {
                states.extend_from_slice(&state);
                labels.extend_from_slice(&pr);
            }
            state = next;
            pressure = pr;
        }
    }
    Ok(TrajectoryDataset {
        kind: FieldKind::Ns,
        nx: g.nx,
        ny: g.ny,
        dt: base.dt,
        t0: n_discard as f64 * base.dt,
        n_traj,
        state_len: g.state_len(),
        label_len: g.n_p(),
        traj_params,
        states,
        labels,
    })
}
