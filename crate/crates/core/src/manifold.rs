//! Autoencoders for the training-data manifold and the distribution-shift indicator
//! `F(u) = ‖u − D(E(u))‖₂` with its gradient.

use sha2::{Digest, Sha256};

use crate::linalg::{symmetric_eigen, DenseMatrix, LinalgError};
use crate::nn::{Activation, AdamState, ByteReader, Mlp, NnError, CHECKPOINT_MAGIC};

/// Largest mean `F²` on the training data for which an indicator is issued without `force`.
pub const GATE_THRESHOLD: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum ManifoldError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("autoencoder training loss {loss:e} is above the gate {GATE_THRESHOLD:e}; retrain with a larger latent dimension or pass --force")]
    Gate { loss: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Splits a multi-channel `nx x ny` field into non-overlapping `tile x tile` patches.
/// A patch vector lists channel 0's tile row-major, then channel 1's, and so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tiling {
    pub nx: usize,
    pub ny: usize,
    pub channels: usize,
    pub tile: usize,
}

impl Tiling {
    pub fn validate(&self) -> Result<(), ManifoldError> {
        if self.tile == 0 || self.nx % self.tile != 0 || self.ny % self.tile != 0 || self.channels == 0 {
            return Err(ManifoldError::Argument(format!("invalid tiling {self:?}")));
        }
        Ok(())
    }

    pub fn field_len(&self) -> usize {
        self.nx * self.ny * self.channels
    }

    pub fn patch_len(&self) -> usize {
        self.tile * self.tile * self.channels
    }

    pub fn n_tiles(&self) -> usize {
        (self.nx / self.tile) * (self.ny / self.tile)
    }

    /// Field index of entry `e` in patch `p`.
    #[inline]
    pub fn index(&self, p: usize, e: usize) -> usize {
        let t = self.tile;
        let tx = self.nx / t;
        let (pj, pi) = (p / tx, p % tx);
        let c = e / (t * t);
        let r = e % (t * t);
        let (dj, di) = (r / t, r % t);
        c * self.nx * self.ny + (pj * t + dj) * self.nx + pi * t + di
    }

    pub fn extract(&self, field: &[f64], p: usize, out: &mut [f64]) {
        for (e, o) in out.iter_mut().enumerate() {
            *o = field[self.index(p, e)];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AutoencoderKind {
    /// `E(u) = W (u − μ)`, `D(z) = Wᵀ z + μ` with orthonormal rows `W`, applied per tile if
    /// `tiling` is set.
    Pca {
        mean: Vec<f64>,
        basis: DenseMatrix,
        tiling: Option<Tiling>,
    },
    Mlp { encoder: Mlp, decoder: Mlp },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub kind: AutoencoderKind,
    pub latent_dim: usize,
    pub ambient_dim: usize,
    /// Mean of `F²` over the training samples.
    pub train_loss: f64,
    /// Set when the training data had (numerically) zero variance.
    pub zero_variance: bool,
}

impl AutoencoderModel {
    /// `u − D(E(u))`.
    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        match &self.kind {
            AutoencoderKind::Pca { mean, basis, tiling } => match tiling {
                None => pca_residual(u, mean, basis),
                Some(t) => {
                    let mut r = vec![0.0; u.len()];
                    let mut patch = vec![0.0; t.patch_len()];
                    for p in 0..t.n_tiles() {
                        t.extract(u, p, &mut patch);
                        let pr = pca_residual(&patch, mean, basis);
                        for (e, v) in pr.into_iter().enumerate() {
                            r[t.index(p, e)] = v;
                        }
                    }
                    r
                }
            },
            AutoencoderKind::Mlp { encoder, decoder } => {
                let z = encoder.forward_batch(u, 1);
                let rec = decoder.forward_batch(&z, 1);
                u.iter().zip(rec).map(|(a, b)| a - b).collect()
            }
        }
    }

    pub fn reconstruct(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.residual(u)).map(|(a, r)| a - r).collect()
    }

    /// Flat parameter vector, for hashing and checkpoints.
    pub fn parameters(&self) -> Vec<f64> {
        match &self.kind {
            AutoencoderKind::Pca { mean, basis, .. } => {
                mean.iter().chain(basis.as_slice()).copied().collect()
            }
            AutoencoderKind::Mlp { encoder, decoder } => {
                encoder.params().iter().chain(decoder.params()).copied().collect()
            }
        }
    }

    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in self.parameters() {
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// `MLHSNN1`, kind tag (1 = PCA, 2 = MLP), then kind-specific payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        match &self.kind {
            AutoencoderKind::Pca { mean, basis, tiling } => {
                out.push(1);
                let t = tiling.unwrap_or(Tiling {
                    nx: 0,
                    ny: 0,
                    channels: 0,
                    tile: 0,
                });
                for v in [
                    self.ambient_dim,
                    basis.rows(),
                    basis.cols(),
                    t.nx,
                    t.ny,
                    t.channels,
                    t.tile,
                ] {
                    out.extend_from_slice(&(v as u64).to_le_bytes());
                }
                out.extend_from_slice(&self.train_loss.to_le_bytes());
                for v in mean.iter().chain(basis.as_slice()) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            AutoencoderKind::Mlp { encoder, decoder } => {
                out.push(2);
                out.extend_from_slice(&self.train_loss.to_le_bytes());
                for net in [encoder, decoder] {
                    let b = net.to_bytes();
                    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
                    out.extend_from_slice(&b);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ManifoldError> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(CHECKPOINT_MAGIC)?;
        match r.u8()? {
            1 => {
                let mut dims = [0usize; 7];
                for d in dims.iter_mut() {
                    *d = r.u64()? as usize;
                }
                let [ambient, k, plen, nx, ny, channels, tile] = dims;
                let train_loss = r.f64()?;
                let mean = r.f64_vec(plen)?;
                let basis = DenseMatrix::from_vec(k, plen, r.f64_vec(k * plen)?)?;
                r.finish()?;
                let tiling = (tile > 0).then_some(Tiling { nx, ny, channels, tile });
                Ok(Self {
                    kind: AutoencoderKind::Pca { mean, basis, tiling },
                    latent_dim: k,
                    ambient_dim: ambient,
                    train_loss,
                    zero_variance: false,
                })
            }
            2 => {
                let train_loss = r.f64()?;
                let mut nets = Vec::new();
                for _ in 0..2 {
                    let n = r.u64()? as usize;
                    let raw: Vec<u8> = (0..n).map(|_| r.u8()).collect::<Result<_, _>>()?;
                    nets.push(Mlp::from_bytes(&raw)?);
                }
                r.finish()?;
                let decoder = nets.pop().unwrap();
                let encoder = nets.pop().unwrap();
                Ok(Self {
                    latent_dim: encoder.output_dim(),
                    ambient_dim: encoder.input_dim(),
                    kind: AutoencoderKind::Mlp { encoder, decoder },
                    train_loss,
                    zero_variance: false,
                })
            }
            _ => Err(ManifoldError::Argument("checkpoint is not an autoencoder".into())),
        }
    }
}

fn pca_residual(u: &[f64], mean: &[f64], basis: &DenseMatrix) -> Vec<f64> {
    let c: Vec<f64> = u.iter().zip(mean).map(|(a, m)| a - m).collect();
    let z = basis.mul_vec(&c);
    let back = basis.tr_mul_vec(&z);
    c.iter().zip(back).map(|(a, b)| a - b).collect()
}

fn mean_sq_residual(model: &AutoencoderModel, data: &[f64], dim: usize) -> f64 {
    let n = data.len() / dim;
    data.chunks_exact(dim)
        .map(|u| model.residual(u).iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / n as f64
}

/// Principal directions of row samples `data` (`n x dim`) as orthonormal rows, plus the mean.
fn principal_basis(data: &[f64], dim: usize, k: usize) -> Result<(Vec<f64>, DenseMatrix, bool), ManifoldError> {
    let n = data.len() / dim;
    let mut mean = vec![0.0; dim];
    for row in data.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<f64> = data
        .chunks_exact(dim)
        .flat_map(|row| row.iter().zip(&mean).map(|(a, m)| a - m).collect::<Vec<_>>())
        .collect();
    let x = DenseMatrix::from_vec(n, dim, centred)?;
    let scale = x.max_abs();
    let (vals, basis) = if dim <= n {
        let cov = x.transpose().mul(&x);
        let (vals, vecs) = symmetric_eigen(&cov)?;
        (vals, DenseMatrix::from_fn(k, dim, |r, c| vecs[(c, r)]))
    } else {
        // thin route through the n x n Gram matrix: v_i = Xᵀ w_i / σ_i
        let gram = x.mul(&x.transpose());
        let (vals, w) = symmetric_eigen(&gram)?;
        let mut basis = DenseMatrix::zeros(k, dim);
        for i in 0..k {
            let wi = w.col(i);
            let v = x.tr_mul_vec(&wi);
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 0.0 {
                basis.row_mut(i).iter_mut().zip(v).for_each(|(b, a)| *b = a / norm);
            }
        }
        (vals, basis)
    };
    let zero_variance = scale == 0.0 || vals[0] <= f64::EPSILON * scale * scale;
    let basis = reorthonormalize(basis, dim);
    Ok((mean, basis, zero_variance))
}

/// Modified Gram–Schmidt on the rows, replacing null rows by unit vectors.
fn reorthonormalize(mut b: DenseMatrix, dim: usize) -> DenseMatrix {
    let k = b.rows();
    let mut next_unit = 0;
    for i in 0..k {
        for _pass in 0..2 {
            for j in 0..i {
                let d: f64 = (0..dim).map(|c| b[(i, c)] * b[(j, c)]).sum();
                for c in 0..dim {
                    let v = b[(j, c)];
                    b[(i, c)] -= d * v;
                }
            }
        }
        let mut norm = b.row(i).iter().map(|a| a * a).sum::<f64>().sqrt();
        while norm < 1e-8 && next_unit < dim {
            b.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
            b[(i, next_unit)] = 1.0;
            next_unit += 1;
            for j in 0..i {
                let d: f64 = (0..dim).map(|c| b[(i, c)] * b[(j, c)]).sum();
                for c in 0..dim {
                    let v = b[(j, c)];
                    b[(i, c)] -= d * v;
                }
            }
            norm = b.row(i).iter().map(|a| a * a).sum::<f64>().sqrt();
        }
        b.row_mut(i).iter_mut().for_each(|v| *v /= norm);
    }
    b
}

/// PCA autoencoder on row samples `data` (`n x dim`).
pub fn fit_pca(data: &[f64], dim: usize, latent_dim: usize) -> Result<AutoencoderModel, ManifoldError> {
    if dim == 0 || data.is_empty() || data.len() % dim != 0 {
        return Err(ManifoldError::Argument("data must be a non-empty n x dim array".into()));
    }
    let n = data.len() / dim;
    if latent_dim == 0 || latent_dim > dim.min(n) {
        return Err(ManifoldError::Argument(format!(
            "latent_dim {latent_dim} must be in 1..={}",
            dim.min(n)
        )));
    }
    let (mean, basis, zero_variance) = principal_basis(data, dim, latent_dim)?;
    let mut model = AutoencoderModel {
        kind: AutoencoderKind::Pca {
            mean,
            basis,
            tiling: None,
        },
        latent_dim,
        ambient_dim: dim,
        train_loss: 0.0,
        zero_variance,
    };
    model.train_loss = mean_sq_residual(&model, data, dim);
    Ok(model)
}

/// PCA shared across all tiles of each field sample; `F` is the residual norm of the whole field.
pub fn fit_patch_pca(data: &[f64], tiling: Tiling, latent_dim: usize) -> Result<AutoencoderModel, ManifoldError> {
    tiling.validate()?;
    let dim = tiling.field_len();
    if data.is_empty() || data.len() % dim != 0 {
        return Err(ManifoldError::Argument("data length is not a multiple of the field size".into()));
    }
    let plen = tiling.patch_len();
    if latent_dim == 0 || latent_dim > plen {
        return Err(ManifoldError::Argument(format!("latent_dim must be in 1..={plen}")));
    }
    let mut patches = Vec::with_capacity(data.len());
    let mut buf = vec![0.0; plen];
    for field in data.chunks_exact(dim) {
        for p in 0..tiling.n_tiles() {
            tiling.extract(field, p, &mut buf);
            patches.extend_from_slice(&buf);
        }
    }
    let (mean, basis, zero_variance) = principal_basis(&patches, plen, latent_dim)?;
    let mut model = AutoencoderModel {
        kind: AutoencoderKind::Pca {
            mean,
            basis,
            tiling: Some(tiling),
        },
        latent_dim,
        ambient_dim: dim,
        train_loss: 0.0,
        zero_variance,
    };
    model.train_loss = mean_sq_residual(&model, data, dim);
    Ok(model)
}

/// Smallest latent dimension from `candidates` whose patch PCA passes the gate; the largest
/// candidate is returned (ungated) if none does.
pub fn search_patch_pca(
    data: &[f64],
    tiling: Tiling,
    candidates: &[usize],
) -> Result<AutoencoderModel, ManifoldError> {
    let mut last = None;
    for &k in candidates {
        if k > tiling.patch_len() {
            continue;
        }
        let m = fit_patch_pca(data, tiling, k)?;
        if m.train_loss < GATE_THRESHOLD {
            return Ok(m);
        }
        last = Some(m);
    }
    last.ok_or_else(|| ManifoldError::Argument("no usable latent dimension".into()))
}

/// Same search for a global PCA.
pub fn search_pca(data: &[f64], dim: usize, candidates: &[usize]) -> Result<AutoencoderModel, ManifoldError> {
    let n = data.len() / dim.max(1);
    let mut last = None;
    for &k in candidates {
        if k > dim.min(n) {
            continue;
        }
        let m = fit_pca(data, dim, k)?;
        if m.train_loss < GATE_THRESHOLD {
            return Ok(m);
        }
        last = Some(m);
    }
    last.ok_or_else(|| ManifoldError::Argument("no usable latent dimension".into()))
}

#[derive(Debug, Clone)]
pub struct AeTrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            activation: Activation::Tanh,
            epochs: 2000,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// MLP encoder/decoder trained full-batch with Adam on the mean of `F²`.
pub fn fit_mlp_autoencoder(
    data: &[f64],
    dim: usize,
    latent_dim: usize,
    cfg: &AeTrainConfig,
) -> Result<AutoencoderModel, ManifoldError> {
    if dim == 0 || data.is_empty() || data.len() % dim != 0 {
        return Err(ManifoldError::Argument("data must be a non-empty n x dim array".into()));
    }
    if latent_dim == 0 || latent_dim >= dim {
        return Err(ManifoldError::Argument("latent_dim must be below the ambient dimension".into()));
    }
    let n = data.len() / dim;
    let mut enc_dims = vec![dim];
    enc_dims.extend(&cfg.hidden);
    enc_dims.push(latent_dim);
    let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
    let mut encoder = Mlp::new(&enc_dims, cfg.activation, cfg.seed)?;
    let mut decoder = Mlp::new(&dec_dims, cfg.activation, cfg.seed.wrapping_add(1))?;
    let ne = encoder.n_params();
    let mut adam = AdamState::new(ne + decoder.n_params(), cfg.lr);
    let mut params: Vec<f64> = encoder.params().iter().chain(decoder.params()).copied().collect();
    for _ in 0..cfg.epochs {
        let tape_e = encoder.forward_tape(data, n);
        let tape_d = decoder.forward_tape(tape_e.output(), n);
        let up: Vec<f64> = tape_d
            .output()
            .iter()
            .zip(data)
            .map(|(rec, u)| -2.0 * (u - rec) / n as f64)
            .collect();
        let mut grads = vec![0.0; params.len()];
        let (ge, gd) = grads.split_at_mut(ne);
        let gz = decoder.backward(&tape_d, &up, gd);
        encoder.backward(&tape_e, &gz, ge);
        adam.step(&mut params, &grads);
        encoder.set_params(&params[..ne])?;
        decoder.set_params(&params[ne..])?;
    }
    let mut model = AutoencoderModel {
        kind: AutoencoderKind::Mlp { encoder, decoder },
        latent_dim,
        ambient_dim: dim,
        train_loss: 0.0,
        zero_variance: false,
    };
    model.train_loss = mean_sq_residual(&model, data, dim);
    Ok(model)
}

/// Frozen autoencoder exposing `F` and `∇F`. Holds no mutable access to the model.
#[derive(Debug, Clone)]
pub struct DsIndicator {
    model: AutoencoderModel,
}

impl DsIndicator {
    /// Applies the quality gate unless `force` is set.
    pub fn new(model: AutoencoderModel, force: bool) -> Result<Self, ManifoldError> {
        if !(model.train_loss < GATE_THRESHOLD) && !force {
            return Err(ManifoldError::Gate {
                loss: model.train_loss,
            });
        }
        Ok(Self { model })
    }

    pub fn model(&self) -> &AutoencoderModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.model.ambient_dim
    }
}

pub fn ds_value(ind: &DsIndicator, u: &[f64]) -> f64 {
    ind.model.residual(u).iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `∇F(u)`; the zero vector where `F(u) = 0`.
pub fn ds_gradient(ind: &DsIndicator, u: &[f64]) -> Vec<f64> {
    ds_value_and_gradient(ind, u).1
}

pub fn ds_value_and_gradient(ind: &DsIndicator, u: &[f64]) -> (f64, Vec<f64>) {
    let r = ind.model.residual(u);
    let f = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if f == 0.0 {
        return (0.0, vec![0.0; u.len()]);
    }
    match &ind.model.kind {
        AutoencoderKind::Pca { .. } => (f, r.iter().map(|v| v / f).collect()),
        AutoencoderKind::Mlp { encoder, decoder } => {
            // ∇F = (I − J_{D∘E})ᵀ r / F
            let te = encoder.forward_tape(u, 1);
            let td = decoder.forward_tape(te.output(), 1);
            let mut scratch_d = vec![0.0; decoder.n_params()];
            let gz = decoder.backward(&td, &r, &mut scratch_d);
            let mut scratch_e = vec![0.0; encoder.n_params()];
            let jt = encoder.backward(&te, &gz, &mut scratch_e);
            (f, r.iter().zip(jt).map(|(a, b)| (a - b) / f).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_model() -> DsIndicator {
        // samples on span(e1) symmetric about the origin → mean 0, basis e1
        let data = [1.0, 0.0, -1.0, 0.0, 2.0, 0.0, -2.0, 0.0];
        DsIndicator::new(fit_pca(&data, 2, 1).unwrap(), false).unwrap()
    }

    #[test]
    fn pca_exact_line() {
        let data = [1.0, 2.0, -0.5, -1.0, 3.0, 6.0];
        let m = fit_pca(&data, 2, 1).unwrap();
        assert!(m.train_loss < 1e-28);
    }

    #[test]
    fn full_rank_pca_is_zero_indicator() {
        let data = [1.0, 2.0, 0.3, -1.0, 0.5, 2.0, 4.0, -3.0, 1.0];
        let ind = DsIndicator::new(fit_pca(&data, 3, 3).unwrap(), false).unwrap();
        assert!(ds_value(&ind, &[7.0, -2.0, 0.1]) < 1e-12);
    }

    #[test]
    fn indicator_examples() {
        let ind = line_model();
        assert!((ds_value(&ind, &[3.0, 4.0]) - 4.0).abs() < 1e-14);
        let g = ds_gradient(&ind, &[3.0, 4.0]);
        assert!(g[0].abs() < 1e-14 && (g[1] - 1.0).abs() < 1e-14);
        assert!((ds_value(&ind, &[3.0, 8.0]) - 8.0).abs() < 1e-14);
        assert_eq!(ds_gradient(&ind, &[5.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn degenerate_data_flagged() {
        let data = [1.0, 1.0, 1.0, 1.0];
        let m = fit_pca(&data, 2, 1).unwrap();
        assert!(m.zero_variance);
    }

    #[test]
    fn tiling_roundtrip() {
        let t = Tiling { nx: 4, ny: 4, channels: 2, tile: 2 };
        let mut seen = vec![false; t.field_len()];
        for p in 0..t.n_tiles() {
            for e in 0..t.patch_len() {
                let i = t.index(p, e);
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn patch_pca_reconstructs_translation_invariant_data() {
        let t = Tiling { nx: 4, ny: 4, channels: 1, tile: 2 };
        // constant fields: every patch is a multiple of (1,1,1,1)
        let data: Vec<f64> = [1.0, -2.0, 0.5].iter().flat_map(|&c| vec![c; 16]).collect();
        let m = fit_patch_pca(&data, t, 1).unwrap();
        assert!(m.train_loss < 1e-26);
    }

    #[test]
    fn gate_blocks_untrained_autoencoder() {
        let data: Vec<f64> = (0..40).map(|k| (k as f64 * 0.7).sin() * 3.0).collect();
        let cfg = AeTrainConfig { epochs: 0, ..Default::default() };
        let m = fit_mlp_autoencoder(&data, 4, 2, &cfg).unwrap();
        assert!(m.train_loss > GATE_THRESHOLD);
        assert!(matches!(DsIndicator::new(m.clone(), false), Err(ManifoldError::Gate { .. })));
        assert!(DsIndicator::new(m, true).is_ok());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let data: Vec<f64> = (0..30).map(|k| (k as f64 * 0.37).cos()).collect();
        let pca = fit_pca(&data, 3, 2).unwrap();
        let back = AutoencoderModel::from_bytes(&pca.to_bytes()).unwrap();
        assert_eq!(back.parameters(), pca.parameters());
        let cfg = AeTrainConfig { epochs: 3, hidden: vec![4], ..Default::default() };
        let ae = fit_mlp_autoencoder(&data, 3, 2, &cfg).unwrap();
        let back = AutoencoderModel::from_bytes(&ae.to_bytes()).unwrap();
        assert_eq!(back, ae);
    }
}
