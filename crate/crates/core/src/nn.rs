//! Fully-connected networks with batched reverse-mode gradients, Adam and a plateau scheduler.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::stream_rng;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("bad checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Identity => {}
        }
    }

    /// Multiplies `g` by the derivative, expressed through the activation output `a`.
    fn backprop(self, a: &[f64], g: &mut [f64]) {
        match self {
            Activation::Tanh => g.iter_mut().zip(a).for_each(|(g, a)| *g *= 1.0 - a * a),
            Activation::Relu => g.iter_mut().zip(a).for_each(|(g, a)| {
                if *a <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Identity => {}
        }
    }
}

/// Row-major `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of shape `m x k`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths cover the strided extents asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dense network; hidden layers use `activation`, the last layer is affine.
///
/// Parameters are stored flat, layer by layer: weights (`out x in`, row-major) then biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Activations recorded by a batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape has input layer")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl Mlp {
    /// Uniform `±1/√fan_in` initialization.
    pub fn new(dims: &[usize], activation: Activation, seed: u64) -> Result<Self, NnError> {
        let mut net = Self::zeros(dims, activation)?;
        let mut rng = stream_rng(seed, 17);
        let mut off = 0;
        for l in 0..net.n_layers() {
            let (i, o) = (dims[l], dims[l + 1]);
            let bound = 1.0 / (i as f64).sqrt();
            for p in &mut net.params[off..off + o * i + o] {
                *p = rng.random_range(-bound..bound);
            }
            off += o * i + o;
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(NnError::Argument(format!("invalid layer dims {dims:?}")));
        }
        let count = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            params: vec![0.0; count],
        })
    }

    /// Single affine layer `y = W x + b` with the given weights and zero bias.
    pub fn linear(weights: &[f64], inputs: usize, outputs: usize) -> Result<Self, NnError> {
        if weights.len() != inputs * outputs {
            return Err(NnError::Argument("weight count mismatch".into()));
        }
        let mut net = Self::zeros(&[inputs, outputs], Activation::Identity)?;
        net.params[..weights.len()].copy_from_slice(weights);
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), NnError> {
        if p.len() != self.params.len() {
            return Err(NnError::Argument("parameter count mismatch".into()));
        }
        self.params.copy_from_slice(p);
        Ok(())
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let off: usize = self.dims[..l + 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        (off, off + self.dims[l] * self.dims[l + 1])
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::Argument(format!(
                "input length {} != {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.forward_batch(x, 1))
    }

    /// Rows of `x` are samples.
    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut tape = self.forward_tape(x, batch);
        tape.acts.pop().unwrap()
    }

    pub fn forward_tape(&self, x: &[f64], batch: usize) -> Tape {
        assert_eq!(x.len(), batch * self.input_dim(), "batch input shape");
        let mut acts = Vec::with_capacity(self.dims.len());
        acts.push(x.to_vec());
        for l in 0..self.n_layers() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let mut z = Vec::with_capacity(batch * o);
            for _ in 0..batch {
                z.extend_from_slice(&self.params[b..b + o]);
            }
            gemm(batch, i, o, 1.0, &acts[l], false, &self.params[w..b], true, 1.0, &mut z);
            if l + 1 < self.n_layers() {
                self.activation.apply(&mut z);
            }
            acts.push(z);
        }
        Tape { batch, acts }
    }

    /// Accumulates `∂(Σ upstream·out)/∂θ` into `grads` and returns the input gradient
    /// (`batch x input_dim`).
    pub fn backward(&self, tape: &Tape, upstream: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let batch = tape.batch;
        assert_eq!(upstream.len(), batch * self.output_dim(), "upstream shape");
        assert_eq!(grads.len(), self.params.len(), "gradient buffer shape");
        let mut g = upstream.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            if l + 1 < self.n_layers() {
                self.activation.backprop(&tape.acts[l + 1], &mut g);
            }
            let (w, b) = self.layer_offsets(l);
            gemm(o, batch, i, 1.0, &g, true, &tape.acts[l], false, 1.0, &mut grads[w..b]);
            let gb = &mut grads[b..b + o];
            for row in g.chunks_exact(o) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            let mut prev = vec![0.0; batch * i];
            gemm(batch, o, i, 1.0, &g, false, &self.params[w..b], false, 0.0, &mut prev);
            g = prev;
        }
        g
    }

    /// Single-sample convenience wrapper: `(param_grads, input_grad)`.
    pub fn backward_single(&self, x: &[f64], upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let tape = self.forward_tape(x, 1);
        let mut grads = vec![0.0; self.n_params()];
        let gi = self.backward(&tape, upstream, &mut grads);
        (grads, gi)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * (self.dims.len() + self.params.len()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(0);
        out.push(self.activation.tag());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(CHECKPOINT_MAGIC)?;
        if r.u8()? != 0 {
            return Err(NnError::Format("not a network checkpoint".into()));
        }
        let act = Activation::from_tag(r.u8()?)
            .ok_or_else(|| NnError::Format("unknown activation".into()))?;
        let n = r.u32()? as usize;
        if n > 64 {
            return Err(NnError::Format("implausible layer count".into()));
        }
        let dims: Vec<usize> = (0..n).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_, _>>()?;
        let mut net = Self::zeros(&dims, act).map_err(|e| NnError::Format(e.to_string()))?;
        for p in net.params.iter_mut() {
            *p = r.f64()?;
            if !p.is_finite() {
                return Err(NnError::Format("non-finite parameter".into()));
            }
        }
        r.finish()?;
        Ok(net)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"MLHSNN1";

/// Little-endian cursor shared by the binary formats.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.buf.len() {
            return Err(NnError::Format("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> Result<(), NnError> {
        if self.take(magic.len())? != magic {
            return Err(NnError::Format("bad magic".into()));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>, NnError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| NnError::Format("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(&self) -> Result<(), NnError> {
        if self.pos != self.buf.len() {
            return Err(NnError::Format("trailing bytes".into()));
        }
        Ok(())
    }
}

/// Adds `2λθ` to `grads`.
pub fn weight_decay_grads(params: &[f64], lambda: f64, grads: &mut [f64]) {
    if lambda == 0.0 {
        return;
    }
    for (g, p) in grads.iter_mut().zip(params) {
        *g += 2.0 * lambda * p;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count");
        assert_eq!(grads.len(), self.m.len(), "gradient count");
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0, 1e-4)
    }
}

/// Halves the learning rate after `patience` evaluations without relative improvement of 1e-4.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    best: f64,
    bad: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64) -> Self {
        Self {
            patience,
            factor,
            min_lr: 1e-8,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    /// Returns the learning rate to use after observing `metric`.
    pub fn observe(&mut self, metric: f64, lr: f64) -> f64 {
        if metric < self.best * (1.0 - 1e-4) {
            self.best = metric;
            self.bad = 0;
            return lr;
        }
        self.bad += 1;
        if self.bad > self.patience {
            self.bad = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}
