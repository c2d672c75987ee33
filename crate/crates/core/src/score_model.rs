//! Residual feed-forward score network `s^Θ: ℝᵈ → ℝᵈ`.
//!
//! Layout: an affine input projection `d → w`, `L` blocks `h ← h + σ(W h + b)`
//! (or `h ← σ(W h + b)` without the residual flag), then an affine output
//! projection `w → d`. With `L = 0` the model is a single affine map `d → d`.
//! All parameters live in one flat vector; each layer stores its weight matrix
//! row-major (`out × in`) followed by its bias.
//!
//! Evaluation is batched. Directional derivatives are propagated in forward
//! mode alongside the primal rows ("tangent rows"), so a batch of `B` points
//! with `k` directions is one stacked `(1 + k)·B`-row matrix per layer.
//! [`ScoreModel::param_gradient`] runs reverse mode through that stacked
//! computation, which gives exact parameter gradients of any loss that reads
//! both outputs and directional derivatives (in particular `∇_Θ ∇·s`).

use std::io::{self, Read, Write};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Softplus => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Softplus),
            _ => None,
        }
    }

    #[inline]
    fn value(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
        }
    }

    /// (σ(z), σ'(z), σ''(z))
    #[inline]
    fn derivatives(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let a = z.tanh();
                let d1 = 1.0 - a * a;
                (a, d1, -2.0 * a * d1)
            }
            Activation::Softplus => {
                let sig = 1.0 / (1.0 + (-z).exp());
                (self.value(z), sig, sig * (1.0 - sig))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub residual: bool,
}

impl Architecture {
    pub fn new(input_dim: usize, width: usize, hidden_layers: usize) -> Self {
        Self { input_dim, width, hidden_layers, activation: Activation::Tanh, residual: true }
    }

    /// Single affine map `d → d`.
    pub fn linear(input_dim: usize) -> Self {
        Self::new(input_dim, input_dim, 0)
    }

    /// `d·w + w + L(w² + w) + w·d + d`, or `d² + d` without hidden layers.
    pub fn param_count(&self) -> usize {
        let (d, w, l) = (self.input_dim, self.width, self.hidden_layers);
        if l == 0 {
            d * d + d
        } else {
            d * w + w + l * (w * w + w) + w * d + d
        }
    }

    fn layers(&self) -> Vec<Layer> {
        let (d, w) = (self.input_dim, self.width);
        let mut out = Vec::with_capacity(self.hidden_layers + 2);
        let mut offset = 0;
        let mut push = |kind, fan_in, fan_out| {
            out.push(Layer { kind, fan_in, fan_out, offset });
            offset += fan_in * fan_out + fan_out;
        };
        if self.hidden_layers == 0 {
            push(LayerKind::Affine, d, d);
        } else {
            push(LayerKind::Affine, d, w);
            for _ in 0..self.hidden_layers {
                push(LayerKind::Block, w, w);
            }
            push(LayerKind::Affine, w, d);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LayerKind {
    Affine,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    kind: LayerKind,
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl Layer {
    fn weight<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        let n = self.fan_in * self.fan_out;
        ArrayView2::from_shape((self.fan_out, self.fan_in), &params[self.offset..self.offset + n]).unwrap()
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.fan_in * self.fan_out;
        &params[start..start + self.fan_out]
    }
}

/// Intermediate values kept by [`ScoreModel::forward_with_tangents`] for the
/// reverse pass.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    directions: usize,
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Option<Array2<f64>>>,
    output: Array2<f64>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn directions(&self) -> usize {
        self.directions
    }

    /// `B × d` network outputs.
    pub fn primal(&self) -> ArrayView2<'_, f64> {
        self.output.slice(s![0..self.batch, ..])
    }

    /// `B × d` Jacobian-vector products for direction `j`.
    pub fn tangent(&self, j: usize) -> ArrayView2<'_, f64> {
        let b = self.batch;
        self.output.slice(s![(j + 1) * b..(j + 2) * b, ..])
    }
}

/// Adjoint of a scalar loss with respect to the outputs recorded on a tape.
#[derive(Debug, Clone)]
pub struct OutputAdjoint {
    pub primal: Array2<f64>,
    pub tangents: Vec<Array2<f64>>,
}

impl OutputAdjoint {
    pub fn zeros(batch: usize, dim: usize, directions: usize) -> Self {
        Self { primal: Array2::zeros((batch, dim)), tangents: vec![Array2::zeros((batch, dim)); directions] }
    }

    fn stacked(&self) -> Array2<f64> {
        let mut views = vec![self.primal.view()];
        views.extend(self.tangents.iter().map(|t| t.view()));
        ndarray::concatenate(Axis(0), &views).expect("adjoint blocks must share a shape")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    arch: Architecture,
    params: Vec<f64>,
    layers: Vec<Layer>,
}

impl ScoreModel {
    /// All parameters zero: `s ≡ 0`.
    pub fn zeros(arch: Architecture) -> Self {
        Self::from_params(arch, vec![0.0; arch.param_count()])
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Self {
        assert!(arch.input_dim >= 1 && (arch.hidden_layers == 0 || arch.width >= 1));
        assert_eq!(params.len(), arch.param_count(), "parameter vector length does not match architecture");
        Self { arch, params, layers: arch.layers() }
    }

    /// Glorot-normal weights, zero biases, zero output layer (so `s ≡ 0`).
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut model = Self::init(arch, rng, 0.0);
        let last = *model.layers.last().unwrap();
        let end = last.offset + last.fan_in * last.fan_out + last.fan_out;
        model.params[last.offset..end].iter_mut().for_each(|p| *p = 0.0);
        model
    }

    /// Glorot-normal weights everywhere including the output layer, and small
    /// random biases. Used for tests that need a non-trivial network.
    pub fn random<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        Self::init(arch, rng, 0.1)
    }

    fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R, bias_scale: f64) -> Self {
        let mut params = vec![0.0; arch.param_count()];
        for l in arch.layers() {
            let sd = (2.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            let nw = l.fan_in * l.fan_out;
            for p in &mut params[l.offset..l.offset + nw] {
                *p = sd * rng.sample::<f64, _>(StandardNormal);
            }
            for p in &mut params[l.offset + nw..l.offset + nw + l.fan_out] {
                *p = bias_scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Self::from_params(arch, params)
    }

    /// Affine model `s(x) = W x + b` with `W` given row-major.
    pub fn linear(weight: &[f64], bias: &[f64]) -> Self {
        let d = bias.len();
        assert_eq!(weight.len(), d * d);
        let mut params = weight.to_vec();
        params.extend_from_slice(bias);
        Self::from_params(Architecture::linear(d), params)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn layer_iter(&self) -> std::iter::Copied<std::slice::Iter<'_, Layer>> {
        self.layers.iter().copied()
    }

    /// `B × d` outputs for a `B × d` batch.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.dim(), "input dimension mismatch");
        let act = self.arch.activation;
        let mut h = x.to_owned();
        for layer in self.layer_iter() {
            let w = layer.weight(&self.params);
            let mut z = h.dot(&w.t());
            let bias = layer.bias(&self.params);
            for mut row in z.rows_mut() {
                row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
            }
            h = match layer.kind {
                LayerKind::Affine => z,
                LayerKind::Block => {
                    z.mapv_inplace(|v| act.value(v));
                    if self.arch.residual && layer.fan_in == layer.fan_out {
                        h + z
                    } else {
                        z
                    }
                }
            };
        }
        h
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "input dimension mismatch");
        let xb = ArrayView2::from_shape((1, x.len()), x).unwrap();
        self.forward_batch(xb).into_raw_vec_and_offset().0
    }

    /// Forward pass propagating `directions.len()` tangent directions
    /// (each `B × d`, one direction per point) and recording a tape.
    pub fn forward_with_tangents(&self, x: ArrayView2<'_, f64>, directions: &[Array2<f64>]) -> Tape {
        let b = x.nrows();
        assert_eq!(x.ncols(), self.dim(), "input dimension mismatch");
        for dir in directions {
            assert_eq!(dir.dim(), (b, self.dim()), "direction block has the wrong shape");
        }
        let act = self.arch.activation;
        let mut views = vec![x];
        views.extend(directions.iter().map(|d| d.view()));
        let mut u = ndarray::concatenate(Axis(0), &views).unwrap();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in self.layer_iter() {
            let w = layer.weight(&self.params);
            let mut z = u.dot(&w.t());
            let bias = layer.bias(&self.params);
            for mut row in z.slice_mut(s![0..b, ..]).rows_mut() {
                row.iter_mut().zip(bias).for_each(|(v, bb)| *v += bb);
            }
            let out = match layer.kind {
                LayerKind::Affine => {
                    pre.push(None);
                    z
                }
                LayerKind::Block => {
                    let mut y = Array2::zeros(z.raw_dim());
                    let (z0, zt) = z.view().split_at(Axis(0), b);
                    let (mut y0, mut yt) = y.view_mut().split_at(Axis(0), b);
                    let mut slope = Array2::zeros(z0.raw_dim());
                    Zip::from(&mut y0).and(&mut slope).and(&z0).for_each(|y, s, &zz| {
                        let (a, d1, _) = act.derivatives(zz);
                        *y = a;
                        *s = d1;
                    });
                    for j in 0..directions.len() {
                        let zj = zt.slice(s![j * b..(j + 1) * b, ..]);
                        let mut yj = yt.slice_mut(s![j * b..(j + 1) * b, ..]);
                        Zip::from(&mut yj).and(&zj).and(&slope).for_each(|y, &zz, &sl| *y = sl * zz);
                    }
                    pre.push(Some(z));
                    if self.arch.residual && layer.fan_in == layer.fan_out {
                        y += &u;
                    }
                    y
                }
            };
            inputs.push(std::mem::replace(&mut u, out));
        }
        Tape { batch: b, directions: directions.len(), inputs, pre_activations: pre, output: u }
    }

    /// Reverse-mode gradient `∂L/∂Θ` given the adjoint of `L` with respect to
    /// the outputs and tangent outputs stored on `tape`.
    pub fn param_gradient(&self, tape: &Tape, adjoint: &OutputAdjoint) -> Vec<f64> {
        assert_eq!(adjoint.tangents.len(), tape.directions, "one tangent adjoint per direction");
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_gradient(tape, adjoint.stacked(), &mut grad);
        grad
    }

    fn accumulate_gradient(&self, tape: &Tape, mut g: Array2<f64>, grad: &mut [f64]) {
        assert_eq!(g.dim(), tape.output.dim(), "adjoint shape does not match the tape");
        let b = tape.batch;
        let k = tape.directions;
        let act = self.arch.activation;
        for (idx, layer) in self.layer_iter().enumerate().rev() {
            let u = &tape.inputs[idx];
            let gz = match (&tape.pre_activations[idx], layer.kind) {
                (Some(z), LayerKind::Block) => {
                    let mut gz = Array2::zeros(z.raw_dim());
                    let z0 = z.slice(s![0..b, ..]);
                    let mut d1 = Array2::zeros(z0.raw_dim());
                    let mut d2 = Array2::zeros(z0.raw_dim());
                    Zip::from(&mut d1).and(&mut d2).and(&z0).for_each(|p, q, &zz| {
                        let (_, a1, a2) = act.derivatives(zz);
                        *p = a1;
                        *q = a2;
                    });
                    // primal rows: σ'·g₀ + σ''·Σ_j ż_j·g_j
                    let mut g0 = &d1 * &g.slice(s![0..b, ..]);
                    for j in 0..k {
                        let rows = s![(j + 1) * b..(j + 2) * b, ..];
                        let zj = z.slice(rows);
                        let gj = g.slice(rows);
                        Zip::from(&mut g0).and(&d2).and(&zj).and(&gj).for_each(|o, &c, &zz, &gg| *o += c * zz * gg);
                        Zip::from(gz.slice_mut(rows)).and(&d1).and(&gj).for_each(|o, &c, &gg| *o = c * gg);
                    }
                    gz.slice_mut(s![0..b, ..]).assign(&g0);
                    gz
                }
                _ => g.clone(),
            };
            let nw = layer.fan_in * layer.fan_out;
            {
                let (wgrad, bgrad) = grad[layer.offset..layer.offset + nw + layer.fan_out].split_at_mut(nw);
                let mut wg = ArrayViewMut2::from_shape((layer.fan_out, layer.fan_in), wgrad).unwrap();
                general_mat_mul(1.0, &gz.t(), u, 1.0, &mut wg);
                let colsum = gz.slice(s![0..b, ..]).sum_axis(Axis(0));
                bgrad.iter_mut().zip(colsum.iter()).for_each(|(o, c)| *o += c);
            }
            if idx == 0 {
                break;
            }
            let w = layer.weight(&self.params);
            let mut next = gz.dot(&w);
            if layer.kind == LayerKind::Block && self.arch.residual && layer.fan_in == layer.fan_out {
                next += &g;
            }
            g = next;
        }
    }

    /// `∇·s(x)` by `d` forward-mode passes along the coordinate axes.
    pub fn divergence_exact(&self, x: &[f64]) -> f64 {
        let xb = ArrayView2::from_shape((1, x.len()), x).unwrap();
        self.divergence_exact_batch(xb)[0]
    }

    pub fn divergence_exact_batch(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let d = self.dim();
        let dirs = coordinate_directions(x.nrows(), d);
        let tape = self.forward_with_tangents(x, &dirs);
        let mut div = Array1::zeros(x.nrows());
        for (k, _) in dirs.iter().enumerate() {
            div += &tape.tangent(k).column(k);
        }
        div
    }

    /// Hutchinson estimate `(1/m) Σ εᵀ J ε` with Rademacher probes.
    pub fn divergence_hutchinson<R: Rng + ?Sized>(&self, x: &[f64], probes: usize, rng: &mut R) -> f64 {
        assert!(probes >= 1, "need at least one probe");
        let d = self.dim();
        let xb = ArrayView2::from_shape((1, d), x).unwrap();
        let dirs: Vec<Array2<f64>> = (0..probes).map(|_| rademacher(1, d, rng)).collect();
        let tape = self.forward_with_tangents(xb, &dirs);
        let total: f64 = dirs.iter().enumerate().map(|(j, e)| (e * &tape.tangent(j)).sum()).sum();
        total / probes as f64
    }

    /// `d × N` Jacobian of the outputs at `x` with respect to the parameters,
    /// one reverse pass per output coordinate.
    pub fn param_jacobian(&self, x: &[f64]) -> Array2<f64> {
        let d = self.dim();
        let xb = ArrayView2::from_shape((1, d), x).unwrap();
        let tape = self.forward_with_tangents(xb, &[]);
        let mut jac = Array2::zeros((d, self.param_count()));
        for alpha in 0..d {
            let mut g = Array2::zeros((1, d));
            g[[0, alpha]] = 1.0;
            let mut row = vec![0.0; self.param_count()];
            self.accumulate_gradient(&tape, g, &mut row);
            jac.row_mut(alpha).assign(&Array1::from(row));
        }
        jac
    }
}

/// `d` blocks, block `k` holding `e_k` in every row.
pub fn coordinate_directions(batch: usize, dim: usize) -> Vec<Array2<f64>> {
    (0..dim)
        .map(|k| {
            let mut e = Array2::zeros((batch, dim));
            e.column_mut(k).fill(1.0);
            e
        })
        .collect()
}

/// `batch × dim` matrix of iid ±1 entries.
pub fn rademacher<R: Rng + ?Sized>(batch: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((batch, dim), |_| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

/// AdamW moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }

    pub fn with_hyperparameters(mut self, beta1: f64, beta2: f64, epsilon: f64, weight_decay: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.epsilon = epsilon;
        self.weight_decay = weight_decay;
        self
    }
}

/// Bias-corrected Adam step with decoupled weight decay:
/// `θ ← θ − lr·(m̂/(√v̂ + ε) + λθ)`.
pub fn adamw_step(model: &mut ScoreModel, state: &mut OptimizerState, grad: &[f64]) {
    assert_eq!(grad.len(), model.param_count(), "gradient length mismatch");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps, wd) = (state.beta1, state.beta2, state.learning_rate, state.epsilon, state.weight_decay);
    for (((p, m), v), &g) in model
        .params
        .iter_mut()
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
        .zip(grad)
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= lr * (mhat / (vhat.sqrt() + eps) + wd * *p);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// `b"SBTMNET\0"`, then `u32` version, then `u32` header length.
pub const CHECKPOINT_MAGIC: [u8; 8] = *b"SBTMNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_HEADER_LEN: u32 = 40;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a score-model checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint header: {0}")]
    Corrupt(String),
}

/// Little-endian layout:
///
/// ```text
/// 0   8  magic "SBTMNET\0"
/// 8   4  u32 version (1)
/// 12  4  u32 header length (40)
/// 16  8  u64 input dim
/// 24  8  u64 width
/// 32  8  u64 hidden layers
/// 40  1  u8 activation (0 tanh, 1 softplus)
/// 41  1  u8 residual flag
/// 42  6  zero padding
/// 48  8  u64 parameter count N
/// 56 8N  f64 parameters
/// ```
pub fn write_checkpoint<W: Write>(model: &ScoreModel, mut w: W) -> Result<(), CheckpointError> {
    let a = model.architecture();
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&CHECKPOINT_HEADER_LEN.to_le_bytes())?;
    w.write_all(&(a.input_dim as u64).to_le_bytes())?;
    w.write_all(&(a.width as u64).to_le_bytes())?;
    w.write_all(&(a.hidden_layers as u64).to_le_bytes())?;
    w.write_all(&[a.activation.tag(), a.residual as u8, 0, 0, 0, 0, 0, 0])?;
    w.write_all(&(model.param_count() as u64).to_le_bytes())?;
    for p in model.params() {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ScoreModel, CheckpointError> {
    let mut prefix = [0u8; 16];
    r.read_exact(&mut prefix)?;
    if prefix[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(prefix[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let header_len = u32::from_le_bytes(prefix[12..16].try_into().unwrap());
    if header_len != CHECKPOINT_HEADER_LEN {
        return Err(CheckpointError::Corrupt(format!("header length {header_len}")));
    }
    let mut header = [0u8; CHECKPOINT_HEADER_LEN as usize];
    r.read_exact(&mut header)?;
    let u64_at = |i: usize| u64::from_le_bytes(header[i..i + 8].try_into().unwrap()) as usize;
    let activation = Activation::from_tag(header[24])
        .ok_or_else(|| CheckpointError::Corrupt(format!("activation tag {}", header[24])))?;
    let arch = Architecture {
        input_dim: u64_at(0),
        width: u64_at(8),
        hidden_layers: u64_at(16),
        activation,
        residual: header[25] != 0,
    };
    let count = u64_at(32);
    if arch.input_dim == 0 || count != arch.param_count() {
        return Err(CheckpointError::Corrupt(format!(
            "parameter count {count} does not match architecture ({})",
            arch.param_count()
        )));
    }
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    let params = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(ScoreModel::from_params(arch, params))
}
