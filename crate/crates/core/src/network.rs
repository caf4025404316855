//! The two networks: `h` (plain embedding + linear head) and `h*` (the same
//! with a parameter-free LayerNorm on every word representation), their
//! cross-entropy objective and hand-written gradients.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_model::OneHot;
use crate::error::{Error, Result};
use crate::linalg::{gemm, Op};

/// LayerNorm epsilon used while training.
pub const TRAIN_EPSILON: f64 = 1e-8;

const DEGENERATE_SIGMA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum NetworkKind {
    Plain,
    #[serde(rename = "layernorm")]
    LayerNorm { epsilon: f64 },
}

impl NetworkKind {
    pub fn layer_norm(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {epsilon}")));
        }
        Ok(Self::LayerNorm { epsilon })
    }

    pub fn is_layer_norm(&self) -> bool {
        matches!(self, Self::LayerNorm { .. })
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            Self::Plain => 0.0,
            Self::LayerNorm { epsilon } => *epsilon,
        }
    }

    /// Regularization weights `(lambda_W, lambda_U)` of the kind's risk: the
    /// LayerNorm network leaves `W` unpenalized.
    pub fn penalties(&self, lambda: f64) -> (f64, f64) {
        match self {
            Self::Plain => (lambda, lambda),
            Self::LayerNorm { .. } => (0.0, lambda),
        }
    }
}

/// `W` is `d x n_w`; `U` is `K x Ld` and row `k` splits into `L` consecutive
/// blocks `u_{k,1} ... u_{k,L}` of length `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    w: DMatrix<f64>,
    u: DMatrix<f64>,
    seq_len: usize,
}

impl Weights {
    pub fn new(w: DMatrix<f64>, u: DMatrix<f64>, seq_len: usize) -> Result<Self> {
        if seq_len == 0 || u.ncols() != seq_len * w.nrows() {
            return Err(Error::Shape(format!(
                "U is {}x{}, expected K x (L*d) with L = {seq_len}, d = {}",
                u.nrows(),
                u.ncols(),
                w.nrows()
            )));
        }
        Ok(Self { w, u, seq_len })
    }

    pub fn zeros(d: usize, n_w: usize, n_classes: usize, seq_len: usize) -> Self {
        Self {
            w: DMatrix::zeros(d, n_w),
            u: DMatrix::zeros(n_classes, seq_len * d),
            seq_len,
        }
    }

    /// I.i.d. Gaussian entries: standard deviation `1/sqrt(d)` for `W` (unit-ish
    /// columns) and `1/sqrt(L d)` for `U` (fan-in scaling).
    pub fn random<R: Rng + ?Sized>(
        d: usize,
        n_w: usize,
        n_classes: usize,
        seq_len: usize,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive std");
        let w = DMatrix::from_fn(d, n_w, |_, _| normal.sample(rng));
        let head = Normal::new(0.0, 1.0 / ((seq_len.max(1) * d) as f64).sqrt()).expect("positive std");
        let u = DMatrix::from_fn(n_classes, seq_len * d, |_, _| head.sample(rng));
        Self { w, u, seq_len }
    }

    /// Inverse of [`Weights::u_hat`].
    pub fn from_u_hat(w: DMatrix<f64>, u_hat: &DMatrix<f64>, n_classes: usize) -> Result<Self> {
        let d = w.nrows();
        if u_hat.nrows() != d || n_classes == 0 || u_hat.ncols() % n_classes != 0 {
            return Err(Error::Shape("U-hat must be d x KL".into()));
        }
        let seq_len = u_hat.ncols() / n_classes;
        let u = DMatrix::from_fn(n_classes, seq_len * d, |k, col| {
            u_hat[(col % d, k * seq_len + col / d)]
        });
        Self::new(w, u, seq_len)
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }
    pub fn w_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.w
    }
    pub fn u_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.u
    }
    pub fn d(&self) -> usize {
        self.w.nrows()
    }
    pub fn n_w(&self) -> usize {
        self.w.ncols()
    }
    pub fn n_classes(&self) -> usize {
        self.u.nrows()
    }
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// `u_{k,l}`, 0-based.
    pub fn u_block(&self, k: usize, l: usize) -> DVector<f64> {
        let d = self.d();
        DVector::from_fn(d, |i, _| self.u[(k, l * d + i)])
    }

    /// `U-hat_k`: `d x L`.
    pub fn u_hat_k(&self, k: usize) -> DMatrix<f64> {
        let d = self.d();
        DMatrix::from_fn(d, self.seq_len, |i, l| self.u[(k, l * d + i)])
    }

    /// `U-hat = [U-hat_1 ... U-hat_K]`: `d x KL`.
    pub fn u_hat(&self) -> DMatrix<f64> {
        let (d, len) = (self.d(), self.seq_len);
        DMatrix::from_fn(d, self.n_classes() * len, |i, col| {
            self.u[(col / len, (col % len) * d + i)]
        })
    }

    pub fn squared_norms(&self) -> (f64, f64) {
        (self.w.norm_squared(), self.u.norm_squared())
    }

    pub fn max_abs(&self) -> f64 {
        self.w.amax().max(self.u.amax())
    }

    /// Header `d, n_w, K, L, kind, epsilon` then `W` and `U` row-major, all
    /// little-endian 64-bit.
    pub fn to_bytes(&self, kind: NetworkKind) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 8 * (self.w.len() + self.u.len()));
        for v in [self.d(), self.n_w(), self.n_classes(), self.seq_len] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.extend_from_slice(&(kind.is_layer_norm() as u64).to_le_bytes());
        out.extend_from_slice(&kind.epsilon().to_le_bytes());
        for m in [&self.w, &self.u] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.extend_from_slice(&m[(i, j)].to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, NetworkKind)> {
        let bad = |msg: &str| Error::InvalidConfig(format!("weights file: {msg}"));
        let word = |i: usize| -> Result<[u8; 8]> {
            bytes
                .get(8 * i..8 * i + 8)
                .map(|s| s.try_into().expect("8 bytes"))
                .ok_or_else(|| bad("truncated header"))
        };
        let mut header = [0usize; 4];
        for (i, h) in header.iter_mut().enumerate() {
            *h = usize::try_from(u64::from_le_bytes(word(i)?)).map_err(|_| bad("dimension overflow"))?;
        }
        let [d, n_w, n_classes, seq_len] = header;
        let kind = match u64::from_le_bytes(word(4)?) {
            0 => NetworkKind::Plain,
            1 => NetworkKind::layer_norm(f64::from_le_bytes(word(5)?))?,
            other => return Err(bad(&format!("unknown network kind {other}"))),
        };
        let n_w_entries = d.checked_mul(n_w).ok_or_else(|| bad("dimension overflow"))?;
        let n_u_entries = n_classes
            .checked_mul(seq_len)
            .and_then(|v| v.checked_mul(d))
            .ok_or_else(|| bad("dimension overflow"))?;
        let expected = n_w_entries
            .checked_add(n_u_entries)
            .and_then(|v| v.checked_add(6))
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| bad("dimension overflow"))?;
        if bytes.len() != expected || seq_len == 0 {
            return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let mut vals = bytes[48..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let w = DMatrix::from_row_iterator(d, n_w, vals.by_ref().take(n_w_entries));
        let u = DMatrix::from_row_iterator(n_classes, seq_len * d, vals.take(n_u_entries));
        Ok((Self::new(w, u, seq_len)?, kind))
    }
}

pub fn layer_norm(v: &[f64], epsilon: f64) -> Result<DVector<f64>> {
    let (phi, _) = layer_norm_with_scale(v, epsilon)?;
    Ok(phi)
}

/// Returns `phi(v)` together with `sqrt(var(v) + epsilon)`.
fn layer_norm_with_scale(v: &[f64], epsilon: f64) -> Result<(DVector<f64>, f64)> {
    let d = v.len() as f64;
    let mean = v.iter().sum::<f64>() / d;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
    let sigma = (var + epsilon).sqrt();
    if sigma < DEGENERATE_SIGMA || !sigma.is_finite() {
        return Err(Error::DegenerateInput);
    }
    Ok((DVector::from_iterator(v.len(), v.iter().map(|x| (x - mean) / sigma)), sigma))
}

/// `J = (I - 11^T/d - phi phi^T/d) / sigma`.
pub fn layer_norm_jacobian(v: &[f64], epsilon: f64) -> Result<DMatrix<f64>> {
    let (phi, sigma) = layer_norm_with_scale(v, epsilon)?;
    let d = v.len();
    let df = d as f64;
    Ok(DMatrix::from_fn(d, d, |i, j| {
        ((i == j) as u8 as f64 - 1.0 / df - phi[i] * phi[j] / df) / sigma
    }))
}

/// `J^T g` without forming `J` (it is symmetric).
fn layer_norm_pullback(phi: &[f64], sigma: f64, g: &[f64], out: &mut [f64]) {
    let d = phi.len() as f64;
    let g_mean = g.iter().sum::<f64>() / d;
    let proj = phi.iter().zip(g).map(|(p, x)| p * x).sum::<f64>() / d;
    for ((o, &gi), &pi) in out.iter_mut().zip(g).zip(phi) {
        *o = (gi - g_mean - pi * proj) / sigma;
    }
}

/// Word representations fed to the head: `W` itself, or `phi` of every column.
/// For the LayerNorm kind also returns the per-column scales.
fn representations(kind: NetworkKind, w: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    match kind {
        NetworkKind::Plain => Ok((w.clone(), Vec::new())),
        NetworkKind::LayerNorm { epsilon } => {
            let mut v = DMatrix::zeros(w.nrows(), w.ncols());
            let mut scales = Vec::with_capacity(w.ncols());
            for j in 0..w.ncols() {
                let (phi, sigma) = layer_norm_with_scale(w.column(j).as_slice(), epsilon)?;
                v.set_column(j, &phi);
                scales.push(sigma);
            }
            Ok((v, scales))
        }
    }
}

fn check_input(weights: &Weights, x: &OneHot) -> Result<()> {
    if x.indices.len() != weights.seq_len {
        return Err(Error::LengthMismatch {
            left: x.indices.len(),
            right: weights.seq_len,
        });
    }
    if x.n_w != weights.n_w() || x.indices.iter().any(|&i| i >= weights.n_w()) {
        return Err(Error::Shape("sentence encoding does not match n_w".into()));
    }
    Ok(())
}

/// `M = W zeta(x)` or its column-wise LayerNorm; `d x L`.
fn sentence_features(kind: NetworkKind, weights: &Weights, x: &OneHot) -> Result<DMatrix<f64>> {
    check_input(weights, x)?;
    let d = weights.d();
    let mut m = DMatrix::zeros(d, x.indices.len());
    for (l, &i) in x.indices.iter().enumerate() {
        let col = weights.w.column(i);
        match kind {
            NetworkKind::Plain => m.set_column(l, &col),
            NetworkKind::LayerNorm { epsilon } => m.set_column(l, &layer_norm(col.as_slice(), epsilon)?),
        }
    }
    Ok(m)
}

/// Scores `y_k = <U-hat_k, M>_F`.
pub fn forward(kind: NetworkKind, weights: &Weights, x: &OneHot) -> Result<DVector<f64>> {
    let m = sentence_features(kind, weights, x)?;
    let flat = DVector::from_column_slice(m.as_slice());
    Ok(&weights.u * flat)
}

/// `<U-hat_k - U-hat_j, M>_F` for a sentence `x` of class `k` (0-based).
pub fn margin(kind: NetworkKind, weights: &Weights, x: &OneHot, k: usize, j: usize) -> Result<f64> {
    let m = sentence_features(kind, weights, x)?;
    let diff = weights.u_hat_k(k) - weights.u_hat_k(j);
    Ok(diff.dot(&m))
}

fn log_sum_exp(y: &[f64]) -> f64 {
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + y.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `-log softmax(y)_k`, `k` 0-based.
pub fn cross_entropy(y: &[f64], k: usize) -> f64 {
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let others: f64 = y
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != k)
        .map(|(_, v)| (v - max).exp())
        .sum();
    // ln_1p keeps full relative precision for confidently correct scores
    if y[k] == max {
        others.ln_1p()
    } else {
        (max - y[k]) + ((y[k] - max).exp() + others).ln()
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn classify(y: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in y.iter().enumerate().skip(1) {
        if v > y[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub dw: DMatrix<f64>,
    pub du: DMatrix<f64>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        (self.dw.norm_squared() + self.du.norm_squared()).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteDifferenceReport {
    pub checked: usize,
    pub max_abs_error: f64,
    /// `|g_fd - g| / max(|g_fd|, |g|)` over the checked coordinates.
    pub rel_error: f64,
}

fn param_mut(w: &mut Weights, i: usize) -> &mut f64 {
    let n = w.w.len();
    if i < n {
        &mut w.w.as_mut_slice()[i]
    } else {
        &mut w.u.as_mut_slice()[i - n]
    }
}

/// Central differences of `objective` against `grad`. Coordinates index the
/// concatenation of `W` then `U` (column-major); `None` checks all of them.
pub fn finite_difference_check(
    weights: &Weights,
    grad: &Gradients,
    step: f64,
    coords: Option<&[usize]>,
    mut objective: impl FnMut(&Weights) -> Result<f64>,
) -> Result<FiniteDifferenceReport> {
    let n_w_params = weights.w.len();
    let total = n_w_params + weights.u.len();
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..total).collect();
            &all
        }
    };
    let mut probe = weights.clone();
    let (mut diff_sq, mut fd_sq, mut an_sq, mut max_abs) = (0.0, 0.0, 0.0, 0.0f64);
    for &i in coords {
        if i >= total {
            return Err(Error::Shape(format!("coordinate {i} out of {total}")));
        }
        let analytic = if i < n_w_params { grad.dw.as_slice()[i] } else { grad.du.as_slice()[i - n_w_params] };
        let base = *param_mut(&mut probe, i);
        *param_mut(&mut probe, i) = base + step;
        let plus = objective(&probe)?;
        *param_mut(&mut probe, i) = base - step;
        let minus = objective(&probe)?;
        *param_mut(&mut probe, i) = base;
        let fd = (plus - minus) / (2.0 * step);
        diff_sq += (fd - analytic) * (fd - analytic);
        fd_sq += fd * fd;
        an_sq += analytic * analytic;
        max_abs = max_abs.max((fd - analytic).abs());
    }
    let scale = fd_sq.sqrt().max(an_sq.sqrt());
    Ok(FiniteDifferenceReport {
        checked: coords.len(),
        max_abs_error: max_abs,
        rel_error: if scale > 0.0 { diff_sq.sqrt() / scale } else { diff_sq.sqrt() },
    })
}

/// Scores for many sentences at once, `K x B` (column `b` is sentence `b`).
pub fn forward_batch(kind: NetworkKind, weights: &Weights, xs: &[&OneHot]) -> Result<DMatrix<f64>> {
    let d = weights.d();
    for x in xs {
        check_input(weights, x)?;
    }
    let (reps, _) = representations(kind, &weights.w)?;
    let mut xt = DMatrix::zeros(weights.seq_len * d, xs.len());
    fill_features(&mut xt, &reps, xs.iter().copied(), d);
    let mut scores = DMatrix::zeros(weights.n_classes(), xs.len());
    gemm(1.0, &weights.u, Op::N, &xt, Op::N, 0.0, &mut scores);
    Ok(scores)
}

fn fill_features<'a>(
    xt: &mut DMatrix<f64>,
    reps: &DMatrix<f64>,
    xs: impl Iterator<Item = &'a OneHot>,
    d: usize,
) {
    for (b, x) in xs.enumerate() {
        let col = xt.column_mut(b);
        let dst = col.data.into_slice_mut();
        for (l, &i) in x.indices.iter().enumerate() {
            dst[l * d..(l + 1) * d].copy_from_slice(reps.column(i).as_slice());
        }
    }
}

/// Scratch buffers reused across minibatches.
#[derive(Debug, Default)]
pub struct Workspace {
    xt: DMatrix<f64>,
    scores: DMatrix<f64>,
    dxt: DMatrix<f64>,
}

/// Mean loss over the batch plus `(lambda_w/2)|W|^2 + (lambda_u/2)|U|^2`,
/// with its exact gradient.
pub fn objective_and_gradient(
    kind: NetworkKind,
    weights: &Weights,
    batch: &[(&OneHot, usize)],
    lambda_w: f64,
    lambda_u: f64,
    ws: &mut Workspace,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let coef = vec![1.0 / batch.len() as f64; batch.len()];
    weighted_objective_and_gradient(kind, weights, batch, &coef, lambda_w, lambda_u, ws)
}

/// `sum_b coef_b * loss_b` plus the regularizer, with its exact gradient.
pub fn weighted_objective_and_gradient(
    kind: NetworkKind,
    weights: &Weights,
    batch: &[(&OneHot, usize)],
    coef: &[f64],
    lambda_w: f64,
    lambda_u: f64,
    ws: &mut Workspace,
) -> Result<(f64, Gradients)> {
    if coef.len() != batch.len() {
        return Err(Error::LengthMismatch {
            left: coef.len(),
            right: batch.len(),
        });
    }
    let (d, len, n_classes) = (weights.d(), weights.seq_len, weights.n_classes());
    let b_len = batch.len();
    for (x, k) in batch {
        check_input(weights, x)?;
        if *k >= n_classes {
            return Err(Error::Shape(format!("label {k} outside {n_classes} classes")));
        }
    }
    let (reps, scales) = representations(kind, &weights.w)?;

    // X^T: column b stacks the representations of sentence b's words.
    resize(&mut ws.xt, len * d, b_len);
    fill_features(&mut ws.xt, &reps, batch.iter().map(|(x, _)| *x), d);
    resize(&mut ws.scores, n_classes, b_len);
    gemm(1.0, &weights.u, Op::N, &ws.xt, Op::N, 0.0, &mut ws.scores);

    // scores -> coef * (softmax - onehot), accumulating the loss on the way.
    let mut loss = 0.0;
    for (b, (_, k)) in batch.iter().enumerate() {
        let col = ws.scores.column_mut(b);
        let y = col.data.into_slice_mut();
        let lse = log_sum_exp(y);
        loss += coef[b] * (lse - y[*k]);
        for v in y.iter_mut() {
            *v = (*v - lse).exp() * coef[b];
        }
        y[*k] -= coef[b];
    }

    let mut du = weights.u.clone();
    gemm(1.0, &ws.scores, Op::N, &ws.xt, Op::T, lambda_u, &mut du);

    resize(&mut ws.dxt, len * d, b_len);
    gemm(1.0, &weights.u, Op::T, &ws.scores, Op::N, 0.0, &mut ws.dxt);

    let mut d_reps = DMatrix::<f64>::zeros(d, weights.n_w());
    let mut touched = vec![false; weights.n_w()];
    for (b, (x, _)) in batch.iter().enumerate() {
        let src = ws.dxt.column(b);
        for (l, &i) in x.indices.iter().enumerate() {
            let mut dst = d_reps.column_mut(i);
            for r in 0..d {
                dst[r] += src[l * d + r];
            }
            touched[i] = true;
        }
    }

    let dw = match kind {
        NetworkKind::Plain => {
            let mut dw = d_reps;
            if lambda_w != 0.0 {
                dw += &weights.w * lambda_w;
            }
            dw
        }
        NetworkKind::LayerNorm { .. } => {
            let mut dw = &weights.w * lambda_w;
            let mut buf = vec![0.0; d];
            for (j, _) in touched.iter().enumerate().filter(|(_, t)| **t) {
                layer_norm_pullback(
                    reps.column(j).as_slice(),
                    scales[j],
                    d_reps.column(j).as_slice(),
                    &mut buf,
                );
                let mut col = dw.column_mut(j);
                for r in 0..d {
                    col[r] += buf[r];
                }
            }
            dw
        }
    };

    let (nw, nu) = weights.squared_norms();
    let objective = loss + 0.5 * (lambda_w * nw + lambda_u * nu);
    Ok((objective, Gradients { dw, du }))
}

fn resize(m: &mut DMatrix<f64>, rows: usize, cols: usize) {
    if m.shape() != (rows, cols) {
        *m = DMatrix::zeros(rows, cols);
    }
}

/// Gradient of the batch objective; see [`objective_and_gradient`].
pub fn backward(
    kind: NetworkKind,
    weights: &Weights,
    batch: &[(&OneHot, usize)],
    lambda_w: f64,
    lambda_u: f64,
) -> Result<Gradients> {
    objective_and_gradient(kind, weights, batch, lambda_w, lambda_u, &mut Workspace::default())
        .map(|(_, g)| g)
}

/// The batch objective alone, evaluated sentence by sentence.
pub fn batch_objective(
    kind: NetworkKind,
    weights: &Weights,
    batch: &[(&OneHot, usize)],
    lambda_w: f64,
    lambda_u: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let mut loss = 0.0;
    for (x, k) in batch {
        loss += cross_entropy(forward(kind, weights, x)?.as_slice(), *k);
    }
    let (nw, nu) = weights.squared_norms();
    Ok(loss / batch.len() as f64 + 0.5 * (lambda_w * nw + lambda_u * nu))
}
