//! Closed-form collapse theory: the scalar problems that fix the collapse
//! scales, the type-III radius system, equiangular frames, collapse
//! configurations, and exact (enumerated) risks and gradients on small
//! instances.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_model::{
    binomial, checked_pow, encode_sentence, enumerate_support, DataModelConfig, LatentSet, OneHot,
};
use crate::error::{Error, Result};
use crate::network::{self, NetworkKind, Weights, Workspace};

/// Largest support `s_c^L` enumerated per class.
pub const ENUMERATION_BUDGET: u128 = 1_000_000;

const T_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub data: DataModelConfig,
    pub d: usize,
}

impl TheoryParams {
    pub fn new(data: DataModelConfig, d: usize) -> Result<Self> {
        if d < data.n_c() {
            return Err(Error::Infeasible(format!(
                "embedding dimension {d} is below n_c = {}",
                data.n_c()
            )));
        }
        Ok(Self { data, d })
    }

    pub fn n_c(&self) -> usize {
        self.data.n_c()
    }
    pub fn n_w(&self) -> usize {
        self.data.n_w()
    }
    pub fn seq_len(&self) -> usize {
        self.data.seq_len()
    }
    pub fn n_classes(&self) -> usize {
        self.data.n_classes()
    }
    pub fn lambda(&self) -> f64 {
        self.data.lambda()
    }
    pub fn mu(&self) -> &[f64] {
        self.data.mu()
    }

    fn ratio(&self) -> f64 {
        let n = self.n_c() as f64;
        n / (n - 1.0)
    }

    /// `K / n_c^L`.
    pub fn latent_fraction(&self) -> f64 {
        let log = (self.n_classes() as f64).ln() - self.seq_len() as f64 * (self.n_c() as f64).ln();
        log.exp()
    }

    /// Exponent rate of the plain network's scalar problem.
    pub fn eta(&self) -> f64 {
        self.ratio() / ((self.n_w() * self.n_classes() * self.seq_len()) as f64).sqrt()
    }

    /// Exponent rate of the LayerNorm network's scalar problem.
    pub fn eta_star(&self) -> f64 {
        self.ratio() * (self.d as f64 / (self.n_classes() * self.seq_len()) as f64).sqrt()
    }

    /// Idealized `|S_r| = (K/n_c^L) C(L,r) (n_c-1)^r`.
    pub fn sphere_size(&self, r: usize) -> f64 {
        let n = self.n_c() as f64;
        self.latent_fraction() * binomial(self.seq_len(), r) * (n - 1.0).powi(r as i32)
    }
}

/// `log(1 - a + a (1 + (n-1) e^{-x})^L)` with `a = K/n^L`, and its derivative in `x`.
fn log_partition(params: &TheoryParams, x: f64) -> (f64, f64) {
    let a = params.latent_fraction();
    let n = params.n_c() as f64;
    let len = params.seq_len() as f64;
    let e = (-x).exp();
    let log_b = ((n - 1.0) * e).ln_1p();
    let a_bl = (a.ln() + len * log_b).exp();
    let denom = (1.0 - a) + a_bl;
    let value = denom.ln();
    let slope = -len * (n - 1.0) * e / (1.0 + (n - 1.0) * e) * (a_bl / denom);
    (value, slope)
}

/// `H(t)`: true risk along the type-I family with `t = n_w c^2`.
pub fn h_value(params: &TheoryParams, t: f64) -> f64 {
    log_partition(params, params.eta() * t).0 + params.lambda() * t
}

pub fn h_derivative(params: &TheoryParams, t: f64) -> f64 {
    let eta = params.eta();
    eta * log_partition(params, eta * t).1 + params.lambda()
}

/// `H*(t)`: true risk of the LayerNorm network along the type-II family with
/// `t = sqrt(KL) c`.
pub fn hstar_value(params: &TheoryParams, t: f64) -> f64 {
    log_partition(params, params.eta_star() * t).0 + 0.5 * params.lambda() * t * t
}

pub fn hstar_derivative(params: &TheoryParams, t: f64) -> f64 {
    let eta = params.eta_star();
    eta * log_partition(params, eta * t).1 + params.lambda() * t
}

/// Root of an increasing function on `[lo, hi]` by bisection, down to `tol`
/// or floating-point resolution.
fn bisect_increasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Minimizer over `t >= 0` of a convex function given its derivative.
fn minimize_convex(deriv: impl Fn(f64) -> f64) -> f64 {
    if deriv(0.0) >= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while deriv(hi) < 0.0 {
        hi *= 2.0;
        assert!(hi.is_finite(), "derivative never changes sign");
    }
    bisect_increasing(deriv, 0.0, hi, T_TOL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryPrediction {
    pub tau: f64,
    pub c: f64,
    pub c_prime: Option<f64>,
    pub eta: f64,
    pub predicted_norm: f64,
    pub predicted_risk: f64,
    pub predicted_margin_per_distance: f64,
    pub radii: Vec<f64>,
}

/// Optimal type-I scales for the plain network.
pub fn minimize_h(params: &TheoryParams) -> TheoryPrediction {
    let tau = minimize_convex(|t| h_derivative(params, t));
    let c = (tau / params.n_w() as f64).sqrt();
    let c_prime = (tau / (params.n_classes() * params.seq_len()) as f64).sqrt();
    TheoryPrediction {
        tau,
        c,
        c_prime: Some(c_prime),
        eta: params.eta(),
        predicted_norm: c,
        predicted_risk: h_value(params, tau),
        predicted_margin_per_distance: c * c_prime * params.ratio(),
        radii: Vec::new(),
    }
}

/// Optimal type-II head scale for the LayerNorm network. The predicted norm
/// is that of the head blocks `u_{k,l}`.
pub fn minimize_hstar(params: &TheoryParams) -> TheoryPrediction {
    let tau = minimize_convex(|t| hstar_derivative(params, t));
    let c = tau / ((params.n_classes() * params.seq_len()) as f64).sqrt();
    TheoryPrediction {
        tau,
        c,
        c_prime: None,
        eta: params.eta_star(),
        predicted_norm: c,
        predicted_risk: hstar_value(params, tau),
        predicted_margin_per_distance: c * (params.d as f64).sqrt() * params.ratio(),
        radii: Vec::new(),
    }
}

/// `lambda^2 < (L / n_c^{L+1}) sum mu^2`, strict.
pub fn uniqueness_bound(params: &TheoryParams) -> bool {
    let (lhs, rhs) = uniqueness_bound_sides(params);
    lhs < rhs
}

pub fn uniqueness_bound_sides(params: &TheoryParams) -> (f64, f64) {
    let n = params.n_c() as f64;
    let len = params.seq_len() as f64;
    let sum_sq: f64 = params.mu().iter().map(|m| m * m).sum();
    let rhs = (len.ln() - (len + 1.0) * n.ln()).exp() * sum_sq;
    (params.lambda() * params.lambda(), rhs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type3Solution {
    pub c: f64,
    pub radii: Vec<f64>,
    /// Max absolute residual of the per-rank equations.
    pub rank_residual: f64,
    /// Absolute residual of the normalization equation.
    pub norm_residual: f64,
}

/// Residuals of the radius system at `(c, r)`.
pub fn type3_residuals(params: &TheoryParams, c: f64, radii: &[f64]) -> (f64, f64) {
    let n = params.n_c() as f64;
    let len = params.seq_len() as f64;
    let lam = params.lambda();
    let rank = radii
        .iter()
        .zip(params.mu())
        .map(|(r, mu)| (lam / len * (r / c) * (n - 1.0 + (n / (n - 1.0) * c * r).exp()) - mu).abs())
        .fold(0.0, f64::max);
    let sum: f64 = radii.iter().map(|r| (r / c) * (r / c)).sum();
    let target = len * (n.ln() * (len - 1.0)).exp();
    (rank, (sum - target).abs())
}

/// Unique positive solution of the type-III system, by nested bisection:
/// each `rho = r/c` solves a monotone scalar equation for fixed `c`, and the
/// sum of squares is strictly decreasing in `c`.
pub fn solve_type3_system(params: &TheoryParams) -> Result<Type3Solution> {
    let (lhs, rhs) = uniqueness_bound_sides(params);
    if !(lhs < rhs) {
        return Err(Error::NoGuarantee { lhs, rhs });
    }
    let n = params.n_c() as f64;
    let len = params.seq_len() as f64;
    let lam = params.lambda();
    let gamma = 1.0 / (n - 1.0);
    let g = |c: f64, x: f64| x * (1.0 + gamma * ((1.0 + gamma) * c * c * x).exp()) / (1.0 + gamma);
    let targets: Vec<f64> = params.mu().iter().map(|m| len * m / (lam * n)).collect();
    let rho = |c: f64, target: f64| bisect_increasing(|x| g(c, x) - target, 0.0, target, 0.0);
    let norm_target = len * (n.ln() * (len - 1.0)).exp();
    let phi = |c: f64| targets.iter().map(|&t| rho(c, t).powi(2)).sum::<f64>() - norm_target;

    let mut hi = 1.0;
    while phi(hi) > 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Infeasible("no bracket for the head scale".into()));
        }
    }
    // phi decreases, so bisect on -phi
    let c = bisect_increasing(|c| -phi(c), 0.0, hi, 0.0);
    let radii: Vec<f64> = targets.iter().map(|&t| c * rho(c, t)).collect();
    let (rank_residual, norm_residual) = type3_residuals(params, c, &radii);
    Ok(Type3Solution {
        c,
        radii,
        rank_residual,
        norm_residual,
    })
}

/// `n_c` unit vectors in `R^d` summing to zero with pairwise inner products
/// `-1/(n_c-1)`, stored as the columns of `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub f: DMatrix<f64>,
    pub mean_zero: bool,
}

impl Frame {
    pub fn d(&self) -> usize {
        self.f.nrows()
    }
    pub fn n_c(&self) -> usize {
        self.f.ncols()
    }

    /// Largest deviation from the frame identities (and from `1^T F = 0`
    /// when flagged mean-zero).
    pub fn residual(&self) -> f64 {
        let n = self.n_c() as f64;
        let ideal = DMatrix::from_fn(self.n_c(), self.n_c(), |i, j| {
            if i == j {
                1.0
            } else {
                -1.0 / (n - 1.0)
            }
        });
        let gram = self.f.transpose() * &self.f - ideal;
        let mut worst = gram.amax().max(self.f.column_sum().amax());
        if self.mean_zero {
            worst = worst.max(self.f.row_sum().amax());
        }
        worst
    }
}

fn centered_simplex(n_c: usize) -> DMatrix<f64> {
    let n = n_c as f64;
    let scale = (n / (n - 1.0)).sqrt();
    DMatrix::from_fn(n_c, n_c, |i, j| scale * ((i == j) as u8 as f64 - 1.0 / n))
}

fn check_frame_dims(n_c: usize, d: usize, mean_zero: bool) -> Result<()> {
    if n_c < 2 {
        return Err(Error::Infeasible("a frame needs at least two vectors".into()));
    }
    let need = if mean_zero { n_c + 1 } else { n_c };
    if d < need {
        return Err(Error::Infeasible(format!(
            "d = {d} too small for {n_c} {}equiangular vectors (need {need})",
            if mean_zero { "mean-zero " } else { "" }
        )));
    }
    Ok(())
}

/// Orthonormal `d x n_c` embedding from raw columns, projected away from
/// `1_d` first when `mean_zero`.
fn orthonormal_embedding(mut raw: DMatrix<f64>, mean_zero: bool) -> DMatrix<f64> {
    if mean_zero {
        let d = raw.nrows() as f64;
        for mut col in raw.column_iter_mut() {
            let m = col.sum() / d;
            col.add_scalar_mut(-m);
        }
    }
    let q = raw.qr().q();
    if mean_zero {
        // QR already keeps columns in span(raw), which is orthogonal to 1_d;
        // repeat the projection to wipe rounding.
        let d = q.nrows() as f64;
        let mut q = q;
        for mut col in q.column_iter_mut() {
            let m = col.sum() / d;
            col.add_scalar_mut(-m);
        }
        return q;
    }
    q
}

/// Deterministic frame: the centered simplex placed on the first
/// coordinates (or, for `mean_zero`, on an orthonormal basis of `1_d`'s
/// complement built from those coordinates).
pub fn equiangular_frame(n_c: usize, d: usize, mean_zero: bool) -> Result<Frame> {
    check_frame_dims(n_c, d, mean_zero)?;
    let raw = DMatrix::from_fn(d, n_c, |i, j| (i == j) as u8 as f64);
    let basis = orthonormal_embedding(raw, mean_zero);
    Ok(Frame {
        f: basis * centered_simplex(n_c),
        mean_zero,
    })
}

/// Frame with a seeded random orientation, uniform over embeddings that
/// respect the `mean_zero` constraint.
pub fn random_equiangular_frame<R: Rng + ?Sized>(
    n_c: usize,
    d: usize,
    mean_zero: bool,
    rng: &mut R,
) -> Result<Frame> {
    check_frame_dims(n_c, d, mean_zero)?;
    let raw = DMatrix::from_fn(d, n_c, |_, _| StandardNormal.sample(rng));
    let basis = orthonormal_embedding(raw, mean_zero);
    Ok(Frame {
        f: basis * centered_simplex(n_c),
        mean_zero,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollapseKind {
    I,
    II,
    III,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CollapseConstants {
    /// `w = c f_alpha`, `u_{k,l} = c' f_{z_{k,l}}`.
    TypeI { c: f64, c_prime: f64 },
    /// `w = sqrt(d) f_alpha` (fixed by LayerNorm), `u_{k,l} = c f_{z_{k,l}}`.
    TypeII { c: f64 },
    /// `w_{(alpha,beta)} = r_beta f_alpha`, `u_{k,l} = c f_{z_{k,l}}`.
    TypeIII { c: f64, radii: Vec<f64> },
}

impl CollapseConstants {
    pub fn kind(&self) -> CollapseKind {
        match self {
            Self::TypeI { .. } => CollapseKind::I,
            Self::TypeII { .. } => CollapseKind::II,
            Self::TypeIII { .. } => CollapseKind::III,
        }
    }

    /// Type-I constants with the head scale tied as in the closed-form risk.
    pub fn type_i_tied(c: f64, params: &TheoryParams) -> Self {
        let c_prime = c * (params.n_w() as f64 / (params.n_classes() * params.seq_len()) as f64).sqrt();
        Self::TypeI { c, c_prime }
    }
}

pub fn build_collapse_config(
    constants: &CollapseConstants,
    frame: &Frame,
    latents: &LatentSet,
    s_c: usize,
) -> Result<Weights> {
    if frame.n_c() != latents.n_c() {
        return Err(Error::Shape(format!(
            "frame has {} vectors, latents use {} concepts",
            frame.n_c(),
            latents.n_c()
        )));
    }
    let (d, n_c, len, n_classes) = (frame.d(), frame.n_c(), latents.seq_len(), latents.len());
    let f = &frame.f;
    let (head, word_scale): (f64, Box<dyn Fn(usize) -> f64>) = match constants {
        CollapseConstants::TypeI { c, c_prime } => (*c_prime, Box::new(move |_| *c)),
        CollapseConstants::TypeII { c } => {
            if !frame.mean_zero {
                return Err(Error::InvalidConfig(
                    "type II needs a mean-zero frame so LayerNorm fixes the embeddings".into(),
                ));
            }
            let root_d = (d as f64).sqrt();
            (*c, Box::new(move |_| root_d))
        }
        CollapseConstants::TypeIII { c, radii } => {
            if radii.len() != s_c {
                return Err(Error::LengthMismatch {
                    left: radii.len(),
                    right: s_c,
                });
            }
            (*c, Box::new(move |b| radii[b]))
        }
    };
    let w = DMatrix::from_fn(d, n_c * s_c, |i, col| word_scale(col % s_c) * f[(i, col / s_c)]);
    let u = DMatrix::from_fn(n_classes, len * d, |k, col| {
        head * f[(col % d, latents.get(k).concepts[col / d])]
    });
    Weights::new(w, u, len)
}

/// Risk along the type-I (plain) or type-II (LayerNorm) family under the
/// idealized neighbour counts.
pub fn closed_form_risk(kind: CollapseKind, c: f64, params: &TheoryParams) -> Result<f64> {
    match kind {
        CollapseKind::I => Ok(h_value(params, params.n_w() as f64 * c * c)),
        CollapseKind::II => {
            let t = ((params.n_classes() * params.seq_len()) as f64).sqrt() * c;
            Ok(hstar_value(params, t))
        }
        CollapseKind::III => Err(Error::InvalidConfig(
            "no closed-form risk for type III".into(),
        )),
    }
}

/// Margin between a sentence of class `k` and class `j` at Hamming distance
/// `r`, for a collapse configuration.
pub fn predicted_margin(constants: &CollapseConstants, r: usize, n_c: usize, d: usize) -> Result<f64> {
    let ratio = n_c as f64 / (n_c as f64 - 1.0);
    match constants {
        CollapseConstants::TypeI { c, c_prime } => Ok(c * c_prime * ratio * r as f64),
        CollapseConstants::TypeII { c } => Ok(c * (d as f64).sqrt() * ratio * r as f64),
        CollapseConstants::TypeIII { .. } => Err(Error::InvalidConfig(
            "type-III margins depend on the sentence".into(),
        )),
    }
}

fn check_budget(params: &TheoryParams, latents: &LatentSet) -> Result<()> {
    let needed = checked_pow(params.data.s_c(), latents.seq_len()).unwrap_or(u128::MAX);
    if needed > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded {
            needed,
            budget: ENUMERATION_BUDGET,
        });
    }
    if latents.n_c() != params.n_c() || latents.seq_len() != params.seq_len() {
        return Err(Error::Shape("latents do not match the parameters".into()));
    }
    Ok(())
}

/// All `(x, k)` with weight `D_{z_k}(x)/K`, grouped in chunks.
fn weighted_support(
    latents: &LatentSet,
    params: &TheoryParams,
) -> Result<Vec<(OneHot, usize, f64)>> {
    let inv_k = 1.0 / latents.len() as f64;
    let mut out = Vec::new();
    for (k, z) in latents.latents().iter().enumerate() {
        for (x, p) in enumerate_support(z, &params.data) {
            out.push((encode_sentence(&x, &params.data)?, k, p * inv_k));
        }
    }
    Ok(out)
}

const CHUNK: usize = 4096;

/// Exact risk and its gradient by weighted enumeration of every `X_k`. The
/// regularizer follows the kind: both matrices for the plain network, only
/// `U` for the LayerNorm one.
pub fn exact_risk_and_gradient(
    kind: NetworkKind,
    weights: &Weights,
    latents: &LatentSet,
    params: &TheoryParams,
) -> Result<(f64, network::Gradients)> {
    check_budget(params, latents)?;
    let support = weighted_support(latents, params)?;
    let mut ws = Workspace::default();
    let mut risk = 0.0;
    let mut dw = DMatrix::zeros(weights.d(), weights.n_w());
    let mut du = DMatrix::zeros(weights.n_classes(), weights.u().ncols());
    for chunk in support.chunks(CHUNK) {
        let batch: Vec<(&OneHot, usize)> = chunk.iter().map(|(x, k, _)| (x, *k)).collect();
        let coef: Vec<f64> = chunk.iter().map(|(_, _, p)| *p).collect();
        let (part, g) =
            network::weighted_objective_and_gradient(kind, weights, &batch, &coef, 0.0, 0.0, &mut ws)?;
        risk += part;
        dw += g.dw;
        du += g.du;
    }
    let (lam_w, lam_u) = kind.penalties(params.lambda());
    let (nw, nu) = weights.squared_norms();
    risk += 0.5 * (lam_w * nw + lam_u * nu);
    dw += weights.w() * lam_w;
    du += weights.u() * lam_u;
    Ok((risk, network::Gradients { dw, du }))
}

pub fn exact_risk(
    kind: NetworkKind,
    weights: &Weights,
    latents: &LatentSet,
    params: &TheoryParams,
) -> Result<f64> {
    check_budget(params, latents)?;
    let mut risk = 0.0;
    let inv_k = 1.0 / latents.len() as f64;
    for (k, z) in latents.latents().iter().enumerate() {
        for (x, p) in enumerate_support(z, &params.data) {
            let y = network::forward(kind, weights, &encode_sentence(&x, &params.data)?)?;
            risk += p * inv_k * network::cross_entropy(y.as_slice(), k);
        }
    }
    let (lam_w, lam_u) = kind.penalties(params.lambda());
    let (nw, nu) = weights.squared_norms();
    Ok(risk + 0.5 * (lam_w * nw + lam_u * nu))
}

pub fn exact_risk_gradient(
    kind: NetworkKind,
    weights: &Weights,
    latents: &LatentSet,
    params: &TheoryParams,
) -> Result<network::Gradients> {
    exact_risk_and_gradient(kind, weights, latents, params).map(|(_, g)| g)
}

/// `Phi_{(alpha,beta),(k,l)} = (1/K) sum_j sum_{x in X_j} 1{x_l = (alpha,beta)}
/// (1{j=k} - q_k(x)) D_{z_j}(x)`, an `n_w x KL` matrix (plain network).
pub fn phi_matrix(weights: &Weights, latents: &LatentSet, params: &TheoryParams) -> Result<DMatrix<f64>> {
    check_budget(params, latents)?;
    let (n_classes, len) = (latents.len(), latents.seq_len());
    let mut phi = DMatrix::zeros(params.n_w(), n_classes * len);
    for (x, j, p) in weighted_support(latents, params)? {
        let y = network::forward(NetworkKind::Plain, weights, &x)?;
        let max = y.max();
        let e = y.map(|v| (v - max).exp());
        let q = &e / e.sum();
        for k in 0..n_classes {
            let coef = p * ((j == k) as u8 as f64 - q[k]);
            for (l, &i) in x.indices.iter().enumerate() {
                phi[(i, k * len + l)] += coef;
            }
        }
    }
    Ok(phi)
}

/// Gradient of the plain network's exact risk assembled from [`phi_matrix`]:
/// `-dR0/dU-hat = W Phi`, `-dR0/dW = U-hat Phi^T`, plus the regularizer.
pub fn exact_risk_gradient_via_phi(
    weights: &Weights,
    latents: &LatentSet,
    params: &TheoryParams,
) -> Result<network::Gradients> {
    let phi = phi_matrix(weights, latents, params)?;
    let lam = params.lambda();
    let du_hat = -(weights.w() * &phi) + weights.u_hat() * lam;
    let dw = -(weights.u_hat() * phi.transpose()) + weights.w() * lam;
    let du = Weights::from_u_hat(dw.clone(), &du_hat, latents.len())?.u().clone();
    Ok(network::Gradients { dw, du })
}

/// `log(1 + sum_r |S_r| exp(-N(r)))` where `N(r)` averages the margins
/// against classes at distance `r`. Lower-bounds the unregularized exact risk
/// whenever all sphere sizes agree, with equality exactly under equimargin.
pub fn equimargin_lower_bound(
    kind: NetworkKind,
    weights: &Weights,
    latents: &LatentSet,
    params: &TheoryParams,
) -> Result<f64> {
    check_budget(params, latents)?;
    let (n_classes, len) = (latents.len(), latents.seq_len());
    let mut dist = vec![0usize; n_classes * n_classes];
    for k in 0..n_classes {
        for j in 0..n_classes {
            dist[k * n_classes + j] = crate::data_model::hamming_distance(latents.get(k), latents.get(j))?;
        }
    }
    let sizes: Vec<usize> = (0..=len)
        .map(|r| (0..n_classes).filter(|&j| dist[j] == r).count())
        .collect();
    let mut avg = vec![0.0; len + 1];
    for (x, k, p) in weighted_support(latents, params)? {
        let y = network::forward(kind, weights, &x)?;
        for j in 0..n_classes {
            let r = dist[k * n_classes + j];
            if r > 0 {
                avg[r] += p * (y[k] - y[j]) / sizes[r] as f64;
            }
        }
    }
    let inner: f64 = (1..=len)
        .filter(|&r| sizes[r] > 0)
        .map(|r| sizes[r] as f64 * (-avg[r]).exp())
        .sum();
    Ok(inner.ln_1p())
}

/// `g(-<U-hat, W Q^T Z>)` with `g(x) = log(1 + sum_r |S_r| e^{theta_r x / K})`;
/// equals the unregularized risk of the plain network on configurations with
/// balanced heads that satisfy equimargin.
pub fn frame_lower_bound(weights: &Weights, latents: &LatentSet, params: &TheoryParams) -> f64 {
    let enc = params.data.encodings();
    let z = latents.z_matrix();
    let inner = weights.u_hat().dot(&(weights.w() * enc.q.transpose() * z));
    let (n, len, k) = (params.n_c() as f64, params.seq_len(), latents.len() as f64);
    let x = -inner;
    let sum: f64 = (1..=len)
        .map(|r| {
            let theta = n / (n - 1.0) * r as f64 / len as f64;
            params.sphere_size(r) * (theta * x / k).exp()
        })
        .sum();
    sum.ln_1p()
}
