//! Synthetic concepts/words task: vocabulary, word-frequency laws, latent
//! variables, sentence sampling, encoding matrices and the combinatorial
//! symmetry checks on latent sets.
//!
//! Indices are 0-based everywhere inside the crate. Reports and user-facing
//! constructors use 1-based `(alpha, beta)`; the only conversions live in
//! [`to_one_based`] and [`from_one_based`].

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest latent set [`full_latent_set`] will materialize.
pub const MAX_FULL_LATENTS: u128 = 1 << 22;

#[inline]
pub fn to_one_based(i: usize) -> usize {
    i + 1
}

#[inline]
pub fn from_one_based(i: usize) -> Option<usize> {
    i.checked_sub(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordLaw {
    Uniform,
    Zipf,
    Custom(Vec<f64>),
}

/// Frequencies `mu_beta` of the ranks inside one concept.
pub fn word_distribution(law: &WordLaw, s_c: usize) -> Result<Vec<f64>> {
    if s_c == 0 {
        return Err(Error::InvalidDistribution("s_c must be at least 1".into()));
    }
    match law {
        WordLaw::Uniform => Ok(vec![1.0 / s_c as f64; s_c]),
        WordLaw::Zipf => {
            let harmonic: f64 = (1..=s_c).map(|b| 1.0 / b as f64).sum();
            Ok((1..=s_c).map(|b| 1.0 / (b as f64 * harmonic)).collect())
        }
        WordLaw::Custom(values) => {
            if values.len() != s_c {
                return Err(Error::InvalidDistribution(format!(
                    "expected {s_c} weights, got {}",
                    values.len()
                )));
            }
            if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidDistribution(format!(
                    "weights must be positive and finite, got {v}"
                )));
            }
            let total: f64 = values.iter().sum();
            Ok(values.iter().map(|v| v / total).collect())
        }
    }
}

/// Task parameters. Construct through [`DataModelConfig::new`] so the
/// invariants are checked once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataModelConfig {
    n_c: usize,
    s_c: usize,
    seq_len: usize,
    n_classes: usize,
    mu: Vec<f64>,
    lambda: f64,
}

impl DataModelConfig {
    pub fn new(
        n_c: usize,
        s_c: usize,
        seq_len: usize,
        n_classes: usize,
        mu: Vec<f64>,
        lambda: f64,
    ) -> Result<Self> {
        if n_c < 2 {
            return Err(Error::InvalidConfig("need at least two concepts".into()));
        }
        if s_c == 0 || seq_len == 0 || n_classes == 0 {
            return Err(Error::InvalidConfig("s_c, L and K must be positive".into()));
        }
        if mu.len() != s_c {
            return Err(Error::InvalidConfig(format!(
                "mu has length {}, expected s_c = {s_c}",
                mu.len()
            )));
        }
        if mu.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::InvalidDistribution("mu entries must be positive".into()));
        }
        let total: f64 = mu.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!("mu sums to {total}")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self {
            n_c,
            s_c,
            seq_len,
            n_classes,
            mu,
            lambda,
        })
    }

    pub fn with_law(
        n_c: usize,
        s_c: usize,
        seq_len: usize,
        n_classes: usize,
        law: &WordLaw,
        lambda: f64,
    ) -> Result<Self> {
        Self::new(n_c, s_c, seq_len, n_classes, word_distribution(law, s_c)?, lambda)
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }
    pub fn s_c(&self) -> usize {
        self.s_c
    }
    pub fn n_w(&self) -> usize {
        self.n_c * self.s_c
    }
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `n_c^L`, or `None` when it does not fit in a `u128`.
    pub fn latent_space_size(&self) -> Option<u128> {
        checked_pow(self.n_c, self.seq_len)
    }

    /// Same task with a different class count (and hence a different latent set).
    pub fn with_classes(&self, n_classes: usize) -> Result<Self> {
        Self::new(self.n_c, self.s_c, self.seq_len, n_classes, self.mu.clone(), self.lambda)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.n_c, self.s_c, self.seq_len, self.n_classes, self.mu.clone(), lambda)
    }

    pub fn encodings(&self) -> EncodingMatrices {
        EncodingMatrices::new(self)
    }
}

pub(crate) fn checked_pow(base: usize, exp: usize) -> Option<u128> {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base as u128)?;
    }
    Some(acc)
}

/// Word `(alpha, beta)` stored 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Word {
    concept: usize,
    rank: usize,
}

impl Word {
    pub fn new(concept: usize, rank: usize, config: &DataModelConfig) -> Result<Self> {
        if concept >= config.n_c() || rank >= config.s_c() {
            return Err(Error::InvalidWord {
                alpha: to_one_based(concept),
                beta: to_one_based(rank),
                n_c: config.n_c(),
                s_c: config.s_c(),
            });
        }
        Ok(Self { concept, rank })
    }

    pub fn from_one_based(alpha: usize, beta: usize, config: &DataModelConfig) -> Result<Self> {
        let bad = || Error::InvalidWord {
            alpha,
            beta,
            n_c: config.n_c(),
            s_c: config.s_c(),
        };
        let concept = from_one_based(alpha).ok_or_else(bad)?;
        let rank = from_one_based(beta).ok_or_else(bad)?;
        Self::new(concept, rank, config).map_err(|_| bad())
    }

    pub(crate) fn new_unchecked(concept: usize, rank: usize) -> Self {
        Self { concept, rank }
    }

    pub fn concept(&self) -> usize {
        self.concept
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    /// 1-based `(alpha, beta)`.
    pub fn one_based(&self) -> (usize, usize) {
        (to_one_based(self.concept), to_one_based(self.rank))
    }
    /// Position of the word's one-hot entry in `R^{n_w}` (0-based).
    pub fn index(&self, s_c: usize) -> usize {
        self.concept * s_c + self.rank
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    pub words: Vec<Word>,
}

impl Sentence {
    pub fn new(words: Vec<Word>) -> Self {
        Self { words }
    }

    pub fn from_one_based(pairs: &[(usize, usize)], config: &DataModelConfig) -> Result<Self> {
        let words = pairs
            .iter()
            .map(|&(a, b)| Word::from_one_based(a, b, config))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { words })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Column indices into `R^{n_w}`, one per position.
    pub fn word_indices(&self, s_c: usize) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().map(move |w| w.index(s_c))
    }
}

/// Sparse one-hot encoding of a sentence: an `n_w x L` matrix with a single 1
/// per column, stored as the row index of that 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHot {
    pub n_w: usize,
    pub indices: Vec<usize>,
}

impl OneHot {
    pub fn dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_w, self.indices.len());
        for (l, &i) in self.indices.iter().enumerate() {
            m[(i, l)] = 1.0;
        }
        m
    }
}

pub fn encode_sentence(x: &Sentence, config: &DataModelConfig) -> Result<OneHot> {
    let mut indices = Vec::with_capacity(x.len());
    for w in &x.words {
        if w.concept >= config.n_c() || w.rank >= config.s_c() {
            let (alpha, beta) = w.one_based();
            return Err(Error::InvalidWord {
                alpha,
                beta,
                n_c: config.n_c(),
                s_c: config.s_c(),
            });
        }
        indices.push(w.index(config.s_c()));
    }
    Ok(OneHot {
        n_w: config.n_w(),
        indices,
    })
}

/// A latent variable in `C^L`, concepts stored 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentVariable {
    pub concepts: Vec<usize>,
}

impl LatentVariable {
    pub fn new(concepts: Vec<usize>, n_c: usize) -> Result<Self> {
        if let Some(&c) = concepts.iter().find(|&&c| c >= n_c) {
            return Err(Error::InvalidConfig(format!(
                "concept {} outside [1, {n_c}]",
                to_one_based(c)
            )));
        }
        Ok(Self { concepts })
    }

    pub fn from_one_based(concepts: &[usize], n_c: usize) -> Result<Self> {
        let zero = concepts
            .iter()
            .map(|&c| from_one_based(c).ok_or_else(|| Error::InvalidConfig("concept 0".into())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(zero, n_c)
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.concepts.iter().map(|&c| to_one_based(c)).collect()
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSet {
    latents: Vec<LatentVariable>,
    n_c: usize,
    seq_len: usize,
    distinct: bool,
}

impl LatentSet {
    pub fn new(latents: Vec<LatentVariable>, n_c: usize, seq_len: usize) -> Result<Self> {
        for z in &latents {
            if z.len() != seq_len {
                return Err(Error::LengthMismatch {
                    left: z.len(),
                    right: seq_len,
                });
            }
            if z.concepts.iter().any(|&c| c >= n_c) {
                return Err(Error::InvalidConfig("latent concept out of range".into()));
            }
        }
        let distinct = latents.iter().collect::<HashSet<_>>().len() == latents.len();
        Ok(Self {
            latents,
            n_c,
            seq_len,
            distinct,
        })
    }

    pub fn latents(&self) -> &[LatentVariable] {
        &self.latents
    }
    pub fn get(&self, k: usize) -> &LatentVariable {
        &self.latents[k]
    }
    pub fn len(&self) -> usize {
        self.latents.len()
    }
    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }
    pub fn n_c(&self) -> usize {
        self.n_c
    }
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }
    /// True when no two latents coincide.
    pub fn distinct(&self) -> bool {
        self.distinct
    }

    /// `Z_k`: `n_c x L`, column `l` is `e_{z_{k,l}}`.
    pub fn z_k(&self, k: usize) -> DMatrix<f64> {
        let z = &self.latents[k];
        DMatrix::from_fn(self.n_c, self.seq_len, |a, l| (z.concepts[l] == a) as u8 as f64)
    }

    /// `Z = [Z_1 ... Z_K]`, `n_c x KL`.
    pub fn z_matrix(&self) -> DMatrix<f64> {
        let l_len = self.seq_len;
        DMatrix::from_fn(self.n_c, self.len() * l_len, |a, col| {
            (self.latents[col / l_len].concepts[col % l_len] == a) as u8 as f64
        })
    }
}

/// Partition matrix `P` and frequency matrix `Q`, both `n_c x n_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingMatrices {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl EncodingMatrices {
    pub fn new(config: &DataModelConfig) -> Self {
        let s_c = config.s_c();
        let mu = config.mu();
        let p = DMatrix::from_fn(config.n_c(), config.n_w(), |a, col| {
            (col / s_c == a) as u8 as f64
        });
        let q = DMatrix::from_fn(config.n_c(), config.n_w(), |a, col| {
            if col / s_c == a {
                mu[col % s_c]
            } else {
                0.0
            }
        });
        Self { p, q }
    }
}

pub fn sample_latent<R: Rng + ?Sized>(n_c: usize, seq_len: usize, rng: &mut R) -> LatentVariable {
    LatentVariable {
        concepts: (0..seq_len).map(|_| rng.random_range(0..n_c)).collect(),
    }
}

/// `K` latents uniform over `C^L`. With `distinct`, duplicates are redrawn.
pub fn sample_latents<R: Rng + ?Sized>(
    config: &DataModelConfig,
    distinct: bool,
    rng: &mut R,
) -> Result<LatentSet> {
    let (n_c, len, k) = (config.n_c(), config.seq_len(), config.n_classes());
    if distinct {
        let space = config.latent_space_size();
        if space.is_some_and(|s| (k as u128) > s) {
            return Err(Error::Infeasible(format!(
                "{k} distinct latents requested but only {n_c}^{len} exist"
            )));
        }
    }
    let mut seen = HashSet::with_capacity(k);
    let mut latents = Vec::with_capacity(k);
    while latents.len() < k {
        let z = sample_latent(n_c, len, rng);
        if distinct && !seen.insert(z.clone()) {
            continue;
        }
        latents.push(z);
    }
    LatentSet::new(latents, n_c, len)
}

/// All of `C^L` in lexicographic order.
pub fn full_latent_set(n_c: usize, seq_len: usize) -> Result<LatentSet> {
    let total = checked_pow(n_c, seq_len).unwrap_or(u128::MAX);
    if total > MAX_FULL_LATENTS {
        return Err(Error::BudgetExceeded {
            needed: total,
            budget: MAX_FULL_LATENTS,
        });
    }
    let total = total as usize;
    let mut latents = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut concepts = vec![0; seq_len];
        for slot in concepts.iter_mut().rev() {
            *slot = idx % n_c;
            idx /= n_c;
        }
        latents.push(LatentVariable { concepts });
    }
    LatentSet::new(latents, n_c, seq_len)
}

/// Draws sentences from `D_z`. Build once per config; the weighted table is
/// reused across draws.
#[derive(Debug, Clone)]
pub struct SentenceSampler {
    ranks: WeightedIndex<f64>,
}

impl SentenceSampler {
    pub fn new(config: &DataModelConfig) -> Self {
        let ranks = WeightedIndex::new(config.mu()).expect("mu validated at construction");
        Self { ranks }
    }

    pub fn sample<R: Rng + ?Sized>(&self, z: &LatentVariable, rng: &mut R) -> Sentence {
        Sentence {
            words: z
                .concepts
                .iter()
                .map(|&c| Word::new_unchecked(c, self.ranks.sample(rng)))
                .collect(),
        }
    }
}

pub fn sample_sentence<R: Rng + ?Sized>(
    z: &LatentVariable,
    config: &DataModelConfig,
    rng: &mut R,
) -> Sentence {
    SentenceSampler::new(config).sample(z, rng)
}

/// `D_z(x)`.
pub fn sentence_probability(x: &Sentence, z: &LatentVariable, config: &DataModelConfig) -> f64 {
    if x.len() != z.len() {
        return 0.0;
    }
    let mu = config.mu();
    let mut p = 1.0;
    for (w, &c) in x.words.iter().zip(&z.concepts) {
        if w.concept != c || w.rank >= mu.len() {
            return 0.0;
        }
        p *= mu[w.rank];
    }
    p
}

pub fn hamming_distance(a: &LatentVariable, b: &LatentVariable) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(hamming(&a.concepts, &b.concepts))
}

#[inline]
fn hamming(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Pairwise Hamming distances, row-major `K x K`.
fn distance_table(latents: &LatentSet) -> Vec<usize> {
    let k = latents.len();
    let mut table = vec![0; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = hamming(&latents.latents[i].concepts, &latents.latents[j].concepts);
            table[i * k + j] = d;
            table[j * k + i] = d;
        }
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymmetryReport {
    pub holds: bool,
    pub worst_violation: f64,
}

/// Compares every neighbour count `|{j : dist(z_j, z_k) = r, z_{j,l} = a}|`,
/// `r` in `1..=L`, against its idealized value.
pub fn check_symmetry_assumption(latents: &LatentSet) -> SymmetryReport {
    let (k_len, n, len) = (latents.len(), latents.n_c(), latents.seq_len());
    let space = checked_pow(n, len).map(|s| s as f64).unwrap_or(f64::INFINITY);
    let scale = k_len as f64 / space;
    let nm1 = (n - 1) as f64;
    // expected[r][same] for r in 0..=L
    let expected: Vec<[f64; 2]> = (0..=len)
        .map(|r| {
            let same = scale * binomial(len - 1, r) * nm1.powi(r as i32);
            let other = if r == 0 {
                0.0
            } else {
                scale * binomial(len - 1, r - 1) * nm1.powi(r as i32 - 1)
            };
            [other, same]
        })
        .collect();

    let dist = distance_table(latents);
    let mut counts = vec![0usize; (len + 1) * len * n];
    let idx = |r: usize, l: usize, a: usize| (r * len + l) * n + a;
    let mut worst = 0.0f64;
    for k in 0..k_len {
        counts.iter_mut().for_each(|c| *c = 0);
        for j in 0..k_len {
            let r = dist[k * k_len + j];
            for (l, &a) in latents.latents[j].concepts.iter().enumerate() {
                counts[idx(r, l, a)] += 1;
            }
        }
        let zk = &latents.latents[k].concepts;
        for r in 1..=len {
            for l in 0..len {
                for a in 0..n {
                    let e = expected[r][(zk[l] == a) as usize];
                    worst = worst.max((counts[idx(r, l, a)] as f64 - e).abs());
                }
            }
        }
    }
    SymmetryReport {
        holds: worst <= 1e-9,
        worst_violation: worst,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighbourCountReport {
    /// Max over `r` of the spread of `|S_r(k)|` across `k`.
    pub sphere_size_spread: f64,
    /// Max deviation of `|S_r(k)|` from `(K/n_c^L) C(L,r) (n_c-1)^r`.
    pub sphere_size_deviation: f64,
    pub column_sum_deviation: f64,
    pub gram_deviation: f64,
    pub mean_value_deviation: f64,
    /// `theta_r` for `r = 1..=L`.
    pub theta: Vec<f64>,
    /// `(r, k)` pairs skipped in the mean-value check because `S_r(k)` is empty.
    pub skipped_empty_spheres: usize,
    pub holds: bool,
}

pub fn check_neighbour_counts(latents: &LatentSet) -> NeighbourCountReport {
    const TOL: f64 = 1e-10;
    let (k_len, n, len) = (latents.len(), latents.n_c(), latents.seq_len());
    let nf = n as f64;
    let space = checked_pow(n, len).map(|s| s as f64).unwrap_or(f64::INFINITY);
    let dist = distance_table(latents);

    // (i) sphere sizes
    let mut sizes = vec![vec![0usize; len + 1]; k_len];
    for k in 0..k_len {
        for j in 0..k_len {
            sizes[k][dist[k * k_len + j]] += 1;
        }
    }
    let mut spread = 0.0f64;
    let mut ideal_dev = 0.0f64;
    for r in 0..=len {
        let ideal = k_len as f64 / space * binomial(len, r) * (nf - 1.0).powi(r as i32);
        let (lo, hi) = sizes.iter().fold((usize::MAX, 0), |(lo, hi), s| (lo.min(s[r]), hi.max(s[r])));
        if k_len > 0 {
            spread = spread.max((hi - lo) as f64);
        }
        for s in &sizes {
            ideal_dev = ideal_dev.max((s[r] as f64 - ideal).abs());
        }
    }

    // (ii) sum of Z_k and Z Z^T
    let mut col_sum = DMatrix::<f64>::zeros(n, len);
    for k in 0..k_len {
        col_sum += latents.z_k(k);
    }
    let column_sum_deviation = col_sum.map(|v| (v - k_len as f64 / nf).abs()).max();
    let z = latents.z_matrix();
    let gram = &z * z.transpose();
    let target = DMatrix::<f64>::identity(n, n) * (k_len * len) as f64 / nf;
    let gram_deviation = (gram - target).abs().max();

    // (iii) mean-value identity per sphere
    let theta: Vec<f64> = (1..=len).map(|r| nf / (nf - 1.0) * r as f64 / len as f64).collect();
    let mut mean_dev = 0.0f64;
    let mut skipped = 0;
    let zks: Vec<DMatrix<f64>> = (0..k_len).map(|k| latents.z_k(k)).collect();
    for r in 1..=len {
        let a_r = -(1.0 / (nf - 1.0)) * r as f64 / len as f64;
        for k in 0..k_len {
            let mut mean = DMatrix::<f64>::zeros(n, len);
            let mut count = 0usize;
            for j in 0..k_len {
                if dist[k * k_len + j] == r {
                    mean += &zks[j];
                    count += 1;
                }
            }
            if count == 0 {
                skipped += 1;
                continue;
            }
            mean /= count as f64;
            let lhs = &zks[k] - mean;
            let rhs = zks[k].map(|v| theta[r - 1] * v + a_r);
            mean_dev = mean_dev.max((lhs - rhs).abs().max());
        }
    }

    let holds = spread == 0.0
        && column_sum_deviation <= TOL
        && gram_deviation <= TOL
        && mean_dev <= TOL;
    NeighbourCountReport {
        sphere_size_spread: spread,
        sphere_size_deviation: ideal_dev,
        column_sum_deviation,
        gram_deviation,
        mean_value_deviation: mean_dev,
        theta,
        skipped_empty_spheres: skipped,
        holds,
    }
}

/// Every sentence in the support of `D_z`, with its probability, in
/// lexicographic order of ranks. `s_c^L` entries.
pub fn enumerate_support<'a>(
    z: &'a LatentVariable,
    config: &'a DataModelConfig,
) -> impl Iterator<Item = (Sentence, f64)> + 'a {
    let (s_c, len) = (config.s_c(), z.len());
    let total = checked_pow(s_c, len).map(|t| t as usize).unwrap_or(usize::MAX);
    let mu = config.mu();
    (0..total).map(move |mut idx| {
        let mut words = vec![Word::new_unchecked(0, 0); len];
        let mut p = 1.0;
        for l in (0..len).rev() {
            let rank = idx % s_c;
            idx /= s_c;
            words[l] = Word::new_unchecked(z.concepts[l], rank);
            p *= mu[rank];
        }
        (Sentence { words }, p)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(n_c: usize, s_c: usize, len: usize, k: usize, law: WordLaw) -> DataModelConfig {
        DataModelConfig::with_law(n_c, s_c, len, k, &law, 0.001).unwrap()
    }

    #[test]
    fn word_laws() {
        assert_eq!(word_distribution(&WordLaw::Uniform, 4).unwrap(), vec![0.25; 4]);
        let z = word_distribution(&WordLaw::Zipf, 2).unwrap();
        assert!((z[0] - 2.0 / 3.0).abs() < 1e-15 && (z[1] - 1.0 / 3.0).abs() < 1e-15);
        let z = word_distribution(&WordLaw::Zipf, 400).unwrap();
        let h400: f64 = (1..=400).rev().map(|i| 1.0 / i as f64).sum();
        assert!((z[0] - 1.0 / h400).abs() < 1e-15);
        assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(
            word_distribution(&WordLaw::Custom(vec![1.0, 0.0]), 2),
            Err(Error::InvalidDistribution(_))
        ));
        assert!(word_distribution(&WordLaw::Custom(vec![1.0, -2.0]), 2).is_err());
    }

    #[test]
    fn config_rejects_bad_mu() {
        assert!(DataModelConfig::new(3, 2, 2, 2, vec![0.5, 0.6], 0.0).is_err());
        assert!(DataModelConfig::new(3, 2, 2, 2, vec![1.0], 0.0).is_err());
        assert!(DataModelConfig::new(3, 2, 2, 2, vec![0.5, 0.5], -1.0).is_err());
    }

    #[test]
    fn encode_examples() {
        let c = cfg(3, 4, 1, 1, WordLaw::Uniform);
        let x = Sentence::from_one_based(&[(1, 1)], &c).unwrap();
        assert_eq!(encode_sentence(&x, &c).unwrap().indices, vec![0]);
        let x = Sentence::from_one_based(&[(2, 3)], &c).unwrap();
        // e_7 in 1-based terms
        assert_eq!(encode_sentence(&x, &c).unwrap().indices, vec![6]);
        let c2 = cfg(3, 4, 2, 1, WordLaw::Uniform);
        let x = Sentence::from_one_based(&[(1, 1), (3, 4)], &c2).unwrap();
        let dense = encode_sentence(&x, &c2).unwrap().dense();
        assert_eq!(dense.shape(), (12, 2));
        assert_eq!(dense[(0, 0)], 1.0);
        assert_eq!(dense[(11, 1)], 1.0);
        assert_eq!(dense.sum(), 2.0);
        assert!(matches!(
            Sentence::from_one_based(&[(4, 1)], &c),
            Err(Error::InvalidWord { alpha: 4, .. })
        ));
        assert!(Sentence::from_one_based(&[(0, 1)], &c).is_err());
    }

    #[test]
    fn encodings_identities() {
        let c = cfg(3, 4, 2, 2, WordLaw::Zipf);
        let e = c.encodings();
        assert!((&e.p * e.q.transpose() - DMatrix::<f64>::identity(3, 3)).norm() < 1e-12);
        assert!((&e.p * e.p.transpose() - DMatrix::<f64>::identity(3, 3) * 4.0).norm() < 1e-12);
        let x = Sentence::from_one_based(&[(2, 3), (3, 1)], &c).unwrap();
        let zeta = encode_sentence(&x, &c).unwrap().dense();
        let pz = &e.p * &zeta;
        assert_eq!(pz[(1, 0)], 1.0);
        assert_eq!(pz[(2, 1)], 1.0);
        assert!(((&e.q * &zeta)[(1, 0)] - c.mu()[2]).abs() < 1e-15);
    }

    #[test]
    fn full_sets() {
        let s = full_latent_set(2, 2).unwrap();
        let got: Vec<_> = s.latents().iter().map(|z| z.one_based()).collect();
        assert_eq!(got, vec![vec![1, 1], vec![1, 2], vec![2, 1], vec![2, 2]]);
        let s = full_latent_set(3, 1).unwrap();
        assert_eq!(s.len(), 3);
        let s = full_latent_set(2, 3).unwrap();
        assert_eq!(s.len(), 8);
        assert!(s.distinct());
        assert!(matches!(full_latent_set(3, 40), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn sampled_latents_are_distinct_and_reproducible() {
        let c = cfg(3, 2, 15, 1000, WordLaw::Uniform);
        let a = sample_latents(&c, true, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = sample_latents(&c, true, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert!(a.distinct());
        assert_eq!(a.len(), 1000);

        // small space forces the rejection path
        let c = cfg(2, 2, 2, 4, WordLaw::Uniform);
        let s = sample_latents(&c, true, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(s.distinct());
        let c = cfg(2, 2, 2, 5, WordLaw::Uniform);
        assert!(matches!(
            sample_latents(&c, true, &mut ChaCha8Rng::seed_from_u64(1)),
            Err(Error::Infeasible(_))
        ));
        assert_eq!(sample_latents(&c, false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().len(), 5);
    }

    #[test]
    fn z_matrices() {
        let s = full_latent_set(3, 2).unwrap();
        let z1 = s.z_k(5);
        // latent 6 in lexicographic order is (2,3)
        assert_eq!(s.get(5).one_based(), vec![2, 3]);
        assert_eq!(z1[(1, 0)], 1.0);
        assert_eq!(z1[(2, 1)], 1.0);
        let z = s.z_matrix();
        assert_eq!(z.shape(), (3, 18));
        assert!((&z * z.transpose() - DMatrix::<f64>::identity(3, 3) * 6.0).norm() < 1e-12);
    }

    #[test]
    fn sentence_sampling() {
        let c = cfg(3, 1, 4, 1, WordLaw::Uniform);
        let z = LatentVariable::from_one_based(&[1, 3, 2, 2], 3).unwrap();
        let x = sample_sentence(&z, &c, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(
            x.words.iter().map(|w| w.one_based()).collect::<Vec<_>>(),
            vec![(1, 1), (3, 1), (2, 1), (2, 1)]
        );

        let c = cfg(2, 2, 2, 1, WordLaw::Zipf);
        let z = LatentVariable::from_one_based(&[1, 2], 2).unwrap();
        let x = Sentence::from_one_based(&[(1, 1), (2, 2)], &c).unwrap();
        assert!((sentence_probability(&x, &z, &c) - 2.0 / 9.0).abs() < 1e-15);
        let off = Sentence::from_one_based(&[(2, 1), (2, 2)], &c).unwrap();
        assert_eq!(sentence_probability(&off, &z, &c), 0.0);

        let sampler = SentenceSampler::new(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = sampler.sample(&z, &mut rng);
            assert!(sentence_probability(&x, &z, &c) > 0.0);
        }
    }

    #[test]
    fn empirical_frequencies_approach_product_law() {
        let c = cfg(2, 3, 2, 1, WordLaw::Uniform);
        let z = LatentVariable::from_one_based(&[1, 2], 2).unwrap();
        let sampler = SentenceSampler::new(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = std::collections::HashMap::new();
        let draws = 90_000;
        for _ in 0..draws {
            *counts.entry(sampler.sample(&z, &mut rng)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 9);
        for &v in counts.values() {
            assert!((v as f64 / draws as f64 - 1.0 / 9.0).abs() < 0.01);
        }
    }

    #[test]
    fn support_sums_to_one() {
        let c = cfg(3, 5, 3, 1, WordLaw::Zipf);
        let z = LatentVariable::from_one_based(&[3, 1, 2], 3).unwrap();
        let mut total = 0.0;
        let mut n = 0;
        for (x, p) in enumerate_support(&z, &c) {
            assert!((sentence_probability(&x, &z, &c) - p).abs() < 1e-15);
            total += p;
            n += 1;
        }
        assert_eq!(n, 125);
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hamming_examples() {
        let a = LatentVariable::from_one_based(&[1, 1, 1], 3).unwrap();
        let b = LatentVariable::from_one_based(&[1, 2, 3], 3).unwrap();
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0);
        assert_eq!(hamming_distance(&a, &b).unwrap(), 2);
        assert_eq!(hamming_distance(&b, &a).unwrap(), 2);
        let short = LatentVariable::from_one_based(&[1], 3).unwrap();
        assert!(matches!(hamming_distance(&a, &short), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn symmetry_on_full_and_partial_sets() {
        assert!(check_symmetry_assumption(&full_latent_set(2, 2).unwrap()).holds);
        assert!(check_symmetry_assumption(&full_latent_set(3, 3).unwrap()).holds);
        let partial = LatentSet::new(
            vec![
                LatentVariable::from_one_based(&[1, 1, 2], 2).unwrap(),
                LatentVariable::from_one_based(&[2, 1, 2], 2).unwrap(),
            ],
            2,
            3,
        )
        .unwrap();
        let rep = check_symmetry_assumption(&partial);
        assert!(!rep.holds);
        assert!(rep.worst_violation > 0.0);
    }

    #[test]
    fn neighbour_count_examples() {
        let rep = check_neighbour_counts(&full_latent_set(2, 2).unwrap());
        assert!(rep.holds, "{rep:?}");
        assert_eq!(rep.sphere_size_deviation, 0.0);
        let rep = check_neighbour_counts(&full_latent_set(3, 2).unwrap());
        assert!(rep.holds);
        assert_eq!(rep.gram_deviation, 0.0);
        let s = LatentSet::new(vec![LatentVariable { concepts: vec![0; 15] }], 3, 15).unwrap();
        let rep = check_neighbour_counts(&s);
        assert!((rep.theta[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn sphere_sizes_by_enumeration() {
        let s = full_latent_set(2, 2).unwrap();
        for k in 0..4 {
            let mut by_r = [0; 3];
            for j in 0..4 {
                by_r[hamming_distance(s.get(k), s.get(j)).unwrap()] += 1;
            }
            assert_eq!(by_r, [1, 2, 1]);
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(14, 7), 3432.0);
        assert_eq!(binomial(3, 4), 0.0);
    }
}
