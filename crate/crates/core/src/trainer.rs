//! Finite training sets, minibatch SGD on the regularized empirical risk, and
//! test accuracy on fresh samples.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{encode_sentence, DataModelConfig, LatentSet, OneHot, Sentence, SentenceSampler};
use crate::error::{Error, Result};
use crate::network::{self, NetworkKind, Weights, Workspace};

/// Test sentences per class used by the default evaluation protocol.
pub const DEFAULT_N_TEST: usize = 20;
/// Seed of the default evaluation stream.
pub const EVAL_SEED: u64 = 0x5eed_e7a1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub d: usize,
    pub n_spl: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub max_epochs: usize,
    pub plateau_tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 100,
            n_spl: 5,
            batch_size: 100,
            learning_rate: 0.1,
            lambda: 0.001,
            max_epochs: 500,
            plateau_tol: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.plateau_tol >= 0.0) {
            return Err(Error::InvalidConfig("plateau_tol must be >= 0".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        if self.d < 2 {
            return Err(Error::InvalidConfig("d must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<(Sentence, usize)>,
    encoded: Vec<OneHot>,
    n_classes: usize,
    n_w: usize,
    seq_len: usize,
}

impl Dataset {
    pub fn from_samples(samples: Vec<(Sentence, usize)>, config: &DataModelConfig) -> Result<Self> {
        let encoded = samples
            .iter()
            .map(|(x, _)| encode_sentence(x, config))
            .collect::<Result<Vec<_>>>()?;
        if let Some((_, k)) = samples.iter().find(|(_, k)| *k >= config.n_classes()) {
            return Err(Error::InvalidConfig(format!("label {k} out of range")));
        }
        Ok(Self {
            samples,
            encoded,
            n_classes: config.n_classes(),
            n_w: config.n_w(),
            seq_len: config.seq_len(),
        })
    }

    pub fn samples(&self) -> &[(Sentence, usize)] {
        &self.samples
    }
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
    pub fn n_w(&self) -> usize {
        self.n_w
    }
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn example(&self, i: usize) -> (&OneHot, usize) {
        (&self.encoded[i], self.samples[i].1)
    }
}

/// `n_spl` draws from `D_{z_k}` for every class, grouped by class.
pub fn make_dataset<R: Rng + ?Sized>(
    latents: &LatentSet,
    config: &DataModelConfig,
    n_spl: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let sampler = SentenceSampler::new(config);
    let mut samples = Vec::with_capacity(latents.len() * n_spl);
    for (k, z) in latents.latents().iter().enumerate() {
        for _ in 0..n_spl {
            samples.push((sampler.sample(z, rng), k));
        }
    }
    Dataset::from_samples(samples, config)
}

const EVAL_CHUNK: usize = 512;

/// Mean loss over the dataset plus the kind's regularizer.
pub fn empirical_risk(kind: NetworkKind, weights: &Weights, dataset: &Dataset, lambda: f64) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    let mut loss = 0.0;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let xs: Vec<&OneHot> = chunk.iter().map(|&i| &dataset.encoded[i]).collect();
        let scores = network::forward_batch(kind, weights, &xs)?;
        for (b, &i) in chunk.iter().enumerate() {
            loss += network::cross_entropy(scores.column(b).as_slice(), dataset.samples[i].1);
        }
    }
    let (lam_w, lam_u) = kind.penalties(lambda);
    let (nw, nu) = weights.squared_norms();
    Ok(loss / dataset.len() as f64 + 0.5 * (lam_w * nw + lam_u * nu))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Plateau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the minibatch objectives over the epoch.
    pub train_risk: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: Weights,
    pub history: Vec<EpochRecord>,
    pub initial_risk: f64,
    pub stop: StopReason,
    /// Largest absolute weight entry seen at any epoch boundary.
    pub max_abs_entry: f64,
}

/// Shuffled minibatch SGD with a constant step, starting from Gaussian
/// weights drawn from `config.seed`.
pub fn sgd_train(kind: NetworkKind, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Weights::random(config.d, dataset.n_w, dataset.n_classes, dataset.seq_len, &mut rng);
    sgd_train_from(kind, dataset, config, init, &mut rng, |_, _, _| {})
}

/// SGD from given weights; `on_epoch(epoch, weights, risk)` runs after every epoch.
pub fn sgd_train_from<R: Rng + ?Sized>(
    kind: NetworkKind,
    dataset: &Dataset,
    config: &TrainConfig,
    mut weights: Weights,
    rng: &mut R,
    mut on_epoch: impl FnMut(usize, &Weights, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    let (lam_w, lam_u) = kind.penalties(config.lambda);
    let initial_risk = empirical_risk(kind, &weights, dataset, config.lambda)?;
    info!("initial risk {initial_risk:.6}");
    let lr = config.learning_rate;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut ws = Workspace::default();
    let mut history = Vec::new();
    let mut max_abs = weights.max_abs();
    let mut previous: Option<f64> = None;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&OneHot, usize)> = chunk.iter().map(|&i| dataset.example(i)).collect();
            let (obj, g) = network::objective_and_gradient(kind, &weights, &batch, lam_w, lam_u, &mut ws)?;
            total += obj * chunk.len() as f64;
            *weights.w_mut() -= &g.dw * lr;
            *weights.u_mut() -= &g.du * lr;
        }
        let risk = total / dataset.len() as f64;
        if !risk.is_finite() || risk > 10.0 * initial_risk {
            return Err(Error::Diverged {
                epoch,
                risk,
                initial: initial_risk,
            });
        }
        max_abs = max_abs.max(weights.max_abs());
        history.push(EpochRecord {
            epoch,
            train_risk: risk,
        });
        debug!("epoch {epoch}: risk {risk:.8}");
        on_epoch(epoch, &weights, risk);
        if previous.is_some_and(|p| (p - risk).abs() < config.plateau_tol) {
            stop = StopReason::Plateau;
            break;
        }
        previous = Some(risk);
    }
    info!(
        "stopped after {} epochs ({stop:?}), risk {:.6}",
        history.len(),
        history.last().map_or(initial_risk, |h| h.train_risk)
    );
    Ok(TrainOutcome {
        weights,
        history,
        initial_risk,
        stop,
        max_abs_entry: max_abs,
    })
}

/// Fraction of fresh sentences (`n_test` per class) classified correctly.
/// Class `k` draws from its own stream derived from `rng`, so the test set
/// does not depend on evaluation order.
pub fn evaluate_accuracy<R: Rng + ?Sized>(
    kind: NetworkKind,
    weights: &Weights,
    latents: &LatentSet,
    config: &DataModelConfig,
    n_test: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_test == 0 {
        return Err(Error::InvalidConfig("n_test must be at least 1".into()));
    }
    let sampler = SentenceSampler::new(config);
    let base: u64 = rng.random();
    let mut correct = 0usize;
    let mut pending: Vec<(OneHot, usize)> = Vec::with_capacity(EVAL_CHUNK);
    let flush = |pending: &mut Vec<(OneHot, usize)>| -> Result<usize> {
        let xs: Vec<&OneHot> = pending.iter().map(|(x, _)| x).collect();
        let scores = network::forward_batch(kind, weights, &xs)?;
        let hits = pending
            .iter()
            .enumerate()
            .filter(|(b, (_, k))| network::classify(scores.column(*b).as_slice()) == *k)
            .count();
        pending.clear();
        Ok(hits)
    };
    for (k, z) in latents.latents().iter().enumerate() {
        let mut stream = ChaCha8Rng::seed_from_u64(base);
        stream.set_stream(k as u64);
        for _ in 0..n_test {
            pending.push((encode_sentence(&sampler.sample(z, &mut stream), config)?, k));
            if pending.len() == EVAL_CHUNK {
                correct += flush(&mut pending)?;
            }
        }
    }
    if !pending.is_empty() {
        correct += flush(&mut pending)?;
    }
    Ok(correct as f64 / (latents.len() * n_test) as f64)
}

/// [`evaluate_accuracy`] with the default protocol: 20 sentences per class
/// from the fixed evaluation seed.
pub fn test_accuracy(kind: NetworkKind, weights: &Weights, latents: &LatentSet, config: &DataModelConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(EVAL_SEED);
    evaluate_accuracy(kind, weights, latents, config, DEFAULT_N_TEST, &mut rng)
}
