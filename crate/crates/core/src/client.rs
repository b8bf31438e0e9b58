//! Client-side behavior: local SGD on a received model, and the alternating
//! update of the personalized model `v` alongside the customized model `ŵ`.
//!
//! During personalized training each mini-batch first takes one SGD step on
//! `v` using the gradient of `L(v) + (λ/2)‖v − ŵ‖²` with `ŵ` frozen at its
//! pre-step value, then one SGD step on `ŵ` using the gradient of `L(ŵ)`
//! alone, both on the same mini-batch.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::model::{accuracy, gradient, sgd_step, Batch, ModelArch, ParamVector};

/// Client id; client records live in a dense 0..K vector.
pub type ClientId = usize;

/// A client's shards and persistent personalized model.
#[derive(Debug, Clone)]
pub struct ClientRecord {
    pub id: ClientId,
    pub train: Batch,
    pub test: Batch,
    /// Personalized model, carried across rounds.
    pub v: ParamVector,
}

impl ClientRecord {
    /// `|D_k|`, the sample-count weight used by global aggregation.
    pub fn num_train_samples(&self) -> usize {
        self.train.len()
    }
}

/// Local training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Proximal regularization factor λ for the personalized objective.
    pub lambda: f64,
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("lr must be a positive real"));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::config("lambda must be non-negative"));
        }
        Ok(())
    }
}

/// Seeded epoch/mini-batch schedule shared by all local training loops: one
/// shuffled permutation per epoch, chunked by batch size, short final batch
/// included.
fn for_each_batch<F>(
    train: &Batch,
    cfg: &LocalConfig,
    seed: u64,
    mut step: F,
) -> Result<()>
where
    F: FnMut(&Batch) -> Result<()>,
{
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            step(&train.select(chunk))?;
        }
    }
    Ok(())
}

/// Plain local SGD from `start` on the train shard; used by the baseline
/// path, server probes, and root-shard training.
pub fn local_train(
    arch: &ModelArch,
    train: &Batch,
    start: &ParamVector,
    cfg: &LocalConfig,
    seed: u64,
) -> Result<ParamVector> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::config("cannot train on an empty shard"));
    }
    let mut w = start.clone();
    for_each_batch(train, cfg, seed, |mini| {
        let g = gradient(arch, &w, mini)?;
        w = sgd_step(&w, &g, cfg.lr)?;
        Ok(())
    })?;
    if !w.is_finite() {
        return Err(Error::numerical("local training produced non-finite parameters"));
    }
    Ok(w)
}

/// Alternating local update of the personalized model `v_start` and the
/// received customized model `w_hat`.
///
/// Returns `(w_k, v_next)`: the locally updated customized model and the new
/// personalized model. With λ=0 and `v_start == w_hat` the two trajectories
/// coincide with plain local SGD.
pub fn client_update(
    arch: &ModelArch,
    train: &Batch,
    w_hat: &ParamVector,
    v_start: &ParamVector,
    cfg: &LocalConfig,
    seed: u64,
) -> Result<(ParamVector, ParamVector)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::config("cannot train on an empty shard"));
    }
    let mut w = w_hat.clone();
    let mut v = v_start.clone();
    for_each_batch(train, cfg, seed, |mini| {
        // v-step: gradient of L(v) + (λ/2)‖v − w‖² with w frozen pre-step.
        let mut g_v = gradient(arch, &v, mini)?;
        if cfg.lambda > 0.0 {
            g_v = g_v.add_scaled(cfg.lambda, &v.sub(&w));
        }
        v = sgd_step(&v, &g_v, cfg.lr)?;
        // w-step on the task loss alone.
        let g_w = gradient(arch, &w, mini)?;
        w = sgd_step(&w, &g_w, cfg.lr)?;
        Ok(())
    })?;
    if !w.is_finite() || !v.is_finite() {
        return Err(Error::numerical("client update produced non-finite parameters"));
    }
    Ok((w, v))
}

/// The client's uploaded model update: `d_k = w_k − ŵ_k`.
pub fn compute_update(w_k: &ParamVector, w_hat: &ParamVector) -> ParamVector {
    w_k.sub(w_hat)
}

/// Test-shard accuracy of a model for this client.
pub fn evaluate(arch: &ModelArch, client: &ClientRecord, model: &ParamVector) -> Result<f64> {
    accuracy(arch, model, &client.test)
}
