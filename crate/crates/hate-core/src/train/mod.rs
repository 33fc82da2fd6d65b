//! Training: noise-contrastive estimation with analytic gradients through
//! both attention levels, Adagrad updates, and checkpoint persistence.

mod adagrad;
mod checkpoint;
mod noise;

pub use adagrad::{adagrad_step, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use noise::{build_noise_distribution, NoiseDistribution};

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{SplitDataset, TrainingInstance};
use crate::error::{Error, Result};
use crate::model::{forward, ForwardTrace, ModelParams, ScoreRequest, Variant};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Noise samples drawn per instance.
    pub nce_k: usize,
    /// Exponent applied to the smoothed target counts of the noise
    /// distribution.
    pub noise_power: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Embedding dimension K.
    pub dim: usize,
    pub adagrad_epsilon: f64,
    /// Average the batch gradient instead of summing it.
    pub batch_mean: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 30,
            learning_rate: 0.5,
            nce_k: 10,
            noise_power: 0.75,
            seed: 42,
            variant: Variant::Hate,
            dim: 50,
            adagrad_epsilon: 1e-8,
            batch_mean: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.nce_k < 1 {
            return Err(Error::Config("nce_k must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.dim < 1 {
            return Err(Error::Config("embedding dimension must be >= 1".into()));
        }
        if !self.noise_power.is_finite() {
            return Err(Error::Config("noise_power must be finite".into()));
        }
        if !(self.adagrad_epsilon >= 0.0 && self.adagrad_epsilon.is_finite()) {
            return Err(Error::Config("adagrad_epsilon must be non-negative".into()));
        }
        Ok(())
    }
}

/// Gradient of the NCE loss over the parameter slices an instance touches:
/// columns of the item embedding matrix, rows of the output matrices, and
/// the dense attention parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    k: usize,
    pub w1_cols: BTreeMap<u32, Array1<f64>>,
    pub w_a: Array1<f64>,
    pub w_beta: Option<Array2<f64>>,
    pub w2_rows: BTreeMap<u32, Array1<f64>>,
    pub w3_rows: BTreeMap<u32, Array1<f64>>,
    pub w_fc: Option<Array2<f64>>,
}

impl Gradients {
    pub fn new(k: usize) -> Self {
        Gradients {
            k,
            w1_cols: BTreeMap::new(),
            w_a: Array1::zeros(k),
            w_beta: None,
            w2_rows: BTreeMap::new(),
            w3_rows: BTreeMap::new(),
            w_fc: None,
        }
    }

    /// Accumulates another gradient into this one.
    pub fn merge(&mut self, other: &Gradients) {
        debug_assert_eq!(self.k, other.k);
        for (&col, g) in &other.w1_cols {
            *self
                .w1_cols
                .entry(col)
                .or_insert_with(|| Array1::zeros(self.k)) += g;
        }
        self.w_a += &other.w_a;
        if let Some(gb) = &other.w_beta {
            match &mut self.w_beta {
                Some(acc) => *acc += gb,
                None => self.w_beta = Some(gb.clone()),
            }
        }
        for (&row, g) in &other.w2_rows {
            *self
                .w2_rows
                .entry(row)
                .or_insert_with(|| Array1::zeros(self.k)) += g;
        }
        for (&row, g) in &other.w3_rows {
            *self
                .w3_rows
                .entry(row)
                .or_insert_with(|| Array1::zeros(self.k)) += g;
        }
        if let Some(gfc) = &other.w_fc {
            match &mut self.w_fc {
                Some(acc) => *acc += gfc,
                None => self.w_fc = Some(gfc.clone()),
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.w1_cols.values_mut() {
            *g *= factor;
        }
        self.w_a *= factor;
        if let Some(gb) = &mut self.w_beta {
            *gb *= factor;
        }
        for g in self.w2_rows.values_mut() {
            *g *= factor;
        }
        for g in self.w3_rows.values_mut() {
            *g *= factor;
        }
        if let Some(gfc) = &mut self.w_fc {
            *gfc *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1_cols.values().all(|g| g.iter().all(|v| v.is_finite()))
            && self.w_a.iter().all(|v| v.is_finite())
            && self
                .w_beta
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
            && self.w2_rows.values().all(|g| g.iter().all(|v| v.is_finite()))
            && self.w3_rows.values().all(|g| g.iter().all(|v| v.is_finite()))
            && self
                .w_fc
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` computed as `-softplus(-x)`; exact in the tails.
#[inline]
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
}

/// Logit offsets of the NCE binary classifier, one per occurrence in
/// `[target, noise...]` order: `delta_i = S_i - ln(k * p_noise(i))` with the
/// partition function fixed at 1.
fn nce_deltas(
    scores: &[f64],
    target: u32,
    noise_samples: &[u32],
    noise: &NoiseDistribution,
) -> Result<Vec<f64>> {
    if scores.len() != noise_samples.len() + 1 {
        return Err(Error::Config(
            "trace does not match the target and noise samples".into(),
        ));
    }
    let kf = noise_samples.len() as f64;
    let mut deltas = Vec::with_capacity(scores.len());
    deltas.push(scores[0] - (kf * noise.prob(target)).ln());
    for (&s, &item) in scores[1..].iter().zip(noise_samples) {
        deltas.push(s - (kf * noise.prob(item)).ln());
    }
    Ok(deltas)
}

fn nce_loss_from_trace(
    trace: &ForwardTrace,
    target: u32,
    noise_samples: &[u32],
    noise: &NoiseDistribution,
) -> Result<f64> {
    let scores = trace
        .scores
        .as_subset()
        .ok_or_else(|| Error::Config("nce loss needs subset scores".into()))?;
    let deltas = nce_deltas(scores, target, noise_samples, noise)?;
    let mut loss = -log_sigmoid(deltas[0]);
    for &d in &deltas[1..] {
        loss -= log_sigmoid(-d);
    }
    Ok(loss)
}

fn forward_sampled(
    params: &ModelParams,
    instance: &TrainingInstance,
    noise_samples: &[u32],
) -> Result<ForwardTrace> {
    let mut requested = Vec::with_capacity(1 + noise_samples.len());
    requested.push(instance.target);
    requested.extend_from_slice(noise_samples);
    forward(params, &instance.context, ScoreRequest::Subset(&requested))
}

/// The NCE objective for one instance: a binary classifier separating the
/// observed target from `noise_samples`, scored only over those items.
pub fn nce_loss(
    params: &ModelParams,
    instance: &TrainingInstance,
    noise_samples: &[u32],
    noise: &NoiseDistribution,
) -> Result<f64> {
    if noise_samples.is_empty() {
        return Err(Error::Config("nce needs at least one noise sample".into()));
    }
    let trace = forward_sampled(params, instance, noise_samples)?;
    nce_loss_from_trace(&trace, instance.target, noise_samples, noise)
}

/// Analytic gradient of [`nce_loss`] with respect to every parameter the
/// instance touches, chained through both attention softmaxes and through
/// the intra-context embedding into the inter attention.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    instance: &TrainingInstance,
    noise_samples: &[u32],
    noise: &NoiseDistribution,
) -> Result<Gradients> {
    let k = params.k;
    let scores = trace
        .scores
        .as_subset()
        .ok_or_else(|| Error::Config("backward needs a subset-scored trace".into()))?;
    let deltas = nce_deltas(scores, instance.target, noise_samples, noise)?;

    // dL/dS per occurrence: sigma(delta) - 1 for the target, sigma(delta)
    // for each noise sample.
    let mut occurrence_grads: Vec<(u32, f64)> = Vec::with_capacity(deltas.len());
    occurrence_grads.push((instance.target, sigmoid(deltas[0]) - 1.0));
    for (&item, &d) in noise_samples.iter().zip(&deltas[1..]) {
        occurrence_grads.push((item, sigmoid(d)));
    }

    let mut grads = Gradients::new(k);
    let uses_inter = params.variant.uses_inter_context();

    // Output layer: rows of w2/w3 plus the upstream gradients of both
    // context embeddings.
    let mut d_e_ie = Array1::zeros(k);
    let mut d_e_ia = Array1::zeros(k);
    for &(item, g) in &occurrence_grads {
        let row = item as usize;
        if uses_inter {
            grads
                .w2_rows
                .entry(item)
                .or_insert_with(|| Array1::zeros(k))
                .scaled_add(g, &trace.e_ie);
            d_e_ie.scaled_add(g, &params.w2.row(row));
        }
        grads
            .w3_rows
            .entry(item)
            .or_insert_with(|| Array1::zeros(k))
            .scaled_add(g, &trace.e_ia);
        d_e_ia.scaled_add(g, &params.w3.row(row));
    }

    // Inter-context combination: gradients of the transaction embeddings,
    // of the combination parameters, and the indirect path back into e_ia.
    let mut d_transactions: Vec<Array1<f64>> = Vec::new();
    match params.variant {
        Variant::Ate => {}
        Variant::Hate => {
            let beta = trace.beta.as_ref().expect("hate trace carries beta");
            let e_ts = &trace.transaction_embeddings;
            let per_txn: Vec<f64> = e_ts.iter().map(|e_t| e_t.dot(&d_e_ie)).collect();
            let expected: f64 = beta.iter().zip(&per_txn).map(|(b, v)| b * v).sum();
            // Softmax Jacobian of the transaction-level attention.
            let d_logits: Vec<f64> = beta
                .iter()
                .zip(&per_txn)
                .map(|(b, v)| b * (v - expected))
                .collect();
            let query = params.w_beta.dot(&trace.e_ia);
            let mut w_beta_grad = Array2::zeros((k, k));
            for (x, e_t) in e_ts.iter().enumerate() {
                let r = d_logits[x];
                if r != 0.0 {
                    for (i, &ei) in e_t.iter().enumerate() {
                        for (j, &aj) in trace.e_ia.iter().enumerate() {
                            w_beta_grad[[i, j]] += r * ei * aj;
                        }
                    }
                }
                let mut d_t = &d_e_ie * beta[x];
                d_t.scaled_add(r, &query);
                d_transactions.push(d_t);
                // rho_x = e_t' W_beta e_ia also feeds e_ia.
                d_e_ia.scaled_add(r, &params.w_beta.t().dot(e_t));
            }
            grads.w_beta = Some(w_beta_grad);
        }
        Variant::Hte => {
            let w_fc = params.w_fc.as_ref().expect("hte params carry w_fc");
            let e_ts = &trace.transaction_embeddings;
            let mut fc_grad = Array2::zeros((k, e_ts.len() * k));
            for (i, &ui) in d_e_ie.iter().enumerate() {
                if ui == 0.0 {
                    continue;
                }
                for (x, e_t) in e_ts.iter().enumerate() {
                    for (j, &ej) in e_t.iter().enumerate() {
                        fc_grad[[i, x * k + j]] += ui * ej;
                    }
                }
            }
            grads.w_fc = Some(fc_grad);
            for x in 0..e_ts.len() {
                let block = w_fc.slice(s![.., x * k..(x + 1) * k]);
                d_transactions.push(block.t().dot(&d_e_ie));
            }
        }
    }

    for (x, d_t) in d_transactions.iter().enumerate() {
        let items = &instance.context.inter[x];
        chain_item_attention(params, items, &trace.inter_alpha[x], d_t, &mut grads);
    }
    chain_item_attention(
        params,
        &instance.context.intra,
        &trace.intra_alpha,
        &d_e_ia,
        &mut grads,
    );

    Ok(grads)
}

/// Backpropagates the gradient of an attention-weighted item sum into the
/// attention query and the item embedding columns.
fn chain_item_attention(
    params: &ModelParams,
    items: &crate::dataset::ItemSet,
    alpha: &Array1<f64>,
    d_sum: &Array1<f64>,
    grads: &mut Gradients,
) {
    debug_assert_eq!(items.len(), alpha.len());
    let per_item: Vec<f64> = items
        .iter()
        .map(|l| d_sum.dot(&params.w1.column(l as usize)))
        .collect();
    let expected: f64 = alpha.iter().zip(&per_item).map(|(a, v)| a * v).sum();
    for ((l, &a), &c) in items.iter().zip(alpha.iter()).zip(&per_item) {
        let d_logit = a * (c - expected);
        grads.w_a.scaled_add(d_logit, &params.w1.column(l as usize));
        let col_grad = grads
            .w1_cols
            .entry(l)
            .or_insert_with(|| Array1::zeros(params.k));
        col_grad.scaled_add(a, d_sum);
        col_grad.scaled_add(d_logit, &params.w_a);
    }
}

pub(crate) fn loss_and_gradients(
    params: &ModelParams,
    instance: &TrainingInstance,
    noise_samples: &[u32],
    noise: &NoiseDistribution,
) -> Result<(f64, Gradients)> {
    let trace = forward_sampled(params, instance, noise_samples)?;
    let loss = nce_loss_from_trace(&trace, instance.target, noise_samples, noise)?;
    let grads = backward(params, &trace, instance, noise_samples, noise)?;
    Ok((loss, grads))
}

/// Exact negative log-likelihood of the target under the full softmax.
/// Enumerates every item, so it is a test oracle rather than a training
/// path.
pub fn full_softmax_loss(params: &ModelParams, instance: &TrainingInstance) -> Result<f64> {
    if instance.target as usize >= params.n_items {
        return Err(Error::IndexOutOfRange {
            index: instance.target,
            n_items: params.n_items,
        });
    }
    let trace = forward(params, &instance.context, ScoreRequest::All)?;
    let scores = trace.scores.as_all().expect("requested all scores");
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok(log_z - scores[instance.target as usize])
}

/// One line of the per-epoch loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

/// Trains a fresh model on the dataset's training split.
///
/// Each epoch shuffles the instances with the run's seeded generator, draws
/// fresh noise samples sequentially from the same stream, and applies one
/// Adagrad step per batch. Per-instance passes inside a batch may run in
/// parallel; gradients are reduced in instance order, so the result does not
/// depend on the worker count.
pub fn train(dataset: &SplitDataset, config: &TrainConfig) -> Result<(Checkpoint, Vec<EpochLoss>)> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let n_items = dataset.vocab.len();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(
        config.variant,
        config.dim,
        n_items,
        dataset.window,
        &mut rng,
    )?;
    let mut optimizer = OptimizerState::new(&params);
    let noise = build_noise_distribution(&dataset.train, n_items, config.noise_power)?;

    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let draws: Vec<Vec<u32>> = batch
                .iter()
                .map(|&i| {
                    let target = dataset.train[i].target;
                    (0..config.nce_k)
                        .map(|_| noise.sample_avoiding(&mut rng, target))
                        .collect()
                })
                .collect();

            let results: Result<Vec<(f64, Gradients)>> = batch
                .par_iter()
                .zip(draws.par_iter())
                .map(|(&i, noise_samples)| {
                    loss_and_gradients(&params, &dataset.train[i], noise_samples, &noise)
                })
                .collect();
            let results = results?;

            let mut batch_grad = Gradients::new(params.k);
            for (pos, (loss, grad)) in results.iter().enumerate() {
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("loss at train instance {}", batch[pos]),
                    });
                }
                epoch_loss += loss;
                batch_grad.merge(grad);
            }
            if config.batch_mean {
                batch_grad.scale(1.0 / batch.len() as f64);
            }
            adagrad_step(
                &mut params,
                &mut optimizer,
                &batch_grad,
                config.learning_rate,
                config.adagrad_epsilon,
            )?;
        }
        log.push(EpochLoss {
            epoch,
            mean_loss: epoch_loss / dataset.train.len() as f64,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }

    let checkpoint = Checkpoint {
        params,
        optimizer,
        vocab: dataset.vocab.clone(),
        epoch: config.epochs as u64,
        rng_seed: rng.get_seed(),
        rng_word_pos: rng.get_word_pos(),
        config: config.clone(),
    };
    Ok((checkpoint, log))
}

#[cfg(test)]
mod tests;
