//! The attentive transaction embedding model and its forward pass.
//!
//! Items are embedded as columns of an input matrix. A transaction is
//! embedded as a softmax-attention-weighted sum of its item embeddings; the
//! intra-transaction context embedding is built the same way from the
//! already-chosen items of the current transaction. The inter-transaction
//! context embedding weights the recent transactions' embeddings by a
//! bilinear attention against the intra-context embedding. Scores for
//! candidate items combine both context embeddings through two output
//! matrices.

use ndarray::{Array1, Array2, ArrayView1};
use rand::distributions::Uniform;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Context, ItemSet};
use crate::error::{Error, Result};

/// Which parts of the architecture are active.
///
/// `Hate` is the full hierarchical attentive model. `Ate` drops the
/// inter-transaction context entirely. `Hte` keeps the inter context but
/// replaces the inter-transaction attention with a learned linear map over
/// the concatenated transaction embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Hate,
    Ate,
    Hte,
}

impl Variant {
    pub fn code(self) -> u8 {
        match self {
            Variant::Hate => 0,
            Variant::Ate => 1,
            Variant::Hte => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Variant> {
        match code {
            0 => Some(Variant::Hate),
            1 => Some(Variant::Ate),
            2 => Some(Variant::Hte),
            _ => None,
        }
    }

    pub fn uses_inter_context(self) -> bool {
        !matches!(self, Variant::Ate)
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "hate" => Ok(Variant::Hate),
            "ate" => Ok(Variant::Ate),
            "hte" => Ok(Variant::Hte),
            other => Err(format!("unknown variant {other:?} (expected hate, ate or hte)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Hate => "hate",
            Variant::Ate => "ate",
            Variant::Hte => "hte",
        };
        f.write_str(s)
    }
}

/// The learnable parameter set.
///
/// Shapes: `w1` is `K x |I|` with item embeddings as columns, `w_a` is the
/// item-level attention query of length `K`, `w_beta` the `K x K` bilinear
/// interaction of the transaction-level attention, `w2` and `w3` the
/// `|I| x K` output weights applied to the inter- and intra-context
/// embeddings, and `w_fc` (`K x window*K`, `Hte` only) the linear map that
/// stands in for the inter attention.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    pub k: usize,
    pub n_items: usize,
    pub window: usize,
    pub w1: Array2<f64>,
    pub w_a: Array1<f64>,
    pub w_beta: Array2<f64>,
    pub w2: Array2<f64>,
    pub w3: Array2<f64>,
    pub w_fc: Option<Array2<f64>>,
}

impl ModelParams {
    /// Seeded uniform initialization in `[-0.5/K, 0.5/K]`. Matrices are
    /// filled in a fixed order so a given generator state always produces
    /// the same parameters.
    pub fn init<R: Rng>(
        variant: Variant,
        k: usize,
        n_items: usize,
        window: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if k < 1 {
            return Err(Error::Config("embedding dimension must be >= 1".into()));
        }
        if n_items < 1 {
            return Err(Error::Config("vocabulary must be non-empty".into()));
        }
        if window < 1 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        let half = 0.5 / k as f64;
        let dist = Uniform::new_inclusive(-half, half);
        let fill2 = |rows: usize, cols: usize, rng: &mut R| {
            Array2::from_shape_fn((rows, cols), |_| rng.sample(dist))
        };
        let w1 = fill2(k, n_items, rng);
        let w_a = Array1::from_shape_fn(k, |_| rng.sample(dist));
        let w_beta = fill2(k, k, rng);
        let w2 = fill2(n_items, k, rng);
        let w3 = fill2(n_items, k, rng);
        let w_fc = match variant {
            Variant::Hte => Some(fill2(k, window * k, rng)),
            _ => None,
        };
        Ok(ModelParams {
            variant,
            k,
            n_items,
            window,
            w1,
            w_a,
            w_beta,
            w2,
            w3,
            w_fc,
        })
    }

    /// Checks shape consistency and finiteness of every entry.
    pub fn validate(&self) -> Result<()> {
        let (k, n) = (self.k, self.n_items);
        if self.w1.dim() != (k, n)
            || self.w_a.len() != k
            || self.w_beta.dim() != (k, k)
            || self.w2.dim() != (n, k)
            || self.w3.dim() != (n, k)
        {
            return Err(Error::Config("parameter shapes are inconsistent".into()));
        }
        match (&self.w_fc, self.variant) {
            (Some(fc), Variant::Hte) => {
                if fc.dim() != (k, self.window * k) {
                    return Err(Error::Config("w_fc shape is inconsistent".into()));
                }
            }
            (None, Variant::Hte) => {
                return Err(Error::Config("hte variant requires w_fc".into()));
            }
            (Some(_), _) => {
                return Err(Error::Config("w_fc is only valid for the hte variant".into()));
            }
            (None, _) => {}
        }
        let finite = self.w1.iter().all(|v| v.is_finite())
            && self.w_a.iter().all(|v| v.is_finite())
            && self.w_beta.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.w3.iter().all(|v| v.is_finite())
            && self.w_fc.as_ref().is_none_or(|fc| fc.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite {
                context: "model parameters".into(),
            });
        }
        Ok(())
    }

    /// Validates a context against this parameter set and variant.
    pub fn check_context(&self, ctx: &Context) -> Result<()> {
        if ctx.intra.is_empty() {
            return Err(Error::EmptyContext("intra-transaction context".into()));
        }
        self.check_indices(ctx.intra.iter())?;
        if self.variant.uses_inter_context() {
            if ctx.inter.len() != self.window {
                return Err(Error::InterWindowMismatch {
                    got: ctx.inter.len(),
                    expected: self.window,
                });
            }
            for (x, set) in ctx.inter.iter().enumerate() {
                if set.is_empty() {
                    return Err(Error::EmptyContext(format!("inter transaction {x}")));
                }
                self.check_indices(set.iter())?;
            }
        }
        Ok(())
    }

    fn check_indices(&self, items: impl Iterator<Item = u32>) -> Result<()> {
        for idx in items {
            if idx as usize >= self.n_items {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    n_items: self.n_items,
                });
            }
        }
        Ok(())
    }
}

/// Softmax with max-subtraction; finite for inputs with magnitude far past
/// the bare `exp` overflow point.
pub fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    debug_assert!(!logits.is_empty());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// The embedding of one item: column `l` of the input matrix.
pub fn item_embedding(params: &ModelParams, l: u32) -> Result<ArrayView1<'_, f64>> {
    if l as usize >= params.n_items {
        return Err(Error::IndexOutOfRange {
            index: l,
            n_items: params.n_items,
        });
    }
    Ok(params.w1.column(l as usize))
}

/// Item-level attention: softmax over `w_a . h_l` for each embedding.
pub fn intra_attention(embeddings: &[ArrayView1<'_, f64>], w_a: &ArrayView1<'_, f64>) -> Array1<f64> {
    let logits: Vec<f64> = embeddings.iter().map(|h| w_a.dot(h)).collect();
    Array1::from_vec(stable_softmax(&logits))
}

fn attention_over_items(params: &ModelParams, items: &ItemSet) -> Result<(Array1<f64>, Array1<f64>)> {
    if items.is_empty() {
        return Err(Error::EmptyContext("transaction".into()));
    }
    let mut logits = Vec::with_capacity(items.len());
    for l in items.iter() {
        logits.push(params.w_a.dot(&item_embedding(params, l)?));
    }
    let alpha = Array1::from_vec(stable_softmax(&logits));
    let mut e_t = Array1::zeros(params.k);
    for (l, &a) in items.iter().zip(alpha.iter()) {
        e_t.scaled_add(a, &params.w1.column(l as usize));
    }
    Ok((e_t, alpha))
}

/// Attention-weighted sum of a transaction's item embeddings.
pub fn transaction_embedding(
    params: &ModelParams,
    items: &ItemSet,
) -> Result<(Array1<f64>, Array1<f64>)> {
    attention_over_items(params, items)
}

/// Intra-transaction context embedding: same computation as
/// [`transaction_embedding`], applied to the chosen items of the current
/// transaction with the shared attention query.
pub fn intra_context_embedding(params: &ModelParams, c_ia: &ItemSet) -> Result<Array1<f64>> {
    attention_over_items(params, c_ia).map(|(e, _)| e)
}

/// Transaction-level attention: softmax over the bilinear interaction of
/// each transaction embedding with the intra-context embedding.
pub fn inter_attention(
    transaction_embeddings: &[Array1<f64>],
    w_beta: &Array2<f64>,
    e_ia: &Array1<f64>,
) -> Array1<f64> {
    let query = w_beta.dot(e_ia);
    let logits: Vec<f64> = transaction_embeddings.iter().map(|e_t| e_t.dot(&query)).collect();
    Array1::from_vec(stable_softmax(&logits))
}

/// Combines the inter-context transaction embeddings into one vector.
/// Returns the attention weights for the `Hate` variant; the `Hte` linear
/// map has no weights to report.
pub fn inter_context_embedding(
    params: &ModelParams,
    transaction_embeddings: &[Array1<f64>],
    e_ia: &Array1<f64>,
) -> Result<(Array1<f64>, Option<Array1<f64>>)> {
    match params.variant {
        Variant::Ate => Err(Error::Config(
            "the ate variant has no inter-transaction context embedding".into(),
        )),
        Variant::Hate => {
            let beta = inter_attention(transaction_embeddings, &params.w_beta, e_ia);
            let mut e_ie = Array1::zeros(params.k);
            for (e_t, &b) in transaction_embeddings.iter().zip(beta.iter()) {
                e_ie.scaled_add(b, e_t);
            }
            Ok((e_ie, Some(beta)))
        }
        Variant::Hte => {
            let w_fc = params
                .w_fc
                .as_ref()
                .ok_or_else(|| Error::Config("hte variant requires w_fc".into()))?;
            let k = params.k;
            let mut concat = Array1::zeros(transaction_embeddings.len() * k);
            for (x, e_t) in transaction_embeddings.iter().enumerate() {
                concat.slice_mut(ndarray::s![x * k..(x + 1) * k]).assign(e_t);
            }
            Ok((w_fc.dot(&concat), None))
        }
    }
}

/// Relevance score of item `s` under the two context embeddings.
pub fn score(params: &ModelParams, s: u32, e_ie: &Array1<f64>, e_ia: &Array1<f64>) -> Result<f64> {
    if s as usize >= params.n_items {
        return Err(Error::IndexOutOfRange {
            index: s,
            n_items: params.n_items,
        });
    }
    Ok(params.w2.row(s as usize).dot(e_ie) + params.w3.row(s as usize).dot(e_ia))
}

/// Which item scores a forward pass should produce.
#[derive(Debug, Clone, Copy)]
pub enum ScoreRequest<'a> {
    All,
    /// Scores for exactly these items, in order; duplicates are allowed and
    /// scored per occurrence.
    Subset(&'a [u32]),
}

/// Scores produced by [`forward`], aligned with the request.
#[derive(Debug, Clone)]
pub enum Scores {
    All(Vec<f64>),
    Subset(Vec<f64>),
}

impl Scores {
    pub fn as_all(&self) -> Option<&[f64]> {
        match self {
            Scores::All(v) => Some(v),
            Scores::Subset(_) => None,
        }
    }

    pub fn as_subset(&self) -> Option<&[f64]> {
        match self {
            Scores::Subset(v) => Some(v),
            Scores::All(_) => None,
        }
    }
}

/// Every intermediate of one forward pass, retained for backpropagation.
/// Attention weight vectors are aligned with the ascending item order of the
/// originating [`ItemSet`]s.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub intra_alpha: Array1<f64>,
    pub e_ia: Array1<f64>,
    /// Per inter transaction, oldest first; empty for `Ate`.
    pub inter_alpha: Vec<Array1<f64>>,
    pub transaction_embeddings: Vec<Array1<f64>>,
    /// Inter attention weights; `None` for `Ate` and `Hte`.
    pub beta: Option<Array1<f64>>,
    /// Zero vector for `Ate`.
    pub e_ie: Array1<f64>,
    pub scores: Scores,
}

/// Full forward pass over one context: item embeddings, intra-context
/// embedding, per-transaction embeddings, inter-context embedding, scores.
pub fn forward(params: &ModelParams, ctx: &Context, request: ScoreRequest<'_>) -> Result<ForwardTrace> {
    params.check_context(ctx)?;

    let (e_ia, intra_alpha) = attention_over_items(params, &ctx.intra)?;

    let (inter_alpha, transaction_embeddings, beta, e_ie) = if params.variant.uses_inter_context() {
        let mut alphas = Vec::with_capacity(ctx.inter.len());
        let mut embeds = Vec::with_capacity(ctx.inter.len());
        for set in &ctx.inter {
            let (e_t, alpha) = attention_over_items(params, set)?;
            alphas.push(alpha);
            embeds.push(e_t);
        }
        let (e_ie, beta) = inter_context_embedding(params, &embeds, &e_ia)?;
        (alphas, embeds, beta, e_ie)
    } else {
        (Vec::new(), Vec::new(), None, Array1::zeros(params.k))
    };

    let scores = match request {
        ScoreRequest::All => {
            let mut all = params.w3.dot(&e_ia);
            if params.variant.uses_inter_context() {
                all += &params.w2.dot(&e_ie);
            }
            Scores::All(all.to_vec())
        }
        ScoreRequest::Subset(items) => {
            let mut subset = Vec::with_capacity(items.len());
            for &s in items {
                subset.push(score(params, s, &e_ie, &e_ia)?);
            }
            Scores::Subset(subset)
        }
    };

    Ok(ForwardTrace {
        intra_alpha,
        e_ia,
        inter_alpha,
        transaction_embeddings,
        beta,
        e_ie,
        scores,
    })
}

/// Conditional probability over all items: stabilized softmax of the full
/// score vector.
pub fn predict_distribution(params: &ModelParams, ctx: &Context) -> Result<Vec<f64>> {
    let trace = forward(params, ctx, ScoreRequest::All)?;
    let scores = trace.scores.as_all().expect("requested all scores");
    Ok(stable_softmax(scores))
}
