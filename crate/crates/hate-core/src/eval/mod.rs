//! Ranking evaluation: full-vocabulary ranking per test instance, REC@K and
//! MRR aggregation, and the inter-transaction window comparison runner.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{prepare, PrepOptions, RawTransaction, TrainingInstance};
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams, ScoreRequest, Variant};
use crate::train::{train, Checkpoint, TrainConfig};

/// All items ordered by descending score (ties broken by ascending item
/// index) together with the 1-based rank of the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub order: Vec<u32>,
    pub target: u32,
    pub rank_of_target: usize,
}

/// Sorts item indices by score, descending, with the deterministic
/// ascending-index tie-break. Adding a constant to every score leaves the
/// order unchanged.
pub fn rank_order(scores: &[f64]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..scores.len() as u32).collect();
    order.sort_by(|&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(a.cmp(&b))
    });
    order
}

/// Scores every item for the instance's context and ranks them.
pub fn rank_items(params: &ModelParams, instance: &TrainingInstance) -> Result<RankedList> {
    if instance.target as usize >= params.n_items {
        return Err(Error::IndexOutOfRange {
            index: instance.target,
            n_items: params.n_items,
        });
    }
    let trace = forward(params, &instance.context, ScoreRequest::All)?;
    let scores = trace.scores.as_all().expect("requested all scores");
    let order = rank_order(scores);
    let rank_of_target = order
        .iter()
        .position(|&i| i == instance.target)
        .expect("target is in the permutation")
        + 1;
    Ok(RankedList {
        order,
        target: instance.target,
        rank_of_target,
    })
}

/// Fraction of lists whose target sits within the top `k`.
pub fn rec_at_k(lists: &[RankedList], k: usize) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::Config("rec_at_k over an empty list set".into()));
    }
    if k < 1 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let hits = lists.iter().filter(|l| l.rank_of_target <= k).count();
    Ok(hits as f64 / lists.len() as f64)
}

/// Mean reciprocal rank of the target.
pub fn mrr(lists: &[RankedList]) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::Config("mrr over an empty list set".into()));
    }
    let sum: f64 = lists.iter().map(|l| 1.0 / l.rank_of_target as f64).sum();
    Ok(sum / lists.len() as f64)
}

/// Aggregated ranking metrics over one test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `(K, REC@K)` pairs in the requested order.
    pub rec_at_k: Vec<(usize, f64)>,
    pub mrr: f64,
    pub n_instances: usize,
    /// Test instances that could not be ranked against the checkpoint.
    pub dropped: usize,
}

/// Ranks every test instance under the checkpoint's parameters and
/// aggregates REC@K for each requested `k` plus MRR. The dataset's
/// vocabulary must be identical to the checkpoint's.
pub fn evaluate(
    checkpoint: &Checkpoint,
    test: &[TrainingInstance],
    test_vocab: &crate::dataset::Vocabulary,
    ks: &[usize],
) -> Result<EvalReport> {
    if checkpoint.vocab != *test_vocab {
        return Err(Error::VocabMismatch);
    }
    evaluate_instances(&checkpoint.params, test, ks)
}

/// [`evaluate`] without the vocabulary identity check, for callers that
/// built the instances against the model's own vocabulary.
pub fn evaluate_instances(
    params: &ModelParams,
    test: &[TrainingInstance],
    ks: &[usize],
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Config("test split is empty".into()));
    }
    for &k in ks {
        if k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
    }
    let ranked: Vec<Option<RankedList>> = test
        .par_iter()
        .map(|instance| rank_items(params, instance).ok())
        .collect();
    let dropped = ranked.iter().filter(|r| r.is_none()).count();
    let lists: Vec<RankedList> = ranked.into_iter().flatten().collect();
    if lists.is_empty() {
        return Err(Error::Config(
            "no test instance could be ranked against this checkpoint".into(),
        ));
    }
    let rec = ks
        .iter()
        .map(|&k| rec_at_k(&lists, k).map(|r| (k, r)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        rec_at_k: rec,
        mrr: mrr(&lists)?,
        n_instances: lists.len(),
        dropped,
    })
}

/// One row of a window comparison: `report` is `None` when the corpus could
/// not support this window width.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    pub variant: Variant,
    pub window: usize,
    pub report: Option<EvalReport>,
}

/// Re-prepares the corpus at each window width, trains each variant per the
/// config, and evaluates it, producing one row per `(variant, window)`.
pub fn compare_windows(
    transactions: &[RawTransaction],
    windows: &[usize],
    variants: &[Variant],
    prep: &PrepOptions,
    config: &TrainConfig,
    ks: &[usize],
) -> Result<Vec<WindowRow>> {
    if windows.is_empty() {
        return Err(Error::Config("no window widths requested".into()));
    }
    if windows.iter().any(|&w| w < 1) {
        return Err(Error::Config(
            "window widths must be >= 1 (the ate variant covers the no-inter case)".into(),
        ));
    }
    let mut rows = Vec::with_capacity(windows.len() * variants.len());
    for &window in windows {
        let prep_at = PrepOptions { window, ..*prep };
        let dataset = match prepare(transactions, 0, &prep_at) {
            Ok(ds) if !ds.train.is_empty() && !ds.test.is_empty() => Some(ds),
            Ok(_) => None,
            Err(Error::NoRecentCandidates { .. }) | Err(Error::EmptyVocabulary) => None,
            Err(e) => return Err(e),
        };
        for &variant in variants {
            let report = match &dataset {
                None => None,
                Some(ds) => {
                    let cfg = TrainConfig {
                        variant,
                        ..config.clone()
                    };
                    let (ckpt, _) = train(ds, &cfg)?;
                    Some(evaluate(&ckpt, &ds.test, &ds.vocab, ks)?)
                }
            };
            rows.push(WindowRow {
                variant,
                window,
                report,
            });
        }
    }
    Ok(rows)
}
