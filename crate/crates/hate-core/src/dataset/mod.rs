//! Transaction ingestion, vocabulary construction, sliding-window unit
//! extraction, instance generation and the time-based train/test split.

mod container;

pub use container::{read_dataset, write_dataset};

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// One transaction as read from an input log: a user, a timestamp and the
/// deduplicated set of item identifiers bought together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTransaction {
    pub user_id: String,
    pub timestamp: i64,
    pub items: Vec<String>,
}

impl RawTransaction {
    /// Builds a transaction, dropping repeated item ids (first occurrence
    /// wins) and rejecting negative timestamps.
    pub fn new(
        user_id: impl Into<String>,
        timestamp: i64,
        items: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        if timestamp < 0 {
            return Err(Error::Config(format!(
                "negative timestamp {timestamp} is not allowed"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        let items: Vec<String> = items.into_iter().filter(|i| seen.insert(i.clone())).collect();
        Ok(RawTransaction {
            user_id: user_id.into(),
            timestamp,
            items,
        })
    }
}

/// Supported input log encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(format!("unknown input format {other:?} (expected jsonl or csv)")),
        }
    }
}

/// Result of [`ingest`]: the parsed transactions plus a counter of records
/// rejected for having an empty item list.
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub transactions: Vec<RawTransaction>,
    pub rejected_empty: u64,
}

#[derive(Deserialize)]
struct JsonRecord {
    user: String,
    ts: i64,
    items: Vec<String>,
}

/// Reads a transaction log. Input order is preserved; records with an empty
/// item list are dropped and counted.
pub fn ingest(path: &Path, format: InputFormat) -> Result<IngestReport> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        InputFormat::Jsonl => ingest_jsonl(path, file),
        InputFormat::Csv => ingest_csv(path, file),
    }
}

fn ingest_jsonl(path: &Path, file: File) -> Result<IngestReport> {
    let reader = BufReader::new(file);
    let mut transactions = Vec::new();
    let mut rejected_empty = 0u64;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if record.items.is_empty() {
            rejected_empty += 1;
            continue;
        }
        let txn = RawTransaction::new(record.user, record.ts, record.items).map_err(|e| {
            Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            }
        })?;
        transactions.push(txn);
    }
    Ok(IngestReport {
        transactions,
        rejected_empty,
    })
}

fn ingest_csv(path: &Path, file: File) -> Result<IngestReport> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut transactions = Vec::new();
    let mut rejected_empty = 0u64;
    for result in reader.records() {
        let record = result.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or_default(),
            message: e.to_string(),
        })?;
        let line_no = record.position().map(|p| p.line() as usize).unwrap_or_default();
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        if record.len() != 3 {
            return Err(parse_err(format!("expected 3 fields user,ts,items, got {}", record.len())));
        }
        let user = record[0].to_string();
        let ts: i64 = record[1]
            .parse()
            .map_err(|e| parse_err(format!("bad timestamp {:?}: {e}", &record[1])))?;
        let items: Vec<String> = record[2]
            .split('|')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if items.is_empty() {
            rejected_empty += 1;
            continue;
        }
        transactions.push(RawTransaction::new(user, ts, items).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(IngestReport {
        transactions,
        rejected_empty,
    })
}

/// Bijective map between item identifier strings and dense indices in
/// `[0, |I|)`. Indices are assigned by descending transaction frequency,
/// ties broken by lexicographic id, so construction is deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    index_to_id: Vec<String>,
    id_to_index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds the vocabulary from transaction-level item counts, keeping
    /// items that occur in at least `min_count` transactions.
    pub fn build(transactions: &[RawTransaction], min_count: usize) -> Result<Self> {
        if min_count < 1 {
            return Err(Error::Config("min_count must be >= 1".into()));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for txn in transactions {
            for item in &txn.items {
                *counts.entry(item.as_str()).or_insert(0) += 1;
            }
        }
        let mut surviving: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        if surviving.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        // Descending frequency, then lexicographic id.
        surviving.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_ids(surviving.into_iter().map(|(id, _)| id.to_string())))
    }

    /// Rebuilds a vocabulary from ids already in index order.
    pub fn from_ids(ids: impl IntoIterator<Item = String>) -> Self {
        let index_to_id: Vec<String> = ids.into_iter().collect();
        let id_to_index = index_to_id
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Vocabulary {
            index_to_id,
            id_to_index,
        }
    }

    pub fn len(&self) -> usize {
        self.index_to_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_id.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<u32> {
        self.id_to_index.get(id).copied()
    }

    pub fn id_of(&self, index: u32) -> Option<&str> {
        self.index_to_id.get(index as usize).map(String::as_str)
    }

    /// Item ids in index order.
    pub fn ids(&self) -> &[String] {
        &self.index_to_id
    }
}

/// A deduplicated, ascending-sorted set of item indices. Sorting fixes the
/// summation order everywhere downstream, which is what makes embeddings
/// bitwise invariant to the enumeration order of the input items.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ItemSet(Vec<u32>);

impl ItemSet {
    pub fn new(items: impl IntoIterator<Item = u32>) -> Self {
        let mut v: Vec<u32> = items.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        ItemSet(v)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, item: u32) -> bool {
        self.0.binary_search(&item).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().copied()
    }

    /// Position of `item` within the sorted set, if present. Attention
    /// weight vectors are aligned to this ordering.
    pub fn position(&self, item: u32) -> Option<usize> {
        self.0.binary_search(&item).ok()
    }
}

/// A full sliding window over one user's history: `window` inter-context
/// transactions (oldest first) followed by the current transaction.
#[derive(Debug, Clone)]
pub struct TransactionUnit {
    pub inter: Vec<RawTransaction>,
    pub current: RawTransaction,
}

/// Cuts one user's time-sorted transaction sequence into units with a
/// stride-1 sliding window of `window + 1` transactions. Users with fewer
/// than `window + 1` transactions yield nothing.
pub fn extract_units(user_transactions: &[RawTransaction], window: usize) -> Vec<TransactionUnit> {
    assert!(window >= 1, "window must be >= 1");
    if user_transactions.len() <= window {
        return Vec::new();
    }
    user_transactions
        .windows(window + 1)
        .map(|w| TransactionUnit {
            inter: w[..window].to_vec(),
            current: w[window].clone(),
        })
        .collect()
}

/// The transactional context an item is predicted from: the other items of
/// the current transaction plus the preceding `window` transactions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Context {
    pub intra: ItemSet,
    pub inter: Vec<ItemSet>,
}

/// One supervised example: a context and the held-out target item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingInstance {
    pub context: Context,
    pub target: u32,
}

/// Per-unit instance generation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenCounters {
    /// Items seen in the unit that are not in the vocabulary.
    pub oov_items: u64,
    /// Instances dropped because their intra context, or one of the inter
    /// transactions, became empty after vocabulary filtering.
    pub dropped_instances: u64,
}

impl GenCounters {
    pub fn merge(&mut self, other: GenCounters) {
        self.oov_items += other.oov_items;
        self.dropped_instances += other.dropped_instances;
    }
}

/// Turns one unit into training instances: each in-vocabulary item of the
/// current transaction becomes the target once, with the remaining items as
/// the intra-transaction context.
pub fn generate_instances(
    unit: &TransactionUnit,
    vocab: &Vocabulary,
) -> (Vec<TrainingInstance>, GenCounters) {
    let mut counters = GenCounters::default();
    let mut map_set = |items: &[String]| -> ItemSet {
        let mut mapped = Vec::with_capacity(items.len());
        for id in items {
            match vocab.index_of(id) {
                Some(idx) => mapped.push(idx),
                None => counters.oov_items += 1,
            }
        }
        ItemSet::new(mapped)
    };

    let inter: Vec<ItemSet> = unit.inter.iter().map(|t| map_set(&t.items)).collect();
    let current = map_set(&unit.current.items);

    let m = current.len();
    if m == 0 {
        return (Vec::new(), counters);
    }
    if inter.iter().any(ItemSet::is_empty) {
        // Every instance of this unit would violate the non-empty inter
        // transaction invariant.
        counters.dropped_instances += m as u64;
        return (Vec::new(), counters);
    }
    if m < 2 {
        // A single-item current transaction leaves no intra context.
        counters.dropped_instances += 1;
        return (Vec::new(), counters);
    }

    let instances = current
        .iter()
        .map(|target| {
            let intra = ItemSet::new(current.iter().filter(|&i| i != target));
            TrainingInstance {
                context: Context {
                    intra,
                    inter: inter.clone(),
                },
                target,
            }
        })
        .collect();
    (instances, counters)
}

/// The prepared dataset: instance lists, the vocabulary they are indexed
/// against, and the preparation parameters needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<TrainingInstance>,
    pub test: Vec<TrainingInstance>,
    pub vocab: Vocabulary,
    pub window: usize,
    pub seed: u64,
    pub stats: PrepStats,
}

/// Corpus statistics gathered during preparation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepStats {
    pub n_transactions: u64,
    pub n_items: u64,
    pub n_train_units: u64,
    pub n_train_instances: u64,
    pub n_test_units: u64,
    pub n_test_instances: u64,
    pub rejected_records: u64,
    pub oov_items: u64,
    pub dropped_instances: u64,
}

/// Options for the full preparation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepOptions {
    pub window: usize,
    pub min_count: usize,
    pub test_fraction: f64,
    pub recent_days: i64,
    pub seed: u64,
}

impl Default for PrepOptions {
    fn default() -> Self {
        PrepOptions {
            window: 2,
            min_count: 1,
            test_fraction: 0.2,
            recent_days: 30,
            seed: 42,
        }
    }
}

impl PrepOptions {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        if self.min_count < 1 {
            return Err(Error::Config("min_count must be >= 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(
                "test_fraction must lie strictly between 0 and 1".into(),
            ));
        }
        if self.recent_days < 1 {
            return Err(Error::Config("recent_days must be >= 1".into()));
        }
        Ok(())
    }
}

/// A unit together with the instances generated from it; input to the split.
#[derive(Debug, Clone)]
pub struct UnitInstances {
    pub current_timestamp: i64,
    pub instances: Vec<TrainingInstance>,
}

/// Marks `test_fraction` of the units whose current transaction falls in the
/// last `recent_days` (anchored at the corpus-wide maximum timestamp) as
/// test, moving all their instances there. Deterministic for a fixed seed.
pub fn split_train_test(
    units: Vec<UnitInstances>,
    max_timestamp: i64,
    test_fraction: f64,
    recent_days: i64,
    seed: u64,
) -> Result<(Vec<TrainingInstance>, Vec<TrainingInstance>, SplitCounts)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(
            "test_fraction must lie strictly between 0 and 1".into(),
        ));
    }
    if recent_days < 1 {
        return Err(Error::Config("recent_days must be >= 1".into()));
    }
    let cutoff = max_timestamp - recent_days * SECONDS_PER_DAY;
    let candidates: Vec<usize> = units
        .iter()
        .enumerate()
        .filter(|(_, u)| u.current_timestamp >= cutoff)
        .map(|(i, _)| i)
        .collect();
    if candidates.is_empty() {
        return Err(Error::NoRecentCandidates { recent_days });
    }

    let n_test = (candidates.len() as f64 * test_fraction).round() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut shuffled = candidates;
    shuffled.shuffle(&mut rng);
    let mut is_test = vec![false; units.len()];
    for &idx in shuffled.iter().take(n_test) {
        is_test[idx] = true;
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut counts = SplitCounts::default();
    for (unit, test_marked) in units.into_iter().zip(is_test) {
        let n = unit.instances.len() as u64;
        if n == 0 {
            continue;
        }
        if test_marked {
            counts.test_units += 1;
            counts.test_instances += n;
            test.extend(unit.instances);
        } else {
            counts.train_units += 1;
            counts.train_instances += n;
            train.extend(unit.instances);
        }
    }
    Ok((train, test, counts))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SplitCounts {
    pub train_units: u64,
    pub train_instances: u64,
    pub test_units: u64,
    pub test_instances: u64,
}

/// Runs the whole preparation pipeline over already-ingested transactions:
/// vocabulary, per-user units, instance generation and the time split.
pub fn prepare(
    transactions: &[RawTransaction],
    rejected_records: u64,
    opts: &PrepOptions,
) -> Result<SplitDataset> {
    opts.validate()?;
    let vocab = Vocabulary::build(transactions, opts.min_count)?;

    // Group per user, ordering ties by input position for determinism.
    let mut per_user: BTreeMap<&str, Vec<&RawTransaction>> = BTreeMap::new();
    for txn in transactions {
        per_user.entry(txn.user_id.as_str()).or_default().push(txn);
    }

    let mut units = Vec::new();
    let mut counters = GenCounters::default();
    for (_, txns) in per_user {
        let mut sorted: Vec<RawTransaction> = txns.into_iter().cloned().collect();
        sorted.sort_by_key(|t| t.timestamp); // stable: input order breaks ties
        for unit in extract_units(&sorted, opts.window) {
            let (instances, c) = generate_instances(&unit, &vocab);
            counters.merge(c);
            units.push(UnitInstances {
                current_timestamp: unit.current.timestamp,
                instances,
            });
        }
    }

    let max_timestamp = transactions
        .iter()
        .map(|t| t.timestamp)
        .max()
        .ok_or_else(|| Error::Config("no transactions in input".into()))?;

    let (train, test, counts) = split_train_test(
        units,
        max_timestamp,
        opts.test_fraction,
        opts.recent_days,
        opts.seed,
    )?;

    let stats = PrepStats {
        n_transactions: transactions.len() as u64,
        n_items: vocab.len() as u64,
        n_train_units: counts.train_units,
        n_train_instances: counts.train_instances,
        n_test_units: counts.test_units,
        n_test_instances: counts.test_instances,
        rejected_records,
        oov_items: counters.oov_items,
        dropped_instances: counters.dropped_instances,
    };

    Ok(SplitDataset {
        train,
        test,
        vocab,
        window: opts.window,
        seed: opts.seed,
        stats,
    })
}
