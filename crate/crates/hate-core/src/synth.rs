//! Synthetic transaction corpora.
//!
//! Besides a generic toy corpus, this module generates planted-signal data:
//! corpora where the target item is a known deterministic function of a
//! specific context item, so that a model's ability to pick up intra- or
//! inter-transaction dependencies can be verified at desk scale.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dataset::{RawTransaction, SECONDS_PER_DAY};
use crate::error::{Error, Result};

/// Item id of the `i`-th signal (or determinant) item.
pub fn signal_id(i: usize) -> String {
    format!("sig{i:02}")
}

/// Item id of the target paired with the `i`-th signal item.
pub fn target_id(i: usize) -> String {
    format!("tgt{i:02}")
}

/// Constant second item of every planted current transaction.
pub const MARKER_ID: &str = "mrk";

fn filler_id(i: usize) -> String {
    format!("fil{i:02}")
}

/// Parses the signal index out of a [`target_id`].
pub fn parse_target_index(id: &str) -> Option<usize> {
    id.strip_prefix("tgt").and_then(|s| s.parse().ok())
}

/// Parses the signal index out of a [`signal_id`].
pub fn parse_signal_index(id: &str) -> Option<usize> {
    id.strip_prefix("sig").and_then(|s| s.parse().ok())
}

const N_SIGNALS: usize = 8;

fn timestamp(day: i64, user: usize) -> i64 {
    day * SECONDS_PER_DAY + (user % 1000) as i64
}

/// Corpus with a planted inter-transaction dependency.
///
/// Every user has `lag + 1` transactions. The oldest one carries a signal
/// item `sig_s` (plus a filler); the transactions in between hold fillers
/// only; the newest one is `{tgt_s, marker}`. The signal item therefore sits
/// exactly `lag` transactions before the current one, and the target is
/// recoverable only from that transaction: the intra context of a target
/// instance is always the constant marker, and the filler items carry no
/// information.
///
/// Uses 8 signal items, 8 targets, the marker and 33 fillers: 50 items in
/// total once every id has occurred.
pub fn inter_signal_corpus(n_users: usize, lag: usize, seed: u64) -> Vec<RawTransaction> {
    assert!(lag >= 1);
    let n_fillers = 33;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut transactions = Vec::with_capacity(n_users * (lag + 1));
    for u in 0..n_users {
        let s = u % N_SIGNALS;
        let user = format!("u{u:04}");
        // Round-robin plus random fillers so every filler id occurs.
        let filler = |rng: &mut ChaCha20Rng, salt: usize| {
            if rng.gen_bool(0.5) {
                filler_id((u + salt) % n_fillers)
            } else {
                filler_id(rng.gen_range(0..n_fillers))
            }
        };
        let oldest = vec![signal_id(s), filler(&mut rng, 0)];
        transactions.push(RawTransaction::new(&user, timestamp(1, u), oldest).unwrap());
        for j in 1..lag {
            let middle = vec![filler(&mut rng, j), filler(&mut rng, j + 7)];
            transactions
                .push(RawTransaction::new(&user, timestamp(1 + j as i64, u), middle).unwrap());
        }
        let current = vec![target_id(s), MARKER_ID.to_string()];
        transactions
            .push(RawTransaction::new(&user, timestamp(1 + lag as i64, u), current).unwrap());
    }
    transactions
}

/// Corpus with a planted intra-transaction dependency.
///
/// Every current transaction is `{tgt_s, sig_s, filler, filler}`: one item
/// of the intra context (the determinant `sig_s`) decides the target, the
/// other two are uniform noise. The two inter transactions hold fillers
/// only.
pub fn intra_distractor_corpus(n_users: usize, seed: u64) -> Vec<RawTransaction> {
    let n_fillers = 32;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut transactions = Vec::with_capacity(n_users * 3);
    for u in 0..n_users {
        let s = u % N_SIGNALS;
        let user = format!("u{u:04}");
        let filler = |rng: &mut ChaCha20Rng, salt: usize| {
            if rng.gen_bool(0.5) {
                filler_id((u + salt) % n_fillers)
            } else {
                filler_id(rng.gen_range(0..n_fillers))
            }
        };
        for day in 1..=2 {
            let items = vec![filler(&mut rng, day as usize), filler(&mut rng, day as usize + 11)];
            transactions.push(RawTransaction::new(&user, timestamp(day, u), items).unwrap());
        }
        let current = vec![
            target_id(s),
            signal_id(s),
            filler(&mut rng, 3),
            filler(&mut rng, 17),
        ];
        transactions.push(RawTransaction::new(&user, timestamp(3, u), current).unwrap());
    }
    transactions
}

/// A generic market-basket-style corpus: users buy 2..=5 items per
/// transaction from a skewed popularity distribution, 4..=7 transactions
/// per user spread over ~90 days.
pub fn toy_corpus(n_users: usize, seed: u64) -> Vec<RawTransaction> {
    let n_items = 60;
    let ids: Vec<String> = (0..n_items).map(|i| format!("item{i:03}")).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut transactions = Vec::new();
    for u in 0..n_users {
        let user = format!("u{u:04}");
        let n_txns = rng.gen_range(4..=7);
        let start_day = rng.gen_range(1..=60i64);
        for j in 0..n_txns {
            let day = start_day + j as i64 * rng.gen_range(3..=7);
            let n = rng.gen_range(2..=5);
            let mut items = Vec::with_capacity(n);
            for _ in 0..n {
                // Squaring a uniform draw skews the popularity toward the
                // low indices.
                let x: f64 = rng.gen();
                let idx = ((x * x) * n_items as f64) as usize;
                items.push(ids[idx.min(n_items - 1)].clone());
            }
            transactions.push(RawTransaction::new(&user, timestamp(day, u), items).unwrap());
        }
    }
    transactions.shuffle(&mut rng);
    transactions
}

/// Writes transactions in the jsonl input format.
pub fn write_jsonl(transactions: &[RawTransaction], path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for t in transactions {
        let record = serde_json::json!({
            "user": t.user_id,
            "ts": t.timestamp,
            "items": t.items,
        });
        writeln!(file, "{record}").map_err(io_err)?;
    }
    file.flush().map_err(io_err)
}
