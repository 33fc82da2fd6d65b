//! Versioned binary container for a prepared [`SplitDataset`].
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "HATD" | version u32 (=1)
//! window u32 | seed u64
//! stats: 9 x u64 (transactions, items, train units, train instances,
//!                 test units, test instances, rejected records,
//!                 oov items, dropped instances)
//! n_items u32 | n_items x (u32 len, utf-8 id) in index order
//! n_train u64 | train instances
//! n_test u64  | test instances
//! instance: target u32 | intra (u32 count, u32 indices)
//!           | window x inter (u32 count, u32 indices)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

use super::{Context, ItemSet, PrepStats, SplitDataset, TrainingInstance, Vocabulary};

const MAGIC: &[u8; 4] = b"HATD";
const VERSION: u32 = 1;
const MAX_ID_BYTES: usize = 1 << 20;

pub fn write_dataset(dataset: &SplitDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = Writer::new(BufWriter::new(file), path);

    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(dataset.window as u32)?;
    w.u64(dataset.seed)?;

    let s = &dataset.stats;
    for v in [
        s.n_transactions,
        s.n_items,
        s.n_train_units,
        s.n_train_instances,
        s.n_test_units,
        s.n_test_instances,
        s.rejected_records,
        s.oov_items,
        s.dropped_instances,
    ] {
        w.u64(v)?;
    }

    w.u32(dataset.vocab.len() as u32)?;
    for id in dataset.vocab.ids() {
        w.len_prefixed(id.as_bytes())?;
    }

    w.u64(dataset.train.len() as u64)?;
    w.u64(dataset.test.len() as u64)?;
    for instance in dataset.train.iter().chain(&dataset.test) {
        write_instance(&mut w, instance, dataset.window)?;
    }
    w.flush()
}

fn write_instance<W: std::io::Write>(
    w: &mut Writer<W>,
    instance: &TrainingInstance,
    window: usize,
) -> Result<()> {
    debug_assert_eq!(instance.context.inter.len(), window);
    w.u32(instance.target)?;
    write_set(w, &instance.context.intra)?;
    for set in &instance.context.inter {
        write_set(w, set)?;
    }
    Ok(())
}

fn write_set<W: std::io::Write>(w: &mut Writer<W>, set: &ItemSet) -> Result<()> {
    w.u32(set.len() as u32)?;
    for item in set.iter() {
        w.u32(item)?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<SplitDataset> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = Reader::new(BufReader::new(file), path);

    let mut magic = [0u8; 4];
    r.bytes(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "HATD dataset".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            supported: VERSION.to_string(),
        });
    }

    let window = r.u32()? as usize;
    if window < 1 {
        return Err(r.corrupt("window must be >= 1"));
    }
    let seed = r.u64()?;

    let stats = PrepStats {
        n_transactions: r.u64()?,
        n_items: r.u64()?,
        n_train_units: r.u64()?,
        n_train_instances: r.u64()?,
        n_test_units: r.u64()?,
        n_test_instances: r.u64()?,
        rejected_records: r.u64()?,
        oov_items: r.u64()?,
        dropped_instances: r.u64()?,
    };

    let n_items = r.u32()? as usize;
    let mut ids = Vec::with_capacity(n_items);
    for _ in 0..n_items {
        let bytes = r.len_prefixed(MAX_ID_BYTES)?;
        let id = String::from_utf8(bytes).map_err(|e| r.corrupt(format!("bad item id: {e}")))?;
        ids.push(id);
    }
    let vocab = Vocabulary::from_ids(ids);

    let n_train = r.u64()? as usize;
    let n_test = r.u64()? as usize;
    let read_instances = |r: &mut Reader<BufReader<File>>, n: usize| -> Result<Vec<TrainingInstance>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(read_instance(r, window, n_items)?);
        }
        Ok(out)
    };
    let train = read_instances(&mut r, n_train)?;
    let test = read_instances(&mut r, n_test)?;
    r.expect_eof()?;

    Ok(SplitDataset {
        train,
        test,
        vocab,
        window,
        seed,
        stats,
    })
}

fn read_instance<R: std::io::Read>(
    r: &mut Reader<R>,
    window: usize,
    n_items: usize,
) -> Result<TrainingInstance> {
    let target = r.u32()?;
    if target as usize >= n_items {
        return Err(r.corrupt(format!("target index {target} out of range")));
    }
    let intra = read_set(r, n_items)?;
    let mut inter = Vec::with_capacity(window);
    for _ in 0..window {
        inter.push(read_set(r, n_items)?);
    }
    Ok(TrainingInstance {
        context: Context { intra, inter },
        target,
    })
}

fn read_set<R: std::io::Read>(r: &mut Reader<R>, n_items: usize) -> Result<ItemSet> {
    let len = r.u32()? as usize;
    if len > n_items {
        return Err(r.corrupt(format!("item set of {len} exceeds vocabulary size {n_items}")));
    }
    let mut items = Vec::with_capacity(len);
    for _ in 0..len {
        let idx = r.u32()?;
        if idx as usize >= n_items {
            return Err(r.corrupt(format!("item index {idx} out of range")));
        }
        items.push(idx);
    }
    Ok(ItemSet::new(items))
}
