//! Versioned binary checkpoint format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "HATE" | version u32 (=1)
//! variant u8 (0=hate, 1=ate, 2=hte) | K u32 | n_items u32 | window u32
//! vocab: n_items x (u32 len, utf-8 id) in index order
//! parameter matrices, row-major f64, fixed order:
//!   W1 (K x n_items) | w_a (K) | W_beta (K x K)
//!   | W2 (n_items x K) | W3 (n_items x K) | [W_fc (K x window*K), hte only]
//! optimizer accumulators, same shapes and order
//! epoch u64
//! rng seed (32 bytes) | rng word position u128
//! config echo: u32 len + canonical JSON
//! ```
//!
//! Save, load and save again produces byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::binio::{Reader, Writer};
use crate::dataset::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{ModelParams, Variant};

use super::{OptimizerState, TrainConfig};

const MAGIC: &[u8; 4] = b"HATE";
const VERSION: u32 = 1;
const MAX_ID_BYTES: usize = 1 << 20;
const MAX_CONFIG_BYTES: usize = 1 << 20;

/// Everything needed to resume or evaluate a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub vocab: Vocabulary,
    pub epoch: u64,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub config: TrainConfig,
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let params = &checkpoint.params;
    params.validate()?;
    if checkpoint.vocab.len() != params.n_items {
        return Err(Error::Config(
            "checkpoint vocabulary does not match the parameter dimensions".into(),
        ));
    }

    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = Writer::new(BufWriter::new(file), path);

    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u8(params.variant.code())?;
    w.u32(params.k as u32)?;
    w.u32(params.n_items as u32)?;
    w.u32(params.window as u32)?;

    for id in checkpoint.vocab.ids() {
        w.len_prefixed(id.as_bytes())?;
    }

    write_matrices(&mut w, params, &checkpoint.optimizer)?;

    w.u64(checkpoint.epoch)?;
    w.bytes(&checkpoint.rng_seed)?;
    w.u128(checkpoint.rng_word_pos)?;

    let config_json = serde_json::to_vec(&checkpoint.config)
        .map_err(|e| Error::Config(format!("cannot serialize train config: {e}")))?;
    w.len_prefixed(&config_json)?;
    w.flush()
}

fn write_matrices<W: std::io::Write>(
    w: &mut Writer<W>,
    params: &ModelParams,
    optimizer: &OptimizerState,
) -> Result<()> {
    let write2 = |w: &mut Writer<W>, m: &Array2<f64>| -> Result<()> {
        for &v in m.iter() {
            w.f64(v)?;
        }
        Ok(())
    };
    write2(w, &params.w1)?;
    for &v in params.w_a.iter() {
        w.f64(v)?;
    }
    write2(w, &params.w_beta)?;
    write2(w, &params.w2)?;
    write2(w, &params.w3)?;
    if let Some(fc) = &params.w_fc {
        write2(w, fc)?;
    }
    write2(w, &optimizer.w1)?;
    for &v in optimizer.w_a.iter() {
        w.f64(v)?;
    }
    write2(w, &optimizer.w_beta)?;
    write2(w, &optimizer.w2)?;
    write2(w, &optimizer.w3)?;
    if let Some(fc) = &optimizer.w_fc {
        write2(w, fc)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
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
            expected: "HATE checkpoint".into(),
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

    let variant_code = r.u8()?;
    let variant = Variant::from_code(variant_code)
        .ok_or_else(|| r.corrupt(format!("unknown variant code {variant_code}")))?;
    let k = r.u32()? as usize;
    let n_items = r.u32()? as usize;
    let window = r.u32()? as usize;
    if k < 1 || n_items < 1 || window < 1 {
        return Err(r.corrupt("header dimensions must be >= 1"));
    }

    let mut ids = Vec::with_capacity(n_items);
    for _ in 0..n_items {
        let bytes = r.len_prefixed(MAX_ID_BYTES)?;
        ids.push(String::from_utf8(bytes).map_err(|e| r.corrupt(format!("bad item id: {e}")))?);
    }
    let vocab = Vocabulary::from_ids(ids);

    let read2 = |r: &mut Reader<BufReader<File>>, rows: usize, cols: usize| -> Result<Array2<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| r.corrupt(format!("matrix shape mismatch: {e}")))
    };
    let read1 = |r: &mut Reader<BufReader<File>>, len: usize| -> Result<Array1<f64>> {
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        Ok(Array1::from_vec(data))
    };

    let w1 = read2(&mut r, k, n_items)?;
    let w_a = read1(&mut r, k)?;
    let w_beta = read2(&mut r, k, k)?;
    let w2 = read2(&mut r, n_items, k)?;
    let w3 = read2(&mut r, n_items, k)?;
    let w_fc = match variant {
        Variant::Hte => Some(read2(&mut r, k, window * k)?),
        _ => None,
    };
    let params = ModelParams {
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
    };
    params.validate()?;

    let optimizer = OptimizerState {
        w1: read2(&mut r, k, n_items)?,
        w_a: read1(&mut r, k)?,
        w_beta: read2(&mut r, k, k)?,
        w2: read2(&mut r, n_items, k)?,
        w3: read2(&mut r, n_items, k)?,
        w_fc: match variant {
            Variant::Hte => Some(read2(&mut r, k, window * k)?),
            _ => None,
        },
    };

    let epoch = r.u64()?;
    let mut rng_seed = [0u8; 32];
    r.bytes(&mut rng_seed)?;
    let rng_word_pos = r.u128()?;

    let config_json = r.len_prefixed(MAX_CONFIG_BYTES)?;
    let config: TrainConfig = serde_json::from_slice(&config_json)
        .map_err(|e| r.corrupt(format!("bad train config echo: {e}")))?;
    if config.variant != variant || config.dim != k {
        return Err(r.corrupt(
            "config echo disagrees with the checkpoint header".to_string(),
        ));
    }
    r.expect_eof()?;

    Ok(Checkpoint {
        params,
        optimizer,
        vocab,
        epoch,
        rng_seed,
        rng_word_pos,
        config,
    })
}
