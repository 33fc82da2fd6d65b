//! Shared helpers for the integration suites: random model/instance draws
//! and a dense view of the sparse gradients for finite-difference sweeps.

use hate_core::dataset::{Context, ItemSet, TrainingInstance};
use hate_core::model::{ModelParams, Variant};
use hate_core::train::{Gradients, NoiseDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn random_params(
    variant: Variant,
    k: usize,
    n_items: usize,
    window: usize,
    rng: &mut ChaCha20Rng,
) -> ModelParams {
    ModelParams::init(variant, k, n_items, window, rng).unwrap()
}

/// Draws a context with 1..=4 intra items and `window` inter transactions of
/// 1..=3 items each, plus a target outside the intra context.
pub fn random_instance(n_items: u32, window: usize, rng: &mut ChaCha20Rng) -> TrainingInstance {
    let target = rng.gen_range(0..n_items);
    let intra = loop {
        let size = rng.gen_range(1..=4usize);
        let set = ItemSet::new((0..size).map(|_| rng.gen_range(0..n_items)).filter(|&i| i != target));
        if !set.is_empty() {
            break set;
        }
    };
    let inter = (0..window)
        .map(|_| {
            let size = rng.gen_range(1..=3usize);
            ItemSet::new((0..size).map(|_| rng.gen_range(0..n_items)))
        })
        .collect();
    TrainingInstance {
        context: Context { intra, inter },
        target,
    }
}

pub fn random_noise_distribution(n_items: usize, rng: &mut ChaCha20Rng) -> NoiseDistribution {
    let weights: Vec<f64> = (0..n_items).map(|_| rng.gen_range(0.2..2.0)).collect();
    let sum: f64 = weights.iter().sum();
    NoiseDistribution::from_probabilities(weights.into_iter().map(|w| w / sum).collect()).unwrap()
}

/// Number of scalar parameters in the fixed enumeration order
/// (w1, w_a, w_beta, w2, w3, then w_fc when present).
pub fn param_entry_count(params: &ModelParams) -> usize {
    let (k, n) = (params.k, params.n_items);
    let fc = params.w_fc.as_ref().map_or(0, |m| m.len());
    k * n + k + k * k + 2 * n * k + fc
}

/// Mutable access to the `idx`-th scalar parameter under the enumeration
/// order of [`param_entry_count`].
pub fn param_entry_mut(params: &mut ModelParams, idx: usize) -> &mut f64 {
    let (k, n) = (params.k, params.n_items);
    let mut i = idx;
    if i < k * n {
        return &mut params.w1[[i / n, i % n]];
    }
    i -= k * n;
    if i < k {
        return &mut params.w_a[i];
    }
    i -= k;
    if i < k * k {
        return &mut params.w_beta[[i / k, i % k]];
    }
    i -= k * k;
    if i < n * k {
        return &mut params.w2[[i / k, i % k]];
    }
    i -= n * k;
    if i < n * k {
        return &mut params.w3[[i / k, i % k]];
    }
    i -= n * k;
    let fc = params.w_fc.as_mut().expect("entry index beyond parameter count");
    let cols = fc.ncols();
    &mut fc[[i / cols, i % cols]]
}

/// Expands the sparse gradient into the same flat enumeration order, with
/// zeros for untouched slices.
pub fn dense_gradient(params: &ModelParams, grads: &Gradients) -> Vec<f64> {
    let (k, n) = (params.k, params.n_items);
    let mut out = Vec::with_capacity(param_entry_count(params));

    let mut w1 = vec![0.0; k * n];
    for (&col, g) in &grads.w1_cols {
        for row in 0..k {
            w1[row * n + col as usize] = g[row];
        }
    }
    out.extend(w1);
    out.extend(grads.w_a.iter());
    match &grads.w_beta {
        Some(b) => out.extend(b.iter()),
        None => out.extend(std::iter::repeat_n(0.0, k * k)),
    }
    for (rows, n_rows) in [(&grads.w2_rows, n), (&grads.w3_rows, n)] {
        let mut m = vec![0.0; n_rows * k];
        for (&row, g) in rows {
            for col in 0..k {
                m[row as usize * k + col] = g[col];
            }
        }
        out.extend(m);
    }
    if let Some(fc) = params.w_fc.as_ref() {
        match &grads.w_fc {
            Some(g) => out.extend(g.iter()),
            None => out.extend(std::iter::repeat_n(0.0, fc.len())),
        }
    }
    out
}
