//! Adagrad with sparse updates over the gradient's support.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::ModelParams;

use super::Gradients;

/// Per-entry accumulated squared gradients, mirroring the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub w1: Array2<f64>,
    pub w_a: Array1<f64>,
    pub w_beta: Array2<f64>,
    pub w2: Array2<f64>,
    pub w3: Array2<f64>,
    pub w_fc: Option<Array2<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            w1: Array2::zeros(params.w1.dim()),
            w_a: Array1::zeros(params.w_a.len()),
            w_beta: Array2::zeros(params.w_beta.dim()),
            w2: Array2::zeros(params.w2.dim()),
            w3: Array2::zeros(params.w3.dim()),
            w_fc: params.w_fc.as_ref().map(|fc| Array2::zeros(fc.dim())),
        }
    }
}

#[inline]
fn update_entry(theta: &mut f64, acc: &mut f64, g: f64, lr: f64, epsilon: f64) {
    if g == 0.0 {
        return;
    }
    *acc += g * g;
    *theta -= lr * g / (acc.sqrt() + epsilon);
}

/// One Adagrad step: `G += g*g; theta -= lr * g / (sqrt(G) + epsilon)`,
/// touching only entries with a non-zero gradient. Non-finite gradients
/// abort before any parameter is modified.
pub fn adagrad_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    grads: &Gradients,
    lr: f64,
    epsilon: f64,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            context: "gradient before optimizer step".into(),
        });
    }

    for (&col, g) in &grads.w1_cols {
        let mut theta = params.w1.column_mut(col as usize);
        let mut acc = state.w1.column_mut(col as usize);
        for ((t, a), &gv) in theta.iter_mut().zip(acc.iter_mut()).zip(g.iter()) {
            update_entry(t, a, gv, lr, epsilon);
        }
    }
    for ((t, a), &gv) in params
        .w_a
        .iter_mut()
        .zip(state.w_a.iter_mut())
        .zip(grads.w_a.iter())
    {
        update_entry(t, a, gv, lr, epsilon);
    }
    if let Some(gb) = &grads.w_beta {
        for ((t, a), &gv) in params
            .w_beta
            .iter_mut()
            .zip(state.w_beta.iter_mut())
            .zip(gb.iter())
        {
            update_entry(t, a, gv, lr, epsilon);
        }
    }
    for (&row, g) in &grads.w2_rows {
        let mut theta = params.w2.row_mut(row as usize);
        let mut acc = state.w2.row_mut(row as usize);
        for ((t, a), &gv) in theta.iter_mut().zip(acc.iter_mut()).zip(g.iter()) {
            update_entry(t, a, gv, lr, epsilon);
        }
    }
    for (&row, g) in &grads.w3_rows {
        let mut theta = params.w3.row_mut(row as usize);
        let mut acc = state.w3.row_mut(row as usize);
        for ((t, a), &gv) in theta.iter_mut().zip(acc.iter_mut()).zip(g.iter()) {
            update_entry(t, a, gv, lr, epsilon);
        }
    }
    if let Some(gfc) = &grads.w_fc {
        let theta = params.w_fc.as_mut().ok_or_else(|| {
            Error::Config("gradient carries w_fc but the model has none".into())
        })?;
        let acc = state.w_fc.as_mut().expect("state mirrors params");
        for ((t, a), &gv) in theta.iter_mut().zip(acc.iter_mut()).zip(gfc.iter()) {
            update_entry(t, a, gv, lr, epsilon);
        }
    }
    Ok(())
}
