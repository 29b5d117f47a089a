//! Temporary predictions and the k-maximum aggregation layer.
//!
//! With `K` the indices of the `k` largest `ŷ_t` for `t0 ≤ t ≤ T`, the
//! final prediction is
//!
//! ```text
//! Ŷ = Σ_{t∈K} (1 − γ^t) ŷ_t / Σ_{t∈K} (1 − γ^t)
//! ```
//!
//! Ties in the selection go to the smaller `t`. Under differentiation `K`
//! is held fixed, so `∂Ŷ/∂ŷ_t = (1 − γ^t)/Z` on `K` and zero elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::numeric::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    k: usize,
    gamma: f64,
    t0: usize,
    horizon: usize,
}

impl AggregationConfig {
    pub fn new(k: usize, gamma: f64, t0: usize, horizon: usize) -> Result<Self> {
        if k == 0 {
            return Err(config_err("k must be at least 1"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(config_err(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if t0 == 0 {
            return Err(config_err("t0 must be at least 1"));
        }
        if horizon < t0 || horizon - t0 + 1 < k {
            return Err(config_err(format!(
                "horizon {horizon} with t0 {t0} leaves fewer than k = {k} candidates"
            )));
        }
        Ok(Self {
            k,
            gamma,
            t0,
            horizon,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Time-discount weight `1 − γ^t`.
    pub fn discount(&self, t: usize) -> f64 {
        1.0 - self.gamma.powi(t as i32)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.horizon {
            return Err(shape_err(format!(
                "expected {} temporary predictions, got {n}",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// Time steps (1-based, ascending) of the `k` largest predictions at or
/// after `t0`. `preds[i]` is `ŷ_{i+1}`.
pub fn k_max_select(preds: &[f64], cfg: &AggregationConfig) -> Result<Vec<usize>> {
    cfg.check_len(preds.len())?;
    let mut candidates: Vec<usize> = (cfg.t0..=cfg.horizon).collect();
    // Stable sort keeps ascending t among equal values.
    candidates.sort_by(|&a, &b| preds[b - 1].total_cmp(&preds[a - 1]));
    candidates.truncate(cfg.k);
    candidates.sort_unstable();
    Ok(candidates)
}

/// Normalized weights for the selected steps.
pub fn k_max_weights(selected: &[usize], cfg: &AggregationConfig) -> Vec<f64> {
    let raw: Vec<f64> = selected.iter().map(|&t| cfg.discount(t)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / z).collect()
}

pub fn k_max_aggregate(preds: &[f64], cfg: &AggregationConfig) -> Result<f64> {
    let selected = k_max_select(preds, cfg)?;
    let weights = k_max_weights(&selected, cfg);
    Ok(selected
        .iter()
        .zip(&weights)
        .map(|(&t, w)| w * preds[t - 1])
        .sum())
}

/// `upstream · ∂Ŷ/∂ŷ_t` for every `t`, with the selection held fixed.
pub fn aggregate_gradient(preds: &[f64], cfg: &AggregationConfig, upstream: f64) -> Result<Vec<f64>> {
    let selected = k_max_select(preds, cfg)?;
    let weights = k_max_weights(&selected, cfg);
    let mut g = vec![0.0; preds.len()];
    for (&t, w) in selected.iter().zip(&weights) {
        g[t - 1] = upstream * w;
    }
    Ok(g)
}

/// Records the aggregation of scalar prediction nodes on `tape`. Returns
/// the `Ŷ` node and the selected steps.
pub fn aggregate_on_tape(
    tape: &mut Tape,
    preds: &[Var],
    cfg: &AggregationConfig,
) -> Result<(Var, Vec<usize>)> {
    let values: Vec<f64> = preds
        .iter()
        .map(|&p| tape.scalar(p))
        .collect::<Result<_>>()?;
    let selected = k_max_select(&values, cfg)?;
    let weights = k_max_weights(&selected, cfg);
    let picked: Vec<Var> = selected.iter().map(|&t| preds[t - 1]).collect();
    let stacked = tape.stack(&picked);
    let w = tape.constant(Tensor::from_vec(weights));
    Ok((tape.dot(stacked, w)?, selected))
}

/// `ŷ = ½(1 + tanh(W_ys · flatten(s)))` for a `[1, n]` head.
pub fn temp_predict(state: &Tensor, w_ys: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(state.clone());
    let w = tape.constant(w_ys.clone());
    let y = temp_predict_on_tape(&mut tape, s, w)?;
    tape.scalar(y)
}

pub fn temp_predict_on_tape(tape: &mut Tape, state: Var, w_ys: Var) -> Result<Var> {
    if tape.value(w_ys).shape().first() != Some(&1) {
        return Err(shape_err(format!(
            "prediction head must be [1, n], got {:?}",
            tape.value(w_ys).shape()
        )));
    }
    let logit = tape.matvec(w_ys, state)?;
    let t = tape.tanh(logit);
    let y = tape.affine(t, 0.5, 0.5);
    tape.reshape(y, &[])
}
