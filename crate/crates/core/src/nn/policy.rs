// SPDX-License-Identifier: Apache-2.0

//! Masked softmax policy over grid cells.
//!
//! Illegal cells are excluded from the softmax entirely, so their probability
//! and their logit gradients are exactly zero.

use super::NnError;
use crate::board::ActionMask;

/// Log-probabilities over legal cells; illegal cells are `-inf`.
pub fn log_softmax_masked(logits: &[f64], mask: &ActionMask) -> Result<Vec<f64>, NnError> {
    if logits.len() != mask.cells.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} logits for {} cells",
            logits.len(),
            mask.cells.len()
        )));
    }
    let m = logits
        .iter()
        .zip(&mask.cells)
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(NnError::NoLegalAction);
    }
    let lse = m + logits
        .iter()
        .zip(&mask.cells)
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| (v - m).exp())
        .sum::<f64>()
        .ln();
    Ok(logits
        .iter()
        .zip(&mask.cells)
        .map(|(&v, &ok)| if ok { v - lse } else { f64::NEG_INFINITY })
        .collect())
}

pub fn masked_policy(logits: &[f64], mask: &ActionMask) -> Result<Vec<f64>, NnError> {
    Ok(log_softmax_masked(logits, mask)?
        .into_iter()
        .map(|lp| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() })
        .collect())
}

/// Shannon entropy in nats; zero-probability cells contribute nothing.
pub fn policy_entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Gradient with respect to the logits of `d_logp * log pi(action) + d_entropy * H(pi)`.
pub(crate) fn policy_logit_grad(probs: &[f64], mask: &ActionMask, action: usize, d_logp: f64, d_entropy: f64) -> Vec<f64> {
    let h = policy_entropy(probs);
    probs
        .iter()
        .zip(&mask.cells)
        .enumerate()
        .map(|(k, (&p, &ok))| {
            if !ok {
                return 0.0;
            }
            let indicator = if k == action { 1.0 } else { 0.0 };
            let mut g = d_logp * (indicator - p);
            if p > 0.0 {
                g -= d_entropy * p * (p.ln() + h);
            }
            g
        })
        .collect()
}
