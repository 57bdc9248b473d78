// SPDX-License-Identifier: Apache-2.0

//! Central finite-difference check of [`backward`](super::backward).

use super::policy::policy_logit_grad;
use super::{forward, forward_cached, init_weights, log_softmax_masked, masked_policy, policy_entropy};
use super::{backward, Gradients, ModelWeights, NetworkSpec, NnError};
use crate::board::{legal_mask, BoardArch, PlacementState};
use crate::features::{assemble_state, StateTensor};
use crate::netlist::generate_synthetic;

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

const LOGP_COEF: f64 = 0.7;
const ENTROPY_COEF: f64 = -0.3;
const VALUE_TARGET: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_error < self.tolerance)
    }
}

/// Observations on a small board with partial placements, each with a fixed action.
fn probe_states(spec: &NetworkSpec) -> Vec<(StateTensor, usize)> {
    let arch = BoardArch::perimeter_io(spec.width, spec.height, 2);
    let nl = generate_synthetic(2, 5, 5, 3, 13).expect("generator parameters are feasible");
    let mut out = Vec::new();
    let mut state = PlacementState::new(&arch, nl.num_blocks());
    for b in nl.placement_order(&(0..nl.num_blocks()).collect::<Vec<_>>()).unwrap() {
        let mask = legal_mask(&arch, &state, nl.blocks()[b].btype);
        let legal: Vec<usize> = mask.legal_indices().collect();
        if legal.is_empty() {
            break;
        }
        let st = assemble_state(&arch, &state, &nl, b).expect("block is unplaced");
        let action = legal[(b * 7 + 3) % legal.len()];
        out.push((st, action));
        if out.len() == 3 {
            break;
        }
        state.place(&arch, &nl, b, arch.position(action)).expect("legal cell");
    }
    out
}

/// `LOGP_COEF * log pi(a) + ENTROPY_COEF * H(pi) + 0.5 * (V - target)^2`, summed over probes.
fn probe_loss(w: &ModelWeights, probes: &[(StateTensor, usize)]) -> Result<f64, NnError> {
    let mut total = 0.0;
    for (st, a) in probes {
        let out = forward(w, st)?;
        let lp = log_softmax_masked(&out.logits, &st.current_mask)?;
        let p = masked_policy(&out.logits, &st.current_mask)?;
        total += LOGP_COEF * lp[*a] + ENTROPY_COEF * policy_entropy(&p) + 0.5 * (out.value - VALUE_TARGET).powi(2);
    }
    Ok(total)
}

fn analytic(w: &ModelWeights, probes: &[(StateTensor, usize)]) -> Result<Gradients, NnError> {
    let mut g = Gradients::zeros_like(w);
    for (st, a) in probes {
        let (out, cache) = forward_cached(w, st)?;
        let p = masked_policy(&out.logits, &st.current_mask)?;
        let dlogits = policy_logit_grad(&p, &st.current_mask, *a, LOGP_COEF, ENTROPY_COEF);
        backward(w, &cache, &dlogits, out.value - VALUE_TARGET, &mut g);
    }
    Ok(g)
}

/// Compares analytic gradients with central differences for every parameter.
///
/// `corrupt` perturbs one analytic entry so callers can confirm the check fails.
pub fn gradient_check(spec: &NetworkSpec, seed: u64, corrupt: bool) -> Result<GradCheckReport, NnError> {
    let mut w = init_weights(spec, seed)?;
    // Non-zero biases so every path carries signal.
    for (i, p) in w.params.iter_mut().enumerate() {
        if p.name.ends_with(".bias") {
            for (j, v) in p.data.iter_mut().enumerate() {
                *v = 0.05 * (((i * 31 + j * 17) % 11) as f64 - 5.0) / 5.0;
            }
        }
    }
    let probes = probe_states(spec);
    let mut grads = analytic(&w, &probes)?;
    if corrupt {
        grads.values[0][0] += 1e-2;
    }
    let mut groups = Vec::with_capacity(w.params.len());
    for pi in 0..w.params.len() {
        let mut worst: f64 = 0.0;
        for j in 0..w.params[pi].data.len() {
            let orig = w.params[pi].data[j];
            w.params[pi].data[j] = orig + FD_STEP;
            let up = probe_loss(&w, &probes)?;
            w.params[pi].data[j] = orig - FD_STEP;
            let dn = probe_loss(&w, &probes)?;
            w.params[pi].data[j] = orig;
            let numeric = (up - dn) / (2.0 * FD_STEP);
            let err = (grads.values[pi][j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
        groups.push(GroupError {
            name: w.params[pi].name.clone(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        groups,
        tolerance: TOLERANCE,
    })
}
