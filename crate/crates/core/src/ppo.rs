// SPDX-License-Identifier: Apache-2.0

//! Episodic rollouts in the placement environment and clipped-surrogate PPO.
//!
//! An episode places the task's managed blocks one at a time in placement
//! order. Every intermediate reward is zero; the last step receives the
//! terminal HPWL reward of the completed board.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{greedy_place, BaselineError};
use crate::board::{BoardArch, BoardError, PlacementState};
use crate::features::{assemble_state, FeatureError, StateTensor};
use crate::netlist::{Netlist, NetlistError};
use crate::nn::{
    backward, forward, forward_cached, init_weights, log_softmax_masked, policy_entropy, Gradients,
    ModelWeights, NetworkSpec, NnError,
};
use crate::wirelength::{reward_for_total, total_hpwl, RewardConfig, RewardMode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PpoError {
    #[error("no legal action at step {step} for block `{block}`")]
    NoLegalAction { step: usize, block: String },
    #[error("non-finite {term} during update")]
    NonFiniteLoss { term: &'static str },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub epochs_per_update: usize,
    pub episodes_per_update: usize,
    pub episodes_total: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            clip_eps: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            learning_rate: 3e-4,
            epochs_per_update: 4,
            episodes_per_update: 16,
            episodes_total: 3000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.clip_eps <= 0.0 {
            return bad("clip_eps must be positive");
        }
        if self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("loss coefficients must be non-negative");
        }
        if self.epochs_per_update == 0 || self.episodes_per_update == 0 || self.episodes_total == 0 {
            return bad("epoch and episode counts must be >= 1");
        }
        Ok(())
    }
}

/// One placement subproblem: place `order` on top of `fixed`.
#[derive(Debug, Clone)]
pub struct Task<'a> {
    pub arch: &'a BoardArch,
    pub netlist: &'a Netlist,
    pub fixed: PlacementState,
    /// Managed blocks in placement order.
    pub order: Vec<usize>,
    pub reward: RewardConfig,
}

impl<'a> Task<'a> {
    /// Builds a task whose reward is normalized by the greedy completion of `fixed`.
    pub fn new(
        arch: &'a BoardArch,
        netlist: &'a Netlist,
        fixed: PlacementState,
        managed: &[usize],
    ) -> Result<Self, PpoError> {
        if managed.is_empty() {
            return Err(PpoError::InvalidTask("no managed blocks".into()));
        }
        fixed
            .validate(arch, netlist)
            .map_err(|e| PpoError::InvalidTask(format!("fixed placement: {e}")))?;
        for &b in managed {
            netlist.block(b)?;
            if fixed.position(b).is_some() {
                return Err(PpoError::InvalidTask(format!(
                    "managed block `{}` is already placed",
                    netlist.blocks()[b].name
                )));
            }
        }
        let order = netlist.placement_order(managed)?;
        let mut greedy = fixed.clone();
        greedy_place(arch, netlist, &mut greedy, &order)?;
        let normalizer = total_hpwl(&greedy, netlist).total;
        Ok(Self {
            arch,
            netlist,
            fixed,
            order,
            reward: RewardConfig {
                normalizer: if normalizer > 0.0 { normalizer } else { 1.0 },
                mode: RewardMode::NegHpwlNormalized,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: StateTensor,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub placement: PlacementState,
    pub hpwl: f64,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }
}

fn sample_index<R: Rng>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &lp) in log_probs.iter().enumerate() {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        acc += lp.exp();
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Runs one episode with actions sampled from the masked policy.
pub fn collect_episode<R: Rng>(task: &Task<'_>, weights: &ModelWeights, rng: &mut R) -> Result<Trajectory, PpoError> {
    let mut placement = task.fixed.clone();
    let mut steps = Vec::with_capacity(task.order.len());
    for (t, &b) in task.order.iter().enumerate() {
        let state = assemble_state(task.arch, &placement, task.netlist, b)?;
        if state.current_mask.count() == 0 {
            return Err(PpoError::NoLegalAction {
                step: t,
                block: task.netlist.blocks()[b].name.clone(),
            });
        }
        let out = forward(weights, &state)?;
        let log_probs = log_softmax_masked(&out.logits, &state.current_mask)?;
        let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
        let action = sample_index(&log_probs, rng);
        debug_assert!(state.current_mask.cells[action]);
        placement.place(task.arch, task.netlist, b, task.arch.position(action))?;
        steps.push(Step {
            action,
            log_prob: log_probs[action],
            value: out.value,
            reward: 0.0,
            entropy: policy_entropy(&probs),
            state,
        });
    }
    let hpwl = total_hpwl(&placement, task.netlist).total;
    if let Some(last) = steps.last_mut() {
        last.reward = reward_for_total(hpwl, &task.reward);
    }
    Ok(Trajectory { steps, placement, hpwl })
}

/// Places the task's blocks by always taking the most probable legal cell (first on ties).
pub fn decode_argmax(task: &Task<'_>, weights: &ModelWeights) -> Result<PlacementState, PpoError> {
    let mut placement = task.fixed.clone();
    for (t, &b) in task.order.iter().enumerate() {
        let state = assemble_state(task.arch, &placement, task.netlist, b)?;
        let out = forward(weights, &state)?;
        let mut best: Option<(usize, f64)> = None;
        for cell in state.current_mask.legal_indices() {
            if best.is_none_or(|(_, l)| out.logits[cell] > l) {
                best = Some((cell, out.logits[cell]));
            }
        }
        let (cell, _) = best.ok_or_else(|| PpoError::NoLegalAction {
            step: t,
            block: task.netlist.blocks()[b].name.clone(),
        })?;
        placement.place(task.arch, task.netlist, b, task.arch.position(cell))?;
    }
    Ok(placement)
}

/// Discounted returns by backward recursion `G_t = r_t + gamma * G_{t+1}`.
pub fn returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// `G_t - V_t`, before standardization.
pub fn advantages(returns: &[f64], values: &[f64]) -> Vec<f64> {
    returns.iter().zip(values).map(|(g, v)| g - v).collect()
}

pub const STANDARDIZE_EPS: f64 = 1e-8;

/// Shifts to zero mean and scales to unit (population) standard deviation.
pub fn standardize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v = (*v - mean) / (std + STANDARDIZE_EPS);
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(weights: &ModelWeights, cfg: &PpoConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: Gradients::zeros_like(weights),
            v: Gradients::zeros_like(weights),
        }
    }

    pub fn step(&mut self, weights: &mut ModelWeights, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (pi, p) in weights.params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m.values[pi], &mut self.v.values[pi], &grads.values[pi]);
            for j in 0..p.data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                p.data[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// A flattened training sample.
#[derive(Debug, Clone)]
pub struct Sample<'t> {
    pub state: &'t StateTensor,
    pub action: usize,
    pub old_log_prob: f64,
    pub ret: f64,
    pub advantage: f64,
}

/// Flattens a batch into samples with returns and standardized advantages.
pub fn prepare_samples<'t>(batch: &'t [Trajectory], gamma: f64) -> Vec<Sample<'t>> {
    let mut samples = Vec::new();
    let mut adv = Vec::new();
    for traj in batch {
        let g = returns(&traj.rewards(), gamma);
        adv.extend(advantages(&g, &traj.values()));
        for (step, ret) in traj.steps.iter().zip(g) {
            samples.push(Sample {
                state: &step.state,
                action: step.action,
                old_log_prob: step.log_prob,
                ret,
                advantage: 0.0,
            });
        }
    }
    standardize(&mut adv);
    for (s, a) in samples.iter_mut().zip(adv) {
        s.advantage = a;
    }
    samples
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
}

/// Loss terms and their gradient for the current weights.
pub fn ppo_gradients(weights: &ModelWeights, samples: &[Sample<'_>], cfg: &PpoConfig) -> Result<(Gradients, LossTerms), PpoError> {
    let n = samples.len() as f64;
    let mut grads = Gradients::zeros_like(weights);
    let mut terms = LossTerms::default();
    let mut clipped = 0usize;
    for s in samples {
        let (out, cache) = forward_cached(weights, s.state)?;
        let mask = &s.state.current_mask;
        let log_probs = log_softmax_masked(&out.logits, mask)?;
        let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
        let ratio = (log_probs[s.action] - s.old_log_prob).exp();
        let clipped_ratio = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        let surr1 = ratio * s.advantage;
        let surr2 = clipped_ratio * s.advantage;
        if (ratio - 1.0).abs() > cfg.clip_eps {
            clipped += 1;
        }
        let entropy = policy_entropy(&probs);
        let value_err = s.ret - out.value;
        terms.policy_loss -= surr1.min(surr2) / n;
        terms.value_loss += value_err * value_err / n;
        terms.entropy += entropy / n;

        // d(-min(surr1, surr2))/d log pi is -ratio*A on the unclipped branch, 0 otherwise.
        let d_logp = if surr1 <= surr2 { -ratio * s.advantage / n } else { 0.0 };
        let d_entropy = -cfg.entropy_coef / n;
        let dlogits = crate::nn::policy_logit_grad(&probs, mask, s.action, d_logp, d_entropy);
        let dvalue = -2.0 * cfg.value_coef * value_err / n;
        backward(weights, &cache, &dlogits, dvalue, &mut grads);
    }
    terms.clip_frac = clipped as f64 / n;
    for (term, v) in [
        ("policy loss", terms.policy_loss),
        ("value loss", terms.value_loss),
        ("entropy", terms.entropy),
    ] {
        if !v.is_finite() {
            return Err(PpoError::NonFiniteLoss { term });
        }
    }
    if !grads.is_finite() {
        return Err(PpoError::NonFiniteLoss { term: "gradient" });
    }
    Ok((grads, terms))
}

/// Runs `epochs_per_update` full-batch Adam steps. Returns loss terms averaged over epochs.
pub fn ppo_update(
    weights: &mut ModelWeights,
    batch: &[Trajectory],
    cfg: &PpoConfig,
    optimizer: &mut Adam,
) -> Result<LossTerms, PpoError> {
    if batch.is_empty() || batch.iter().all(|t| t.steps.is_empty()) {
        return Err(PpoError::InvalidTask("empty batch".into()));
    }
    let samples = prepare_samples(batch, cfg.gamma);
    let mut mean = LossTerms::default();
    let k = cfg.epochs_per_update as f64;
    for _ in 0..cfg.epochs_per_update {
        let (grads, terms) = ppo_gradients(weights, &samples, cfg)?;
        optimizer.step(weights, &grads);
        mean.policy_loss += terms.policy_loss / k;
        mean.value_loss += terms.value_loss / k;
        mean.entropy += terms.entropy / k;
        mean.clip_frac += terms.clip_frac / k;
    }
    Ok(mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub update: usize,
    /// Cumulative episodes at the end of this update.
    pub episodes: usize,
    pub mean_hpwl: f64,
    pub best_hpwl: f64,
    /// Mean per-step policy entropy of the rollouts in this update.
    pub entropy: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_frac: f64,
}

pub const STATS_HEADER: &str = "update,episodes,mean_hpwl,best_hpwl,entropy,policy_loss,value_loss,clip_frac";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub rows: Vec<StatsRow>,
}

impl TrainStats {
    /// CSV with an optional leading `# config <hash>` line.
    pub fn to_csv(&self, config_hash: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = config_hash {
            writeln!(s, "# config {h}").unwrap();
        }
        s.push_str(STATS_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.update, r.episodes, r.mean_hpwl, r.best_hpwl, r.entropy, r.policy_loss, r.value_loss, r.clip_frac
            )
            .unwrap();
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub stats: TrainStats,
    /// Lowest-HPWL complete placement sampled during training.
    pub best: PlacementState,
    pub best_hpwl: f64,
}

/// Private stream per episode so rollouts do not depend on batch layout.
pub fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng
}

/// Trains from `initial` (or fresh weights seeded by `seed`) for `cfg.episodes_total` episodes.
pub fn train(
    task: &Task<'_>,
    spec: &NetworkSpec,
    cfg: &PpoConfig,
    seed: u64,
    initial: Option<ModelWeights>,
) -> Result<TrainOutcome, PpoError> {
    cfg.validate()?;
    let mut weights = match initial {
        Some(w) => {
            if w.spec != *spec {
                return Err(NnError::SchemaMismatch("initial weights use a different spec".into()).into());
            }
            w
        }
        None => init_weights(spec, seed)?,
    };
    let mut optimizer = Adam::new(&weights, cfg);
    let mut stats = TrainStats::default();
    let mut best: Option<(f64, PlacementState)> = None;
    let mut episode = 0;
    let mut update = 0;
    while episode < cfg.episodes_total {
        let count = cfg.episodes_per_update.min(cfg.episodes_total - episode);
        let mut batch = Vec::with_capacity(count);
        for _ in 0..count {
            let traj = collect_episode(task, &weights, &mut episode_rng(seed, episode))?;
            episode += 1;
            if best.as_ref().is_none_or(|(h, _)| traj.hpwl < *h) {
                best = Some((traj.hpwl, traj.placement.clone()));
            }
            batch.push(traj);
        }
        let mean_hpwl = batch.iter().map(|t| t.hpwl).sum::<f64>() / count as f64;
        let steps: usize = batch.iter().map(|t| t.steps.len()).sum();
        let entropy = batch.iter().flat_map(|t| &t.steps).map(|s| s.entropy).sum::<f64>() / steps as f64;
        let terms = ppo_update(&mut weights, &batch, cfg, &mut optimizer)?;
        let row = StatsRow {
            update,
            episodes: episode,
            mean_hpwl,
            best_hpwl: best.as_ref().map_or(f64::INFINITY, |(h, _)| *h),
            entropy,
            policy_loss: terms.policy_loss,
            value_loss: terms.value_loss,
            clip_frac: terms.clip_frac,
        };
        log::debug!(
            "update {update}: episodes {episode} mean_hpwl {mean_hpwl:.2} best {:.2} entropy {entropy:.4}",
            row.best_hpwl
        );
        stats.rows.push(row);
        update += 1;
    }
    let (best_hpwl, best) = best.expect("at least one episode ran");
    Ok(TrainOutcome {
        weights,
        stats,
        best,
        best_hpwl,
    })
}
