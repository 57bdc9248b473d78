// SPDX-License-Identifier: Apache-2.0

//! Divide-and-conquer training: the managed blocks are split into chunks and
//! each chunk is trained in turn while the others stay fixed at their latest
//! best placement. Four settings control how weights carry over between
//! subtask runs.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::greedy_place;
use crate::board::{BoardArch, PlacementState};
use crate::netlist::Netlist;
use crate::nn::{init_weights, merge_weights, split_weights, ModelWeights, NetworkSpec, NnError, Partition};
use crate::ppo::{train, PpoConfig, PpoError, StatsRow, Task, TrainStats};
use crate::wirelength::total_hpwl;

#[derive(Debug, Error)]
pub enum DecompositionError {
    #[error("granularity {granularity} is invalid for {blocks} blocks")]
    BadGranularity { granularity: usize, blocks: usize },
    #[error("chunk index {0} out of range")]
    BadChunk(usize),
    #[error("setting must be 1, 2, 3 or 4, got `{0}`")]
    BadSetting(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("checkpoint `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl From<crate::baseline::BaselineError> for DecompositionError {
    fn from(e: crate::baseline::BaselineError) -> Self {
        DecompositionError::Ppo(e.into())
    }
}

/// Splits `order` into `granularity` contiguous chunks whose sizes differ by at most one.
/// Earlier chunks take the extra blocks.
pub fn partition_blocks(order: &[usize], granularity: usize) -> Result<Vec<Vec<usize>>, DecompositionError> {
    if granularity == 0 || granularity > order.len() {
        return Err(DecompositionError::BadGranularity {
            granularity,
            blocks: order.len(),
        });
    }
    let base = order.len() / granularity;
    let extra = order.len() % granularity;
    let mut chunks = Vec::with_capacity(granularity);
    let mut start = 0;
    for c in 0..granularity {
        let len = base + usize::from(c < extra);
        chunks.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(chunks)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskPlan {
    pub chunks: Vec<Vec<usize>>,
    pub episodes_per_subtask: usize,
    pub iterations: usize,
}

impl SubtaskPlan {
    /// Chunks the placement order of `managed`.
    pub fn new(
        netlist: &Netlist,
        managed: &[usize],
        granularity: usize,
        episodes_per_subtask: usize,
        iterations: usize,
    ) -> Result<Self, DecompositionError> {
        let order = netlist
            .placement_order(managed)
            .map_err(|e| DecompositionError::InvalidPlan(e.to_string()))?;
        if episodes_per_subtask == 0 || iterations == 0 {
            return Err(DecompositionError::InvalidPlan(
                "episodes_per_subtask and iterations must be >= 1".into(),
            ));
        }
        Ok(Self {
            chunks: partition_blocks(&order, granularity)?,
            episodes_per_subtask,
            iterations,
        })
    }

    pub fn granularity(&self) -> usize {
        self.chunks.len()
    }

    pub fn managed(&self) -> Vec<usize> {
        self.chunks.concat()
    }

    fn check(&self, netlist: &Netlist) -> Result<(), DecompositionError> {
        let mut seen = vec![false; netlist.num_blocks()];
        for chunk in &self.chunks {
            if chunk.is_empty() {
                return Err(DecompositionError::InvalidPlan("empty chunk".into()));
            }
            for &b in chunk {
                if b >= seen.len() || std::mem::replace(&mut seen[b], true) {
                    return Err(DecompositionError::InvalidPlan(format!("block {b} is unknown or repeated")));
                }
            }
        }
        let sizes = self.chunks.iter().map(Vec::len);
        if sizes.clone().max().unwrap_or(0) - sizes.min().unwrap_or(0) > 1 {
            return Err(DecompositionError::InvalidPlan("chunk sizes differ by more than one".into()));
        }
        Ok(())
    }
}

/// Places the blocks of every chunk except `chunk` greedily on top of `base`, in chunk order.
pub fn seed_other_chunks(
    arch: &BoardArch,
    netlist: &Netlist,
    base: &PlacementState,
    plan: &SubtaskPlan,
    chunk: usize,
) -> Result<PlacementState, DecompositionError> {
    if chunk >= plan.chunks.len() {
        return Err(DecompositionError::BadChunk(chunk));
    }
    let mut state = base.clone();
    for (c, blocks) in plan.chunks.iter().enumerate() {
        if c != chunk {
            greedy_place(arch, netlist, &mut state, blocks)?;
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyScope {
    /// One weight set per chunk.
    Multi,
    /// One weight set shared by all chunks.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReuseSetting {
    pub policy_scope: PolicyScope,
    pub decision_reuse: bool,
}

impl ReuseSetting {
    pub const ALL: [ReuseSetting; 4] = [
        ReuseSetting::new(PolicyScope::Multi, true),
        ReuseSetting::new(PolicyScope::Multi, false),
        ReuseSetting::new(PolicyScope::Single, true),
        ReuseSetting::new(PolicyScope::Single, false),
    ];

    pub const fn new(policy_scope: PolicyScope, decision_reuse: bool) -> Self {
        Self {
            policy_scope,
            decision_reuse,
        }
    }

    pub fn from_number(n: u8) -> Result<Self, DecompositionError> {
        match n {
            1..=4 => Ok(Self::ALL[n as usize - 1]),
            _ => Err(DecompositionError::BadSetting(n.to_string())),
        }
    }

    pub fn number(self) -> u8 {
        match (self.policy_scope, self.decision_reuse) {
            (PolicyScope::Multi, true) => 1,
            (PolicyScope::Multi, false) => 2,
            (PolicyScope::Single, true) => 3,
            (PolicyScope::Single, false) => 4,
        }
    }
}

impl FromStr for ReuseSetting {
    type Err = DecompositionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n: u8 = s.trim().parse().map_err(|_| DecompositionError::BadSetting(s.into()))?;
        Self::from_number(n)
    }
}

/// Weights for the next run of a subtask, given the stored set it continues from.
///
/// Without decision reuse the decision partition is replaced by that of
/// `init_weights(spec, fresh_seed)`; the representation bytes pass through.
pub fn apply_setting(
    setting: ReuseSetting,
    stored: &ModelWeights,
    spec: &NetworkSpec,
    fresh_seed: u64,
) -> Result<ModelWeights, DecompositionError> {
    if stored.spec != *spec {
        return Err(NnError::SchemaMismatch("stored weights use a different spec".into()).into());
    }
    if setting.decision_reuse {
        return Ok(stored.clone());
    }
    let (rep, _) = split_weights(stored);
    let (_, fresh) = split_weights(&init_weights(spec, fresh_seed)?);
    Ok(merge_weights(&rep, &fresh)?)
}

/// Partition digests of the stored set and of the weights handed to the next run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchAudit {
    pub iteration: usize,
    pub chunk: usize,
    pub representation_before: String,
    pub representation_after: String,
    pub decision_before: String,
    pub decision_after: String,
}

impl SwitchAudit {
    pub fn representation_preserved(&self) -> bool {
        self.representation_before == self.representation_after
    }

    pub fn decision_preserved(&self) -> bool {
        self.decision_before == self.decision_after
    }
}

/// One subtask run.
#[derive(Debug, Clone)]
pub struct Segment {
    pub iteration: usize,
    pub chunk: usize,
    /// Episodes run before this segment across the whole schedule.
    pub episode_offset: usize,
    pub stats: TrainStats,
    pub best_hpwl: f64,
    /// SHA-256 over the positions of blocks outside the chunk, before and after training.
    pub context_digest_before: String,
    pub context_digest_after: String,
}

#[derive(Debug, Clone)]
pub struct DecompositionResult {
    pub setting: ReuseSetting,
    pub plan: SubtaskPlan,
    pub segments: Vec<Segment>,
    pub audits: Vec<SwitchAudit>,
    /// Lowest-HPWL complete placement seen in any subtask.
    pub final_placement: PlacementState,
    pub final_hpwl: f64,
    /// Final stored weight sets: one per chunk (multi) or one (single).
    pub weights: Vec<ModelWeights>,
}

pub const CURVE_HEADER: &str =
    "iteration,chunk,update,global_episodes,mean_hpwl,best_hpwl,entropy,policy_loss,value_loss,clip_frac";

impl DecompositionResult {
    /// Concatenated learning curve with episode counts on a global axis.
    pub fn curve_csv(&self, config_hash: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = config_hash {
            writeln!(s, "# config {h}").unwrap();
        }
        s.push_str(CURVE_HEADER);
        s.push('\n');
        for seg in &self.segments {
            for r in &seg.stats.rows {
                writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{}",
                    seg.iteration,
                    seg.chunk,
                    r.update,
                    seg.episode_offset + r.episodes,
                    r.mean_hpwl,
                    r.best_hpwl,
                    r.entropy,
                    r.policy_loss,
                    r.value_loss,
                    r.clip_frac
                )
                .unwrap();
            }
        }
        s
    }

    /// All rows in schedule order.
    pub fn rows(&self) -> impl Iterator<Item = (&Segment, &StatsRow)> {
        self.segments.iter().flat_map(|s| s.stats.rows.iter().map(move |r| (s, r)))
    }

    /// Mean HPWL jump from the last update of each segment to the first of the next.
    pub fn boundary_jumps(&self) -> Vec<f64> {
        self.segments
            .windows(2)
            .filter_map(|w| {
                let last = w[0].stats.rows.last()?;
                let first = w[1].stats.rows.first()?;
                Some(first.mean_hpwl - last.mean_hpwl)
            })
            .collect()
    }
}

/// Seed of subtask run `k` (k = iteration * granularity + chunk). Run 0 uses `seed` itself.
pub fn run_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn context_digest(state: &PlacementState, chunk: &[usize]) -> String {
    use sha2::{Digest, Sha256};
    let mut inside = vec![false; state.num_blocks()];
    for &b in chunk {
        inside[b] = true;
    }
    let mut h = Sha256::new();
    for (b, pos) in state.assignment().iter().enumerate() {
        if inside[b] {
            continue;
        }
        match pos {
            Some(p) => {
                h.update((b as u64).to_le_bytes());
                h.update((p.x as u64).to_le_bytes());
                h.update((p.y as u64).to_le_bytes());
            }
            None => h.update((b as u64).to_le_bytes()),
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn checkpoint_name(setting: ReuseSetting, chunk: usize) -> String {
    match setting.policy_scope {
        PolicyScope::Multi => format!("chunk{chunk}.json"),
        PolicyScope::Single => "shared.json".into(),
    }
}

/// Runs the full schedule. `base` holds the placements of blocks outside the plan.
///
/// With `checkpoint_dir`, each stored weight set is written after every run
/// (`chunk{c}.json` per chunk, or `shared.json`).
#[allow(clippy::too_many_arguments)]
pub fn run_decomposition(
    arch: &BoardArch,
    netlist: &Netlist,
    base: &PlacementState,
    plan: &SubtaskPlan,
    setting: ReuseSetting,
    spec: &NetworkSpec,
    cfg: &PpoConfig,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<DecompositionResult, DecompositionError> {
    plan.check(netlist)?;
    let granularity = plan.granularity();
    let slots = match setting.policy_scope {
        PolicyScope::Multi => granularity,
        PolicyScope::Single => 1,
    };
    let mut stored: Vec<Option<ModelWeights>> = vec![None; slots];
    let mut trained = vec![false; granularity];
    let mut current = base.clone();
    let run_cfg = PpoConfig {
        episodes_total: plan.episodes_per_subtask,
        ..*cfg
    };
    let mut segments = Vec::new();
    let mut audits = Vec::new();
    let mut best: Option<(f64, PlacementState)> = None;
    let mut offset = 0;

    for iteration in 0..plan.iterations {
        for (c, chunk) in plan.chunks.iter().enumerate() {
            let k = iteration * granularity + c;
            let seed_k = run_seed(seed, k);

            // Context: trained chunks keep their best placement, untrained ones are seeded greedily.
            for (o, blocks) in plan.chunks.iter().enumerate() {
                if o == c || !trained[o] {
                    for &b in blocks {
                        if current.position(b).is_some() {
                            current.unplace(b).expect("block is placed");
                        }
                    }
                }
            }
            for (o, blocks) in plan.chunks.iter().enumerate() {
                if o != c && !trained[o] {
                    greedy_place(arch, netlist, &mut current, blocks)?;
                }
            }

            let slot = match setting.policy_scope {
                PolicyScope::Multi => c,
                PolicyScope::Single => 0,
            };
            let initial = match &stored[slot] {
                None => None,
                Some(w) => {
                    let next = apply_setting(setting, w, spec, seed_k)?;
                    audits.push(SwitchAudit {
                        iteration,
                        chunk: c,
                        representation_before: w.partition_digest(Partition::Representation),
                        representation_after: next.partition_digest(Partition::Representation),
                        decision_before: w.partition_digest(Partition::Decision),
                        decision_after: next.partition_digest(Partition::Decision),
                    });
                    Some(next)
                }
            };

            let task = Task::new(arch, netlist, current.clone(), chunk)?;
            let before = context_digest(&task.fixed, chunk);
            log::info!(
                "setting {} iteration {iteration} chunk {c}: {} blocks, {} episodes",
                setting.number(),
                chunk.len(),
                plan.episodes_per_subtask
            );
            let out = train(&task, spec, &run_cfg, seed_k, initial)?;
            let after = context_digest(&out.best, chunk);

            if best.as_ref().is_none_or(|(h, _)| out.best_hpwl < *h) {
                best = Some((out.best_hpwl, out.best.clone()));
            }
            current = out.best;
            trained[c] = true;
            if let Some(dir) = checkpoint_dir {
                let path = dir.join(checkpoint_name(setting, c));
                std::fs::write(&path, out.weights.to_checkpoint()).map_err(|source| DecompositionError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
            stored[slot] = Some(out.weights);
            segments.push(Segment {
                iteration,
                chunk: c,
                episode_offset: offset,
                stats: out.stats,
                best_hpwl: out.best_hpwl,
                context_digest_before: before,
                context_digest_after: after,
            });
            offset += plan.episodes_per_subtask;
        }
    }

    let (final_hpwl, final_placement) = best.expect("plan has at least one subtask");
    debug_assert_eq!(total_hpwl(&final_placement, netlist).total, final_hpwl);
    Ok(DecompositionResult {
        setting,
        plan: plan.clone(),
        segments,
        audits,
        final_placement,
        final_hpwl,
        weights: stored.into_iter().map(|w| w.expect("every slot trained")).collect(),
    })
}

/// One row of the settings comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub blocks: usize,
    /// Number of policies; `None` for the undecomposed baseline.
    pub policies: Option<usize>,
    pub decision_reuse: Option<bool>,
    pub setting: Option<u8>,
    pub granularity: usize,
    pub avg_wirelength: f64,
    pub std_wirelength: f64,
    pub best: f64,
}

/// Mean, population standard deviation and minimum of per-seed results.
pub fn seed_statistics(values: &[f64]) -> (f64, f64, f64) {
    assert!(!values.is_empty(), "at least one seed");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    (mean, std, best)
}

/// Summarizes per-seed final HPWLs of one configuration. `setting = None` marks the baseline.
pub fn summarize(blocks: usize, granularity: usize, setting: Option<ReuseSetting>, per_seed: &[f64]) -> SummaryRow {
    let (avg, std, best) = seed_statistics(per_seed);
    SummaryRow {
        blocks,
        policies: setting.map(|s| match s.policy_scope {
            PolicyScope::Multi => granularity,
            PolicyScope::Single => 1,
        }),
        decision_reuse: setting.map(|s| s.decision_reuse),
        setting: setting.map(ReuseSetting::number),
        granularity,
        avg_wirelength: avg,
        std_wirelength: std,
        best,
    }
}

pub const SUMMARY_HEADER: &str = "blocks,policies,decision_reuse,setting,granularity,avg_wirelength,std_wirelength,best";

fn or_na<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn summary_csv(rows: &[SummaryRow], config_hash: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(h) = config_hash {
        writeln!(s, "# config {h}").unwrap();
    }
    s.push_str(SUMMARY_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.blocks,
            or_na(r.policies),
            or_na(r.decision_reuse),
            or_na(r.setting),
            r.granularity,
            r.avg_wirelength,
            r.std_wirelength,
            r.best
        )
        .unwrap();
    }
    s
}

/// Fixed-width table for terminals.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:>7} {:>8} {:>14} {:>7} {:>11} {:>22} {:>10}\n",
        "#blocks", "#policy", "decision_reuse", "setting", "granularity", "avg wirelength", "best"
    );
    for r in rows {
        let avg = format!("{:.2} ± {:.2}", r.avg_wirelength, r.std_wirelength);
        writeln!(
            s,
            "{:>7} {:>8} {:>14} {:>7} {:>11} {:>22} {:>10.2}",
            r.blocks,
            r.policies.map_or("-".into(), |p| p.to_string()),
            r.decision_reuse.map_or("-".into(), |d| if d { "yes".into() } else { "no".to_string() }),
            r.setting.map_or("baseline".into(), |n| n.to_string()),
            r.granularity,
            avg,
            r.best
        )
        .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::generate_synthetic;

    #[test]
    fn partition_sizes() {
        let order: Vec<usize> = (0..30).collect();
        let c = partition_blocks(&order, 2).unwrap();
        assert_eq!(c.iter().map(Vec::len).collect::<Vec<_>>(), vec![15, 15]);
        let order: Vec<usize> = (0..56).collect();
        assert!(partition_blocks(&order, 4).unwrap().iter().all(|c| c.len() == 14));
        assert!(partition_blocks(&order, 2).unwrap().iter().all(|c| c.len() == 28));
        let c = partition_blocks(&(0..7).collect::<Vec<_>>(), 3).unwrap();
        assert_eq!(c, vec![vec![0, 1, 2], vec![3, 4], vec![5, 6]]);
        assert!(matches!(partition_blocks(&order, 0), Err(DecompositionError::BadGranularity { .. })));
        assert!(matches!(partition_blocks(&order, 57), Err(DecompositionError::BadGranularity { .. })));
    }

    #[test]
    fn setting_numbers_round_trip() {
        for n in 1..=4 {
            assert_eq!(ReuseSetting::from_number(n).unwrap().number(), n);
            assert_eq!(n.to_string().parse::<ReuseSetting>().unwrap().number(), n);
        }
        assert_eq!(
            ReuseSetting::from_number(2).unwrap(),
            ReuseSetting::new(PolicyScope::Multi, false)
        );
        assert!(ReuseSetting::from_number(5).is_err());
        assert!("x".parse::<ReuseSetting>().is_err());
    }

    #[test]
    fn apply_setting_semantics() {
        let spec = NetworkSpec::tiny();
        let w = init_weights(&spec, 1).unwrap();
        let keep = apply_setting(ReuseSetting::from_number(1).unwrap(), &w, &spec, 99).unwrap();
        assert_eq!(keep.to_checkpoint(), w.to_checkpoint());
        let fresh = apply_setting(ReuseSetting::from_number(4).unwrap(), &w, &spec, 99).unwrap();
        assert_eq!(
            fresh.partition_digest(Partition::Representation),
            w.partition_digest(Partition::Representation)
        );
        assert_ne!(fresh.partition_digest(Partition::Decision), w.partition_digest(Partition::Decision));
        let other = NetworkSpec { embed_dim: 7, ..spec };
        assert!(apply_setting(ReuseSetting::from_number(1).unwrap(), &w, &other, 0).is_err());
    }

    #[test]
    fn seeding_other_chunks() {
        let arch = BoardArch::perimeter_io(6, 6, 2);
        let nl = generate_synthetic(10, 6, 12, 3, 4).unwrap();
        let all: Vec<usize> = (0..nl.num_blocks()).collect();
        let base = PlacementState::new(&arch, nl.num_blocks());
        let one = SubtaskPlan::new(&nl, &all, 1, 1, 1).unwrap();
        assert_eq!(seed_other_chunks(&arch, &nl, &base, &one, 0).unwrap(), base);
        let plan = SubtaskPlan::new(&nl, &all, 2, 1, 1).unwrap();
        let a = seed_other_chunks(&arch, &nl, &base, &plan, 1).unwrap();
        a.validate(&arch, &nl).unwrap();
        for &b in &plan.chunks[1] {
            assert!(a.position(b).is_none());
        }
        for &b in &plan.chunks[0] {
            assert!(a.position(b).is_some());
        }
        assert_eq!(a, seed_other_chunks(&arch, &nl, &base, &plan, 1).unwrap());
        assert!(matches!(
            seed_other_chunks(&arch, &nl, &base, &plan, 2),
            Err(DecompositionError::BadChunk(2))
        ));
    }

    #[test]
    fn summary_arithmetic() {
        let (m, s, b) = seed_statistics(&[10.0, 12.0, 14.0]);
        assert_eq!(m, 12.0);
        assert!((s - 1.632_993_161_855_452).abs() < 1e-12);
        assert_eq!(b, 10.0);
        assert_eq!(seed_statistics(&[5.0]).1, 0.0);
        let row = summarize(30, 2, ReuseSetting::from_number(3).ok(), &[10.0, 12.0, 14.0]);
        assert_eq!(row.policies, Some(1));
        let csv = summary_csv(&[row, summarize(30, 1, None, &[9.0])], None);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(SUMMARY_HEADER));
        assert_eq!(lines.next(), Some("30,1,true,3,2,12,1.632993161855452,10"));
        assert_eq!(lines.next(), Some("30,NA,NA,NA,1,9,0,9"));
    }

    fn small_instance() -> (BoardArch, Netlist) {
        (BoardArch::perimeter_io(5, 5, 2), generate_synthetic(5, 3, 8, 3, 6).unwrap())
    }

    #[test]
    fn schedule_keeps_context_fixed_and_audits_switches() {
        let (arch, nl) = small_instance();
        let all: Vec<usize> = (0..nl.num_blocks()).collect();
        let base = PlacementState::new(&arch, nl.num_blocks());
        let plan = SubtaskPlan::new(&nl, &all, 2, 16, 2).unwrap();
        let spec = NetworkSpec::for_board(5, 5);
        let cfg = PpoConfig {
            episodes_per_update: 8,
            ..PpoConfig::default()
        };
        for setting in ReuseSetting::ALL {
            let r = run_decomposition(&arch, &nl, &base, &plan, setting, &spec, &cfg, 3, None).unwrap();
            assert_eq!(r.segments.len(), 4);
            for s in &r.segments {
                assert_eq!(s.context_digest_before, s.context_digest_after);
            }
            assert_eq!(r.segments[3].episode_offset, 48);
            // Multi: chunks resume in iteration 1. Single: every run after the first resumes.
            let expected = match setting.policy_scope {
                PolicyScope::Multi => 2,
                PolicyScope::Single => 3,
            };
            assert_eq!(r.audits.len(), expected);
            for a in &r.audits {
                assert!(a.representation_preserved());
                assert_eq!(a.decision_preserved(), setting.decision_reuse);
            }
            r.final_placement.validate(&arch, &nl).unwrap();
            assert!(r.final_placement.is_complete());
            let min_seg = r.segments.iter().map(|s| s.best_hpwl).fold(f64::INFINITY, f64::min);
            assert_eq!(r.final_hpwl, min_seg);
            assert_eq!(r.curve_csv(None).lines().count(), 1 + 4 * 2);
        }
    }

    #[test]
    fn granularity_one_matches_plain_training() {
        let (arch, nl) = small_instance();
        let all: Vec<usize> = (0..nl.num_blocks()).collect();
        let base = PlacementState::new(&arch, nl.num_blocks());
        let plan = SubtaskPlan::new(&nl, &all, 1, 24, 1).unwrap();
        let spec = NetworkSpec::for_board(5, 5);
        let cfg = PpoConfig {
            episodes_per_update: 8,
            ..PpoConfig::default()
        };
        let d = run_decomposition(&arch, &nl, &base, &plan, ReuseSetting::ALL[0], &spec, &cfg, 11, None).unwrap();
        let task = Task::new(&arch, &nl, base, &all).unwrap();
        let t = train(&task, &spec, &PpoConfig { episodes_total: 24, ..cfg }, 11, None).unwrap();
        assert_eq!(d.segments[0].stats.to_csv(None), t.stats.to_csv(None));
        assert_eq!(d.weights[0].to_checkpoint(), t.weights.to_checkpoint());
        assert_eq!(d.final_placement, t.best);
    }
}
