// SPDX-License-Identifier: Apache-2.0

//! Policy/value network with an explicit representation/decision split.
//!
//! Representation layers: a residual 3x3 conv board encoder, a single graph
//! attention layer over the current block's netlist neighborhood, and a dense
//! fusion layer producing the state embedding. Decision layers: the policy head
//! (one logit per grid cell) and the value head.
//!
//! All arithmetic is `f64`.

mod layers;
mod model;
mod policy;

pub mod gradcheck;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use layers::MapShape;
pub use model::{backward, forward, forward_cached, ForwardCache, ForwardOutput};
pub use policy::{log_softmax_masked, masked_policy, policy_entropy};
pub(crate) use policy::policy_logit_grad;

use crate::features::NUM_CHANNELS;
use crate::netlist::NodeFeatures;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no legal action: the mask has no true cell")]
    NoLegalAction,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub conv_channels: usize,
    pub residual_blocks: usize,
    pub gat_dim: usize,
    pub gat_heads: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub width: usize,
    pub height: usize,
}

impl NetworkSpec {
    /// Default layer sizes for a `width x height` board.
    pub fn for_board(width: usize, height: usize) -> Self {
        Self {
            conv_channels: 8,
            residual_blocks: 2,
            gat_dim: 16,
            gat_heads: 1,
            embed_dim: 32,
            hidden_dim: 64,
            width,
            height,
        }
    }

    /// Small spec used for gradient checking.
    pub fn tiny() -> Self {
        Self {
            conv_channels: 3,
            residual_blocks: 1,
            gat_dim: 4,
            gat_heads: 2,
            embed_dim: 5,
            hidden_dim: 6,
            width: 4,
            height: 3,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let dims = [
            ("conv_channels", self.conv_channels),
            ("gat_dim", self.gat_dim),
            ("gat_heads", self.gat_heads),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("width", self.width),
            ("height", self.height),
        ];
        match dims.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(NnError::ShapeMismatch(format!("{name} must be >= 1"))),
            None => Ok(()),
        }
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub(crate) fn fusion_inputs(&self) -> usize {
        self.conv_channels + self.gat_heads * self.gat_dim + NodeFeatures::LEN
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Representation,
    Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub partition: Partition,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    fn fan_in(&self) -> usize {
        self.shape[1..].iter().product::<usize>().max(1)
    }

    fn is_bias(&self) -> bool {
        self.name.ends_with(".bias")
    }
}

/// Indices of each named tensor within the parameter list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub stem_w: usize,
    pub stem_b: usize,
    /// (conv1.w, conv1.b, conv2.w, conv2.b) per residual block.
    pub res: Vec<[usize; 4]>,
    /// (weight, attn_self, attn_neighbor) per head.
    pub heads: Vec<[usize; 3]>,
    pub fusion_w: usize,
    pub fusion_b: usize,
    pub policy_hidden_w: usize,
    pub policy_hidden_b: usize,
    pub policy_out_w: usize,
    pub policy_out_b: usize,
    pub policy_spatial_w: usize,
    pub value_hidden_w: usize,
    pub value_hidden_b: usize,
    pub value_out_w: usize,
    pub value_out_b: usize,
}

/// Parameter names, partitions and shapes in canonical order. A function of the spec only.
pub fn schema(spec: &NetworkSpec) -> Vec<(String, Partition, Vec<usize>)> {
    schema_with_layout(spec).0
}

fn schema_with_layout(spec: &NetworkSpec) -> (Vec<(String, Partition, Vec<usize>)>, Layout) {
    use Partition::{Decision as D, Representation as R};
    let c = spec.conv_channels;
    let mut out: Vec<(String, Partition, Vec<usize>)> = Vec::new();
    let mut push = |name: String, p: Partition, shape: Vec<usize>| {
        out.push((name, p, shape));
        out.len() - 1
    };
    let stem_w = push("board.stem.weight".into(), R, vec![c, NUM_CHANNELS, 3, 3]);
    let stem_b = push("board.stem.bias".into(), R, vec![c]);
    let res = (0..spec.residual_blocks)
        .map(|r| {
            [
                push(format!("board.res{r}.conv1.weight"), R, vec![c, c, 3, 3]),
                push(format!("board.res{r}.conv1.bias"), R, vec![c]),
                push(format!("board.res{r}.conv2.weight"), R, vec![c, c, 3, 3]),
                push(format!("board.res{r}.conv2.bias"), R, vec![c]),
            ]
        })
        .collect();
    let heads = (0..spec.gat_heads)
        .map(|h| {
            [
                push(format!("graph.head{h}.weight"), R, vec![spec.gat_dim, NodeFeatures::LEN]),
                push(format!("graph.head{h}.attn_self"), R, vec![1, spec.gat_dim]),
                push(format!("graph.head{h}.attn_neighbor"), R, vec![1, spec.gat_dim]),
            ]
        })
        .collect();
    let fusion_w = push("fusion.weight".into(), R, vec![spec.embed_dim, spec.fusion_inputs()]);
    let fusion_b = push("fusion.bias".into(), R, vec![spec.embed_dim]);
    let policy_hidden_w = push("policy.hidden.weight".into(), D, vec![spec.hidden_dim, spec.embed_dim]);
    let policy_hidden_b = push("policy.hidden.bias".into(), D, vec![spec.hidden_dim]);
    let policy_out_w = push("policy.out.weight".into(), D, vec![spec.cells(), spec.hidden_dim]);
    let policy_out_b = push("policy.out.bias".into(), D, vec![spec.cells()]);
    let policy_spatial_w = push("policy.spatial.weight".into(), D, vec![1, c]);
    let value_hidden_w = push("value.hidden.weight".into(), D, vec![spec.hidden_dim, spec.embed_dim]);
    let value_hidden_b = push("value.hidden.bias".into(), D, vec![spec.hidden_dim]);
    let value_out_w = push("value.out.weight".into(), D, vec![1, spec.hidden_dim]);
    let value_out_b = push("value.out.bias".into(), D, vec![1]);
    let layout = Layout {
        stem_w,
        stem_b,
        res,
        heads,
        fusion_w,
        fusion_b,
        policy_hidden_w,
        policy_hidden_b,
        policy_out_w,
        policy_out_b,
        policy_spatial_w,
        value_hidden_w,
        value_hidden_b,
        value_out_w,
        value_out_b,
    };
    (out, layout)
}

/// All learnable parameters, in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub spec: NetworkSpec,
    pub params: Vec<Param>,
    pub(crate) layout: Layout,
}

/// Gradient (or any per-parameter buffer) aligned with [`ModelWeights::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(w: &ModelWeights) -> Self {
        Self {
            names: w.params.iter().map(|p| p.name.clone()).collect(),
            values: w.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().flatten().for_each(|v| *v *= k);
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i].as_slice())
    }
}

impl ModelWeights {
    fn from_schema(spec: NetworkSpec, fill: impl FnMut(&(String, Partition, Vec<usize>)) -> Vec<f64>) -> Self {
        let (schema, layout) = schema_with_layout(&spec);
        let mut fill = fill;
        let params = schema
            .iter()
            .map(|entry| Param {
                data: fill(entry),
                name: entry.0.clone(),
                partition: entry.1,
                shape: entry.2.clone(),
            })
            .collect();
        Self { spec, params, layout }
    }

    pub fn zeros(spec: NetworkSpec) -> Self {
        Self::from_schema(spec, |(_, _, shape)| vec![0.0; shape.iter().product()])
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// SHA-256 over names and little-endian values of one partition.
    pub fn partition_digest(&self, partition: Partition) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.partition == partition) {
            h.update(p.name.as_bytes());
            for v in &p.data {
                h.update(v.to_le_bytes());
            }
        }
        let mut s = String::with_capacity(64);
        for byte in h.finalize().iter() {
            write!(s, "{byte:02x}").unwrap();
        }
        s
    }

    pub fn to_checkpoint(&self) -> String {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: self.spec,
            params: self.params.clone(),
        };
        serde_json::to_string(&ckpt).expect("weights serialize")
    }

    /// Parses a checkpoint and rejects anything whose schema differs from its spec's.
    pub fn from_checkpoint(text: &str) -> Result<Self, NnError> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported container {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        ckpt.spec.validate()?;
        let expected = schema(&ckpt.spec);
        check_params(&expected, &ckpt.params)?;
        let (_, layout) = schema_with_layout(&ckpt.spec);
        Ok(Self {
            spec: ckpt.spec,
            params: ckpt.params,
            layout,
        })
    }
}

fn check_params(expected: &[(String, Partition, Vec<usize>)], params: &[Param]) -> Result<(), NnError> {
    if expected.len() != params.len() {
        return Err(NnError::SchemaMismatch(format!(
            "expected {} tensors, found {}",
            expected.len(),
            params.len()
        )));
    }
    for ((name, part, shape), p) in expected.iter().zip(params) {
        if &p.name != name || &p.partition != part || &p.shape != shape {
            return Err(NnError::SchemaMismatch(format!("tensor `{}` does not match `{name}`", p.name)));
        }
        if p.data.len() != shape.iter().product::<usize>() {
            return Err(NnError::SchemaMismatch(format!("tensor `{name}` has {} values", p.data.len())));
        }
    }
    Ok(())
}

const CHECKPOINT_FORMAT: &str = "dncplace-weights";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    spec: NetworkSpec,
    params: Vec<Param>,
}

/// Fan-in scaled uniform weights, zero biases; deterministic per seed.
pub fn init_weights(spec: &NetworkSpec, seed: u64) -> Result<ModelWeights, NnError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = ModelWeights::zeros(*spec);
    for p in &mut w.params {
        if p.is_bias() {
            continue;
        }
        let bound = 1.0 / (p.fan_in() as f64).sqrt();
        for v in &mut p.data {
            *v = rng.gen_range(-bound..bound);
        }
    }
    Ok(w)
}

/// One side of the representation/decision split.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionWeights {
    pub spec: NetworkSpec,
    pub partition: Partition,
    pub params: Vec<Param>,
}

pub fn split_weights(w: &ModelWeights) -> (PartitionWeights, PartitionWeights) {
    let take = |partition| PartitionWeights {
        spec: w.spec,
        partition,
        params: w.params.iter().filter(|p| p.partition == partition).cloned().collect(),
    };
    (take(Partition::Representation), take(Partition::Decision))
}

pub fn merge_weights(rep: &PartitionWeights, dec: &PartitionWeights) -> Result<ModelWeights, NnError> {
    if rep.spec != dec.spec {
        return Err(NnError::SchemaMismatch("partitions come from different specs".into()));
    }
    if rep.partition != Partition::Representation || dec.partition != Partition::Decision {
        return Err(NnError::SchemaMismatch("expected (representation, decision)".into()));
    }
    let (expected, layout) = schema_with_layout(&rep.spec);
    let mut rep_iter = rep.params.iter();
    let mut dec_iter = dec.params.iter();
    let mut params = Vec::with_capacity(expected.len());
    for (name, part, _) in &expected {
        let next = match part {
            Partition::Representation => rep_iter.next(),
            Partition::Decision => dec_iter.next(),
        };
        let p = next.ok_or_else(|| NnError::SchemaMismatch(format!("missing tensor `{name}`")))?;
        params.push(p.clone());
    }
    if rep_iter.next().is_some() || dec_iter.next().is_some() {
        return Err(NnError::SchemaMismatch("extra tensors in partition".into()));
    }
    check_params(&expected, &params)?;
    Ok(ModelWeights {
        spec: rep.spec,
        params,
        layout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let spec = NetworkSpec::for_board(11, 11);
        let a = init_weights(&spec, 3).unwrap();
        let b = init_weights(&spec, 3).unwrap();
        let c = init_weights(&spec, 4).unwrap();
        assert_eq!(a.to_checkpoint(), b.to_checkpoint());
        assert_ne!(a.params, c.params);
        for p in &a.params {
            if p.is_bias() {
                assert!(p.data.iter().all(|&v| v == 0.0), "{} not zero", p.name);
            } else {
                let bound = 1.0 / (p.fan_in() as f64).sqrt();
                assert!(p.data.iter().all(|v| v.abs() <= bound));
            }
        }
    }

    #[test]
    fn default_schema_snapshot() {
        let names: Vec<String> = schema(&NetworkSpec::for_board(11, 11))
            .into_iter()
            .map(|(n, p, s)| format!("{n}:{p:?}:{s:?}"))
            .collect();
        let expected = [
            "board.stem.weight:Representation:[8, 4, 3, 3]",
            "board.stem.bias:Representation:[8]",
            "board.res0.conv1.weight:Representation:[8, 8, 3, 3]",
            "board.res0.conv1.bias:Representation:[8]",
            "board.res0.conv2.weight:Representation:[8, 8, 3, 3]",
            "board.res0.conv2.bias:Representation:[8]",
            "board.res1.conv1.weight:Representation:[8, 8, 3, 3]",
            "board.res1.conv1.bias:Representation:[8]",
            "board.res1.conv2.weight:Representation:[8, 8, 3, 3]",
            "board.res1.conv2.bias:Representation:[8]",
            "graph.head0.weight:Representation:[16, 7]",
            "graph.head0.attn_self:Representation:[1, 16]",
            "graph.head0.attn_neighbor:Representation:[1, 16]",
            "fusion.weight:Representation:[32, 31]",
            "fusion.bias:Representation:[32]",
            "policy.hidden.weight:Decision:[64, 32]",
            "policy.hidden.bias:Decision:[64]",
            "policy.out.weight:Decision:[121, 64]",
            "policy.out.bias:Decision:[121]",
            "policy.spatial.weight:Decision:[1, 8]",
            "value.hidden.weight:Decision:[64, 32]",
            "value.hidden.bias:Decision:[64]",
            "value.out.weight:Decision:[1, 64]",
            "value.out.bias:Decision:[1]",
        ];
        assert_eq!(names, expected);
    }

    #[test]
    fn split_merge_round_trip() {
        let spec = NetworkSpec::tiny();
        let w = init_weights(&spec, 11).unwrap();
        let (rep, dec) = split_weights(&w);
        assert_eq!(merge_weights(&rep, &dec).unwrap(), w);

        let fresh = init_weights(&spec, 12).unwrap();
        let (_, fresh_dec) = split_weights(&fresh);
        let mixed = merge_weights(&rep, &fresh_dec).unwrap();
        assert_eq!(
            mixed.partition_digest(Partition::Representation),
            w.partition_digest(Partition::Representation)
        );
        assert_ne!(
            mixed.partition_digest(Partition::Decision),
            w.partition_digest(Partition::Decision)
        );

        // Every name lands in exactly one partition and the union is the full schema.
        let mut names: Vec<&str> = rep.params.iter().chain(&dec.params).map(|p| p.name.as_str()).collect();
        assert_eq!(names.len(), w.params.len());
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), w.params.len());
        assert!(rep.params.iter().all(|p| p.partition == Partition::Representation));
        assert!(dec.params.iter().all(|p| p.partition == Partition::Decision));
    }

    #[test]
    fn merge_rejects_mismatched_specs() {
        let a = init_weights(&NetworkSpec::tiny(), 1).unwrap();
        let mut other = NetworkSpec::tiny();
        other.hidden_dim += 1;
        let b = init_weights(&other, 1).unwrap();
        let (rep, _) = split_weights(&a);
        let (_, dec) = split_weights(&b);
        assert!(matches!(merge_weights(&rep, &dec), Err(NnError::SchemaMismatch(_))));
        let (rep_a, dec_a) = split_weights(&a);
        assert!(matches!(merge_weights(&dec_a, &rep_a), Err(NnError::SchemaMismatch(_))));
    }

    #[test]
    fn checkpoint_round_trip_and_rejection() {
        let w = init_weights(&NetworkSpec::tiny(), 5).unwrap();
        let text = w.to_checkpoint();
        let back = ModelWeights::from_checkpoint(&text).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_checkpoint(), text);

        let mut broken = w.clone();
        broken.params[0].name = "board.renamed".into();
        assert!(matches!(
            ModelWeights::from_checkpoint(&broken.to_checkpoint()),
            Err(NnError::SchemaMismatch(_))
        ));
        let mut short = w.clone();
        short.params[1].data.pop();
        assert!(matches!(
            ModelWeights::from_checkpoint(&short.to_checkpoint()),
            Err(NnError::SchemaMismatch(_))
        ));
        assert!(matches!(ModelWeights::from_checkpoint("{}"), Err(NnError::Checkpoint(_))));
    }
}
