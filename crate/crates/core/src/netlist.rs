// SPDX-License-Identifier: Apache-2.0

//! Netlist data model: typed blocks connected by single-source nets.
//!
//! The text format is line oriented:
//!
//! ```text
//! # comment
//! block a CLB
//! block b IO
//! net n0 a b      # first block is the source, the rest are sinks
//! ```
//!
//! Block and net ids are dense and follow file order.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{BoardArch, PlacementState};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetlistError {
    #[error("line {line}: unknown block type `{tag}`")]
    UnknownBlockType { line: usize, tag: String },
    #[error("line {line}: duplicate name `{name}`")]
    DuplicateName { line: usize, name: String },
    #[error("line {line}: net `{net}` references undeclared block `{block}`")]
    DanglingPin {
        line: usize,
        net: String,
        block: String,
    },
    #[error("line {line}: net `{net}` has no source pin")]
    NetWithoutSource { line: usize, net: String },
    #[error("line {line}: net `{net}` has no sink pin")]
    NetWithoutSink { line: usize, net: String },
    #[error("line {line}: block `{block}` appears twice as a sink of net `{net}`")]
    DuplicatePin {
        line: usize,
        net: String,
        block: String,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown block id {0}")]
    UnknownBlock(usize),
    #[error("infeasible generator parameters: {0}")]
    InfeasibleParams(String),
    #[error("invalid netlist: {0}")]
    Invalid(String),
}

/// FPGA block (and tile) type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockType {
    #[serde(rename = "CLB")]
    Clb,
    #[serde(rename = "IO")]
    Io,
    #[serde(rename = "DSP")]
    Dsp,
    #[serde(rename = "RAM")]
    Ram,
}

impl BlockType {
    pub const ALL: [BlockType; 4] = [BlockType::Clb, BlockType::Io, BlockType::Dsp, BlockType::Ram];

    /// Position of this type in the one-hot feature encoding.
    pub fn index(self) -> usize {
        match self {
            BlockType::Clb => 0,
            BlockType::Io => 1,
            BlockType::Dsp => 2,
            BlockType::Ram => 3,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            BlockType::Clb => "CLB",
            BlockType::Io => "IO",
            BlockType::Dsp => "DSP",
            BlockType::Ram => "RAM",
        }
    }
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for BlockType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "CLB" => Ok(BlockType::Clb),
            "IO" => Ok(BlockType::Io),
            "DSP" => Ok(BlockType::Dsp),
            "RAM" => Ok(BlockType::Ram),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub id: usize,
    pub name: String,
    pub btype: BlockType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PinRole {
    Source,
    Sink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pin {
    pub block: usize,
    pub role: PinRole,
}

/// A hyperedge. `pins[0]` is always the single source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Net {
    pub id: usize,
    pub name: String,
    pub pins: Vec<Pin>,
}

impl Net {
    pub fn source(&self) -> usize {
        self.pins[0].block
    }

    pub fn sinks(&self) -> impl Iterator<Item = usize> + '_ {
        self.pins[1..].iter().map(|p| p.block)
    }
}

/// Immutable after construction; every constructor validates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Netlist {
    blocks: Vec<Block>,
    nets: Vec<Net>,
    adjacency: Vec<Vec<usize>>,
    neighbors: Vec<Vec<usize>>,
    source_pins: Vec<usize>,
    sink_pins: Vec<usize>,
}

impl Netlist {
    /// Builds a netlist from blocks and `(name, source, sinks)` triples of block ids.
    pub fn new(
        blocks: Vec<(String, BlockType)>,
        nets: Vec<(String, usize, Vec<usize>)>,
    ) -> Result<Self, NetlistError> {
        let mut names = HashSet::new();
        let blocks: Vec<Block> = blocks
            .into_iter()
            .enumerate()
            .map(|(id, (name, btype))| Block { id, name, btype })
            .collect();
        for b in &blocks {
            if !names.insert(b.name.as_str()) {
                return Err(NetlistError::Invalid(format!("duplicate block name `{}`", b.name)));
            }
        }
        let mut net_names = HashSet::new();
        let mut out = Vec::with_capacity(nets.len());
        for (id, (name, source, sinks)) in nets.into_iter().enumerate() {
            if !net_names.insert(name.clone()) {
                return Err(NetlistError::Invalid(format!("duplicate net name `{name}`")));
            }
            if sinks.is_empty() {
                return Err(NetlistError::Invalid(format!("net `{name}` has no sink")));
            }
            let mut seen = HashSet::new();
            for &b in std::iter::once(&source).chain(&sinks) {
                if b >= blocks.len() {
                    return Err(NetlistError::UnknownBlock(b));
                }
            }
            for &s in &sinks {
                if !seen.insert(s) {
                    return Err(NetlistError::Invalid(format!(
                        "block {s} appears twice as a sink of net `{name}`"
                    )));
                }
            }
            let mut pins = vec![Pin {
                block: source,
                role: PinRole::Source,
            }];
            pins.extend(sinks.into_iter().map(|block| Pin {
                block,
                role: PinRole::Sink,
            }));
            out.push(Net { id, name, pins });
        }
        Ok(Self::assemble(blocks, out))
    }

    fn assemble(blocks: Vec<Block>, nets: Vec<Net>) -> Self {
        let n = blocks.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut source_pins = vec![0; n];
        let mut sink_pins = vec![0; n];
        for net in &nets {
            for pin in &net.pins {
                let adj: &mut Vec<usize> = &mut adjacency[pin.block];
                if adj.last() != Some(&net.id) {
                    adj.push(net.id);
                }
                match pin.role {
                    PinRole::Source => source_pins[pin.block] += 1,
                    PinRole::Sink => sink_pins[pin.block] += 1,
                }
            }
        }
        let neighbors = (0..n)
            .map(|b| {
                let mut nb: Vec<usize> = adjacency[b]
                    .iter()
                    .flat_map(|&net| nets[net].pins.iter().map(|p| p.block))
                    .filter(|&other| other != b)
                    .collect();
                nb.sort_unstable();
                nb.dedup();
                nb
            })
            .collect();
        Self {
            blocks,
            nets,
            adjacency,
            neighbors,
            source_pins,
            sink_pins,
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn nets(&self) -> &[Net] {
        &self.nets
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, id: usize) -> Result<&Block, NetlistError> {
        self.blocks.get(id).ok_or(NetlistError::UnknownBlock(id))
    }

    pub fn block_by_name(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Incident net ids of `block`, ascending.
    pub fn incident_nets(&self, block: usize) -> &[usize] {
        &self.adjacency[block]
    }

    /// Distinct blocks sharing at least one net with `block`, ascending, excluding itself.
    pub fn neighbors(&self, block: usize) -> &[usize] {
        &self.neighbors[block]
    }

    /// Number of pins `block` holds with the given role, across all nets.
    pub fn role_count(&self, block: usize, role: PinRole) -> usize {
        match role {
            PinRole::Source => self.source_pins[block],
            PinRole::Sink => self.sink_pins[block],
        }
    }

    pub fn pin_count(&self) -> usize {
        self.nets.iter().map(|n| n.pins.len()).sum()
    }

    /// Number of distinct nets incident to `block`.
    pub fn degree(&self, block: usize) -> Result<usize, NetlistError> {
        self.block(block)?;
        Ok(self.adjacency[block].len())
    }

    /// Orders `managed` by descending degree, ties by ascending id.
    pub fn placement_order(&self, managed: &[usize]) -> Result<Vec<usize>, NetlistError> {
        let mut ids = managed.to_vec();
        for &b in &ids {
            self.block(b)?;
        }
        ids.sort_unstable_by(|&a, &b| {
            self.adjacency[b]
                .len()
                .cmp(&self.adjacency[a].len())
                .then(a.cmp(&b))
        });
        ids.dedup();
        Ok(ids)
    }

    pub fn ids_of_type(&self, btype: BlockType) -> Vec<usize> {
        self.blocks
            .iter()
            .filter(|b| b.btype == btype)
            .map(|b| b.id)
            .collect()
    }

    /// Text form accepted by [`parse_netlist`].
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for b in &self.blocks {
            writeln!(s, "block {} {}", b.name, b.btype).unwrap();
        }
        for net in &self.nets {
            write!(s, "net {}", net.name).unwrap();
            for pin in &net.pins {
                write!(s, " {}", self.blocks[pin.block].name).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

pub fn parse_netlist(text: &str) -> Result<Netlist, NetlistError> {
    let mut blocks: Vec<Block> = Vec::new();
    let mut by_name: HashMap<String, usize> = HashMap::new();
    let mut nets: Vec<Net> = Vec::new();
    let mut net_names: HashSet<String> = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut tokens = strip_comment(raw).split_whitespace();
        let Some(keyword) = tokens.next() else {
            continue;
        };
        match keyword {
            "block" => {
                let (Some(name), Some(tag), None) = (tokens.next(), tokens.next(), tokens.next())
                else {
                    return Err(NetlistError::Syntax {
                        line,
                        message: "expected `block <name> <type>`".into(),
                    });
                };
                let btype = tag.parse().map_err(|tag| NetlistError::UnknownBlockType { line, tag })?;
                if by_name.contains_key(name) {
                    return Err(NetlistError::DuplicateName {
                        line,
                        name: name.into(),
                    });
                }
                let id = blocks.len();
                by_name.insert(name.to_string(), id);
                blocks.push(Block {
                    id,
                    name: name.to_string(),
                    btype,
                });
            }
            "net" => {
                let Some(name) = tokens.next() else {
                    return Err(NetlistError::Syntax {
                        line,
                        message: "expected `net <name> <source> <sink>+`".into(),
                    });
                };
                if !net_names.insert(name.to_string()) {
                    return Err(NetlistError::DuplicateName {
                        line,
                        name: name.into(),
                    });
                }
                let mut pins = Vec::new();
                for (i, block) in tokens.enumerate() {
                    let Some(&id) = by_name.get(block) else {
                        return Err(NetlistError::DanglingPin {
                            line,
                            net: name.into(),
                            block: block.into(),
                        });
                    };
                    let role = if i == 0 { PinRole::Source } else { PinRole::Sink };
                    if role == PinRole::Sink && pins.iter().any(|p: &Pin| p.block == id && p.role == role) {
                        return Err(NetlistError::DuplicatePin {
                            line,
                            net: name.into(),
                            block: block.into(),
                        });
                    }
                    pins.push(Pin { block: id, role });
                }
                match pins.len() {
                    0 => {
                        return Err(NetlistError::NetWithoutSource {
                            line,
                            net: name.into(),
                        })
                    }
                    1 => {
                        return Err(NetlistError::NetWithoutSink {
                            line,
                            net: name.into(),
                        })
                    }
                    _ => {}
                }
                nets.push(Net {
                    id: nets.len(),
                    name: name.to_string(),
                    pins,
                });
            }
            other => {
                return Err(NetlistError::Syntax {
                    line,
                    message: format!("unknown keyword `{other}`"),
                })
            }
        }
    }
    Ok(Netlist::assemble(blocks, nets))
}

/// Per-block feature vector: one-hot type (4), normalized id, normalized x, normalized y.
///
/// Coordinates are -1 for unplaced blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatures(pub [f64; NodeFeatures::LEN]);

impl NodeFeatures {
    pub const LEN: usize = 7;

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn normalize_coord(v: usize, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        v as f64 / (extent - 1) as f64
    }
}

pub fn node_features(
    netlist: &Netlist,
    block: usize,
    placement: &PlacementState,
    board: &BoardArch,
) -> Result<NodeFeatures, NetlistError> {
    let b = netlist.block(block)?;
    let mut f = [0.0; NodeFeatures::LEN];
    f[b.btype.index()] = 1.0;
    f[4] = block as f64 / netlist.num_blocks() as f64;
    match placement.position(block) {
        Some(pos) => {
            f[5] = normalize_coord(pos.x, board.width());
            f[6] = normalize_coord(pos.y, board.height());
        }
        None => {
            f[5] = -1.0;
            f[6] = -1.0;
        }
    }
    Ok(NodeFeatures(f))
}

/// Random netlist in which every block appears in at least one net.
///
/// Block names are `c<i>` for CLBs followed by `io<i>` for IOs.
pub fn generate_synthetic(
    n_clb: usize,
    n_io: usize,
    n_nets: usize,
    max_fanout: usize,
    seed: u64,
) -> Result<Netlist, NetlistError> {
    if n_clb == 0 || n_io == 0 || n_nets == 0 || max_fanout == 0 {
        return Err(NetlistError::InfeasibleParams(
            "block counts, net count and fanout must all be >= 1".into(),
        ));
    }
    let n = n_clb + n_io;
    let fanout_cap = max_fanout.min(n - 1);
    if n_nets * (1 + fanout_cap) < n {
        return Err(NetlistError::InfeasibleParams(format!(
            "{n_nets} nets of fanout <= {fanout_cap} cannot cover {n} blocks"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut fanouts: Vec<usize> = (0..n_nets).map(|_| rng.gen_range(1..=fanout_cap)).collect();
    let mut pins: usize = fanouts.iter().map(|k| k + 1).sum();
    let mut i = 0;
    while pins < n {
        if fanouts[i] < fanout_cap {
            fanouts[i] += 1;
            pins += 1;
        }
        i = (i + 1) % n_nets;
    }

    let mut uncovered: Vec<usize> = (0..n).collect();
    uncovered.shuffle(&mut rng);
    let mut nets = Vec::with_capacity(n_nets);
    for (net_id, &k) in fanouts.iter().enumerate() {
        let mut members: Vec<usize> = Vec::with_capacity(k + 1);
        while members.len() < k + 1 {
            let candidate = match uncovered.pop() {
                Some(b) => b,
                None => rng.gen_range(0..n),
            };
            if members.contains(&candidate) {
                // Only reachable for random draws; an uncovered block is never a member yet.
                continue;
            }
            members.push(candidate);
        }
        let source = members[0];
        nets.push((format!("n{net_id}"), source, members[1..].to_vec()));
    }

    let blocks = (0..n_clb)
        .map(|i| (format!("c{i}"), BlockType::Clb))
        .chain((0..n_io).map(|i| (format!("io{i}"), BlockType::Io)))
        .collect();
    Netlist::new(blocks, nets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::Position;

    #[test]
    fn smallest_valid_netlist() {
        let nl = parse_netlist("block a CLB\nblock b IO\nnet n0 a b\n").unwrap();
        assert_eq!(nl.num_blocks(), 2);
        assert_eq!(nl.nets().len(), 1);
        assert_eq!(nl.incident_nets(0), &[0]);
        assert_eq!(nl.incident_nets(1), &[0]);
        assert_eq!(nl.nets()[0].source(), 0);
    }

    #[test]
    fn parse_errors_name_their_line() {
        let err = parse_netlist("block a CLB\nnet n0 a c\n").unwrap_err();
        assert_eq!(
            err,
            NetlistError::DanglingPin {
                line: 2,
                net: "n0".into(),
                block: "c".into()
            }
        );
        assert!(matches!(
            parse_netlist("block a LUT").unwrap_err(),
            NetlistError::UnknownBlockType { line: 1, .. }
        ));
        assert!(matches!(
            parse_netlist("block a CLB\n\nblock a IO").unwrap_err(),
            NetlistError::DuplicateName { line: 3, .. }
        ));
        assert!(matches!(
            parse_netlist("block a CLB\nnet n0").unwrap_err(),
            NetlistError::NetWithoutSource { line: 2, .. }
        ));
        assert!(matches!(
            parse_netlist("block a CLB\nnet n0 a # only a source").unwrap_err(),
            NetlistError::NetWithoutSink { line: 2, .. }
        ));
        assert!(matches!(
            parse_netlist("block a CLB\nblock b CLB\nnet n0 a b b").unwrap_err(),
            NetlistError::DuplicatePin { line: 3, .. }
        ));
    }

    #[test]
    fn tseng_scale_file_parses() {
        let mut text = String::new();
        for i in 0..56 {
            writeln!(text, "block c{i} CLB").unwrap();
        }
        for i in 0..174 {
            writeln!(text, "block io{i} IO").unwrap();
        }
        text.push_str("net n0 c0 io0 io1\n");
        let nl = parse_netlist(&text).unwrap();
        assert_eq!(nl.num_blocks(), 230);
        assert_eq!(nl.ids_of_type(BlockType::Clb).len(), 56);
        assert_eq!(nl.ids_of_type(BlockType::Io).len(), 174);
    }

    #[test]
    fn degree_counts_incident_nets() {
        let nl = parse_netlist(
            "block a CLB\nblock b CLB\nblock c CLB\nblock d IO\n\
             net n0 a b\nnet n1 a c\nnet n2 b a\n",
        )
        .unwrap();
        assert_eq!(nl.degree(0).unwrap(), 3);
        assert_eq!(nl.degree(3).unwrap(), 0);
        assert_eq!(nl.degree(9), Err(NetlistError::UnknownBlock(9)));
    }

    #[test]
    fn degree_sum_equals_pin_count() {
        let nl = generate_synthetic(12, 8, 15, 4, 3).unwrap();
        let total: usize = (0..nl.num_blocks()).map(|b| nl.degree(b).unwrap()).sum();
        let mut brute = 0;
        for net in nl.nets() {
            brute += net.pins.len();
        }
        assert_eq!(total, brute);
    }

    #[test]
    fn placement_order_sorts_by_degree_then_id() {
        // degrees: a=3, b=1, c=3
        let nl = parse_netlist(
            "block a CLB\nblock b CLB\nblock c CLB\nblock d IO\nblock e IO\n\
             net n0 a c\nnet n1 a d\nnet n2 c e\nnet n3 a c b\n",
        )
        .unwrap();
        assert_eq!(nl.placement_order(&[1, 2, 0]).unwrap(), vec![0, 2, 1]);
        assert_eq!(nl.placement_order(&[1]).unwrap(), vec![1]);
        assert!(matches!(nl.placement_order(&[7]), Err(NetlistError::UnknownBlock(7))));
    }

    #[test]
    fn node_features_match_definition() {
        let arch = BoardArch::perimeter_io(11, 11, 2);
        let mut text = String::from("block c0 CLB\n");
        for i in 1..9 {
            writeln!(text, "block c{i} CLB").unwrap();
        }
        text.push_str("block io9 IO\n");
        let nl = parse_netlist(&text).unwrap();
        let mut state = PlacementState::new(&arch, nl.num_blocks());
        let f = node_features(&nl, 0, &state, &arch).unwrap();
        assert_eq!(f.0, [1.0, 0.0, 0.0, 0.0, 0.0, -1.0, -1.0]);
        state.place(&arch, &nl, 9, Position::new(0, 5)).unwrap();
        let f = node_features(&nl, 9, &state, &arch).unwrap();
        assert_eq!(f.0, [0.0, 1.0, 0.0, 0.0, 0.9, 0.0, 0.5]);
        assert!(node_features(&nl, 10, &state, &arch).is_err());
    }

    #[test]
    fn generator_is_deterministic_and_covers_every_block() {
        let a = generate_synthetic(2, 2, 2, 2, 7).unwrap();
        let b = generate_synthetic(2, 2, 2, 2, 7).unwrap();
        assert_eq!(a.serialize(), b.serialize());
        for blk in 0..a.num_blocks() {
            assert!(a.degree(blk).unwrap() >= 1);
        }
        let tseng = generate_synthetic(56, 174, 300, 8, 1).unwrap();
        assert_eq!(tseng.ids_of_type(BlockType::Clb).len(), 56);
        assert_eq!(tseng.ids_of_type(BlockType::Io).len(), 174);
        for net in tseng.nets() {
            let sinks = net.pins.len() - 1;
            assert!((1..=8).contains(&sinks));
        }
    }

    #[test]
    fn generator_rejects_uncoverable_params() {
        assert!(matches!(
            generate_synthetic(10, 10, 2, 2, 0),
            Err(NetlistError::InfeasibleParams(_))
        ));
        assert!(matches!(
            generate_synthetic(0, 1, 1, 1, 0),
            Err(NetlistError::InfeasibleParams(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn serialize_parse_round_trip(
            clb in 1usize..12, io in 1usize..12, extra in 0usize..10, fanout in 1usize..5, seed in 0u64..1000
        ) {
            let n = clb + io;
            let nets = n.div_ceil(fanout.min(n - 1) + 1) + extra;
            let nl = generate_synthetic(clb, io, nets, fanout, seed).unwrap();
            let back = parse_netlist(&nl.serialize()).unwrap();
            proptest::prop_assert_eq!(&back, &nl);
            for b in 0..nl.num_blocks() {
                for net in nl.nets() {
                    let member = net.pins.iter().any(|p| p.block == b);
                    proptest::prop_assert_eq!(member, nl.incident_nets(b).contains(&net.id));
                }
            }
            let all: Vec<usize> = (0..n).collect();
            let order = nl.placement_order(&all).unwrap();
            proptest::prop_assert_eq!(&order, &nl.placement_order(&all).unwrap());
            let mut sorted = order.clone();
            sorted.sort_unstable();
            proptest::prop_assert_eq!(sorted, all);
        }
    }
}
