// SPDX-License-Identifier: Apache-2.0

//! Observation construction: four board-shaped channels plus block features.
//!
//! Channel order is fixed: capacity, input (source pins), output (sink pins),
//! wire-mask. Each channel is min-max normalized independently.

use std::fmt::Write as _;

use thiserror::Error;

use crate::board::{legal_mask, ActionMask, BoardArch, PlacementState};
use crate::netlist::{node_features, Netlist, NodeFeatures, PinRole};
use crate::wirelength::delta_map;

pub const NUM_CHANNELS: usize = 4;
pub const CHANNEL_NAMES: [&str; NUM_CHANNELS] = ["capacity", "input", "output", "wire_mask"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("block {0} is already placed")]
    AlreadyPlaced(usize),
    #[error("unknown block id {0}")]
    UnknownBlock(usize),
}

/// Row-major `height x width` grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.data.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(s, "{}", cells.join(",")).unwrap();
        }
        s
    }
}

/// The MDP observation for placing one block.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensor {
    pub width: usize,
    pub height: usize,
    /// `NUM_CHANNELS x height x width`, channel-major.
    pub channels: Vec<f64>,
    pub block: usize,
    pub current_block: NodeFeatures,
    /// Features of every block sharing a net with the current block.
    pub neighborhood: Vec<NodeFeatures>,
    pub current_mask: ActionMask,
}

impl StateTensor {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.channels[c * n..(c + 1) * n]
    }

    pub fn channel_grid(&self, c: usize) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.channel(c).to_vec(),
        }
    }
}

pub fn capacity_channel(arch: &BoardArch, state: &PlacementState) -> Grid {
    let data = arch
        .capacities()
        .iter()
        .zip(state.occupancies())
        .map(|(&cap, &occ)| f64::from(cap - occ))
        .collect();
    Grid {
        width: arch.width(),
        height: arch.height(),
        data,
    }
}

/// Per cell, the number of `role` pins held by the blocks placed there.
pub fn incidence_channel(arch: &BoardArch, netlist: &Netlist, state: &PlacementState, role: PinRole) -> Grid {
    let mut data = vec![0.0; arch.cells()];
    for (b, pos) in state.placed() {
        data[arch.index(pos)] += netlist.role_count(b, role) as f64;
    }
    Grid {
        width: arch.width(),
        height: arch.height(),
        data,
    }
}

/// HPWL delta on legal cells; illegal cells hold `max legal delta + 1`.
pub fn wire_mask_channel(
    arch: &BoardArch,
    netlist: &Netlist,
    state: &PlacementState,
    block: usize,
    mask: &ActionMask,
) -> Result<Grid, FeatureError> {
    if block >= netlist.num_blocks() {
        return Err(FeatureError::UnknownBlock(block));
    }
    if state.position(block).is_some() {
        return Err(FeatureError::AlreadyPlaced(block));
    }
    let mut data = delta_map(arch, state, netlist, block);
    let max_legal = mask
        .legal_indices()
        .map(|i| data[i])
        .fold(0.0_f64, f64::max);
    let sentinel = max_legal + 1.0;
    for (v, &legal) in data.iter_mut().zip(&mask.cells) {
        if !legal {
            *v = sentinel;
        }
    }
    Ok(Grid {
        width: arch.width(),
        height: arch.height(),
        data,
    })
}

/// Rescales finite entries to [0, 1]; constant inputs map to 0.
pub fn min_max_normalize(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    for v in values.iter_mut() {
        *v = if span > 0.0 && v.is_finite() { (*v - lo) / span } else { 0.0 };
    }
}

pub fn assemble_state(
    arch: &BoardArch,
    state: &PlacementState,
    netlist: &Netlist,
    block: usize,
) -> Result<StateTensor, FeatureError> {
    let btype = netlist
        .block(block)
        .map_err(|_| FeatureError::UnknownBlock(block))?
        .btype;
    if state.position(block).is_some() {
        return Err(FeatureError::AlreadyPlaced(block));
    }
    let mask = legal_mask(arch, state, btype);
    let grids = [
        capacity_channel(arch, state),
        incidence_channel(arch, netlist, state, PinRole::Source),
        incidence_channel(arch, netlist, state, PinRole::Sink),
        wire_mask_channel(arch, netlist, state, block, &mask)?,
    ];
    let mut channels = Vec::with_capacity(NUM_CHANNELS * arch.cells());
    for mut g in grids {
        min_max_normalize(&mut g.data);
        channels.extend(g.data);
    }
    let features = |b| node_features(netlist, b, state, arch).expect("block id validated");
    Ok(StateTensor {
        width: arch.width(),
        height: arch.height(),
        channels,
        block,
        current_block: features(block),
        neighborhood: netlist.neighbors(block).iter().map(|&b| features(b)).collect(),
        current_mask: mask,
    })
}
