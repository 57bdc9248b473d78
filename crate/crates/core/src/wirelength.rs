// SPDX-License-Identifier: Apache-2.0

//! Half-perimeter wirelength, incremental deltas, rewards and VPR `.place` I/O.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{legal_mask, BoardArch, BoardError, PlacementState, Position};
use crate::netlist::{Net, Netlist};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WirelengthError {
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error("block `{0}` is not placed")]
    UnplacedBlock(String),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

/// Bounding box of the placed pins of one net.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PinBox {
    min_x: usize,
    max_x: usize,
    min_y: usize,
    max_y: usize,
}

impl PinBox {
    fn at(p: Position) -> Self {
        Self {
            min_x: p.x,
            max_x: p.x,
            min_y: p.y,
            max_y: p.y,
        }
    }

    fn extend(&mut self, p: Position) {
        self.min_x = self.min_x.min(p.x);
        self.max_x = self.max_x.max(p.x);
        self.min_y = self.min_y.min(p.y);
        self.max_y = self.max_y.max(p.y);
    }

    fn half_perimeter(&self) -> f64 {
        ((self.max_x - self.min_x) + (self.max_y - self.min_y)) as f64
    }

    /// Half-perimeter growth if `p` joins the box.
    fn growth(&self, p: Position) -> f64 {
        let dx = self.min_x.saturating_sub(p.x) + p.x.saturating_sub(self.max_x);
        let dy = self.min_y.saturating_sub(p.y) + p.y.saturating_sub(self.max_y);
        (dx + dy) as f64
    }
}

fn placed_box(state: &PlacementState, net: &Net, skip: Option<usize>) -> Option<PinBox> {
    let mut bbox: Option<PinBox> = None;
    for pin in &net.pins {
        if Some(pin.block) == skip {
            continue;
        }
        if let Some(p) = state.position(pin.block) {
            match bbox.as_mut() {
                Some(b) => b.extend(p),
                None => bbox = Some(PinBox::at(p)),
            }
        }
    }
    bbox
}

/// HPWL over the net's placed pins; 0 with fewer than two placed.
pub fn net_hpwl(state: &PlacementState, net: &Net) -> f64 {
    placed_box(state, net, None).map_or(0.0, |b| b.half_perimeter())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirelengthReport {
    pub total: f64,
    pub per_net: Vec<f64>,
}

impl WirelengthReport {
    /// `net_id,hpwl` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("net_id,hpwl\n");
        for (i, h) in self.per_net.iter().enumerate() {
            writeln!(s, "{i},{h}").unwrap();
        }
        s
    }
}

pub fn total_hpwl(state: &PlacementState, netlist: &Netlist) -> WirelengthReport {
    let per_net: Vec<f64> = netlist.nets().iter().map(|n| net_hpwl(state, n)).collect();
    WirelengthReport {
        total: per_net.iter().sum(),
        per_net,
    }
}

fn check_candidate(
    arch: &BoardArch,
    state: &PlacementState,
    netlist: &Netlist,
    block: usize,
    pos: Position,
) -> Result<(), BoardError> {
    let btype = netlist.block(block).map_err(|_| BoardError::UnknownBlock(block))?.btype;
    if state.position(block).is_some() {
        return Err(BoardError::AlreadyPlaced(block));
    }
    if !arch.contains(pos) || !legal_mask(arch, state, btype).cells[arch.index(pos)] {
        return Err(BoardError::IllegalPosition {
            block,
            x: pos.x,
            y: pos.y,
            reason: "not a legal cell for this block",
        });
    }
    Ok(())
}

/// Change in total HPWL if `block` were placed at `pos`. Does not mutate `state`.
pub fn delta_hpwl(
    arch: &BoardArch,
    state: &PlacementState,
    netlist: &Netlist,
    block: usize,
    pos: Position,
) -> Result<f64, WirelengthError> {
    check_candidate(arch, state, netlist, block, pos)?;
    Ok(netlist
        .incident_nets(block)
        .iter()
        .filter_map(|&n| placed_box(state, &netlist.nets()[n], Some(block)))
        .map(|b| b.growth(pos))
        .sum())
}

/// HPWL delta of placing an unplaced `block` at every cell of the grid, row-major.
///
/// Legality is not checked; callers mask illegal cells themselves.
pub fn delta_map(arch: &BoardArch, state: &PlacementState, netlist: &Netlist, block: usize) -> Vec<f64> {
    let boxes: Vec<PinBox> = netlist
        .incident_nets(block)
        .iter()
        .filter_map(|&n| placed_box(state, &netlist.nets()[n], Some(block)))
        .collect();
    (0..arch.cells())
        .map(|i| {
            let p = arch.position(i);
            boxes.iter().map(|b| b.growth(p)).sum()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    NegHpwl,
    NegHpwlNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub normalizer: f64,
    pub mode: RewardMode,
}

impl RewardConfig {
    pub fn normalized(normalizer: f64) -> Self {
        assert!(normalizer > 0.0, "reward normalizer must be positive");
        Self {
            normalizer,
            mode: RewardMode::NegHpwlNormalized,
        }
    }
}

pub fn terminal_reward(state: &PlacementState, netlist: &Netlist, cfg: &RewardConfig) -> f64 {
    reward_for_total(total_hpwl(state, netlist).total, cfg)
}

pub fn reward_for_total(total: f64, cfg: &RewardConfig) -> f64 {
    match cfg.mode {
        RewardMode::NegHpwl => -total,
        RewardMode::NegHpwlNormalized => -total / cfg.normalizer,
    }
}

/// Writes a VPR-style `.place` file. Blocks sharing a cell get ascending sub-block
/// indices in block id order.
pub fn export_vpr_place(
    state: &PlacementState,
    netlist: &Netlist,
    arch: &BoardArch,
    netlist_file: Option<&str>,
) -> Result<String, WirelengthError> {
    let mut s = String::new();
    if let Some(file) = netlist_file {
        writeln!(s, "Netlist_File: {file} Netlist_ID: SHA256:none").unwrap();
    }
    writeln!(s, "Array size: {} x {} logic blocks", arch.width(), arch.height()).unwrap();
    s.push('\n');
    s.push_str("#block name\tx\ty\tsubblk\tblock number\n");
    s.push_str("#----------\t--\t--\t------\t------------\n");
    let mut sub: HashMap<Position, usize> = HashMap::new();
    for b in netlist.blocks() {
        let pos = state
            .position(b.id)
            .ok_or_else(|| WirelengthError::UnplacedBlock(b.name.clone()))?;
        let slot = sub.entry(pos).or_insert(0);
        writeln!(s, "{} {} {} {} #{}", b.name, pos.x, pos.y, slot, b.id).unwrap();
        *slot += 1;
    }
    Ok(s)
}

/// Reads a `.place` file back into a placement. Blocks absent from the file stay unplaced.
pub fn import_vpr_place(
    text: &str,
    netlist: &Netlist,
    arch: &BoardArch,
) -> Result<PlacementState, WirelengthError> {
    let mut state = PlacementState::new(arch, netlist.num_blocks());
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.trim();
        if body.is_empty()
            || body.starts_with('#')
            || body.starts_with("Netlist_File:")
            || body.starts_with("Array size:")
        {
            continue;
        }
        let body = body.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = body.split_whitespace().collect();
        let syntax = |message: String| WirelengthError::Syntax { line, message };
        if tokens.len() < 3 {
            return Err(syntax(format!("expected `<name> <x> <y> [subblk]`, found `{body}`")));
        }
        let block = netlist
            .block_by_name(tokens[0])
            .ok_or_else(|| syntax(format!("unknown block `{}`", tokens[0])))?;
        let coord = |t: &str| t.parse::<usize>().map_err(|_| syntax(format!("bad coordinate `{t}`")));
        let pos = Position::new(coord(tokens[1])?, coord(tokens[2])?);
        state.place(arch, netlist, block.id, pos)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{generate_synthetic, parse_netlist};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn open_board(w: usize, h: usize, cap: u32) -> BoardArch {
        let tiles = vec![(crate::netlist::BlockType::Clb, cap); w * h];
        BoardArch::new(w, h, tiles).unwrap()
    }

    fn clb_chain(n: usize, nets: &str) -> Netlist {
        let mut text = String::new();
        for i in 0..n {
            writeln!(text, "block b{i} CLB").unwrap();
        }
        text.push_str(nets);
        parse_netlist(&text).unwrap()
    }

    fn placed(arch: &BoardArch, nl: &Netlist, at: &[(usize, usize, usize)]) -> PlacementState {
        let mut s = PlacementState::new(arch, nl.num_blocks());
        for &(b, x, y) in at {
            s.place(arch, nl, b, Position::new(x, y)).unwrap();
        }
        s
    }

    /// Reference HPWL straight from the definition.
    fn brute_total(state: &PlacementState, nl: &Netlist) -> f64 {
        let mut total = 0.0;
        for net in nl.nets() {
            let pts: Vec<Position> = net.pins.iter().filter_map(|p| state.position(p.block)).collect();
            if pts.len() < 2 {
                continue;
            }
            let xs = pts.iter().map(|p| p.x);
            let ys = pts.iter().map(|p| p.y);
            total += (xs.clone().max().unwrap() - xs.min().unwrap()) as f64
                + (ys.clone().max().unwrap() - ys.min().unwrap()) as f64;
        }
        total
    }

    #[test]
    fn net_hpwl_examples() {
        let arch = open_board(6, 6, 2);
        let nl = clb_chain(3, "net n0 b0 b1\nnet n1 b0 b1 b2\n");
        let s = placed(&arch, &nl, &[(0, 1, 1), (1, 3, 4)]);
        assert_eq!(net_hpwl(&s, &nl.nets()[0]), 5.0);
        let s1 = placed(&arch, &nl, &[(0, 1, 1)]);
        assert_eq!(net_hpwl(&s1, &nl.nets()[0]), 0.0);
        let s2 = placed(&arch, &nl, &[(0, 0, 0), (1, 2, 0), (2, 1, 5)]);
        assert_eq!(net_hpwl(&s2, &nl.nets()[1]), 7.0);
    }

    #[test]
    fn total_is_additive() {
        let arch = open_board(6, 6, 2);
        let nl = clb_chain(5, "net n0 b0 b1\nnet n1 b2 b3 b4\n");
        assert_eq!(total_hpwl(&PlacementState::new(&arch, 5), &nl).total, 0.0);
        let s = placed(&arch, &nl, &[(0, 1, 1), (1, 3, 4), (2, 0, 0), (3, 2, 0), (4, 1, 5)]);
        let r = total_hpwl(&s, &nl);
        assert_eq!(r.per_net, vec![5.0, 7.0]);
        assert_eq!(r.total, 12.0);
        assert_eq!(r.to_csv(), "net_id,hpwl\n0,5\n1,7\n");
    }

    #[test]
    fn delta_examples() {
        let arch = open_board(6, 6, 2);
        let nl = clb_chain(3, "net n0 b0 b1\nnet n1 b1 b2\n");
        let empty = PlacementState::new(&arch, 3);
        for i in 0..arch.cells() {
            assert_eq!(delta_hpwl(&arch, &empty, &nl, 1, arch.position(i)).unwrap(), 0.0);
        }
        let s = placed(&arch, &nl, &[(0, 0, 0)]);
        assert_eq!(delta_hpwl(&arch, &s, &nl, 1, Position::new(3, 4)).unwrap(), 7.0);
        assert!(matches!(
            delta_hpwl(&arch, &s, &nl, 0, Position::new(1, 1)),
            Err(WirelengthError::Board(BoardError::AlreadyPlaced(0)))
        ));
        let io_arch = BoardArch::perimeter_io(4, 4, 1);
        let s = PlacementState::new(&io_arch, 3);
        assert!(matches!(
            delta_hpwl(&io_arch, &s, &nl, 0, Position::new(0, 0)),
            Err(WirelengthError::Board(BoardError::IllegalPosition { .. }))
        ));
    }

    #[test]
    fn delta_matches_place_then_recompute_exhaustively() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = rng.gen_range(3..=5);
            let arch = BoardArch::perimeter_io(w, w, 2);
            let nl = generate_synthetic(rng.gen_range(1..=4), rng.gen_range(1..=4), 5, 3, seed).unwrap();
            let mut state = PlacementState::new(&arch, nl.num_blocks());
            let mut ids: Vec<usize> = (0..nl.num_blocks()).collect();
            ids.shuffle(&mut rng);
            for &b in ids.iter().take(nl.num_blocks() / 2) {
                let mask = legal_mask(&arch, &state, nl.blocks()[b].btype);
                let cells: Vec<usize> = mask.legal_indices().collect();
                if cells.is_empty() {
                    continue;
                }
                state.place(&arch, &nl, b, arch.position(cells[rng.gen_range(0..cells.len())])).unwrap();
            }
            let before = brute_total(&state, &nl);
            for b in (0..nl.num_blocks()).filter(|&b| state.position(b).is_none()) {
                let map = delta_map(&arch, &state, &nl, b);
                let mask = legal_mask(&arch, &state, nl.blocks()[b].btype);
                for cell in mask.legal_indices() {
                    let pos = arch.position(cell);
                    let mut after = state.clone();
                    after.place(&arch, &nl, b, pos).unwrap();
                    let expect = brute_total(&after, &nl) - before;
                    assert_eq!(delta_hpwl(&arch, &state, &nl, b, pos).unwrap(), expect);
                    assert_eq!(map[cell], expect);
                }
            }
        }
    }

    #[test]
    fn rewards() {
        assert_eq!(reward_for_total(100.0, &RewardConfig::normalized(100.0)), -1.0);
        let raw = RewardConfig {
            normalizer: 1.0,
            mode: RewardMode::NegHpwl,
        };
        assert_eq!(reward_for_total(12.0, &raw), -12.0);
    }

    #[test]
    fn reward_is_antitone_in_wirelength() {
        let arch = BoardArch::perimeter_io(6, 6, 2);
        let nl = generate_synthetic(8, 6, 10, 3, 4).unwrap();
        let cfg = RewardConfig::normalized(37.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut samples = Vec::new();
        for _ in 0..50 {
            let mut s = PlacementState::new(&arch, nl.num_blocks());
            for b in 0..nl.num_blocks() {
                let cells: Vec<usize> = legal_mask(&arch, &s, nl.blocks()[b].btype).legal_indices().collect();
                s.place(&arch, &nl, b, arch.position(cells[rng.gen_range(0..cells.len())])).unwrap();
            }
            samples.push((total_hpwl(&s, &nl).total, terminal_reward(&s, &nl, &cfg)));
        }
        for a in &samples {
            for b in &samples {
                if a.0 < b.0 {
                    assert!(a.1 > b.1);
                }
            }
        }
    }

    #[test]
    fn place_export_format_and_round_trip() {
        let arch = open_board(5, 5, 2);
        let nl = clb_chain(3, "net n0 b0 b1 b2\n");
        let s = placed(&arch, &nl, &[(0, 2, 3), (1, 1, 1), (2, 1, 1)]);
        let text = export_vpr_place(&s, &nl, &arch, Some("toy.net")).unwrap();
        assert!(text.starts_with("Netlist_File: toy.net"));
        assert!(text.contains("Array size: 5 x 5 logic blocks"));
        assert!(text.lines().any(|l| l == "b0 2 3 0 #0"));
        assert!(text.lines().any(|l| l == "b1 1 1 0 #1"));
        assert!(text.lines().any(|l| l == "b2 1 1 1 #2"));
        assert_eq!(import_vpr_place(&text, &nl, &arch).unwrap(), s);

        let partial = placed(&arch, &nl, &[(0, 2, 3)]);
        assert_eq!(
            export_vpr_place(&partial, &nl, &arch, None),
            Err(WirelengthError::UnplacedBlock("b1".into()))
        );
    }

    proptest::proptest! {
        #[test]
        fn translation_and_net_order_invariance(seed in 0u64..500, dx in 0usize..3, dy in 0usize..3) {
            let arch = open_board(8, 8, 3);
            let generated = generate_synthetic(6, 2, 5, 3, seed).unwrap();
            let as_clb = generated.blocks().iter().map(|b| (b.name.clone(), crate::netlist::BlockType::Clb)).collect();
            let nets = generated.nets().iter().map(|n| (n.name.clone(), n.source(), n.sinks().collect())).collect();
            let nl = Netlist::new(as_clb, nets).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut base = PlacementState::new(&arch, nl.num_blocks());
            let mut shifted = PlacementState::new(&arch, nl.num_blocks());
            for b in 0..nl.num_blocks() {
                let p = loop {
                    let p = Position::new(rng.gen_range(0..5), rng.gen_range(0..5));
                    if base.occupancy(p) < 3 { break p; }
                };
                base.place(&arch, &nl, b, p).unwrap();
                shifted.place(&arch, &nl, b, Position::new(p.x + dx, p.y + dy)).unwrap();
            }
            let r0 = total_hpwl(&base, &nl);
            proptest::prop_assert_eq!(&r0, &total_hpwl(&shifted, &nl));
            proptest::prop_assert_eq!(r0.total, brute_total(&base, &nl));
            proptest::prop_assert_eq!(r0.total, r0.per_net.iter().sum::<f64>());

            // Reversing net order leaves the total unchanged.
            let mut nets: Vec<(String, usize, Vec<usize>)> = nl.nets().iter()
                .map(|n| (n.name.clone(), n.source(), n.sinks().collect()))
                .collect();
            nets.reverse();
            let blocks = nl.blocks().iter().map(|b| (b.name.clone(), b.btype)).collect();
            let reversed = Netlist::new(blocks, nets).unwrap();
            proptest::prop_assert_eq!(total_hpwl(&base, &reversed).total, r0.total);
        }
    }
}
