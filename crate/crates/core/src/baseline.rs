// SPDX-License-Identifier: Apache-2.0

//! Non-learning placers: greedy wire-mask and uniform random.

use rand::Rng;
use thiserror::Error;

use crate::board::{legal_mask, BoardArch, PlacementState};
use crate::netlist::Netlist;
use crate::wirelength::delta_map;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BaselineError {
    #[error("no legal cell left for block `{name}` (id {block})")]
    Infeasible { block: usize, name: String },
}

fn infeasible(netlist: &Netlist, block: usize) -> BaselineError {
    BaselineError::Infeasible {
        block,
        name: netlist.blocks()[block].name.clone(),
    }
}

/// Places each block of `order` at the legal cell of least HPWL increase.
/// Ties go to the first cell in row-major order.
pub fn greedy_place(
    arch: &BoardArch,
    netlist: &Netlist,
    state: &mut PlacementState,
    order: &[usize],
) -> Result<(), BaselineError> {
    for &b in order {
        let mask = legal_mask(arch, state, netlist.blocks()[b].btype);
        let deltas = delta_map(arch, state, netlist, b);
        let mut best: Option<(usize, f64)> = None;
        for cell in mask.legal_indices() {
            if best.is_none_or(|(_, d)| deltas[cell] < d) {
                best = Some((cell, deltas[cell]));
            }
        }
        let (cell, _) = best.ok_or_else(|| infeasible(netlist, b))?;
        state
            .place(arch, netlist, b, arch.position(cell))
            .expect("cell taken from the legal mask");
    }
    Ok(())
}

/// Places each block of `order` uniformly at random among its legal cells.
pub fn random_place<R: Rng>(
    arch: &BoardArch,
    netlist: &Netlist,
    state: &mut PlacementState,
    order: &[usize],
    rng: &mut R,
) -> Result<(), BaselineError> {
    for &b in order {
        let legal: Vec<usize> = legal_mask(arch, state, netlist.blocks()[b].btype)
            .legal_indices()
            .collect();
        if legal.is_empty() {
            return Err(infeasible(netlist, b));
        }
        let cell = legal[rng.gen_range(0..legal.len())];
        state
            .place(arch, netlist, b, arch.position(cell))
            .expect("cell taken from the legal mask");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::Position;
    use crate::netlist::{generate_synthetic, parse_netlist};
    use crate::wirelength::total_hpwl;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_picks_nearest_cell_with_row_major_ties() {
        let arch = BoardArch::perimeter_io(5, 5, 2);
        let nl = parse_netlist("block io IO\nblock a CLB\nblock b CLB\nnet n io a\n").unwrap();
        let mut s = PlacementState::new(&arch, 3);
        s.place(&arch, &nl, 0, Position::new(0, 2)).unwrap();
        greedy_place(&arch, &nl, &mut s, &[1, 2]).unwrap();
        assert_eq!(s.position(1), Some(Position::new(1, 2)));
        // b has no nets: every delta is zero, so the first interior cell wins.
        assert_eq!(s.position(2), Some(Position::new(1, 1)));
    }

    #[test]
    fn infeasible_when_out_of_slots() {
        let arch = BoardArch::perimeter_io(3, 3, 1);
        let nl = parse_netlist("block a CLB\nblock b CLB\nnet n a b\n").unwrap();
        let mut s = PlacementState::new(&arch, 2);
        assert_eq!(
            greedy_place(&arch, &nl, &mut s, &[0, 1]),
            Err(BaselineError::Infeasible {
                block: 1,
                name: "b".into()
            })
        );
    }

    #[test]
    fn random_is_reproducible_and_legal() {
        let arch = BoardArch::perimeter_io(6, 6, 2);
        let nl = generate_synthetic(10, 10, 12, 3, 2).unwrap();
        let order: Vec<usize> = (0..nl.num_blocks()).collect();
        let run = |seed| {
            let mut s = PlacementState::new(&arch, nl.num_blocks());
            random_place(&arch, &nl, &mut s, &order, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            s
        };
        assert_eq!(run(4), run(4));
        run(4).validate(&arch, &nl).unwrap();
        assert!(run(4).is_complete());
    }

    #[test]
    fn greedy_usually_beats_random() {
        let mut wins = 0;
        for seed in 0..20 {
            let arch = BoardArch::perimeter_io(8, 8, 2);
            let nl = generate_synthetic(20, 12, 24, 3, seed).unwrap();
            let order = nl.placement_order(&(0..nl.num_blocks()).collect::<Vec<_>>()).unwrap();
            let mut g = PlacementState::new(&arch, nl.num_blocks());
            greedy_place(&arch, &nl, &mut g, &order).unwrap();
            let mut r = PlacementState::new(&arch, nl.num_blocks());
            random_place(&arch, &nl, &mut r, &order, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            g.validate(&arch, &nl).unwrap();
            if total_hpwl(&g, &nl).total <= total_hpwl(&r, &nl).total {
                wins += 1;
            }
        }
        assert!(wins >= 18, "greedy won {wins}/20");
    }
}
