// SPDX-License-Identifier: Apache-2.0

//! Tile grid, placement state and legality.
//!
//! Arch text format: a header `arch <width> <height>` followed by `height` rows
//! of `width` tokens `TYPE:CAPACITY`. Row `y` of the file is grid row `y`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{BlockType, Netlist};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BoardError {
    #[error("line {line}: {message}")]
    DimensionMismatch { line: usize, message: String },
    #[error("line {line}: unknown tile type `{tag}`")]
    UnknownTileType { line: usize, tag: String },
    #[error("line {line}: negative capacity {value}")]
    NegativeCapacity { line: usize, value: i64 },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("block {block} cannot be placed at ({x}, {y}): {reason}")]
    IllegalPosition {
        block: usize,
        x: usize,
        y: usize,
        reason: &'static str,
    },
    #[error("block {0} is already placed")]
    AlreadyPlaced(usize),
    #[error("block {0} is not placed")]
    NotPlaced(usize),
    #[error("unknown block id {0}")]
    UnknownBlock(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub x: usize,
    pub y: usize,
}

impl Position {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoardArch {
    width: usize,
    height: usize,
    tile_type: Vec<BlockType>,
    tile_capacity: Vec<u32>,
}

impl BoardArch {
    /// `tiles` is row-major, `height` rows of `width` entries.
    pub fn new(width: usize, height: usize, tiles: Vec<(BlockType, u32)>) -> Result<Self, BoardError> {
        if width == 0 || height == 0 || tiles.len() != width * height {
            return Err(BoardError::DimensionMismatch {
                line: 0,
                message: format!("{} tiles for a {width}x{height} grid", tiles.len()),
            });
        }
        let (tile_type, tile_capacity) = tiles.into_iter().unzip();
        Ok(Self {
            width,
            height,
            tile_type,
            tile_capacity,
        })
    }

    /// CLB interior (capacity 1) ringed by IO cells of capacity `io_cap`.
    pub fn perimeter_io(width: usize, height: usize, io_cap: u32) -> Self {
        let mut tiles = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let edge = x == 0 || y == 0 || x + 1 == width || y + 1 == height;
                tiles.push(if edge { (BlockType::Io, io_cap) } else { (BlockType::Clb, 1) });
            }
        }
        Self::new(width, height, tiles).expect("perimeter grid dimensions are consistent")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, pos: Position) -> usize {
        pos.y * self.width + pos.x
    }

    pub fn position(&self, index: usize) -> Position {
        Position::new(index % self.width, index / self.width)
    }

    pub fn contains(&self, pos: Position) -> bool {
        pos.x < self.width && pos.y < self.height
    }

    pub fn tile_type(&self, pos: Position) -> BlockType {
        self.tile_type[self.index(pos)]
    }

    pub fn capacity(&self, pos: Position) -> u32 {
        self.tile_capacity[self.index(pos)]
    }

    /// Row-major capacities.
    pub fn capacities(&self) -> &[u32] {
        &self.tile_capacity
    }

    pub fn tile_types(&self) -> &[BlockType] {
        &self.tile_type
    }

    /// Total slots available to blocks of type `btype`.
    pub fn slots(&self, btype: BlockType) -> usize {
        self.tile_type
            .iter()
            .zip(&self.tile_capacity)
            .filter(|(t, _)| **t == btype)
            .map(|(_, &c)| c as usize)
            .sum()
    }

    pub fn serialize(&self) -> String {
        let mut s = format!("arch {} {}\n", self.width, self.height);
        for y in 0..self.height {
            let row: Vec<String> = (0..self.width)
                .map(|x| {
                    let i = y * self.width + x;
                    format!("{}:{}", self.tile_type[i], self.tile_capacity[i])
                })
                .collect();
            writeln!(s, "{}", row.join(" ")).unwrap();
        }
        s
    }
}

pub fn parse_arch(text: &str) -> Result<BoardArch, BoardError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or(BoardError::Syntax {
        line: 1,
        message: "missing `arch <width> <height>` header".into(),
    })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let dims = match parts.as_slice() {
        ["arch", w, h] => w.parse::<usize>().ok().zip(h.parse::<usize>().ok()),
        _ => None,
    };
    let Some((width, height)) = dims.filter(|&(w, h)| w > 0 && h > 0) else {
        return Err(BoardError::Syntax {
            line: hline,
            message: "expected `arch <width> <height>` with positive dimensions".into(),
        });
    };

    let mut tiles = Vec::with_capacity(width * height);
    let mut rows = 0;
    for (line, row) in lines {
        rows += 1;
        if rows > height {
            return Err(BoardError::DimensionMismatch {
                line,
                message: format!("more than {height} rows"),
            });
        }
        let tokens: Vec<&str> = row.split_whitespace().collect();
        if tokens.len() != width {
            return Err(BoardError::DimensionMismatch {
                line,
                message: format!("expected {width} tiles, found {}", tokens.len()),
            });
        }
        for tok in tokens {
            let Some((tag, cap)) = tok.split_once(':') else {
                return Err(BoardError::Syntax {
                    line,
                    message: format!("expected TYPE:CAPACITY, found `{tok}`"),
                });
            };
            let btype: BlockType = tag
                .parse()
                .map_err(|tag| BoardError::UnknownTileType { line, tag })?;
            let value: i64 = cap.parse().map_err(|_| BoardError::Syntax {
                line,
                message: format!("bad capacity `{cap}`"),
            })?;
            if value < 0 {
                return Err(BoardError::NegativeCapacity { line, value });
            }
            let cap = u32::try_from(value).map_err(|_| BoardError::Syntax {
                line,
                message: format!("capacity {value} out of range"),
            })?;
            tiles.push((btype, cap));
        }
    }
    if rows != height {
        return Err(BoardError::DimensionMismatch {
            line: text.lines().count(),
            message: format!("expected {height} rows, found {rows}"),
        });
    }
    BoardArch::new(width, height, tiles)
}

/// Block-to-cell assignment with per-cell occupancy counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PlacementState {
    width: usize,
    assignment: Vec<Option<Position>>,
    occupancy: Vec<u32>,
}

impl PlacementState {
    pub fn new(arch: &BoardArch, num_blocks: usize) -> Self {
        Self {
            width: arch.width(),
            assignment: vec![None; num_blocks],
            occupancy: vec![0; arch.cells()],
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.assignment.len()
    }

    pub fn position(&self, block: usize) -> Option<Position> {
        self.assignment.get(block).copied().flatten()
    }

    pub fn assignment(&self) -> &[Option<Position>] {
        &self.assignment
    }

    pub fn occupancy(&self, pos: Position) -> u32 {
        self.occupancy[pos.y * self.width + pos.x]
    }

    /// Row-major occupancy counts.
    pub fn occupancies(&self) -> &[u32] {
        &self.occupancy
    }

    pub fn placed(&self) -> impl Iterator<Item = (usize, Position)> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(b, p)| p.map(|p| (b, p)))
    }

    pub fn is_complete(&self) -> bool {
        self.assignment.iter().all(Option::is_some)
    }

    fn check_block(&self, block: usize) -> Result<(), BoardError> {
        if block < self.assignment.len() {
            Ok(())
        } else {
            Err(BoardError::UnknownBlock(block))
        }
    }

    pub fn place(
        &mut self,
        arch: &BoardArch,
        netlist: &Netlist,
        block: usize,
        pos: Position,
    ) -> Result<(), BoardError> {
        self.check_block(block)?;
        if self.assignment[block].is_some() {
            return Err(BoardError::AlreadyPlaced(block));
        }
        let illegal = |reason| BoardError::IllegalPosition {
            block,
            x: pos.x,
            y: pos.y,
            reason,
        };
        if !arch.contains(pos) {
            return Err(illegal("outside the grid"));
        }
        if arch.tile_type(pos) != netlist.blocks()[block].btype {
            return Err(illegal("tile type mismatch"));
        }
        let cell = arch.index(pos);
        if self.occupancy[cell] >= arch.capacities()[cell] {
            return Err(illegal("cell at capacity"));
        }
        self.assignment[block] = Some(pos);
        self.occupancy[cell] += 1;
        Ok(())
    }

    pub fn unplace(&mut self, block: usize) -> Result<Position, BoardError> {
        self.check_block(block)?;
        let pos = self.assignment[block].take().ok_or(BoardError::NotPlaced(block))?;
        self.occupancy[pos.y * self.width + pos.x] -= 1;
        Ok(pos)
    }

    /// Clears every block not in `keep`.
    pub fn reset(&mut self, keep: &[usize]) -> Result<(), BoardError> {
        let mut retain = vec![false; self.assignment.len()];
        for &b in keep {
            self.check_block(b)?;
            retain[b] = true;
        }
        for b in 0..self.assignment.len() {
            if !retain[b] && self.assignment[b].is_some() {
                self.unplace(b)?;
            }
        }
        Ok(())
    }

    /// Checks every state invariant from scratch; returns a description of the first violation.
    pub fn validate(&self, arch: &BoardArch, netlist: &Netlist) -> Result<(), String> {
        if self.assignment.len() != netlist.num_blocks() || self.occupancy.len() != arch.cells() {
            return Err("state dimensions do not match arch/netlist".into());
        }
        let mut recount = vec![0u32; arch.cells()];
        for (b, pos) in self.placed() {
            if !arch.contains(pos) {
                return Err(format!("block {b} outside the grid"));
            }
            if arch.tile_type(pos) != netlist.blocks()[b].btype {
                return Err(format!("block {b} on a {} tile", arch.tile_type(pos)));
            }
            recount[arch.index(pos)] += 1;
        }
        for (i, (&occ, &cap)) in self.occupancy.iter().zip(arch.capacities()).enumerate() {
            if occ != recount[i] {
                return Err(format!("cell {i}: occupancy {occ} but {} assigned", recount[i]));
            }
            if occ > cap {
                return Err(format!("cell {i}: occupancy {occ} exceeds capacity {cap}"));
            }
        }
        Ok(())
    }
}

/// Row-major legal-cell map for one block type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMask {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

impl ActionMask {
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&m| m).count()
    }

    pub fn is_legal(&self, index: usize) -> bool {
        self.cells[index]
    }

    pub fn legal_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }
}

pub fn legal_mask(arch: &BoardArch, state: &PlacementState, btype: BlockType) -> ActionMask {
    let cells = arch
        .tile_types()
        .iter()
        .zip(arch.capacities())
        .zip(state.occupancies())
        .map(|((&t, &cap), &occ)| t == btype && occ < cap)
        .collect();
    ActionMask {
        width: arch.width(),
        height: arch.height(),
        cells,
    }
}
