// SPDX-License-Identifier: Apache-2.0

//! Reinforcement-learning FPGA placement.
//!
//! The environment ([`board`], [`wirelength`], [`features`]) places typed
//! blocks of a [`netlist`] onto a capacitated tile grid one at a time. A masked
//! actor-critic network ([`nn`]) is trained with PPO ([`ppo`]), optionally
//! through the divide-and-conquer scheduler in [`decomposition`].

pub mod baseline;
pub mod board;
pub mod decomposition;
pub mod features;
pub mod netlist;
pub mod nn;
pub mod ppo;
pub mod wirelength;
