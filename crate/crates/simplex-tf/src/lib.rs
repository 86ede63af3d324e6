//! Numerical laboratory for degenerate multilinear multipliers adapted to simplices.

pub mod grid;
pub mod profile;
pub mod operators;
pub mod symbols;
pub mod martingale;
pub mod tiles;
pub mod decomp;
pub mod experiments;
