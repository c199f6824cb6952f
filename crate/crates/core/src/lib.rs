//! Deterministic simulator and evaluation harness for open-vocabulary mobile
//! manipulation: move a named object from a named start receptacle onto a
//! named goal receptacle in a procedurally generated apartment.

// Negated float comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agent;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod manip;
pub mod mapping;
pub mod nav;
pub mod protocol;
pub mod scene;
pub mod sim;
