//! Oracles shared by the dedicated suites and the acceptance target.
#![allow(dead_code)]

pub mod fd;
pub mod invariants;
pub mod tabular;
