//! A small Modified Nodal Analysis simulator built around a behavioral
//! second-generation current-controlled current conveyor (CCCII±).
//!
//! The pipeline is netlist text → [`netlist::NetlistDocument`] →
//! [`netlist::Circuit`] → [`solver`] (dense LU + Newton, quasi-static
//! transient) → [`measure`]. [`experiments`] builds the tunable amplifier
//! testbenches programmatically and [`cli`] wraps everything in a binary.

pub mod cli;
pub mod devices;
pub mod experiments;
pub mod measure;
pub mod netlist;
pub mod solver;
