// SPDX-License-Identifier: Apache-2.0

//! Control-flow attestation from performance-counter measurements.

pub mod attack;
pub mod cfg;
pub mod demo;
pub mod digest;
pub mod hpc;
pub mod lattice;
pub mod preprocess;
pub mod program;
pub mod protocol;
pub mod sim;
pub mod vector;
pub mod verifier;

#[cfg(test)]
mod testutil;

pub use vector::CounterVector;
