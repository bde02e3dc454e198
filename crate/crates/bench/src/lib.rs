// SPDX-License-Identifier: Apache-2.0

//! Criterion benchmarks; see `benches/`.
