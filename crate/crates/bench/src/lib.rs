// SPDX-License-Identifier: Apache-2.0

//! Benchmarks live in `benches/`; this crate has no library code.
