//! Criterion benchmarks for trapbench live under `benches/`.
