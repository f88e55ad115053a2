//! Criterion benchmarks for the solvers and the end-to-end pipeline; see `benches/`.
