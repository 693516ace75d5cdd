//! Criterion benchmarks for the hot paths of `rcan-core`; see `benches/`.
