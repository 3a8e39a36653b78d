//! Benchmarks for the hot kernels live under `benches/`.
