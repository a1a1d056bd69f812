//! Criterion benchmarks for the Poincare kernels; see `benches/`.
