//! Criterion benchmarks for `bon-core`; see `benches/kernels.rs`.
