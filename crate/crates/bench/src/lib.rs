//! Benchmarks for the spectral kernels live in `benches/`.
