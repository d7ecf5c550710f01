//! Benchmark-only crate; see `benches/kernels.rs`. Keeping the benchmarks in
//! their own package keeps criterion out of the library's dev-dependency
//! closure.
