//! Benchmarks for `madm-core`; see `benches/`.
