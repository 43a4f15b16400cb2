//! Criterion benchmarks for `mmrag-core`. The benches live in `benches/`.
