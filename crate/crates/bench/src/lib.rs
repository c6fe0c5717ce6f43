//! Benchmarks live in `benches/`; run them with `cargo bench -p ehsel-bench`.
