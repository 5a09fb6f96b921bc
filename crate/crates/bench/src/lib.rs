//! Criterion benches for the actionhe primitives and pipelines; see `benches/`.
