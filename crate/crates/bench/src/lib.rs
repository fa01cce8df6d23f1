//! Empty library; this crate only hosts criterion benchmarks.
