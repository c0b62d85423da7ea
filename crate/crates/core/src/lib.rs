//! Selective memory-safety sanitizing for an ownership-aware mini-IR.
//!
//! The pipeline mirrors a compiler pass chain: [`reachability`] limits the
//! scope, [`risky`] finds exposed raw pointers and propagates lifetime-aware
//! taint, [`metadata`] infers spatial templates and owner sets,
//! [`instrument`] assigns the I1–I5 check classes, and [`runtime`] executes
//! the instrumented program. [`asan`] is a shadow-memory baseline over the
//! same interpreter.

pub mod ir;
pub mod reachability;
pub mod risky;
pub mod metadata;
pub mod instrument;
pub mod pipeline;
pub mod runtime;
pub mod asan;
pub mod corpus;
pub mod gen;
