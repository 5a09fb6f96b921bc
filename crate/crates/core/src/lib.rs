//! Encrypted inference for small skeleton-action CNNs.
//!
//! The crate packs a `T x J x 2` joint tensor into SIMD slots, evaluates the
//! three-block CNN with homomorphic convolutions (plain or merge-and-conquer),
//! and runs on either an exact slot simulator or an RNS-CKKS engine.

pub mod backend;
pub mod ckks;
pub mod convolution;
pub mod costmodel;
pub mod fastpath;
pub mod ingest;
pub mod layout;
pub mod model;
