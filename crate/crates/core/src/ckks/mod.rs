//! RNS-CKKS engine implementing [`SlotBackend`](crate::backend::SlotBackend).

pub mod arith;
pub mod encoding;
pub mod engine;
pub mod keys;
pub mod ntt;
pub mod params;
pub mod ring;
pub mod serial;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{CryptoRng, Rng};
use thiserror::Error;

pub use engine::{CkksCiphertext, CkksEngine, CkksPlaintext};
pub use keys::{keygen, KeyMaterial};
pub use params::{CkksParams, Profile};
pub use ring::{Context, RnsPoly};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CkksError {
    #[error("parameters: {0}")]
    Params(String),
    #[error("container was produced under different parameters")]
    ParamsMismatch,
    #[error("format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

/// Parameters, keys and an engine for one rotation set.
pub fn setup<R: Rng + CryptoRng>(
    params: CkksParams,
    rotations: &BTreeMap<usize, usize>,
    rng: &mut R,
) -> Result<CkksEngine, CkksError> {
    let ctx = Arc::new(Context::new(params)?);
    let keys = Arc::new(keygen(&ctx, rotations, rng));
    Ok(CkksEngine::new(ctx, keys))
}

#[cfg(test)]
mod tests;
