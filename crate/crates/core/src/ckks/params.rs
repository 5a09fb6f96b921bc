//! Parameter profiles: ring degree, modulus chain and special prime.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arith::ntt_primes;
use super::CkksError;
use crate::backend::ModulusLadder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Hear,
    FastHear,
    /// HEAR chain at `N = 2^12`. Insecure.
    ToyHear,
    /// Fast-HEAR chain at `N = 2^12`. Insecure.
    ToyFast,
    Custom,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hear" => Ok(Profile::Hear),
            "fast-hear" | "fast" => Ok(Profile::FastHear),
            "toy-hear" => Ok(Profile::ToyHear),
            "toy-fast" => Ok(Profile::ToyFast),
            _ => Err(format!("unknown profile {s:?} (hear, fast-hear, toy-hear, toy-fast)")),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Hear => "hear",
            Profile::FastHear => "fast-hear",
            Profile::ToyHear => "toy-hear",
            Profile::ToyFast => "toy-fast",
            Profile::Custom => "custom",
        })
    }
}

pub const SIGMA: f64 = 3.2;

fn hear_bits() -> Vec<u32> {
    let mut b = vec![37];
    b.extend([35; 10]);
    b
}

fn fast_bits() -> Vec<u32> {
    (0..=12)
        .map(|l| match l {
            0 => 33,
            5 | 9 => 28,
            _ => 31,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkksParams {
    pub profile: Profile,
    pub log_n: u32,
    /// Requested bit sizes, `q0` first.
    pub chain_bits: Vec<u32>,
    pub special_bits: u32,
    /// `q_0, ..., q_L`.
    pub primes: Vec<u64>,
    pub special: u64,
    pub sigma: f64,
    /// No security claim is made for these parameters.
    pub insecure: bool,
}

impl CkksParams {
    pub fn generate(profile: Profile) -> Result<Self, CkksError> {
        let (log_n, bits, special) = match profile {
            Profile::Hear => (14, hear_bits(), 37),
            Profile::FastHear => (14, fast_bits(), 33),
            Profile::ToyHear => (12, hear_bits(), 37),
            Profile::ToyFast => (12, fast_bits(), 33),
            Profile::Custom => return Err(CkksError::Params("use CkksParams::custom".into())),
        };
        let mut p = Self::custom(log_n, &bits, special)?;
        p.profile = profile;
        p.insecure = matches!(profile, Profile::ToyHear | Profile::ToyFast);
        Ok(p)
    }

    /// Primes nearest to each requested size, all distinct, `= 1 mod 2N`.
    /// Flagged insecure below `N = 2^14`.
    pub fn custom(log_n: u32, chain_bits: &[u32], special_bits: u32) -> Result<Self, CkksError> {
        if !(2..=16).contains(&log_n) || chain_bits.is_empty() {
            return Err(CkksError::Params(format!("log N {log_n} or empty chain")));
        }
        let n = 1u64 << log_n;
        let mut chosen: Vec<u64> = Vec::new();
        let pick = |bits: u32, chosen: &mut Vec<u64>| -> Result<u64, CkksError> {
            let p = ntt_primes(bits, n, 1, chosen)
                .ok_or_else(|| CkksError::Params(format!("no {bits}-bit prime = 1 mod {}", 2 * n)))?[0];
            chosen.push(p);
            Ok(p)
        };
        let special = pick(special_bits, &mut chosen)?;
        let primes = chain_bits.iter().map(|&b| pick(b, &mut chosen)).collect::<Result<Vec<_>, _>>()?;
        Ok(CkksParams {
            profile: Profile::Custom,
            log_n,
            chain_bits: chain_bits.to_vec(),
            special_bits,
            primes,
            special,
            sigma: SIGMA,
            insecure: log_n < 14,
        })
    }

    pub fn n(&self) -> usize {
        1 << self.log_n
    }

    pub fn slots(&self) -> usize {
        self.n() / 2
    }

    pub fn max_level(&self) -> usize {
        self.primes.len() - 1
    }

    /// `log2` of the product of the chain primes.
    pub fn log_q(&self) -> f64 {
        self.primes.iter().map(|&p| (p as f64).log2()).sum()
    }

    /// Ladder with the exact chain primes, for compiling pipelines against this set.
    pub fn ladder(&self) -> ModulusLadder {
        ModulusLadder::new(self.primes.iter().map(|&p| p as f64).collect())
    }

    /// SHA-256 over the ring degree, primes and error width.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"actionhe-ckks-params");
        h.update(self.log_n.to_le_bytes());
        h.update((self.primes.len() as u64).to_le_bytes());
        for p in &self.primes {
            h.update(p.to_le_bytes());
        }
        h.update(self.special.to_le_bytes());
        h.update(self.sigma.to_le_bytes());
        h.finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest())
    }
}
