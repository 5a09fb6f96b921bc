//! Versioned binary container for ciphertexts, plaintexts and keys.
//!
//! Header: magic `AHEC`, format version (u16), kind (u8), one reserved byte,
//! the 32-byte parameter digest, level (u32), scale (f64), ring degree (u32).
//! Payload: polynomials as a limb count (u32) followed by `N` little-endian u64
//! words per limb. All integers are little-endian.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::engine::{CkksCiphertext, CkksPlaintext};
use super::keys::{KeyMaterial, PublicKey, RotationKey, SecretKey, SwitchKey};
use super::params::CkksParams;
use super::ring::RnsPoly;
use super::CkksError;

pub const MAGIC: [u8; 4] = *b"AHEC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Ciphertext = 1,
    Plaintext = 2,
    Keys = 3,
}

impl Kind {
    fn from_u8(b: u8) -> Result<Kind, CkksError> {
        match b {
            1 => Ok(Kind::Ciphertext),
            2 => Ok(Kind::Plaintext),
            3 => Ok(Kind::Keys),
            _ => Err(CkksError::Format(format!("unknown container kind {b}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub kind: Kind,
    pub digest: [u8; 32],
    pub level: u32,
    pub scale: f64,
    pub n: u32,
}

struct Writer<W: Write> {
    w: W,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<(), CkksError> {
        self.w.write_all(b).map_err(|e| CkksError::Io(e.to_string()))
    }

    fn u32(&mut self, v: u32) -> Result<(), CkksError> {
        self.bytes(&v.to_le_bytes())
    }

    fn u64(&mut self, v: u64) -> Result<(), CkksError> {
        self.bytes(&v.to_le_bytes())
    }

    fn header(&mut self, h: &Header) -> Result<(), CkksError> {
        self.bytes(&MAGIC)?;
        self.bytes(&VERSION.to_le_bytes())?;
        self.bytes(&[h.kind as u8, 0])?;
        self.bytes(&h.digest)?;
        self.u32(h.level)?;
        self.bytes(&h.scale.to_le_bytes())?;
        self.u32(h.n)
    }

    fn poly(&mut self, p: &RnsPoly) -> Result<(), CkksError> {
        self.u32(p.limb_count() as u32)?;
        let mut buf = Vec::with_capacity(p.limbs.first().map_or(0, Vec::len) * 8);
        for limb in &p.limbs {
            buf.clear();
            for w in limb {
                buf.extend_from_slice(&w.to_le_bytes());
            }
            self.bytes(&buf)?;
        }
        Ok(())
    }

    fn switch_key(&mut self, k: &SwitchKey) -> Result<(), CkksError> {
        self.u32(k.level as u32)?;
        for (b, a) in k.b.iter().zip(&k.a) {
            self.poly(b)?;
            self.poly(a)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    r: R,
    n: usize,
}

impl<R: Read> Reader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<(), CkksError> {
        self.r.read_exact(buf).map_err(|e| CkksError::Format(format!("truncated container: {e}")))
    }

    fn u32(&mut self) -> Result<u32, CkksError> {
        let mut b = [0; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64, CkksError> {
        let mut b = [0; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn header(&mut self) -> Result<Header, CkksError> {
        let mut magic = [0; 4];
        self.fill(&mut magic)?;
        if magic != MAGIC {
            return Err(CkksError::Format("bad magic".into()));
        }
        let mut v = [0; 2];
        self.fill(&mut v)?;
        let version = u16::from_le_bytes(v);
        if version != VERSION {
            return Err(CkksError::Format(format!("unsupported version {version}")));
        }
        let mut kr = [0; 2];
        self.fill(&mut kr)?;
        let kind = Kind::from_u8(kr[0])?;
        let mut digest = [0; 32];
        self.fill(&mut digest)?;
        let level = self.u32()?;
        let scale = f64::from_bits(self.u64()?);
        let n = self.u32()?;
        self.n = n as usize;
        Ok(Header { kind, digest, level, scale, n })
    }

    fn poly(&mut self, max_limbs: usize) -> Result<RnsPoly, CkksError> {
        let k = self.u32()? as usize;
        if k == 0 || k > max_limbs {
            return Err(CkksError::Format(format!("{k} limbs, at most {max_limbs} allowed")));
        }
        let mut buf = vec![0u8; self.n * 8];
        let mut limbs = Vec::with_capacity(k);
        for _ in 0..k {
            self.fill(&mut buf)?;
            limbs.push(buf.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect());
        }
        Ok(RnsPoly { limbs })
    }

    fn switch_key(&mut self, max_level: usize) -> Result<SwitchKey, CkksError> {
        let level = self.u32()? as usize;
        if level > max_level {
            return Err(CkksError::Format(format!("key level {level} above {max_level}")));
        }
        let (mut b, mut a) = (Vec::new(), Vec::new());
        for _ in 0..=level {
            b.push(self.poly(level + 2)?);
            a.push(self.poly(level + 2)?);
        }
        Ok(SwitchKey { level, b, a })
    }
}

fn check_params(h: &Header, params: &CkksParams, kind: Kind) -> Result<(), CkksError> {
    if h.kind != kind {
        return Err(CkksError::Format(format!("expected {kind:?}, found {:?}", h.kind)));
    }
    if h.digest != params.digest() {
        return Err(CkksError::ParamsMismatch);
    }
    if h.n as usize != params.n() {
        return Err(CkksError::Format(format!("ring degree {} differs from {}", h.n, params.n())));
    }
    Ok(())
}

pub fn write_ciphertext<W: Write>(
    w: W,
    params: &CkksParams,
    ct: &CkksCiphertext,
    scale: f64,
) -> Result<(), CkksError> {
    let mut w = Writer { w };
    w.header(&Header { kind: Kind::Ciphertext, digest: params.digest(), level: ct.level() as u32, scale, n: params.n() as u32 })?;
    w.poly(&ct.c0)?;
    w.poly(&ct.c1)
}

/// Returns the ciphertext, its level and scale.
pub fn read_ciphertext<R: Read>(r: R, params: &CkksParams) -> Result<(CkksCiphertext, usize, f64), CkksError> {
    let mut r = Reader { r, n: 0 };
    let h = r.header()?;
    check_params(&h, params, Kind::Ciphertext)?;
    let level = h.level as usize;
    if level > params.max_level() {
        return Err(CkksError::Format(format!("level {level} above {}", params.max_level())));
    }
    let c0 = r.poly(level + 1)?;
    let c1 = r.poly(level + 1)?;
    if c0.limb_count() != level + 1 || c1.limb_count() != level + 1 {
        return Err(CkksError::Format("limb count differs from the level".into()));
    }
    Ok((CkksCiphertext { c0, c1 }, level, h.scale))
}

pub fn write_plaintext<W: Write>(w: W, params: &CkksParams, p: &CkksPlaintext, scale: f64) -> Result<(), CkksError> {
    let mut w = Writer { w };
    let level = p.poly.limb_count() as u32 - 1;
    w.header(&Header { kind: Kind::Plaintext, digest: params.digest(), level, scale, n: params.n() as u32 })?;
    w.poly(&p.poly)
}

pub fn read_plaintext<R: Read>(r: R, params: &CkksParams) -> Result<(CkksPlaintext, usize, f64), CkksError> {
    let mut r = Reader { r, n: 0 };
    let h = r.header()?;
    check_params(&h, params, Kind::Plaintext)?;
    let level = h.level as usize;
    let poly = r.poly(params.max_level() + 1)?;
    if poly.limb_count() != level + 1 {
        return Err(CkksError::Format("limb count differs from the level".into()));
    }
    Ok((CkksPlaintext { poly }, level, h.scale))
}

/// Key payload: flags (bit 0 secret, bit 1 relinearization key), then the
/// secret, public key, relinearization key and `(amount, galois, key)` triples.
pub fn write_keys<W: Write>(w: W, params: &CkksParams, keys: &KeyMaterial) -> Result<(), CkksError> {
    let mut w = Writer { w };
    let top = params.max_level() as u32;
    w.header(&Header { kind: Kind::Keys, digest: params.digest(), level: top, scale: 0.0, n: params.n() as u32 })?;
    let flags = keys.secret.is_some() as u32 | (keys.relin.is_some() as u32) << 1;
    w.u32(flags)?;
    if let Some(sk) = &keys.secret {
        w.poly(&sk.s)?;
    }
    w.poly(&keys.public.b)?;
    w.poly(&keys.public.a)?;
    if let Some(rk) = &keys.relin {
        w.switch_key(rk)?;
    }
    w.u32(keys.rotations.len() as u32)?;
    for r in keys.rotations.values() {
        w.u64(r.amount as u64)?;
        w.u64(r.galois as u64)?;
        w.switch_key(&r.key)?;
    }
    Ok(())
}

pub fn read_keys<R: Read>(r: R, params: &CkksParams) -> Result<KeyMaterial, CkksError> {
    let mut r = Reader { r, n: 0 };
    let h = r.header()?;
    check_params(&h, params, Kind::Keys)?;
    let top = params.max_level();
    let flags = r.u32()?;
    let secret = if flags & 1 == 1 { Some(SecretKey { s: r.poly(top + 2)? }) } else { None };
    let public = PublicKey { b: r.poly(top + 1)?, a: r.poly(top + 1)? };
    let relin = if flags & 2 == 2 { Some(r.switch_key(top)?) } else { None };
    let count = r.u32()?;
    let mut rotations = BTreeMap::new();
    for _ in 0..count {
        let amount = r.u64()? as usize;
        let galois = r.u64()? as usize;
        let key = r.switch_key(top)?;
        rotations.insert(amount, RotationKey { amount, galois, key });
    }
    Ok(KeyMaterial { secret, public, relin, rotations })
}
