//! FNV-1a hashing for weight freezing checks and artifact fingerprints.

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

#[derive(Clone, Copy)]
pub struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Fnv1a(FNV_OFFSET)
    }
}

impl Fnv1a {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write(&mut self, bytes: &[u8]) -> &mut Self {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
        self
    }

    /// Hash floats by exact bit pattern (little-endian), so any weight
    /// perturbation changes the digest.
    pub fn write_f64s(&mut self, values: &[f64]) -> &mut Self {
        for v in values {
            self.write(&v.to_le_bytes());
        }
        self
    }

    pub fn write_u64(&mut self, v: u64) -> &mut Self {
        self.write(&v.to_le_bytes())
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

pub fn hash_bytes(bytes: &[u8]) -> u64 {
    Fnv1a::new().write(bytes).finish()
}

/// Render a digest as fixed-width lowercase hex.
pub fn hex64(h: u64) -> String {
    format!("{h:016x}")
}
