//! Small shared helpers.

/// FNV-1a over bytes; used for config and batch-sequence fingerprints.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Streaming FNV-1a hasher for fingerprinting heterogeneous sequences.
#[derive(Clone, Debug)]
pub struct Fingerprint(u64);

impl Fingerprint {
    pub fn new() -> Self {
        Fingerprint(0xcbf29ce484222325)
    }

    pub fn push_u64(&mut self, x: u64) {
        for b in x.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    pub fn push_u32s(&mut self, xs: &[u32]) {
        for &x in xs {
            self.push_u64(x as u64);
        }
    }

    pub fn value(&self) -> u64 {
        self.0
    }
}

impl Default for Fingerprint {
    fn default() -> Self {
        Self::new()
    }
}

/// Rounds half-up to the nearest integer (0.5 goes up).
pub fn round_half_up(x: f64) -> usize {
    assert!(x >= 0.0, "round_half_up on negative value {x}");
    (x + 0.5).floor() as usize
}

/// Division rounding up.
pub fn ceil_div(n: usize, d: usize) -> usize {
    n.div_ceil(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(round_half_up(90.5), 91);
        assert_eq!(round_half_up(90.4999), 90);
        assert_eq!(round_half_up(362.038), 362);
    }

    #[test]
    fn fnv_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_ne!(fnv1a64(b"a"), fnv1a64(b"b"));
    }
}
