//! Counter-based random draws keyed by event coordinates.
//!
//! A draw depends only on `(seed, request, phase, kind, sender, receiver)`,
//! never on how many draws came before it.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

/// Message kinds; distinct kinds in one phase never share a draw.
pub(crate) mod kind {
    pub const CRASH: u8 = 0;
    pub const ORDER: u8 = 1;
    pub const PREPARE: u8 = 2;
    pub const COMMIT: u8 = 3;
    pub const REPLY: u8 = 4;
    pub const CLIENT_CERT: u8 = 5;
    pub const ACK: u8 = 6;
    pub const SHARE: u8 = 7;
    pub const CERT_FAST: u8 = 8;
    pub const CERT_SLOW: u8 = 9;
    pub const EXEC_FAST: u8 = 10;
    pub const COMMIT_SLOW: u8 = 11;
    pub const CERT_COMMIT: u8 = 12;
    pub const EXEC_SLOW: u8 = 13;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Stream {
    base: u64,
}

impl Stream {
    pub(crate) fn new(seed: u64, request: u64) -> Self {
        let base =
            fmix64(fmix64(seed ^ GOLDEN).wrapping_add(request.wrapping_mul(GOLDEN)) ^ 0x5bd1_e995);
        Self { base }
    }

    /// Raw 64-bit value; `sender` and `receiver` must be below 2^24.
    #[inline]
    pub(crate) fn bits(&self, phase: u8, kind: u8, sender: u32, receiver: u32) -> u64 {
        debug_assert!(sender < 1 << 24 && receiver < 1 << 24);
        let coord =
            (phase as u64) << 56 | (kind as u64) << 48 | (sender as u64) << 24 | receiver as u64;
        fmix64(
            self.base
                .wrapping_add(coord.wrapping_add(1).wrapping_mul(GOLDEN)),
        )
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub(crate) fn uniform(&self, phase: u8, kind: u8, sender: u32, receiver: u32) -> f64 {
        (self.bits(phase, kind, sender, receiver) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Event of probability `p`; `p = 0` and `p = 1` are exact.
    #[inline]
    pub(crate) fn event(&self, p: f64, phase: u8, kind: u8, sender: u32, receiver: u32) -> bool {
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.uniform(phase, kind, sender, receiver) < p
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_pure_functions_of_coordinates() {
        let s = Stream::new(7, 3);
        let a = s.bits(2, kind::PREPARE, 1, 4);
        let _ = s.bits(1, kind::ORDER, 0, 1);
        assert_eq!(a, Stream::new(7, 3).bits(2, kind::PREPARE, 1, 4));
        assert_ne!(a, s.bits(2, kind::PREPARE, 4, 1));
        assert_ne!(a, s.bits(2, kind::COMMIT, 1, 4));
        assert_ne!(a, Stream::new(7, 4).bits(2, kind::PREPARE, 1, 4));
        assert_ne!(a, Stream::new(8, 3).bits(2, kind::PREPARE, 1, 4));
    }

    #[test]
    fn uniform_moments() {
        let s = Stream::new(20240601, 0);
        let n = 200_000u32;
        let (mut sum, mut sq) = (0.0, 0.0);
        for i in 0..n {
            let u = s.uniform(1, kind::SHARE, i % 1000, i / 1000);
            assert!((0.0..1.0).contains(&u));
            sum += u;
            sq += u * u;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        // 5 standard errors of the mean and variance estimators
        assert!((mean - 0.5).abs() < 5.0 * (1.0 / 12.0 / n as f64).sqrt());
        assert!((var - 1.0 / 12.0).abs() < 5.0 * (1.0 / 180.0 / n as f64).sqrt());
    }

    #[test]
    fn adjacent_requests_are_uncorrelated() {
        let n = 100_000u64;
        let mut prod = 0.0;
        for r in 0..n {
            let a = Stream::new(1, r).uniform(2, kind::COMMIT, 3, 5) - 0.5;
            let b = Stream::new(1, r + 1).uniform(2, kind::COMMIT, 3, 5) - 0.5;
            prod += a * b;
        }
        let corr = prod / n as f64 * 12.0;
        assert!(corr.abs() < 5.0 / (n as f64).sqrt(), "{corr}");
    }

    #[test]
    fn extreme_probabilities_are_exact() {
        let s = Stream::new(0, 0);
        for i in 0..1000 {
            assert!(!s.event(0.0, 1, kind::ORDER, 0, i));
            assert!(s.event(1.0, 1, kind::ORDER, 0, i));
        }
    }
}
