//! Deterministic keyed random streams.
//!
//! Every random quantity in the simulator (chip fingerprints, shuffle keys,
//! Monte-Carlo trials, weight init, batch order) is drawn from a stream keyed
//! on a seed plus a list of domain tags. Streams are independent of each
//! other and of evaluation order, so regenerating any entity from the same
//! key is bit-exact.

/// SplitMix64 finalizer. Full-avalanche 64-bit mixer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a seed and a list of tags into a single stream key.
///
/// The fold includes the tag count so `[a]` and `[a, 0]` key different
/// streams.
pub fn derive_key(seed: u64, tags: &[u64]) -> u64 {
    let mut k = mix64(seed ^ 0x6a09_e667_f3bc_c908);
    for &t in tags {
        k = mix64(k ^ mix64(t));
    }
    mix64(k ^ tags.len() as u64)
}

/// A small deterministic generator over a derived key.
///
/// SplitMix64 in counter mode: the n-th output depends only on the key and
/// n, never on how many values other streams consumed.
#[derive(Debug, Clone)]
pub struct KeyedRng {
    key: u64,
    counter: u64,
}

impl KeyedRng {
    pub fn new(seed: u64, tags: &[u64]) -> Self {
        KeyedRng { key: derive_key(seed, tags), counter: 0 }
    }

    pub fn from_key(key: u64) -> Self {
        KeyedRng { key, counter: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = mix64(self.key ^ mix64(self.counter ^ 0x85eb_ca6b_c2b2_ae35));
        self.counter += 1;
        v
    }

    /// Uniform in the open interval (0, 1); never returns 0 or 1 so it is
    /// safe to feed into an inverse CDF.
    #[inline]
    pub fn uniform_open01(&mut self) -> f64 {
        (((self.next_u64() >> 11) as f64) + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Uniform f64 in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * ((self.next_u64() >> 11) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Standard normal deviate via the inverse CDF.
    #[inline]
    pub fn std_normal(&mut self) -> f64 {
        inv_norm_cdf(self.uniform_open01())
    }

    /// Unbiased uniform integer in [0, n). Rejection-sampled.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        loop {
            let x = self.next_u64();
            let r = x % n;
            if x - r <= u64::MAX - (n - 1) {
                return r;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Inverse standard normal CDF (Acklam's rational approximation,
/// max relative error ~1.15e-9).
///
/// Panics outside (0, 1); callers validate probabilities first.
pub fn inv_norm_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "inv_norm_cdf domain: {p}");

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];

    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
