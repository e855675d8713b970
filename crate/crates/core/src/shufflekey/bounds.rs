//! Combinatorial security bounds for the shuffle key space, with exact and
//! Monte-Carlo oracles.
//!
//! The brute-force question: how likely is a uniformly random key to match
//! the real key in at least n digits? Without zero insertion the bound is
//! [C(N,n) * (N-n)!] / N!, which simplifies to 1/n!. With k inserted zeros
//! over M = N + k slots the printed bound becomes
//! [C(N,n) * (M-n)!/k!] / [C(M,k) * N!]. The second form's derivation is not
//! obvious, so it is validated (and clamped to [0,1]) against Monte Carlo
//! rather than trusted.

use crate::error::{Error, Result};
use crate::rng::derive_key;
use crate::shufflekey::{gen_key, matched_digits};

/// ln(n!) by direct summation. Exact cancellation matters more than speed
/// here: both bound formulas reuse identical ln-factorial terms, so shared
/// terms cancel bit-exactly.
pub fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Upper bound on the probability that a random key matches at least n of N
/// digits, no zero insertion: [C(N,n) * (N-n)!] / N! = 1/n!.
pub fn bound_no_insert(n_channels: u64, matched: u64) -> Result<f64> {
    if matched > n_channels {
        return Err(Error::Invalid(format!(
            "matched {matched} exceeds channel count {n_channels}"
        )));
    }
    let ln = ln_choose(n_channels, matched) + ln_factorial(n_channels - matched)
        - ln_factorial(n_channels);
    Ok(ln.exp())
}

/// The printed zero-insertion bound, evaluated in log space. Returns the raw
/// value; use [`bound_with_insert`] for the clamped probability.
pub fn bound_with_insert_raw(n_channels: u64, slots: u64, zeros: u64, matched: u64) -> Result<f64> {
    if slots != n_channels + zeros {
        return Err(Error::Invalid(format!(
            "inconsistent key shape: M = {slots}, N + k = {}",
            n_channels + zeros
        )));
    }
    if matched > n_channels {
        return Err(Error::Invalid(format!(
            "matched {matched} exceeds channel count {n_channels}"
        )));
    }
    let ln = ln_choose(n_channels, matched) + ln_factorial(slots - matched) - ln_factorial(zeros)
        - ln_choose(slots, zeros)
        - ln_factorial(n_channels);
    Ok(ln.exp())
}

/// Clamped zero-insertion bound in [0, 1].
pub fn bound_with_insert(n_channels: u64, slots: u64, zeros: u64, matched: u64) -> Result<f64> {
    Ok(bound_with_insert_raw(n_channels, slots, zeros, matched)?.clamp(0.0, 1.0))
}

/// Exact distribution of the number of fixed points of a uniform random
/// permutation relative to a fixed key (rencontres numbers):
/// P(n) = S(N-n) / n! with S(m) = sum_{j<=m} (-1)^j / j!.
pub fn exact_match_distribution(n_channels: usize) -> Vec<f64> {
    let partial_e = |m: usize| -> f64 {
        let mut term = 1.0f64;
        let mut sum = 1.0f64;
        for j in 1..=m {
            term /= -(j as f64);
            sum += term;
        }
        sum
    };
    (0..=n_channels)
        .map(|n| {
            let mut fact = 1.0f64;
            for i in 2..=n {
                fact *= i as f64;
            }
            partial_e(n_channels - n) / fact
        })
        .collect()
}

/// Full-enumeration oracle: walks every permutation of 0..N and tallies
/// fixed-point counts. Limited to N <= 10.
pub fn enumerate_match_distribution(n_channels: usize) -> Result<Vec<f64>> {
    if n_channels > 10 {
        return Err(Error::Invalid(format!(
            "full enumeration capped at N = 10, asked for {n_channels}"
        )));
    }
    let mut counts = vec![0u64; n_channels + 1];
    let mut perm: Vec<usize> = (0..n_channels).collect();
    let mut total = 0u64;
    // Heap's algorithm
    fn walk(k: usize, perm: &mut Vec<usize>, counts: &mut [u64], total: &mut u64) {
        if k <= 1 {
            let fixed = perm.iter().enumerate().filter(|(i, &p)| *i == p).count();
            counts[fixed] += 1;
            *total += 1;
            return;
        }
        for i in 0..k {
            walk(k - 1, perm, counts, total);
            if k % 2 == 0 {
                perm.swap(i, k - 1);
            } else {
                perm.swap(0, k - 1);
            }
        }
    }
    let n = perm.len();
    walk(n, &mut perm, &mut counts, &mut total);
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}

/// Empirical frequency of each matched-digit count over random adversary
/// keys versus one fixed real key. Returns freq[n] for n = 0..=N.
pub fn monte_carlo_match(
    n_channels: usize,
    zeros: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if trials < 1000 {
        return Err(Error::Invalid(format!("need at least 1000 trials, got {trials}")));
    }
    let real = gen_key(derive_key(seed, &[0x6ea1]), n_channels, zeros)?;
    let mut counts = vec![0u64; n_channels + 1];
    for t in 0..trials {
        let candidate = gen_key(derive_key(seed, &[0xadf2, t as u64]), n_channels, zeros)?;
        counts[matched_digits(&real, &candidate)?] += 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 / trials as f64).collect())
}

/// Cumulative tail freq(>= n) from a frequency vector.
pub fn tail_from(freq: &[f64], n: usize) -> f64 {
    freq[n..].iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eq1_simplifies_to_inverse_factorial() {
        // relative error <= 1e-12 for n <= 20
        for n in 0..=20u64 {
            let want = 1.0 / (1..=n).map(|i| i as f64).product::<f64>().max(1.0);
            let got = bound_no_insert(128, n).unwrap();
            let rel = (got - want).abs() / want;
            assert!(rel <= 1e-12, "n = {n}: got {got}, want {want}, rel {rel}");
        }
        assert_eq!(bound_no_insert(128, 0).unwrap(), 1.0);
        assert!((bound_no_insert(128, 2).unwrap() - 0.5).abs() < 1e-12);
        assert!((bound_no_insert(128, 5).unwrap() - 1.0 / 120.0).abs() < 1e-15);
        assert!(bound_no_insert(4, 5).is_err());
    }

    #[test]
    fn eq2_reduces_to_eq1_without_zeros() {
        for n in 0..=16u64 {
            let a = bound_with_insert(16, 16, 0, n).unwrap();
            let b = bound_no_insert(16, n).unwrap();
            assert!((a - b).abs() <= 1e-12 * b.max(1e-300), "n = {n}");
        }
        assert!(bound_with_insert(16, 20, 3, 1).is_err());
    }

    #[test]
    fn zero_insertion_tightens_the_bound() {
        // N = 32, M = 48, k = 16: Eq.2 <= Eq.1 for every n >= 1
        for n in 1..=32u64 {
            let with = bound_with_insert(32, 48, 16, n).unwrap();
            let without = bound_no_insert(32, n).unwrap();
            assert!(with <= without + 1e-15, "n = {n}: {with} > {without}");
        }
    }

    #[test]
    fn eq2_stays_in_unit_interval_after_clamp() {
        for (n_ch, k) in [(8u64, 4u64), (32, 16), (64, 64), (128, 8)] {
            for n in 0..=n_ch {
                let v = bound_with_insert(n_ch, n_ch + k, k, n).unwrap();
                assert!((0.0..=1.0).contains(&v), "N={n_ch} k={k} n={n}: {v}");
            }
        }
    }

    #[test]
    fn rencontres_n4_values() {
        let p = exact_match_distribution(4);
        assert!((p[0] - 0.375).abs() < 1e-15); // 9/24
        assert_eq!(p[3], 0.0); // cannot fix exactly N-1 points
        assert!((p[4] - 1.0 / 24.0).abs() < 1e-15);
        let tail2 = tail_from(&p, 2);
        assert!((tail2 - 7.0 / 24.0).abs() < 1e-15);
        assert!(tail2 <= bound_no_insert(4, 2).unwrap());
    }

    #[test]
    fn rencontres_equals_enumeration_up_to_seven() {
        for n in 1..=7usize {
            let exact = exact_match_distribution(n);
            let enumerated = enumerate_match_distribution(n).unwrap();
            assert_eq!(exact.len(), enumerated.len());
            for (i, (a, b)) in exact.iter().zip(&enumerated).enumerate() {
                assert!((a - b).abs() < 1e-12, "N = {n}, n = {i}: {a} vs {b}");
            }
        }
        assert!(enumerate_match_distribution(11).is_err());
    }

    #[test]
    fn distribution_sums_to_one() {
        for n in [4usize, 16, 64, 128] {
            let s: f64 = exact_match_distribution(n).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "N = {n}: sum {s}");
        }
    }

    #[test]
    fn monte_carlo_tracks_poisson_limit() {
        let freq = monte_carlo_match(128, 0, 100_000, 2024).unwrap();
        let tail2 = tail_from(&freq, 2);
        // fixed points of a random permutation -> Poisson(1); P(>=2) = 1 - 2/e
        assert!((tail2 - 0.26424).abs() <= 0.01, "freq(n >= 2) = {tail2}");
    }

    #[test]
    fn monte_carlo_respects_eq1_bound() {
        let trials = 100_000usize;
        let freq = monte_carlo_match(128, 0, trials, 2024).unwrap();
        for n in 1..freq.len() {
            let tail = tail_from(&freq, n);
            if tail == 0.0 {
                continue;
            }
            let bound = bound_no_insert(128, n as u64).unwrap();
            if bound >= 1.0 {
                continue;
            }
            let se = (tail * (1.0 - tail) / trials as f64).sqrt();
            assert!(tail <= bound + 3.0 * se, "n = {n}: tail {tail} > bound {bound}");
        }
    }

    #[test]
    fn zero_insertion_suppresses_match_frequencies() {
        let trials = 100_000usize;
        let base = monte_carlo_match(32, 0, trials, 4242).unwrap();
        let inserted = monte_carlo_match(32, 16, trials, 4242).unwrap();
        for n in 1..base.len() {
            assert!(
                inserted[n] <= base[n] + 1e-12,
                "n = {n}: with zeros {} > without {}",
                inserted[n],
                base[n]
            );
        }
    }
}
