//! Keyed output-input channel shuffle.
//!
//! A key over one block assigns each array row a source: a real input
//! channel (each appearing exactly once) or ZERO, an inserted fake row whose
//! input is forced to zero. The hardware realization is a one-hot SRAM CIM
//! array; functionally the shuffle is a gather with zero fill. Keys act
//! within 128-channel blocks, one key per block for deeper layers, and are
//! stored in key files separate from model checkpoints.

pub mod bounds;

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::KeyedRng;

pub const BLOCK_SIZE: usize = 128;

/// Source feeding one array row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeySlot {
    Channel(u16),
    Zero,
}

/// One block's shuffle: a permutation of N real channels over M = N + k
/// slots with k ZERO insertions.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuffleKey {
    pub n_real: usize,
    pub zeros: usize,
    pub assignment: Vec<KeySlot>,
}

impl ShuffleKey {
    pub fn slots(&self) -> usize {
        self.n_real + self.zeros
    }

    pub fn identity(n: usize) -> Self {
        ShuffleKey {
            n_real: n,
            zeros: 0,
            assignment: (0..n).map(|c| KeySlot::Channel(c as u16)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.assignment.len() != self.slots() {
            return Err(Error::Shape(format!(
                "assignment has {} slots, N + k = {}",
                self.assignment.len(),
                self.slots()
            )));
        }
        let mut seen = vec![false; self.n_real];
        let mut zero_count = 0usize;
        for slot in &self.assignment {
            match slot {
                KeySlot::Zero => zero_count += 1,
                KeySlot::Channel(c) => {
                    let c = *c as usize;
                    if c >= self.n_real {
                        return Err(Error::Invalid(format!("channel {c} out of range")));
                    }
                    if seen[c] {
                        return Err(Error::Invalid(format!("channel {c} appears twice")));
                    }
                    seen[c] = true;
                }
            }
        }
        if zero_count != self.zeros {
            return Err(Error::Invalid(format!(
                "{zero_count} ZERO slots, key declares {}",
                self.zeros
            )));
        }
        Ok(())
    }

    /// Slot index holding each real channel.
    pub fn slot_of_channel(&self) -> Vec<usize> {
        let mut pos = vec![0usize; self.n_real];
        for (i, slot) in self.assignment.iter().enumerate() {
            if let KeySlot::Channel(c) = slot {
                pos[*c as usize] = i;
            }
        }
        pos
    }
}

/// Uniformly random key: ZERO positions and the permutation of real channels
/// are drawn together by one Fisher-Yates shuffle over the M-slot multiset.
pub fn gen_key(key_seed: u64, n: usize, k: usize) -> Result<ShuffleKey> {
    if n < 2 {
        return Err(Error::Invalid(format!("need at least 2 real channels, got {n}")));
    }
    let mut assignment: Vec<KeySlot> =
        (0..n).map(|c| KeySlot::Channel(c as u16)).collect();
    assignment.extend(std::iter::repeat(KeySlot::Zero).take(k));
    KeyedRng::new(key_seed, &[0x51f5]).shuffle(&mut assignment);
    let key = ShuffleKey { n_real: n, zeros: k, assignment };
    key.validate()?;
    Ok(key)
}

/// Applies a key to a channel-major block: output slot i carries input
/// channel src(i) (stride values per channel) or zeros for ZERO slots.
/// Equivalent to multiplying by the one-hot matrix stored in the SRAM array.
pub fn shuffle_input(input: &[f64], stride: usize, key: &ShuffleKey) -> Result<Vec<f64>> {
    if input.len() != key.n_real * stride {
        return Err(Error::Shape(format!(
            "input has {} values, key expects {} channels x {stride}",
            input.len(),
            key.n_real
        )));
    }
    let mut out = vec![0.0; key.slots() * stride];
    for (i, slot) in key.assignment.iter().enumerate() {
        if let KeySlot::Channel(c) = slot {
            let src = *c as usize * stride;
            out[i * stride..(i + 1) * stride].copy_from_slice(&input[src..src + stride]);
        }
    }
    Ok(out)
}

/// Same gather over integer activation codes.
pub fn shuffle_input_codes(input: &[u16], stride: usize, key: &ShuffleKey) -> Result<Vec<u16>> {
    if input.len() != key.n_real * stride {
        return Err(Error::Shape(format!(
            "input has {} values, key expects {} channels x {stride}",
            input.len(),
            key.n_real
        )));
    }
    let mut out = vec![0u16; key.slots() * stride];
    for (i, slot) in key.assignment.iter().enumerate() {
        if let KeySlot::Channel(c) = slot {
            let src = *c as usize * stride;
            out[i * stride..(i + 1) * stride].copy_from_slice(&input[src..src + stride]);
        }
    }
    Ok(out)
}

/// Count of slots where both keys place the same real channel. ZERO-ZERO
/// coincidences do not count: matching a dead row tells an adversary
/// nothing.
pub fn matched_digits(a: &ShuffleKey, b: &ShuffleKey) -> Result<usize> {
    if a.n_real != b.n_real || a.zeros != b.zeros {
        return Err(Error::Shape(format!(
            "key shape mismatch: ({}, {}) vs ({}, {})",
            a.n_real, a.zeros, b.n_real, b.zeros
        )));
    }
    Ok(a
        .assignment
        .iter()
        .zip(&b.assignment)
        .filter(|(x, y)| matches!((x, y), (KeySlot::Channel(cx), KeySlot::Channel(cy)) if cx == cy))
        .count())
}

/// Stat row for key-distance experiments.
#[derive(Debug, Clone, Copy)]
pub struct KeyMatchStat {
    pub matched: usize,
    pub n_real: usize,
    pub slots: usize,
    pub zeros: usize,
}

pub fn key_match_stat(real: &ShuffleKey, candidate: &ShuffleKey) -> Result<KeyMatchStat> {
    Ok(KeyMatchStat {
        matched: matched_digits(real, candidate)?,
        n_real: real.n_real,
        slots: real.slots(),
        zeros: real.zeros,
    })
}

/// Generates a random key with exactly `n` slots matching the real key.
/// Keeps n chosen channels in place and deranges the rest (including zero
/// slots) by rejection.
pub fn key_with_matches(real: &ShuffleKey, n: usize, seed: u64) -> Result<ShuffleKey> {
    if n > real.n_real {
        return Err(Error::Invalid(format!("cannot match {n} of {} digits", real.n_real)));
    }
    let mut rng = KeyedRng::new(seed, &[0x3a7c4]);
    let mut channels: Vec<u16> = (0..real.n_real as u16).collect();
    rng.shuffle(&mut channels);
    let keep: Vec<u16> = channels[..n].to_vec();
    let keep_set: Vec<bool> = {
        let mut v = vec![false; real.n_real];
        for &c in &keep {
            v[c as usize] = true;
        }
        v
    };
    // Slots whose content must change: every slot not pinned by a kept channel.
    let free_slots: Vec<usize> = real
        .assignment
        .iter()
        .enumerate()
        .filter(|(_, s)| !matches!(s, KeySlot::Channel(c) if keep_set[*c as usize]))
        .map(|(i, _)| i)
        .collect();
    let free_items: Vec<KeySlot> = free_slots.iter().map(|&i| real.assignment[i]).collect();

    'retry: for attempt in 0..10_000u64 {
        let mut rng = KeyedRng::new(seed, &[0x3a7c5, attempt]);
        let mut items = free_items.clone();
        rng.shuffle(&mut items);
        // reject if any real channel landed back on its original slot
        for (slot_pos, item) in free_slots.iter().zip(&items) {
            if let KeySlot::Channel(c) = item {
                if real.assignment[*slot_pos] == KeySlot::Channel(*c) {
                    continue 'retry;
                }
            }
        }
        let mut assignment = real.assignment.clone();
        for (slot_pos, item) in free_slots.iter().zip(&items) {
            assignment[*slot_pos] = *item;
        }
        let key = ShuffleKey { n_real: real.n_real, zeros: real.zeros, assignment };
        key.validate()?;
        debug_assert_eq!(matched_digits(real, &key)?, n);
        return Ok(key);
    }
    Err(Error::Invalid(format!(
        "no derangement found for n = {n} of {} after 10000 attempts",
        real.n_real
    )))
}

/// Splits a channel count into key blocks of at most 128 channels.
pub fn block_sizes(c_in: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut left = c_in;
    while left > 0 {
        let take = left.min(BLOCK_SIZE);
        sizes.push(take);
        left -= take;
    }
    sizes
}

/// All keys protecting one layer: one per 128-channel input block, plus the
/// set of weight bit planes the shuffle applies to.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKeys {
    pub layer: usize,
    pub blocks: Vec<ShuffleKey>,
    /// Weight-bit indices (MSB = weight_bits - 1) routed through the shuffle
    /// array. Planes outside the set see the natural channel order.
    pub shuffled_planes: Vec<u8>,
}

impl LayerKeys {
    /// Identity keys: shuffling disabled but structurally present.
    pub fn identity(layer: usize, c_in: usize, planes: Vec<u8>) -> Self {
        LayerKeys {
            layer,
            blocks: block_sizes(c_in).into_iter().map(ShuffleKey::identity).collect(),
            shuffled_planes: planes,
        }
    }

    pub fn random(layer: usize, c_in: usize, zeros: usize, planes: Vec<u8>, seed: u64) -> Result<Self> {
        let blocks = block_sizes(c_in)
            .into_iter()
            .enumerate()
            .map(|(b, n)| gen_key(crate::rng::derive_key(seed, &[layer as u64, b as u64]), n, zeros))
            .collect::<Result<Vec<_>>>()?;
        Ok(LayerKeys { layer, blocks, shuffled_planes: planes })
    }

    pub fn is_plane_shuffled(&self, plane: u8) -> bool {
        self.shuffled_planes.contains(&plane)
    }

    /// Total slots across blocks (the layer's expanded channel count).
    pub fn total_slots(&self) -> usize {
        self.blocks.iter().map(|b| b.slots()).sum()
    }

    pub fn total_real(&self) -> usize {
        self.blocks.iter().map(|b| b.n_real).sum()
    }
}

/// Writes layer keys as a text key file. Keys never travel inside model
/// checkpoints; they mirror a secret held in volatile on-chip SRAM.
pub fn save_keys(keys: &[LayerKeys], path: &Path) -> Result<()> {
    let mut s = String::from("CIMSEC-KEYS v1\n");
    for lk in keys {
        let planes: Vec<String> = lk.shuffled_planes.iter().map(|p| p.to_string()).collect();
        writeln!(s, "layer {} blocks={} planes={}", lk.layer, lk.blocks.len(), planes.join(","))
            .unwrap();
        for (b, key) in lk.blocks.iter().enumerate() {
            let assign: Vec<String> = key
                .assignment
                .iter()
                .map(|slot| match slot {
                    KeySlot::Zero => "Z".to_string(),
                    KeySlot::Channel(c) => c.to_string(),
                })
                .collect();
            writeln!(s, "block {b} N={} k={} assign={}", key.n_real, key.zeros, assign.join(","))
                .unwrap();
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn load_keys(path: &Path) -> Result<Vec<LayerKeys>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().peekable();
    match lines.next() {
        Some("CIMSEC-KEYS v1") => {}
        other => return Err(Error::Format(format!("bad key file header: {other:?}"))),
    }
    let mut out: Vec<LayerKeys> = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("layer ") {
            let mut parts = rest.split_whitespace();
            let layer: usize = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format("key file: bad layer index".into()))?;
            let mut planes = Vec::new();
            for p in parts {
                if let Some(list) = p.strip_prefix("planes=") {
                    if !list.is_empty() {
                        for v in list.split(',') {
                            planes.push(v.parse::<u8>().map_err(|_| {
                                Error::Format(format!("key file: bad plane '{v}'"))
                            })?);
                        }
                    }
                }
            }
            out.push(LayerKeys { layer, blocks: Vec::new(), shuffled_planes: planes });
        } else if let Some(rest) = line.strip_prefix("block ") {
            let lk = out
                .last_mut()
                .ok_or_else(|| Error::Format("key file: block before layer".into()))?;
            let mut n_real = None;
            let mut zeros = None;
            let mut assignment = Vec::new();
            for p in rest.split_whitespace().skip(1) {
                if let Some(v) = p.strip_prefix("N=") {
                    n_real = v.parse::<usize>().ok();
                } else if let Some(v) = p.strip_prefix("k=") {
                    zeros = v.parse::<usize>().ok();
                } else if let Some(list) = p.strip_prefix("assign=") {
                    for item in list.split(',') {
                        assignment.push(if item == "Z" {
                            KeySlot::Zero
                        } else {
                            KeySlot::Channel(item.parse::<u16>().map_err(|_| {
                                Error::Format(format!("key file: bad slot '{item}'"))
                            })?)
                        });
                    }
                }
            }
            let key = ShuffleKey {
                n_real: n_real.ok_or_else(|| Error::Format("key file: block missing N".into()))?,
                zeros: zeros.ok_or_else(|| Error::Format("key file: block missing k".into()))?,
                assignment,
            };
            key.validate()?;
            lk.blocks.push(key);
        } else {
            return Err(Error::Format(format!("key file: unrecognized line '{line}'")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gen_key_is_deterministic_and_well_formed() {
        let a = gen_key(42, 8, 3).unwrap();
        let b = gen_key(42, 8, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.assignment.len(), 11);
        a.validate().unwrap();
        assert!(gen_key(1, 1, 0).is_err());
    }

    #[test]
    fn n3_k2_structure() {
        let key = gen_key(7, 3, 2).unwrap();
        let zeros = key.assignment.iter().filter(|s| **s == KeySlot::Zero).count();
        assert_eq!(zeros, 2);
        for c in 0..3u16 {
            assert_eq!(
                key.assignment.iter().filter(|s| **s == KeySlot::Channel(c)).count(),
                1
            );
        }
    }

    #[test]
    fn permutations_are_uniform() {
        // N = 4, k = 0 over 10^4 seeds: each of the 24 permutations within
        // 1/24 +/- 0.01.
        let mut counts = std::collections::HashMap::new();
        let trials = 10_000u64;
        for s in 0..trials {
            let key = gen_key(crate::rng::derive_key(777, &[s]), 4, 0).unwrap();
            let perm: Vec<u16> = key
                .assignment
                .iter()
                .map(|slot| match slot {
                    KeySlot::Channel(c) => *c,
                    KeySlot::Zero => unreachable!(),
                })
                .collect();
            *counts.entry(perm).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 24);
        for (perm, c) in counts {
            let freq = c as f64 / trials as f64;
            assert!(
                (freq - 1.0 / 24.0).abs() <= 0.01,
                "perm {perm:?} freq {freq}"
            );
        }
    }

    #[test]
    fn shuffle_input_hand_case() {
        // key [2, 0, ZERO, 1] on [a, b, c] -> [c, a, 0, b]
        let key = ShuffleKey {
            n_real: 3,
            zeros: 1,
            assignment: vec![
                KeySlot::Channel(2),
                KeySlot::Channel(0),
                KeySlot::Zero,
                KeySlot::Channel(1),
            ],
        };
        let out = shuffle_input(&[10.0, 20.0, 30.0], 1, &key).unwrap();
        assert_eq!(out, vec![30.0, 10.0, 0.0, 20.0]);

        let identity = ShuffleKey::identity(3);
        assert_eq!(shuffle_input(&[1.0, 2.0, 3.0], 1, &identity).unwrap(), vec![1.0, 2.0, 3.0]);

        assert!(shuffle_input(&[1.0, 2.0], 1, &key).is_err());
    }

    #[test]
    fn gather_equals_one_hot_matrix_product() {
        let mut rng = KeyedRng::new(5, &[1]);
        for trial in 0..50u64 {
            let n = 2 + (trial % 7) as usize;
            let k = (trial % 4) as usize;
            let key = gen_key(crate::rng::derive_key(9, &[trial]), n, k).unwrap();
            let x: Vec<f64> = (0..n).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let got = shuffle_input(&x, 1, &key).unwrap();
            // one-hot matrix: row i has a 1 at column src(i)
            let m = key.slots();
            let mut want = vec![0.0; m];
            for i in 0..m {
                for (j, &xv) in x.iter().enumerate() {
                    let h = match key.assignment[i] {
                        KeySlot::Channel(c) => (c as usize == j) as u8 as f64,
                        KeySlot::Zero => 0.0,
                    };
                    want[i] += h * xv;
                }
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn matched_digit_counts() {
        let a = ShuffleKey::identity(4);
        assert_eq!(matched_digits(&a, &a).unwrap(), 4);

        let b = ShuffleKey {
            n_real: 4,
            zeros: 0,
            assignment: [1u16, 0, 3, 2].iter().map(|&c| KeySlot::Channel(c)).collect(),
        };
        assert_eq!(matched_digits(&a, &b).unwrap(), 0);

        let c = ShuffleKey {
            n_real: 4,
            zeros: 0,
            assignment: [2u16, 0, 1, 3].iter().map(|&c| KeySlot::Channel(c)).collect(),
        };
        let d = ShuffleKey {
            n_real: 4,
            zeros: 0,
            assignment: [2u16, 1, 0, 3].iter().map(|&c| KeySlot::Channel(c)).collect(),
        };
        assert_eq!(matched_digits(&c, &d).unwrap(), 2);

        let e = gen_key(1, 5, 0).unwrap();
        assert!(matched_digits(&a, &e).is_err());
    }

    #[test]
    fn zero_zero_coincidences_do_not_count() {
        let a = ShuffleKey {
            n_real: 2,
            zeros: 1,
            assignment: vec![KeySlot::Zero, KeySlot::Channel(0), KeySlot::Channel(1)],
        };
        assert_eq!(matched_digits(&a, &a).unwrap(), 2);
    }

    #[test]
    fn key_with_matches_hits_exact_counts() {
        let real = gen_key(3, 10, 2).unwrap();
        for n in [0usize, 1, 3, 5, 9, 10] {
            let key = key_with_matches(&real, n, 1000 + n as u64).unwrap();
            assert_eq!(matched_digits(&real, &key).unwrap(), n, "n = {n}");
        }
    }

    #[test]
    fn block_partition() {
        assert_eq!(block_sizes(16), vec![16]);
        assert_eq!(block_sizes(128), vec![128]);
        assert_eq!(block_sizes(300), vec![128, 128, 44]);
    }

    #[test]
    fn key_file_roundtrip() {
        let keys = vec![
            LayerKeys::random(1, 16, 2, vec![7, 6], 42).unwrap(),
            LayerKeys::random(2, 200, 0, vec![3, 2, 1, 0], 43).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("keys.txt");
        save_keys(&keys, &path).unwrap();
        let loaded = load_keys(&path).unwrap();
        assert_eq!(keys, loaded);
    }
}
