//! Dataset loading: CIFAR-10 binary batches, MNIST IDX files, and a seeded
//! synthetic generator for desk-scale runs.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::KeyedRng;

pub const CIFAR_RECORD: usize = 3073; // 1 label byte + 3 * 32 * 32 pixels

/// Images normalized to [0, 1], stored per-sample channel-major.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub id: String,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub classes: usize,
    pub train_images: Vec<f32>,
    pub train_labels: Vec<u8>,
    pub test_images: Vec<f32>,
    pub test_labels: Vec<u8>,
}

impl Dataset {
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Parameters of the seeded synthetic task: class prototypes in [0, 1] plus
/// Gaussian pixel noise, clamped back to [0, 1].
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            c: 3,
            h: 12,
            w: 12,
            train_per_class: 200,
            test_per_class: 40,
            noise: 0.12,
            seed: 1,
        }
    }
}

/// Deterministic synthetic dataset. Two calls with the same spec produce
/// identical bytes.
pub fn synthetic(spec: &SyntheticSpec) -> Dataset {
    let n = spec.c * spec.h * spec.w;
    let mut protos = Vec::with_capacity(spec.classes);
    for class in 0..spec.classes {
        let mut rng = KeyedRng::new(spec.seed, &[0x5e7, class as u64]);
        let proto: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 1.0)).collect();
        protos.push(proto);
    }

    let gen = |split: u64, per_class: usize| {
        let mut images = Vec::with_capacity(per_class * spec.classes * n);
        let mut labels = Vec::with_capacity(per_class * spec.classes);
        for sample in 0..per_class {
            for class in 0..spec.classes {
                let mut rng =
                    KeyedRng::new(spec.seed, &[0xda7a, split, class as u64, sample as u64]);
                for &p in &protos[class] {
                    let v = p + spec.noise * rng.std_normal();
                    images.push(v.clamp(0.0, 1.0) as f32);
                }
                labels.push(class as u8);
            }
        }
        (images, labels)
    };

    let (train_images, train_labels) = gen(0, spec.train_per_class);
    let (test_images, test_labels) = gen(1, spec.test_per_class);
    Dataset {
        id: "synthetic".into(),
        c: spec.c,
        h: spec.h,
        w: spec.w,
        classes: spec.classes,
        train_images,
        train_labels,
        test_images,
        test_labels,
    }
}

/// Linearly separable blobs for the trivial training check: class centers
/// far apart relative to the within-class spread.
pub fn separable_blobs(classes: usize, dim: usize, per_class: usize, seed: u64) -> Dataset {
    let mut centers = Vec::with_capacity(classes);
    let mut rng = KeyedRng::new(seed, &[0xb10b]);
    for _ in 0..classes {
        let c: Vec<f64> = (0..dim).map(|_| rng.uniform(0.0, 1.0)).collect();
        centers.push(c);
    }
    let gen = |split: u64, count: usize| {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for s in 0..count {
            for class in 0..classes {
                let mut r = KeyedRng::new(seed, &[0xb10c, split, class as u64, s as u64]);
                for &cv in &centers[class] {
                    images.push((cv + 0.02 * r.std_normal()).clamp(0.0, 1.0) as f32);
                }
                labels.push(class as u8);
            }
        }
        (images, labels)
    };
    let (train_images, train_labels) = gen(0, per_class);
    let (test_images, test_labels) = gen(1, per_class / 2);
    Dataset {
        id: "synthetic".into(),
        c: dim,
        h: 1,
        w: 1,
        classes,
        train_images,
        train_labels,
        test_images,
        test_labels,
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .map_err(|e| Error::Format(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut buf)?;
    Ok(buf)
}

/// Parses one CIFAR-10 binary batch: consecutive 3073-byte records of
/// 1 label byte followed by 3072 channel-major pixels.
pub fn parse_cifar_batch(bytes: &[u8], images: &mut Vec<f32>, labels: &mut Vec<u8>) -> Result<usize> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "CIFAR batch length {} is not a multiple of {CIFAR_RECORD} bytes",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        let label = rec[0];
        if label > 9 {
            return Err(Error::Format(format!("CIFAR label {label} out of range 0..=9")));
        }
        labels.push(label);
        images.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(n)
}

/// Loads the standard CIFAR-10 binary distribution from a directory holding
/// data_batch_1..5.bin and test_batch.bin.
pub fn load_cifar10(dir: &Path) -> Result<Dataset> {
    let mut train_images = Vec::new();
    let mut train_labels = Vec::new();
    for i in 1..=5 {
        let bytes = read_all(&dir.join(format!("data_batch_{i}.bin")))?;
        parse_cifar_batch(&bytes, &mut train_images, &mut train_labels)?;
    }
    let mut test_images = Vec::new();
    let mut test_labels = Vec::new();
    let bytes = read_all(&dir.join("test_batch.bin"))?;
    parse_cifar_batch(&bytes, &mut test_images, &mut test_labels)?;
    Ok(Dataset {
        id: "cifar10".into(),
        c: 3,
        h: 32,
        w: 32,
        classes: 10,
        train_images,
        train_labels,
        test_images,
        test_labels,
    })
}

fn be_u32(b: &[u8], off: usize) -> u32 {
    u32::from_be_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

/// Parses an IDX image file (magic 2051).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<f32>, usize, usize, usize)> {
    if bytes.len() < 16 {
        return Err(Error::Format("IDX image file shorter than its header".into()));
    }
    let magic = be_u32(bytes, 0);
    if magic != 2051 {
        return Err(Error::Format(format!("IDX image magic {magic}, expected 2051")));
    }
    let n = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let want = 16 + n * rows * cols;
    if bytes.len() != want {
        return Err(Error::Format(format!(
            "IDX image payload is {} bytes, header implies {want}",
            bytes.len()
        )));
    }
    let images = bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Ok((images, n, rows, cols))
}

/// Parses an IDX label file (magic 2049).
pub fn parse_idx_labels(bytes: &[u8], classes: usize) -> Result<Vec<u8>> {
    if bytes.len() < 8 {
        return Err(Error::Format("IDX label file shorter than its header".into()));
    }
    let magic = be_u32(bytes, 0);
    if magic != 2049 {
        return Err(Error::Format(format!("IDX label magic {magic}, expected 2049")));
    }
    let n = be_u32(bytes, 4) as usize;
    if bytes.len() != 8 + n {
        return Err(Error::Format(format!(
            "IDX label payload is {} bytes, header implies {}",
            bytes.len(),
            8 + n
        )));
    }
    let labels: Vec<u8> = bytes[8..].to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Format(format!("label {bad} out of range 0..{classes}")));
    }
    Ok(labels)
}

/// Loads MNIST from a directory with the four standard IDX files
/// (train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-...).
pub fn load_mnist(dir: &Path) -> Result<Dataset> {
    let (train_images, n_train, h, w) =
        parse_idx_images(&read_all(&dir.join("train-images-idx3-ubyte"))?)?;
    let train_labels = parse_idx_labels(&read_all(&dir.join("train-labels-idx1-ubyte"))?, 10)?;
    let (test_images, n_test, h2, w2) =
        parse_idx_images(&read_all(&dir.join("t10k-images-idx3-ubyte"))?)?;
    let test_labels = parse_idx_labels(&read_all(&dir.join("t10k-labels-idx1-ubyte"))?, 10)?;
    if train_labels.len() != n_train || test_labels.len() != n_test || (h, w) != (h2, w2) {
        return Err(Error::Format("MNIST image/label counts disagree".into()));
    }
    Ok(Dataset {
        id: "mnist".into(),
        c: 1,
        h,
        w,
        classes: 10,
        train_images,
        train_labels,
        test_images,
        test_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::default();
        let a = synthetic(&spec);
        let b = synthetic(&spec);
        assert_eq!(a.train_images, b.train_images);
        assert_eq!(a.test_labels, b.test_labels);
        assert_eq!(a.train_labels.len(), spec.classes * spec.train_per_class);
    }

    #[test]
    fn cifar_batch_roundtrip_and_errors() {
        // two synthetic records
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD];
        bytes[0] = 3;
        bytes[CIFAR_RECORD] = 9;
        bytes[1] = 255;
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let n = parse_cifar_batch(&bytes, &mut images, &mut labels).unwrap();
        assert_eq!(n, 2);
        assert_eq!(labels, vec![3, 9]);
        assert_eq!(images.len(), 2 * 3072);
        assert_eq!(images[0], 1.0);

        // truncated mid-record must error, not pad
        let truncated = &bytes[..CIFAR_RECORD + 10];
        let mut i2 = Vec::new();
        let mut l2 = Vec::new();
        assert!(parse_cifar_batch(truncated, &mut i2, &mut l2).is_err());

        // out-of-range label
        let mut bad = vec![0u8; CIFAR_RECORD];
        bad[0] = 10;
        assert!(parse_cifar_batch(&bad, &mut i2, &mut l2).is_err());
    }

    #[test]
    fn cifar_directory_loader() {
        let dir = tempfile::tempdir().unwrap();
        for i in 1..=5 {
            let mut rec = vec![0u8; CIFAR_RECORD];
            rec[0] = (i - 1) as u8;
            let mut f = std::fs::File::create(dir.path().join(format!("data_batch_{i}.bin"))).unwrap();
            f.write_all(&rec).unwrap();
        }
        let rec = vec![0u8; CIFAR_RECORD];
        std::fs::File::create(dir.path().join("test_batch.bin"))
            .unwrap()
            .write_all(&rec)
            .unwrap();
        let ds = load_cifar10(dir.path()).unwrap();
        assert_eq!(ds.train_labels, vec![0, 1, 2, 3, 4]);
        assert_eq!(ds.test_labels.len(), 1);
        assert_eq!((ds.c, ds.h, ds.w), (3, 32, 32));
    }

    #[test]
    fn idx_parsing_and_errors() {
        let mut img = Vec::new();
        img.extend_from_slice(&2051u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&[0, 128, 255, 0, 1, 2, 3, 4]);
        let (data, n, h, w) = parse_idx_images(&img).unwrap();
        assert_eq!((n, h, w), (2, 2, 2));
        assert_eq!(data[2], 1.0);

        // wrong magic
        let mut bad = img.clone();
        bad[3] = 7;
        assert!(parse_idx_images(&bad).is_err());
        // truncated
        assert!(parse_idx_images(&img[..img.len() - 1]).is_err());

        let mut lab = Vec::new();
        lab.extend_from_slice(&2049u32.to_be_bytes());
        lab.extend_from_slice(&3u32.to_be_bytes());
        lab.extend_from_slice(&[1, 2, 9]);
        assert_eq!(parse_idx_labels(&lab, 10).unwrap(), vec![1, 2, 9]);
        assert!(parse_idx_labels(&lab, 9).is_err());
    }
}
