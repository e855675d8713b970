//! Model checkpoint format: a text manifest (shapes, bit widths, scales,
//! version, checksum) followed by a raw little-endian f32 blob holding each
//! layer's weights then biases. Text header keeps files auditable; the blob
//! keeps weights bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::netcore::layers::{LayerKind, NetworkSpec};
use crate::netcore::train::FloatModel;
use crate::netcore::train::HyperParams;

pub const MODEL_VERSION: u32 = 1;
const MAGIC: &str = "CIMSEC-MODEL";
const BLOB_SEP: &[u8] = b"---BLOB---\n";

fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xffff_ffffu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = 0u32.wrapping_sub(crc & 1);
            crc = (crc >> 1) ^ (0xedb8_8320 & mask);
        }
    }
    !crc
}

fn blob_bytes(model: &FloatModel) -> Vec<u8> {
    let mut out = Vec::new();
    for (w, b) in model.weights.iter().zip(&model.biases) {
        for &v in w {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_model(model: &FloatModel, net: &NetworkSpec, path: &Path) -> Result<()> {
    model.check_shapes(net)?;
    let blob = blob_bytes(model);
    let mut manifest = String::new();
    manifest.push_str(&format!("{MAGIC} v{MODEL_VERSION}\n"));
    manifest.push_str(&format!("network {}\n", net.name));
    manifest.push_str(&format!(
        "hyper lr={} batch={} epochs={}\n",
        model.hyper.learning_rate, model.hyper.batch_size, model.hyper.epochs
    ));
    manifest.push_str(&format!("layers {}\n", net.layers.len()));
    for (i, def) in net.layers.iter().enumerate() {
        let s = &def.spec;
        let kind = match s.kind {
            LayerKind::Conv => "conv",
            LayerKind::FullyConnected => "fc",
        };
        let max_w = model.weights[i].iter().fold(0.0f32, |m, &x| m.max(x.abs()));
        manifest.push_str(&format!(
            "layer {i} {kind} cin={} cout={} k={}x{} in={}x{} bits={} scale={}\n",
            s.c_in, s.c_out, s.k1, s.k2, s.h_in, s.w_in, s.weight_bits, max_w
        ));
    }
    manifest.push_str(&format!("blob f32x{} crc32={:08x}\n", blob.len() / 4, crc32(&blob)));

    let mut bytes = manifest.into_bytes();
    bytes.extend_from_slice(BLOB_SEP);
    bytes.extend_from_slice(&blob);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(net: &NetworkSpec, path: &Path) -> Result<FloatModel> {
    let bytes = fs::read(path)?;
    let sep = find_subslice(&bytes, BLOB_SEP)
        .ok_or_else(|| Error::ModelFile("missing blob separator".into()))?;
    let manifest = std::str::from_utf8(&bytes[..sep])
        .map_err(|_| Error::ModelFile("manifest is not UTF-8".into()))?;
    let blob = &bytes[sep + BLOB_SEP.len()..];

    let mut lines = manifest.lines();
    let head = lines.next().ok_or_else(|| Error::ModelFile("empty manifest".into()))?;
    let version: u32 = head
        .strip_prefix(MAGIC)
        .and_then(|rest| rest.trim().strip_prefix('v'))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::ModelFile(format!("bad header line: {head}")))?;
    if version != MODEL_VERSION {
        return Err(Error::Version { found: version, expected: MODEL_VERSION });
    }

    let mut declared_f32 = None;
    let mut declared_crc = None;
    let mut declared_layers = None;
    let mut hyper = HyperParams::default();
    for line in lines {
        if let Some(rest) = line.strip_prefix("blob f32x") {
            let mut parts = rest.split_whitespace();
            declared_f32 = parts.next().and_then(|s| s.parse::<usize>().ok());
            declared_crc = parts
                .next()
                .and_then(|s| s.strip_prefix("crc32="))
                .and_then(|s| u32::from_str_radix(s, 16).ok());
        } else if let Some(rest) = line.strip_prefix("layers ") {
            declared_layers = rest.trim().parse::<usize>().ok();
        } else if let Some(rest) = line.strip_prefix("hyper ") {
            for kv in rest.split_whitespace() {
                if let Some((k, v)) = kv.split_once('=') {
                    match k {
                        "lr" => hyper.learning_rate = v.parse().unwrap_or(hyper.learning_rate),
                        "batch" => hyper.batch_size = v.parse().unwrap_or(hyper.batch_size),
                        "epochs" => hyper.epochs = v.parse().unwrap_or(hyper.epochs),
                        _ => {}
                    }
                }
            }
        }
    }

    let n_f32 =
        declared_f32.ok_or_else(|| Error::ModelFile("manifest missing blob line".into()))?;
    let crc_want =
        declared_crc.ok_or_else(|| Error::ModelFile("manifest missing crc32".into()))?;
    if declared_layers != Some(net.layers.len()) {
        return Err(Error::Shape(format!(
            "manifest declares {:?} layers, network has {}",
            declared_layers,
            net.layers.len()
        )));
    }
    if blob.len() != n_f32 * 4 {
        return Err(Error::ModelFile(format!(
            "blob is {} bytes, manifest declares {}",
            blob.len(),
            n_f32 * 4
        )));
    }
    let expected: usize =
        net.layers.iter().map(|d| d.spec.weight_count() + d.spec.c_out).sum();
    if n_f32 != expected {
        return Err(Error::Shape(format!(
            "blob holds {n_f32} f32s, network shapes need {expected}"
        )));
    }
    let crc_got = crc32(blob);
    if crc_got != crc_want {
        return Err(Error::ModelFile(format!(
            "checksum failure: blob crc32 {crc_got:08x}, manifest says {crc_want:08x}"
        )));
    }

    let mut weights = Vec::with_capacity(net.layers.len());
    let mut biases = Vec::with_capacity(net.layers.len());
    let mut off = 0usize;
    let mut take = |count: usize| -> Vec<f32> {
        let v = blob[off..off + 4 * count]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        off += 4 * count;
        v
    };
    for def in &net.layers {
        weights.push(take(def.spec.weight_count()));
        biases.push(take(def.spec.c_out));
    }
    Ok(FloatModel { weights, biases, hyper })
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::layers::{LayerDef, LayerSpec};

    fn tiny_net() -> NetworkSpec {
        NetworkSpec {
            name: "tiny".into(),
            input: (2, 2, 2),
            layers: vec![
                LayerDef { spec: LayerSpec::conv(2, 3, 3, 2, 2, 4), relu: true, pool: false },
                LayerDef { spec: LayerSpec::fc(12, 4, 4), relu: false, pool: false },
            ],
            dataset_id: "synthetic".into(),
            classes: 4,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let net = tiny_net();
        let model = FloatModel::init(&net, HyperParams::default(), 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cimsec");
        save_model(&model, &net, &path).unwrap();
        let loaded = load_model(&net, &path).unwrap();
        for (a, b) in model.weights.iter().zip(&loaded.weights) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for (a, b) in model.biases.iter().zip(&loaded.biases) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn wrong_blob_length_is_rejected() {
        let net = tiny_net();
        let model = FloatModel::init(&net, HyperParams::default(), 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cimsec");
        save_model(&model, &net, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, bytes).unwrap();
        match load_model(&net, &path) {
            Err(Error::ModelFile(msg)) => assert!(msg.contains("blob"), "{msg}"),
            other => panic!("expected blob length error, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let net = tiny_net();
        let model = FloatModel::init(&net, HyperParams::default(), 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cimsec");
        save_model(&model, &net, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0x40;
        std::fs::write(&path, bytes).unwrap();
        match load_model(&net, &path) {
            Err(Error::ModelFile(msg)) => assert!(msg.contains("checksum"), "{msg}"),
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn version_bump_is_an_explicit_error() {
        let net = tiny_net();
        let model = FloatModel::init(&net, HyperParams::default(), 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cimsec");
        save_model(&model, &net, &path).unwrap();
        let text = std::fs::read(&path).unwrap();
        let patched: Vec<u8> = {
            let s = String::from_utf8_lossy(&text).into_owned();
            s.replacen("CIMSEC-MODEL v1", "CIMSEC-MODEL v2", 1).into_bytes()
        };
        std::fs::write(&path, patched).unwrap();
        match load_model(&net, &path) {
            Err(Error::Version { found: 2, expected: 1 }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
