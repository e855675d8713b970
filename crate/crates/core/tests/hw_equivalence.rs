//! Crossbar execution against an independent dense-integer reference.
//!
//! The oracle below computes each layer as one integer matrix product over
//! quantized codes (no tiles, no bit-serial decomposition, no tile-local
//! dummy columns), then applies the same scale and nonlinearity steps. In
//! ideal-ADC mode the crossbar path must reproduce it bit for bit.

use std::sync::Arc;

use cimsec::adcvar::{gen_fingerprint, perfect_passrate, AdcConfig, AdcKind};
use cimsec::netcore::{
    quantize_activations, quantize_weights, FeatureMap, FloatModel, HyperParams, LayerKind,
    NetworkSpec,
};
use cimsec::rng::KeyedRng;
use cimsec::shufflekey::LayerKeys;
use cimsec::xbar::{forward_hw, map_network, AdcMode, MappingMode};

/// Dense integer reference for the full network.
fn quantized_reference(net: &NetworkSpec, model: &FloatModel, image: &FeatureMap) -> Vec<f64> {
    let mut c = image.c;
    let mut h = image.h;
    let mut w = image.w;
    let mut data = image.data.clone();
    for (li, def) in net.layers.iter().enumerate() {
        let spec = &def.spec;
        if spec.kind == LayerKind::FullyConnected {
            c = c * h * w;
            h = 1;
            w = 1;
        }
        let qa = quantize_activations(&data, &[c, h, w]).unwrap();
        let qw = quantize_weights(&model.weights[li], &[spec.c_out, spec.rows()], spec.weight_bits)
            .unwrap();
        let dummy = qw.dummy_code() as i64;
        let rows = spec.rows();
        let (pad1, pad2) = (spec.k1 / 2, spec.k2 / 2);
        let (oh, ow) = spec.out_spatial();
        let mut out = vec![0.0f64; spec.c_out * oh * ow];
        let scale = 1.0 * qa.scale * qw.scale;
        for y in 0..oh {
            for x in 0..ow {
                // gather the patch as integer codes
                let mut patch = vec![0i64; rows];
                if spec.kind == LayerKind::FullyConnected {
                    for (r, p) in patch.iter_mut().enumerate() {
                        *p = qa.codes[r] as i64;
                    }
                } else {
                    let mut r = 0;
                    for ci in 0..spec.c_in {
                        for ky in 0..spec.k1 {
                            for kx in 0..spec.k2 {
                                let iy = y as isize + ky as isize - pad1 as isize;
                                let ix = x as isize + kx as isize - pad2 as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    patch[r] =
                                        qa.codes[(ci * h + iy as usize) * w + ix as usize] as i64;
                                }
                                r += 1;
                            }
                        }
                    }
                }
                let act_total: i64 = patch.iter().sum();
                for co in 0..spec.c_out {
                    let mut acc = 0i64;
                    for r in 0..rows {
                        acc += patch[r] * qw.codes[co * rows + r] as i64;
                    }
                    let total = acc - dummy * act_total;
                    out[(co * oh + y) * ow + x] =
                        total as f64 * scale + model.biases[li][co] as f64;
                }
            }
        }
        // relu / pool
        if def.relu {
            for v in &mut out {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        c = spec.c_out;
        h = oh;
        w = ow;
        if def.pool {
            let (nh, nw) = (h / 2, w / 2);
            let mut pooled = vec![0.0f64; c * nh * nw];
            for ci in 0..c {
                for y in 0..nh {
                    for x in 0..nw {
                        let mut best = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                best = best.max(out[(ci * h + 2 * y + dy) * w + 2 * x + dx]);
                            }
                        }
                        pooled[(ci * nh + y) * nw + x] = best;
                    }
                }
            }
            out = pooled;
            h = nh;
            w = nw;
        }
        data = out;
    }
    data
}

fn test_net(bits: u8) -> NetworkSpec {
    let mut net = cimsec::netcore::presets::synth_cnn(bits);
    net.validate().unwrap();
    net
}

fn random_image(seed: u64, c: usize, h: usize, w: usize) -> FeatureMap {
    let mut rng = KeyedRng::new(seed, &[0x1439]);
    let data = (0..c * h * w).map(|_| rng.uniform(0.0, 1.0)).collect();
    FeatureMap::from_data(c, h, w, data)
}

#[test]
fn ideal_path_equals_quantized_software_bit_exactly() {
    for bits in [2u8, 4, 8] {
        let net = test_net(bits);
        let model = FloatModel::init(&net, HyperParams::default(), 11 + bits as u64);
        let mapped =
            Arc::new(map_network(&net, &model, MappingMode::Conventional, None, 0).unwrap());
        for s in 0..3u64 {
            let img = random_image(s, 3, 12, 12);
            let hw = forward_hw(&mapped, img.clone(), &AdcMode::Ideal, None).unwrap();
            let sw = quantized_reference(&net, &model, &img);
            assert_eq!(hw.len(), sw.len());
            for (a, b) in hw.iter().zip(&sw) {
                assert_eq!(a.to_bits(), b.to_bits(), "bits={bits} seed={s}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn subkernel_mapping_matches_conventional_bit_exactly() {
    let net = test_net(4);
    let model = FloatModel::init(&net, HyperParams::default(), 21);
    let conv = Arc::new(map_network(&net, &model, MappingMode::Conventional, None, 0).unwrap());
    let sub = Arc::new(map_network(&net, &model, MappingMode::Subkernel, None, 0).unwrap());
    for s in 0..3u64 {
        let img = random_image(100 + s, 3, 12, 12);
        let a = forward_hw(&conv, img.clone(), &AdcMode::Ideal, None).unwrap();
        let b = forward_hw(&sub, img, &AdcMode::Ideal, None).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn zero_offset_chips_are_interchangeable() {
    // pass rate 1.0 everywhere: offsets vanish, so two different chip seeds
    // quantize identically (the ideal-with-ADC-quantization path).
    let net = test_net(4);
    let model = FloatModel::init(&net, HyperParams::default(), 31);
    let mapped = Arc::new(map_network(&net, &model, MappingMode::Conventional, None, 0).unwrap());
    let cfg = AdcConfig::new(AdcKind::Sar, perfect_passrate(31)).unwrap();
    let chip_a = Arc::new(gen_fingerprint(1, &cfg, mapped.total_tiles));
    let chip_b = Arc::new(gen_fingerprint(999, &cfg, mapped.total_tiles));
    let img = random_image(7, 3, 12, 12);
    let a = forward_hw(&mapped, img.clone(), &AdcMode::Chip(chip_a), None).unwrap();
    let b = forward_hw(&mapped, img.clone(), &AdcMode::Chip(chip_b), None).unwrap();
    assert_eq!(a, b);
    // and ADC quantization is genuinely in the loop (differs from ideal)
    let ideal = forward_hw(&mapped, img, &AdcMode::Ideal, None).unwrap();
    assert_ne!(a, ideal);
}

#[test]
fn all_zero_weights_give_exactly_bias() {
    let net = test_net(4);
    let mut model = FloatModel::init(&net, HyperParams::default(), 41);
    for w in &mut model.weights {
        w.iter_mut().for_each(|v| *v = 0.0);
    }
    let mapped = Arc::new(map_network(&net, &model, MappingMode::Conventional, None, 0).unwrap());
    let img = random_image(9, 3, 12, 12);

    // ideal mode: dummy-column subtraction cancels everything
    let logits = forward_hw(&mapped, img.clone(), &AdcMode::Ideal, None).unwrap();
    let last = net.layers.len() - 1;
    for (l, b) in logits.iter().zip(&model.biases[last]) {
        assert_eq!(*l, *b as f64);
    }

    // zero-offset ADC mode: weight and dummy columns see equal psums and
    // quantize through the same thresholds, so the result still cancels
    let cfg = AdcConfig::new(AdcKind::Flash, perfect_passrate(31)).unwrap();
    let chip = Arc::new(gen_fingerprint(3, &cfg, mapped.total_tiles));
    let logits = forward_hw(&mapped, img, &AdcMode::Chip(chip), None).unwrap();
    for (l, b) in logits.iter().zip(&model.biases[last]) {
        assert_eq!(*l, *b as f64);
    }
}

#[test]
fn shuffled_weights_with_matching_key_are_bit_identical() {
    let net = test_net(4);
    let model = FloatModel::init(&net, HyperParams::default(), 51);
    let unshuffled =
        Arc::new(map_network(&net, &model, MappingMode::Conventional, None, 0).unwrap());
    let img = random_image(13, 3, 12, 12);
    let reference = forward_hw(&unshuffled, img.clone(), &AdcMode::Ideal, None).unwrap();

    for seed in 0..10u64 {
        for zeros in [0usize, 3, 16] {
            let keys = vec![
                LayerKeys::random(1, 16, zeros, (0..4).collect(), 1000 + seed).unwrap(),
                LayerKeys::random(2, 24, zeros, vec![3, 2], 2000 + seed).unwrap(),
            ];
            let mapped = Arc::new(
                map_network(&net, &model, MappingMode::Conventional, Some(&keys), seed).unwrap(),
            );
            let got = forward_hw(&mapped, img.clone(), &AdcMode::Ideal, Some(&keys)).unwrap();
            for (a, b) in got.iter().zip(&reference) {
                assert_eq!(a.to_bits(), b.to_bits(), "seed={seed} zeros={zeros}");
            }
        }
    }
}

#[test]
fn wrong_key_changes_the_output() {
    let net = test_net(4);
    let model = FloatModel::init(&net, HyperParams::default(), 61);
    let keys = vec![LayerKeys::random(1, 16, 0, (0..4).collect(), 7).unwrap()];
    let mapped =
        Arc::new(map_network(&net, &model, MappingMode::Conventional, Some(&keys), 0).unwrap());
    let img = random_image(17, 3, 12, 12);
    let right = forward_hw(&mapped, img.clone(), &AdcMode::Ideal, Some(&keys)).unwrap();
    let adversary = vec![LayerKeys::random(1, 16, 0, (0..4).collect(), 8).unwrap()];
    let wrong = forward_hw(&mapped, img, &AdcMode::Ideal, Some(&adversary)).unwrap();
    assert_ne!(right, wrong);
}

#[test]
fn geometry_mismatches_are_rejected() {
    let net = test_net(4);
    let model = FloatModel::init(&net, HyperParams::default(), 71);
    let mapped = Arc::new(map_network(&net, &model, MappingMode::Conventional, None, 0).unwrap());

    // fingerprint covering the wrong number of tiles
    let cfg = AdcConfig::preset(AdcKind::Sar, "WL5").unwrap();
    let chip = Arc::new(gen_fingerprint(1, &cfg, mapped.total_tiles + 1));
    let img = random_image(19, 3, 12, 12);
    assert!(forward_hw(&mapped, img.clone(), &AdcMode::Chip(chip), None).is_err());

    // keyed map without an input key
    let keys = vec![LayerKeys::random(1, 16, 2, vec![3], 7).unwrap()];
    let keyed =
        Arc::new(map_network(&net, &model, MappingMode::Conventional, Some(&keys), 0).unwrap());
    assert!(forward_hw(&keyed, img.clone(), &AdcMode::Ideal, None).is_err());

    // input key with mismatched zero count
    let bad = vec![LayerKeys::random(1, 16, 3, vec![3], 9).unwrap()];
    assert!(forward_hw(&keyed, img, &AdcMode::Ideal, Some(&bad)).is_err());
}
