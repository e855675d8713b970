//! Named network presets.

use crate::error::{Error, Result};
use crate::netcore::layers::{LayerDef, LayerSpec, NetworkSpec};

fn conv(c_in: usize, c_out: usize, h: usize, w: usize, bits: u8, relu: bool, pool: bool) -> LayerDef {
    LayerDef { spec: LayerSpec::conv(c_in, c_out, 3, h, w, bits), relu, pool }
}

fn fc(c_in: usize, c_out: usize, bits: u8, relu: bool) -> LayerDef {
    LayerDef { spec: LayerSpec::fc(c_in, c_out, bits), relu, pool: false }
}

/// Single fully-connected layer on flat inputs.
pub fn linear(dim: usize, classes: usize, bits: u8) -> NetworkSpec {
    NetworkSpec {
        name: "linear".into(),
        input: (dim, 1, 1),
        layers: vec![fc(dim, classes, bits, false)],
        dataset_id: "synthetic".into(),
        classes,
    }
}

/// Two-layer perceptron for MNIST-shaped inputs, the fast CI path.
pub fn mlp_mnist(bits: u8) -> NetworkSpec {
    NetworkSpec {
        name: "mlp-mnist".into(),
        input: (784, 1, 1),
        layers: vec![fc(784, 64, bits, true), fc(64, 10, bits, false)],
        dataset_id: "mnist".into(),
        classes: 10,
    }
}

/// Small three-conv CNN for the 3x12x12 synthetic task. conv2 and conv3 are
/// the shuffle-eligible layers (16 and 24 input channels).
pub fn synth_cnn(bits: u8) -> NetworkSpec {
    NetworkSpec {
        name: "synth-cnn".into(),
        input: (3, 12, 12),
        layers: vec![
            conv(3, 16, 12, 12, bits, true, true),
            conv(16, 24, 6, 6, bits, true, false),
            conv(24, 24, 6, 6, bits, true, true),
            fc(24 * 3 * 3, 10, bits, false),
        ],
        dataset_id: "synthetic".into(),
        classes: 10,
    }
}

/// Desk-scale VGG-8 shape for CIFAR-10: six conv layers at widths 32/64/128
/// plus two fully-connected layers.
pub fn vgg8_desk(bits: u8) -> NetworkSpec {
    NetworkSpec {
        name: "vgg8-desk".into(),
        input: (3, 32, 32),
        layers: vec![
            conv(3, 32, 32, 32, bits, true, false),
            conv(32, 32, 32, 32, bits, true, true),
            conv(32, 64, 16, 16, bits, true, false),
            conv(64, 64, 16, 16, bits, true, true),
            conv(64, 128, 8, 8, bits, true, false),
            conv(128, 128, 8, 8, bits, true, true),
            fc(128 * 4 * 4, 128, bits, true),
            fc(128, 10, bits, false),
        ],
        dataset_id: "cifar10".into(),
        classes: 10,
    }
}

/// Full-width VGG-8 shape (128/256/512). Used for hardware cost studies;
/// never trained at desk scale.
pub fn vgg8_wide(bits: u8) -> NetworkSpec {
    NetworkSpec {
        name: "vgg8-wide".into(),
        input: (3, 32, 32),
        layers: vec![
            conv(3, 128, 32, 32, bits, true, false),
            conv(128, 128, 32, 32, bits, true, true),
            conv(128, 256, 16, 16, bits, true, false),
            conv(256, 256, 16, 16, bits, true, true),
            conv(256, 512, 8, 8, bits, true, false),
            conv(512, 512, 8, 8, bits, true, true),
            fc(512 * 4 * 4, 1024, bits, true),
            fc(1024, 10, bits, false),
        ],
        dataset_id: "cifar10".into(),
        classes: 10,
    }
}

pub const PRESET_NAMES: &[&str] = &["linear", "mlp-mnist", "synth-cnn", "vgg8-desk", "vgg8-wide"];

pub fn by_name(name: &str, bits: u8) -> Result<NetworkSpec> {
    let net = match name {
        "linear" => linear(432, 10, bits),
        "mlp-mnist" => mlp_mnist(bits),
        "synth-cnn" => synth_cnn(bits),
        "vgg8-desk" => vgg8_desk(bits),
        "vgg8-wide" => vgg8_wide(bits),
        other => {
            return Err(Error::Invalid(format!(
                "unknown network preset '{other}' (known: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    net.validate()?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_validate() {
        for name in PRESET_NAMES {
            for bits in [2u8, 4, 8] {
                by_name(name, bits).unwrap();
            }
        }
    }

    #[test]
    fn vgg8_desk_has_eight_weight_layers() {
        assert_eq!(vgg8_desk(4).layers.len(), 8);
    }

    #[test]
    fn unknown_preset_is_an_error() {
        assert!(by_name("resnet", 4).is_err());
    }
}
