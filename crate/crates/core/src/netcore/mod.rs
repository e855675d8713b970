//! Minimal quantized neural-network core: tensors, layers, float training,
//! fixed-point quantization, datasets, and model persistence.

pub mod dataset;
pub mod layers;
pub mod model_io;
pub mod presets;
pub mod quantize;
pub mod train;

pub use dataset::{load_cifar10, load_mnist, separable_blobs, synthetic, Dataset, SyntheticSpec};
pub use layers::{im2col, FeatureMap, LayerDef, LayerKind, LayerSpec, NetworkSpec};
pub use model_io::{load_model, save_model, MODEL_VERSION};
pub use quantize::{
    dequantize_activation, dequantize_weight, dequantize_weights, quantize_activations,
    quantize_activations_scaled, quantize_weights, quantize_weights_scaled, weight_step, QTensor,
    ACT_BITS,
};
pub use train::{
    argmax, backward, evaluate_float, evaluate_with, forward_tape, infer, softmax_xent,
    train_float, ExecFactory, FloatExec, FloatFactory, FloatModel, Grads, HyperParams,
    LayerExecutor, OwnedFloatExec, SgdState, Tape,
};
