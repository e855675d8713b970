//! Float model, forward/backward machinery, and SGD training.
//!
//! The linear part of each layer is pluggable through [`LayerExecutor`]: the
//! float executor multiplies real weights, while the crossbar executor (in
//! `xbar`) substitutes the quantized bit-serial hardware path. The backward
//! pass always uses float weights over whatever activations the executor
//! produced, which is the straight-through treatment hybrid retraining needs.

use crate::error::{Error, Result};
use crate::netcore::layers::{
    im2col, maxpool2, relu_inplace, FeatureMap, LayerKind, NetworkSpec,
};
use crate::netcore::Dataset;
use crate::rng::KeyedRng;

#[derive(Debug, Clone, Copy)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub momentum: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams { learning_rate: 0.05, batch_size: 32, epochs: 10, momentum: 0.9 }
    }
}

/// Per-layer real-valued weights and biases. Weights are stored row-major as
/// [c_out][c_in * k1 * k2], i.e. each output channel's flattened kernel is
/// contiguous (one crossbar column).
#[derive(Debug, Clone)]
pub struct FloatModel {
    pub weights: Vec<Vec<f32>>,
    pub biases: Vec<Vec<f32>>,
    pub hyper: HyperParams,
}

impl FloatModel {
    /// Kaiming-uniform init, deterministic per seed.
    pub fn init(net: &NetworkSpec, hyper: HyperParams, seed: u64) -> Self {
        let mut weights = Vec::with_capacity(net.layers.len());
        let mut biases = Vec::with_capacity(net.layers.len());
        for (i, def) in net.layers.iter().enumerate() {
            let fan_in = def.spec.rows() as f64;
            let bound = (6.0 / fan_in).sqrt();
            let mut rng = KeyedRng::new(seed, &[0x1217, i as u64]);
            let w: Vec<f32> =
                (0..def.spec.weight_count()).map(|_| rng.uniform(-bound, bound) as f32).collect();
            weights.push(w);
            biases.push(vec![0.0f32; def.spec.c_out]);
        }
        FloatModel { weights, biases, hyper }
    }

    pub fn check_shapes(&self, net: &NetworkSpec) -> Result<()> {
        if self.weights.len() != net.layers.len() {
            return Err(Error::Shape(format!(
                "model has {} layers, network {}",
                self.weights.len(),
                net.layers.len()
            )));
        }
        for (i, def) in net.layers.iter().enumerate() {
            if self.weights[i].len() != def.spec.weight_count()
                || self.biases[i].len() != def.spec.c_out
            {
                return Err(Error::Shape(format!("layer {i} weight/bias size mismatch")));
            }
        }
        Ok(())
    }
}

/// Computes the linear part (conv/fc plus bias) of one layer.
pub trait LayerExecutor {
    fn layer_forward(&mut self, layer_idx: usize, input: &FeatureMap) -> Result<FeatureMap>;
}

/// Reference float executor.
pub struct FloatExec<'a> {
    pub net: &'a NetworkSpec,
    pub model: &'a FloatModel,
}

impl LayerExecutor for FloatExec<'_> {
    fn layer_forward(&mut self, layer_idx: usize, input: &FeatureMap) -> Result<FeatureMap> {
        let spec = &self.net.layers[layer_idx].spec;
        let rows = spec.rows();
        let patches = im2col(spec, input);
        let n_pix = patches.len() / rows;
        let (oh, ow) = spec.out_spatial();
        debug_assert_eq!(n_pix, oh * ow);
        let w = &self.model.weights[layer_idx];
        let b = &self.model.biases[layer_idx];
        let mut out = FeatureMap::new(spec.c_out, oh, ow);
        for p in 0..n_pix {
            let patch = &patches[p * rows..(p + 1) * rows];
            for co in 0..spec.c_out {
                let col = &w[co * rows..(co + 1) * rows];
                let mut acc = 0.0f64;
                for r in 0..rows {
                    acc += patch[r] * col[r] as f64;
                }
                out.data[co * n_pix + p] = acc + b[co] as f64;
            }
        }
        Ok(out)
    }
}

/// Recorded activations from one forward pass, enough to run backward.
pub struct Tape {
    /// Input feature map of each weight layer (after any flatten).
    pub inputs: Vec<FeatureMap>,
    /// Linear output of each layer before ReLU/pool.
    pub preacts: Vec<FeatureMap>,
    /// Argmax indices for each pooled layer (empty when not pooled).
    pub pool_args: Vec<Vec<usize>>,
    pub logits: Vec<f64>,
}

/// Runs the full network over one image, recording the tape.
pub fn forward_tape(
    net: &NetworkSpec,
    exec: &mut dyn LayerExecutor,
    image: FeatureMap,
) -> Result<Tape> {
    let n = net.layers.len();
    let mut inputs = Vec::with_capacity(n);
    let mut preacts = Vec::with_capacity(n);
    let mut pool_args = Vec::with_capacity(n);
    let mut cur = image;
    for (i, def) in net.layers.iter().enumerate() {
        if def.spec.kind == LayerKind::FullyConnected {
            cur = cur.flatten();
        }
        inputs.push(cur.clone());
        let mut out = exec.layer_forward(i, &cur)?;
        preacts.push(out.clone());
        if def.relu {
            relu_inplace(&mut out);
        }
        if def.pool {
            let (pooled, arg) = maxpool2(&out);
            out = pooled;
            pool_args.push(arg);
        } else {
            pool_args.push(Vec::new());
        }
        cur = out;
    }
    let logits = cur.data.clone();
    Ok(Tape { inputs, preacts, pool_args, logits })
}

/// Plain inference (no tape).
pub fn infer(
    net: &NetworkSpec,
    exec: &mut dyn LayerExecutor,
    image: FeatureMap,
) -> Result<Vec<f64>> {
    let mut cur = image;
    for (i, def) in net.layers.iter().enumerate() {
        if def.spec.kind == LayerKind::FullyConnected {
            cur = cur.flatten();
        }
        let mut out = exec.layer_forward(i, &cur)?;
        if def.relu {
            relu_inplace(&mut out);
        }
        if def.pool {
            out = maxpool2(&out).0;
        }
        cur = out;
    }
    Ok(cur.data)
}

/// Numerically stable softmax cross-entropy. Returns (loss, dloss/dlogits).
pub fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + m - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Per-layer gradients matching the model layout.
pub struct Grads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros(net: &NetworkSpec) -> Self {
        Grads {
            weights: net.layers.iter().map(|d| vec![0.0; d.spec.weight_count()]).collect(),
            biases: net.layers.iter().map(|d| vec![0.0; d.spec.c_out]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Grads, s: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }
}

/// Backpropagates one image's loss gradient through the tape using float
/// weights (straight-through with respect to any quantization the executor
/// applied on the forward side).
pub fn backward(net: &NetworkSpec, model: &FloatModel, tape: &Tape, dlogits: &[f64]) -> Grads {
    let mut grads = Grads::zeros(net);
    let mut delta = dlogits.to_vec();
    for i in (0..net.layers.len()).rev() {
        let def = &net.layers[i];
        let spec = &def.spec;

        // undo pooling: route gradients to argmax positions
        if def.pool {
            let pre = &tape.preacts[i];
            let mut up = vec![0.0; pre.data.len()];
            for (o, &src) in tape.pool_args[i].iter().enumerate() {
                up[src] += delta[o];
            }
            delta = up;
        }
        // undo ReLU
        if def.relu {
            for (d, &z) in delta.iter_mut().zip(&tape.preacts[i].data) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
        }

        let rows = spec.rows();
        let input = &tape.inputs[i];
        let patches = im2col(spec, input);
        let n_pix = patches.len() / rows;
        let w = &model.weights[i];

        // weight and bias gradients
        for p in 0..n_pix {
            let patch = &patches[p * rows..(p + 1) * rows];
            for co in 0..spec.c_out {
                let d = delta[co * n_pix + p];
                if d == 0.0 {
                    continue;
                }
                grads.biases[i][co] += d;
                let gw = &mut grads.weights[i][co * rows..(co + 1) * rows];
                for r in 0..rows {
                    gw[r] += d * patch[r];
                }
            }
        }

        // input gradient (skip for the first layer)
        if i == 0 {
            break;
        }
        let mut dpatch = vec![0.0; patches.len()];
        for p in 0..n_pix {
            let dp = &mut dpatch[p * rows..(p + 1) * rows];
            for co in 0..spec.c_out {
                let d = delta[co * n_pix + p];
                if d == 0.0 {
                    continue;
                }
                let col = &w[co * rows..(co + 1) * rows];
                for r in 0..rows {
                    dp[r] += d * col[r] as f64;
                }
            }
        }
        delta = col2im(spec, input, &dpatch);
    }
    grads
}

/// Scatters patch gradients back onto the input map (transpose of im2col).
fn col2im(spec: &crate::netcore::LayerSpec, input: &FeatureMap, dpatch: &[f64]) -> Vec<f64> {
    match spec.kind {
        LayerKind::FullyConnected => dpatch.to_vec(),
        LayerKind::Conv => {
            let (h, w) = (spec.h_in, spec.w_in);
            let (pad1, pad2) = (spec.k1 / 2, spec.k2 / 2);
            let rows = spec.rows();
            let mut out = vec![0.0; input.data.len()];
            for y in 0..h {
                for x in 0..w {
                    let base = (y * w + x) * rows;
                    let mut r = 0;
                    for c in 0..spec.c_in {
                        for ky in 0..spec.k1 {
                            let iy = y as isize + ky as isize - pad1 as isize;
                            if iy < 0 || iy >= h as isize {
                                r += spec.k2;
                                continue;
                            }
                            for kx in 0..spec.k2 {
                                let ix = x as isize + kx as isize - pad2 as isize;
                                if ix >= 0 && ix < w as isize {
                                    out[(c * h + iy as usize) * w + ix as usize] +=
                                        dpatch[base + r];
                                }
                                r += 1;
                            }
                        }
                    }
                }
            }
            out
        }
    }
}

/// SGD with momentum. Velocity buffers live outside the model so checkpoints
/// stay plain weight arrays.
pub struct SgdState {
    vel_w: Vec<Vec<f64>>,
    vel_b: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(net: &NetworkSpec) -> Self {
        SgdState {
            vel_w: net.layers.iter().map(|d| vec![0.0; d.spec.weight_count()]).collect(),
            vel_b: net.layers.iter().map(|d| vec![0.0; d.spec.c_out]).collect(),
        }
    }

    pub fn step(&mut self, model: &mut FloatModel, grads: &Grads, lr: f64, momentum: f64) {
        for i in 0..model.weights.len() {
            for j in 0..model.weights[i].len() {
                let v = momentum * self.vel_w[i][j] + grads.weights[i][j];
                self.vel_w[i][j] = v;
                model.weights[i][j] = (model.weights[i][j] as f64 - lr * v) as f32;
            }
            for j in 0..model.biases[i].len() {
                let v = momentum * self.vel_b[i][j] + grads.biases[i][j];
                self.vel_b[i][j] = v;
                model.biases[i][j] = (model.biases[i][j] as f64 - lr * v) as f32;
            }
        }
    }
}

pub fn image_feature_map(ds: &Dataset, images: &[f32], idx: usize) -> FeatureMap {
    let n = ds.c * ds.h * ds.w;
    let data = images[idx * n..(idx + 1) * n].iter().map(|&v| v as f64).collect();
    FeatureMap::from_data(ds.c, ds.h, ds.w, data)
}

/// Builds a fresh forward executor from the current model state. Hybrid
/// retraining rebuilds the quantized crossbar mapping from the float weights
/// at every batch, which models write-verify reprogramming as exact
/// requantization.
pub trait ExecFactory {
    fn make(&self, net: &NetworkSpec, model: &FloatModel) -> Box<dyn LayerExecutor>;
}

/// Factory for the plain float path.
pub struct FloatFactory;

impl ExecFactory for FloatFactory {
    fn make(&self, net: &NetworkSpec, model: &FloatModel) -> Box<dyn LayerExecutor> {
        Box::new(OwnedFloatExec { net: net.clone(), model: model.clone() })
    }
}

/// One epoch of minibatch SGD over shuffled training data with an arbitrary
/// forward executor. Returns the mean loss.
pub fn run_epoch(
    net: &NetworkSpec,
    model: &mut FloatModel,
    sgd: &mut SgdState,
    dataset: &Dataset,
    factory: &dyn ExecFactory,
    epoch_seed: u64,
    hyper: &HyperParams,
) -> Result<f64> {
    let n = dataset.train_labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    KeyedRng::from_key(epoch_seed).shuffle(&mut order);

    let mut total_loss = 0.0;
    let mut seen = 0usize;
    for batch in order.chunks(hyper.batch_size) {
        let mut exec = factory.make(net, model);
        let mut grads = Grads::zeros(net);
        let scale = 1.0 / batch.len() as f64;
        for &idx in batch {
            let img = image_feature_map(dataset, &dataset.train_images, idx);
            let tape = forward_tape(net, exec.as_mut(), img)?;
            let (loss, dlogits) = softmax_xent(&tape.logits, dataset.train_labels[idx] as usize);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss at sample {idx}")));
            }
            total_loss += loss;
            seen += 1;
            let g = backward(net, model, &tape, &dlogits);
            grads.add_scaled(&g, scale);
        }
        sgd.step(model, &grads, hyper.learning_rate, hyper.momentum);
    }
    Ok(total_loss / seen as f64)
}

/// Top-1 accuracy of the float path on the test split.
pub fn evaluate_float(net: &NetworkSpec, model: &FloatModel, dataset: &Dataset) -> Result<f64> {
    let mut exec = FloatExec { net, model };
    evaluate_with(net, &mut exec, dataset)
}

/// Top-1 accuracy with an arbitrary executor on the test split.
pub fn evaluate_with(
    net: &NetworkSpec,
    exec: &mut dyn LayerExecutor,
    dataset: &Dataset,
) -> Result<f64> {
    let n = dataset.test_labels.len();
    let mut correct = 0usize;
    for i in 0..n {
        let img = image_feature_map(dataset, &dataset.test_images, i);
        let logits = infer(net, exec, img)?;
        if argmax(&logits) == dataset.test_labels[i] as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Trains a float model from scratch. Deterministic given the seed; returns
/// the model and its final float test accuracy.
pub fn train_float(
    net: &NetworkSpec,
    dataset: &Dataset,
    hyper: HyperParams,
    seed: u64,
) -> Result<(FloatModel, f64)> {
    net.validate()?;
    let mut model = FloatModel::init(net, hyper, seed);
    let mut sgd = SgdState::new(net);
    for epoch in 0..hyper.epochs {
        let epoch_seed = crate::rng::derive_key(seed, &[0xe90c, epoch as u64]);
        run_epoch(net, &mut model, &mut sgd, dataset, &FloatFactory, epoch_seed, &hyper)?;
    }
    let acc = evaluate_float(net, &model, dataset)?;
    Ok((model, acc))
}

/// Float executor that owns its data, for use where a borrowing executor
/// can't outlive the batch closure.
pub struct OwnedFloatExec {
    pub net: NetworkSpec,
    pub model: FloatModel,
}

impl LayerExecutor for OwnedFloatExec {
    fn layer_forward(&mut self, layer_idx: usize, input: &FeatureMap) -> Result<FeatureMap> {
        let mut e = FloatExec { net: &self.net, model: &self.model };
        e.layer_forward(layer_idx, input)
    }
}
