//! Layer and network descriptions plus the shared forward-pass plumbing.
//!
//! Convolutions are stride 1 with SAME zero padding (odd kernels); pooling is
//! 2x2 max with stride 2. A fully-connected layer is the k1 = k2 = 1 special
//! case operating on the flattened feature map.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    FullyConnected,
}

#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub k1: usize,
    pub k2: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub weight_bits: u8,
}

impl LayerSpec {
    pub fn conv(c_in: usize, c_out: usize, k: usize, h_in: usize, w_in: usize, bits: u8) -> Self {
        LayerSpec { kind: LayerKind::Conv, c_in, c_out, k1: k, k2: k, h_in, w_in, weight_bits: bits }
    }

    pub fn fc(c_in: usize, c_out: usize, bits: u8) -> Self {
        LayerSpec {
            kind: LayerKind::FullyConnected,
            c_in,
            c_out,
            k1: 1,
            k2: 1,
            h_in: 1,
            w_in: 1,
            weight_bits: bits,
        }
    }

    /// Crossbar rows / flattened kernel length: C_in * k1 * k2.
    pub fn rows(&self) -> usize {
        self.c_in * self.k1 * self.k2
    }

    pub fn weight_count(&self) -> usize {
        self.rows() * self.c_out
    }

    pub fn out_spatial(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Conv => (self.h_in, self.w_in),
            LayerKind::FullyConnected => (1, 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.c_in, self.c_out, self.k1, self.k2, self.h_in, self.w_in];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Invalid(format!("layer has a zero dimension: {self:?}")));
        }
        if self.kind == LayerKind::FullyConnected
            && (self.k1 != 1 || self.k2 != 1 || self.h_in != 1 || self.w_in != 1)
        {
            return Err(Error::Invalid(
                "fully-connected layers require k1 = k2 = 1 and h_in = w_in = 1".into(),
            ));
        }
        if self.kind == LayerKind::Conv && (self.k1 % 2 == 0 || self.k2 % 2 == 0) {
            return Err(Error::Invalid("conv kernels must be odd for SAME padding".into()));
        }
        Ok(())
    }
}

/// One weight layer plus the activation/pooling that follows it.
#[derive(Debug, Clone)]
pub struct LayerDef {
    pub spec: LayerSpec,
    pub relu: bool,
    /// 2x2 max pool (stride 2) applied after the activation.
    pub pool: bool,
}

#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub name: String,
    /// Input tensor shape (channels, height, width).
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerDef>,
    pub dataset_id: String,
    pub classes: usize,
}

impl NetworkSpec {
    /// Checks consecutive layer shapes, including pooling arithmetic and the
    /// conv-to-fc flatten.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Invalid("network has no layers".into()));
        }
        let (mut c, mut h, mut w) = self.input;
        for (i, def) in self.layers.iter().enumerate() {
            def.spec.validate()?;
            match def.spec.kind {
                LayerKind::Conv => {
                    if def.spec.c_in != c || def.spec.h_in != h || def.spec.w_in != w {
                        return Err(Error::Shape(format!(
                            "layer {i}: expects {}x{}x{}, input is {c}x{h}x{w}",
                            def.spec.c_in, def.spec.h_in, def.spec.w_in
                        )));
                    }
                }
                LayerKind::FullyConnected => {
                    if def.spec.c_in != c * h * w {
                        return Err(Error::Shape(format!(
                            "layer {i}: fc expects {} inputs, flattened input is {}",
                            def.spec.c_in,
                            c * h * w
                        )));
                    }
                }
            }
            c = def.spec.c_out;
            let (oh, ow) = def.spec.out_spatial();
            h = oh;
            w = ow;
            if def.pool {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Shape(format!(
                        "layer {i}: pooling needs even spatial dims, got {h}x{w}"
                    )));
                }
                h /= 2;
                w /= 2;
            }
        }
        let last = self.layers.last().unwrap();
        if last.spec.c_out != self.classes || last.pool || last.relu {
            return Err(Error::Invalid(
                "last layer must emit raw logits with c_out == classes".into(),
            ));
        }
        Ok(())
    }

    pub fn total_weights(&self) -> usize {
        self.layers.iter().map(|d| d.spec.weight_count()).sum()
    }
}

/// One image's activations, channel-major.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        FeatureMap { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn from_data(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), c * h * w);
        FeatureMap { c, h, w, data }
    }

    #[inline]
    pub fn at(&self, ch: usize, y: usize, x: usize) -> f64 {
        self.data[(ch * self.h + y) * self.w + x]
    }

    /// Reinterprets (c, h, w) as (c*h*w, 1, 1). Channel-major layout makes
    /// this a pure reshape.
    pub fn flatten(self) -> FeatureMap {
        FeatureMap { c: self.c * self.h * self.w, h: 1, w: 1, data: self.data }
    }
}

/// Extracts im2col patches: one row of length spec.rows() per output pixel,
/// ordered channel-major (c, ky, kx). Out-of-bounds taps read 0.
pub fn im2col(spec: &LayerSpec, fm: &FeatureMap) -> Vec<f64> {
    match spec.kind {
        LayerKind::FullyConnected => fm.data.clone(),
        LayerKind::Conv => {
            let (h, w) = (spec.h_in, spec.w_in);
            let (pad1, pad2) = (spec.k1 / 2, spec.k2 / 2);
            let rows = spec.rows();
            let mut out = vec![0.0; h * w * rows];
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
                                    out[base + r] = fm.at(c, iy as usize, ix as usize);
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

/// ReLU in place; returns the mask needed by the backward pass.
pub fn relu_inplace(fm: &mut FeatureMap) {
    for v in &mut fm.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// 2x2 stride-2 max pool. Returns the pooled map and per-output argmax
/// indices into the input map.
pub fn maxpool2(fm: &FeatureMap) -> (FeatureMap, Vec<usize>) {
    let (oh, ow) = (fm.h / 2, fm.w / 2);
    let mut out = FeatureMap::new(fm.c, oh, ow);
    let mut arg = vec![0usize; fm.c * oh * ow];
    for c in 0..fm.c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = (c * fm.h + 2 * y + dy) * fm.w + 2 * x + dx;
                        if fm.data[i] > best {
                            best = fm.data[i];
                            best_i = i;
                        }
                    }
                }
                let o = (c * oh + y) * ow + x;
                out.data[o] = best;
                arg[o] = best_i;
            }
        }
    }
    (out, arg)
}
