//! Layer-by-layer bit-serial execution of a mapped network.
//!
//! Per layer: activations are quantized to 8-bit codes over the feature
//! map's own range, shuffled per key where the array was programmed
//! shuffled, decomposed into input bits, and driven through every bit
//! plane's tiles. Partial sums are either kept exact (ideal mode) or pushed
//! through the per-tile-column ADC with the chip's reference shifts
//! (quantize-then-add across row tiles). Shift-and-add recombines cycles,
//! the dummy column's contribution is subtracted, and the integer total is
//! rescaled by the activation and weight grids.

use std::sync::Arc;

use crate::adcvar::ChipFingerprint;
use crate::error::{Error, Result};
use crate::netcore::layers::{FeatureMap, LayerKind, NetworkSpec};
use crate::netcore::quantize::quantize_activations;
use crate::netcore::train::{ExecFactory, FloatModel, LayerExecutor};
use crate::netcore::quantize::quantize_weights;
use crate::shufflekey::{shuffle_input_codes, LayerKeys};
use crate::xbar::tilemap::{map_conventional, map_subkernel, MappingMode, TileMap, TILE_DIM};

/// How partial sums leave the array.
#[derive(Clone)]
pub enum AdcMode {
    /// Full-precision partial sums (no ADC in the loop).
    Ideal,
    /// Per-tile-column ADC quantization under this chip's offset pattern.
    Chip(Arc<ChipFingerprint>),
}

#[derive(Debug, Clone)]
pub struct MappedLayer {
    pub tilemap: TileMap,
    pub bias: Vec<f32>,
    /// Global tile id of each plane's first tile, indexing the fingerprint.
    pub plane_tile_base: Vec<usize>,
}

/// A full network programmed onto crossbar tiles.
#[derive(Debug, Clone)]
pub struct MappedNet {
    pub net: NetworkSpec,
    pub layers: Vec<MappedLayer>,
    pub total_tiles: usize,
}

/// Quantizes every layer's weights and maps them to tiles. When
/// `weight_keys` holds keys for a layer, its rows are programmed shuffled
/// (with fake rows drawn from `fake_seed`).
pub fn map_network(
    net: &NetworkSpec,
    model: &FloatModel,
    mode: MappingMode,
    weight_keys: Option<&[LayerKeys]>,
    fake_seed: u64,
) -> Result<MappedNet> {
    net.validate()?;
    model.check_shapes(net)?;
    let mut layers = Vec::with_capacity(net.layers.len());
    let mut tile_counter = 0usize;
    for (i, def) in net.layers.iter().enumerate() {
        let spec = &def.spec;
        let qw = quantize_weights(
            &model.weights[i],
            &[spec.c_out, spec.rows()],
            spec.weight_bits,
        )?;
        let mut tm = match (mode, spec.kind) {
            (MappingMode::Subkernel, LayerKind::Conv) => map_subkernel(spec, &qw)?,
            _ => map_conventional(spec, &qw)?,
        };
        tm.layer = i;
        if let Some(keys) = weight_keys.and_then(|ks| ks.iter().find(|k| k.layer == i)) {
            tm = tm.apply_keys(keys, fake_seed)?;
        }
        let plane_tile_base: Vec<usize> = tm
            .planes
            .iter()
            .map(|p| {
                let base = tile_counter;
                tile_counter += p.tiles.len();
                base
            })
            .collect();
        layers.push(MappedLayer { tilemap: tm, bias: model.biases[i].clone(), plane_tile_base });
    }
    Ok(MappedNet { net: net.clone(), layers, total_tiles: tile_counter })
}

/// Precomputed psum -> code tables, one 129-entry row per (tile, adc).
struct CodeTables {
    table: Vec<u8>,
    adcs_per_tile: usize,
    columns_per_adc: usize,
    level_spacing: f64,
}

fn build_code_tables(fp: &ChipFingerprint) -> CodeTables {
    let adcs = fp.config.adcs_per_tile;
    let mut table = vec![0u8; fp.tile_count * adcs * (TILE_DIM + 1)];
    for tile in 0..fp.tile_count {
        for adc in 0..adcs {
            let base = (tile * adcs + adc) * (TILE_DIM + 1);
            for psum in 0..=TILE_DIM {
                table[base + psum] = fp.quantize(psum as u32, tile, adc) as u8;
            }
        }
    }
    CodeTables {
        table,
        adcs_per_tile: adcs,
        columns_per_adc: fp.config.columns_per_adc,
        level_spacing: fp.config.level_spacing,
    }
}

impl CodeTables {
    #[inline]
    fn code(&self, tile_id: usize, local_col: usize, psum: u16) -> i64 {
        let adc = local_col / self.columns_per_adc;
        self.table[(tile_id * self.adcs_per_tile + adc) * (TILE_DIM + 1) + psum as usize] as i64
    }
}

/// Crossbar executor: plugs the mapped network into the shared forward
/// machinery.
pub struct HwExec {
    mapped: Arc<MappedNet>,
    tables: Option<CodeTables>,
    input_keys: Option<Vec<LayerKeys>>,
}

impl HwExec {
    /// Validates key and fingerprint geometry up front so the per-layer path
    /// cannot fail on shapes.
    pub fn new(
        mapped: Arc<MappedNet>,
        adc: &AdcMode,
        input_keys: Option<Vec<LayerKeys>>,
    ) -> Result<Self> {
        let tables = match adc {
            AdcMode::Ideal => None,
            AdcMode::Chip(fp) => {
                if fp.tile_count != mapped.total_tiles {
                    return Err(Error::Shape(format!(
                        "fingerprint covers {} tiles, network maps {}",
                        fp.tile_count, mapped.total_tiles
                    )));
                }
                Some(build_code_tables(fp))
            }
        };
        for ml in &mapped.layers {
            let Some(wk) = &ml.tilemap.keys else { continue };
            let layer = ml.tilemap.layer;
            let ik = input_keys
                .as_ref()
                .and_then(|ks| ks.iter().find(|k| k.layer == layer))
                .ok_or_else(|| {
                    Error::Invalid(format!(
                        "layer {layer} is programmed shuffled but no input key was supplied"
                    ))
                })?;
            if ik.blocks.len() != wk.blocks.len() {
                return Err(Error::Shape(format!(
                    "layer {layer}: input key has {} blocks, weight key {}",
                    ik.blocks.len(),
                    wk.blocks.len()
                )));
            }
            for (b, (ib, wb)) in ik.blocks.iter().zip(&wk.blocks).enumerate() {
                if ib.n_real != wb.n_real || ib.zeros != wb.zeros {
                    return Err(Error::Shape(format!(
                        "layer {layer} block {b}: input key is ({}, {}), weight key ({}, {})",
                        ib.n_real, ib.zeros, wb.n_real, wb.zeros
                    )));
                }
            }
        }
        Ok(HwExec { mapped, tables, input_keys })
    }

    fn input_key_for(&self, layer: usize) -> &LayerKeys {
        self.input_keys
            .as_ref()
            .and_then(|ks| ks.iter().find(|k| k.layer == layer))
            .expect("validated in HwExec::new")
    }
}

/// im2col over integer activation codes for an arbitrary channel count.
fn im2col_codes(
    codes: &[u16],
    channels: usize,
    h: usize,
    w: usize,
    k1: usize,
    k2: usize,
) -> Vec<u16> {
    if k1 == 1 && k2 == 1 && h == 1 && w == 1 {
        return codes.to_vec();
    }
    let (pad1, pad2) = (k1 / 2, k2 / 2);
    let rows = channels * k1 * k2;
    let mut out = vec![0u16; h * w * rows];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * rows;
            let mut r = 0;
            for c in 0..channels {
                for ky in 0..k1 {
                    let iy = y as isize + ky as isize - pad1 as isize;
                    if iy < 0 || iy >= h as isize {
                        r += k2;
                        continue;
                    }
                    for kx in 0..k2 {
                        let ix = x as isize + kx as isize - pad2 as isize;
                        if ix >= 0 && ix < w as isize {
                            out[base + r] = codes[(c * h + iy as usize) * w + ix as usize];
                        }
                        r += 1;
                    }
                }
            }
        }
    }
    out
}

/// Per-pixel input bit masks for one variant: masks[(pix * 8 + bit) * row_tiles + rt].
fn pack_input_bits(
    patches: &[u16],
    n_pix: usize,
    rows: usize,
    row_sources: &[u32],
    row_tiles: usize,
) -> Vec<u128> {
    let mut masks = vec![0u128; n_pix * 8 * row_tiles];
    for pix in 0..n_pix {
        let patch = &patches[pix * rows..(pix + 1) * rows];
        // row_sources maps logical crossbar rows to patch entries
        for (r, &src) in row_sources.iter().enumerate() {
            let mut code = patch[src as usize];
            let (rt, bit_pos) = (r / TILE_DIM, r % TILE_DIM);
            while code != 0 {
                let i = code.trailing_zeros() as usize;
                masks[(pix * 8 + i) * row_tiles + rt] |= 1u128 << bit_pos;
                code &= code - 1;
            }
        }
    }
    masks
}

impl LayerExecutor for HwExec {
    fn layer_forward(&mut self, layer_idx: usize, input: &FeatureMap) -> Result<FeatureMap> {
        let mapped = self.mapped.clone();
        let ml = &mapped.layers[layer_idx];
        let tm = &ml.tilemap;
        let spec = &mapped.net.layers[layer_idx].spec;
        let (h, w) = (input.h, input.w);
        let stride = h * w;

        let qa = quantize_activations(&input.data, &[input.c, h, w])?;
        let act_scale = qa.scale;

        // natural variant
        let nat_rows = tm.c_in * tm.k_spatial;
        let needs_nat = tm.planes.iter().any(|p| !p.shuffled);
        let needs_shuf = tm.planes.iter().any(|p| p.shuffled);

        let (oh, ow) = spec.out_spatial();
        let n_pix = oh * ow;

        let nat_masks = if needs_nat {
            let patches = im2col_codes(&qa.codes, tm.c_in, h, w, spec.k1, spec.k2);
            let plane = tm.planes.iter().find(|p| !p.shuffled).unwrap();
            Some(pack_input_bits(&patches, n_pix, nat_rows, &plane.row_sources, plane.row_tiles()))
        } else {
            None
        };

        let shuf_masks = if needs_shuf {
            let ik = self.input_key_for(tm.layer);
            // shuffle feature-map channels block by block, zeros inserted
            let mut shuf_codes = Vec::new();
            let mut chan = 0usize;
            for block in &ik.blocks {
                let slice = &qa.codes[chan * stride..(chan + block.n_real) * stride];
                shuf_codes.extend(shuffle_input_codes(slice, stride, block)?);
                chan += block.n_real;
            }
            let m_total = shuf_codes.len() / stride;
            let patches = im2col_codes(&shuf_codes, m_total, h, w, spec.k1, spec.k2);
            let plane = tm.planes.iter().find(|p| p.shuffled).unwrap();
            Some(pack_input_bits(
                &patches,
                n_pix,
                m_total * tm.k_spatial,
                &plane.row_sources,
                plane.row_tiles(),
            ))
        } else {
            None
        };

        let mut out_int = vec![0i64; n_pix * tm.c_out];
        for (j, plane) in tm.planes.iter().enumerate() {
            let masks = if plane.shuffled {
                shuf_masks.as_ref().unwrap()
            } else {
                nat_masks.as_ref().unwrap()
            };
            let row_tiles = plane.row_tiles();
            for pix in 0..n_pix {
                for bit in 0..8usize {
                    let mrow = &masks[(pix * 8 + bit) * row_tiles..(pix * 8 + bit + 1) * row_tiles];
                    let weight = 1i64 << (bit + plane.significance as usize);
                    for (t_idx, tile) in plane.tiles.iter().enumerate() {
                        let mask = mrow[tile.row_start / TILE_DIM];
                        match &self.tables {
                            None => {
                                let dummy =
                                    (mask & tile.col_masks[tile.cols]).count_ones() as i64;
                                for c in 0..tile.cols {
                                    let psum = (mask & tile.col_masks[c]).count_ones() as i64;
                                    out_int[pix * tm.c_out + tile.col_start + c] +=
                                        weight * (psum - dummy);
                                }
                            }
                            Some(tables) => {
                                let tile_id = ml.plane_tile_base[j] + t_idx;
                                let dummy_psum =
                                    (mask & tile.col_masks[tile.cols]).count_ones() as u16;
                                let dummy = tables.code(tile_id, tile.cols, dummy_psum);
                                for c in 0..tile.cols {
                                    let psum = (mask & tile.col_masks[c]).count_ones() as u16;
                                    let code = tables.code(tile_id, c, psum);
                                    out_int[pix * tm.c_out + tile.col_start + c] +=
                                        weight * (code - dummy);
                                }
                            }
                        }
                    }
                }
            }
        }

        let cycle_scale = match &self.tables {
            None => 1.0,
            Some(t) => t.level_spacing,
        };
        let scale = cycle_scale * act_scale * tm.weight_scale;
        let mut out = FeatureMap::new(tm.c_out, oh, ow);
        for co in 0..tm.c_out {
            for pix in 0..n_pix {
                out.data[co * n_pix + pix] =
                    out_int[pix * tm.c_out + co] as f64 * scale + ml.bias[co] as f64;
            }
        }
        Ok(out)
    }
}

/// Single-image hardware forward pass; returns the logits.
pub fn forward_hw(
    mapped: &Arc<MappedNet>,
    image: FeatureMap,
    adc: &AdcMode,
    input_keys: Option<&[LayerKeys]>,
) -> Result<Vec<f64>> {
    let mut exec = HwExec::new(mapped.clone(), adc, input_keys.map(|k| k.to_vec()))?;
    crate::netcore::train::infer(&mapped.net, &mut exec, image)
}

/// Executor factory for hybrid retraining: requantizes and remaps the
/// current float weights at every batch.
pub struct HwFactory {
    pub mode: MappingMode,
    pub weight_keys: Option<Vec<LayerKeys>>,
    pub input_keys: Option<Vec<LayerKeys>>,
    pub adc: AdcMode,
    pub fake_seed: u64,
}

impl HwFactory {
    pub fn try_make(&self, net: &NetworkSpec, model: &FloatModel) -> Result<Box<dyn LayerExecutor>> {
        let mapped = Arc::new(map_network(
            net,
            model,
            self.mode,
            self.weight_keys.as_deref(),
            self.fake_seed,
        )?);
        Ok(Box::new(HwExec::new(mapped, &self.adc, self.input_keys.clone())?))
    }
}

impl ExecFactory for HwFactory {
    fn make(&self, net: &NetworkSpec, model: &FloatModel) -> Box<dyn LayerExecutor> {
        self.try_make(net, model).expect("factory geometry validated before training")
    }
}
