//! Mapping quantized layers onto 128x128 binary crossbar tiles.
//!
//! Each weight significance bit gets its own set of tiles (bit planes,
//! recombined downstream by shift-and-add). Within a plane the layer is a
//! rows x c_out binary matrix: conventional mapping stretches each kernel
//! into one column (rows ordered channel-major), sub-kernel mapping regroups
//! rows by kernel position so each k1*k2 group is a C_in x C_out block.
//! Rows are cut into 128-row tiles and columns into 127-column tiles; every
//! tile reserves one extra column as the dummy zero-reference column (all
//! ones in the MSB plane, all zeros elsewhere), whose partial sum is
//! subtracted to recover signed weights.

use crate::error::{Error, Result};
use crate::netcore::layers::{LayerKind, LayerSpec};
use crate::netcore::quantize::QTensor;
use crate::rng::KeyedRng;
use crate::shufflekey::{KeySlot, LayerKeys};

pub const TILE_DIM: usize = 128;
pub const TILE_WEIGHT_COLS: usize = TILE_DIM - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MappingMode {
    Conventional,
    Subkernel,
}

/// One physical crossbar tile: `cols` weight columns plus the dummy column,
/// each stored as a 128-bit row mask for popcount VMM.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub row_start: usize,
    pub rows: usize,
    pub col_start: usize,
    pub cols: usize,
    /// col_masks[c] bit r = cell (row_start + r, col_start + c) conducts.
    /// Index `cols` is the dummy column.
    pub col_masks: Vec<u128>,
}

impl Tile {
    pub fn dummy_col(&self) -> usize {
        self.cols
    }

    /// Binary matrix entry (local row, local column incl. dummy).
    pub fn bit(&self, r: usize, c: usize) -> u8 {
        ((self.col_masks[c] >> r) & 1) as u8
    }
}

/// One weight bit plane: the dense binary matrix, its row-to-patch gather
/// order, and the tile decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct BitPlane {
    pub significance: u8,
    pub rows: usize,
    pub cols: usize,
    /// rows x cols entries in {0,1}, logical row order.
    pub dense: Vec<u8>,
    /// Patch index feeding each logical crossbar row.
    pub row_sources: Vec<u32>,
    /// True when this plane reads the shuffled input variant.
    pub shuffled: bool,
    pub tiles: Vec<Tile>,
}

impl BitPlane {
    pub fn row_tiles(&self) -> usize {
        self.rows.div_ceil(TILE_DIM)
    }
}

/// A quantized layer mapped onto crossbar tiles, bit plane by bit plane.
#[derive(Debug, Clone)]
pub struct TileMap {
    pub layer: usize,
    pub mode: MappingMode,
    pub weight_bits: u8,
    pub c_in: usize,
    pub c_out: usize,
    pub k_spatial: usize,
    /// Quantization step of the weight grid.
    pub weight_scale: f64,
    pub planes: Vec<BitPlane>,
    /// Present when the weight rows were programmed shuffled.
    pub keys: Option<LayerKeys>,
}

fn row_order(mode: MappingMode, channels: usize, k_spatial: usize) -> Vec<u32> {
    let rows = channels * k_spatial;
    match mode {
        MappingMode::Conventional => (0..rows as u32).collect(),
        MappingMode::Subkernel => {
            let mut order = Vec::with_capacity(rows);
            for s in 0..k_spatial {
                for slot in 0..channels {
                    order.push((slot * k_spatial + s) as u32);
                }
            }
            order
        }
    }
}

fn build_tiles(dense: &[u8], rows: usize, cols: usize, msb: bool) -> Vec<Tile> {
    let mut tiles = Vec::new();
    let mut row_start = 0;
    while row_start < rows {
        let tile_rows = (rows - row_start).min(TILE_DIM);
        let mut col_start = 0;
        while col_start < cols {
            let tile_cols = (cols - col_start).min(TILE_WEIGHT_COLS);
            let mut col_masks = vec![0u128; tile_cols + 1];
            for (c, mask) in col_masks.iter_mut().enumerate().take(tile_cols) {
                for r in 0..tile_rows {
                    if dense[(row_start + r) * cols + col_start + c] != 0 {
                        *mask |= 1u128 << r;
                    }
                }
            }
            // dummy column: the zero-reference code has only its MSB set
            if msb {
                col_masks[tile_cols] = if tile_rows == 128 {
                    u128::MAX
                } else {
                    (1u128 << tile_rows) - 1
                };
            }
            tiles.push(Tile {
                row_start,
                rows: tile_rows,
                col_start,
                cols: tile_cols,
                col_masks,
            });
            col_start += tile_cols;
        }
        row_start += tile_rows;
    }
    tiles
}

fn map_layer(spec: &LayerSpec, qw: &QTensor, mode: MappingMode) -> Result<TileMap> {
    spec.validate()?;
    qw.validate()?;
    if qw.bits != spec.weight_bits {
        return Err(Error::Shape(format!(
            "weights quantized to {} bits, layer declares {}",
            qw.bits, spec.weight_bits
        )));
    }
    if qw.len() != spec.weight_count() {
        return Err(Error::Shape(format!(
            "{} weight codes, layer needs {}",
            qw.len(),
            spec.weight_count()
        )));
    }
    let rows = spec.rows();
    let k_spatial = spec.k1 * spec.k2;
    let order = row_order(mode, spec.c_in, k_spatial);
    let mut planes = Vec::with_capacity(spec.weight_bits as usize);
    for j in 0..spec.weight_bits {
        let mut dense = vec![0u8; rows * spec.c_out];
        for (r, &src) in order.iter().enumerate() {
            for co in 0..spec.c_out {
                dense[r * spec.c_out + co] =
                    ((qw.codes[co * rows + src as usize] >> j) & 1) as u8;
            }
        }
        let tiles = build_tiles(&dense, rows, spec.c_out, j == spec.weight_bits - 1);
        planes.push(BitPlane {
            significance: j,
            rows,
            cols: spec.c_out,
            dense,
            row_sources: order.clone(),
            shuffled: false,
            tiles,
        });
    }
    Ok(TileMap {
        layer: 0,
        mode,
        weight_bits: spec.weight_bits,
        c_in: spec.c_in,
        c_out: spec.c_out,
        k_spatial,
        weight_scale: qw.scale,
        planes,
        keys: None,
    })
}

/// Conventional mapping: stretch each kernel into one long column.
pub fn map_conventional(spec: &LayerSpec, qw: &QTensor) -> Result<TileMap> {
    map_layer(spec, qw, MappingMode::Conventional)
}

/// Sub-kernel mapping: cut each kernel into k1*k2 C_in-vectors, one group of
/// rows per kernel position. Convolution layers only.
pub fn map_subkernel(spec: &LayerSpec, qw: &QTensor) -> Result<TileMap> {
    if spec.kind == LayerKind::FullyConnected {
        return Err(Error::Invalid(
            "sub-kernel mapping applies to conv layers; use the conventional path".into(),
        ));
    }
    map_layer(spec, qw, MappingMode::Subkernel)
}

/// Slot metadata for a keyed layer, concatenated across blocks:
/// Some(global channel) for real slots, None for inserted zero rows.
pub fn layer_slot_channels(keys: &LayerKeys) -> Vec<Option<usize>> {
    let mut out = Vec::new();
    let mut chan_offset = 0usize;
    for block in &keys.blocks {
        for slot in &block.assignment {
            out.push(match slot {
                KeySlot::Zero => None,
                KeySlot::Channel(c) => Some(chan_offset + *c as usize),
            });
        }
        chan_offset += block.n_real;
    }
    out
}

impl TileMap {
    pub fn total_tiles(&self) -> usize {
        self.planes.iter().map(|p| p.tiles.len()).sum()
    }

    /// Reprograms the array with channel rows shuffled per key. Planes in
    /// the key's shuffled set get their channel-row groups reordered and
    /// `zeros` fake channel-row groups inserted with random binary content;
    /// other planes keep the natural order. Fake rows never perturb outputs
    /// because their input is forced to zero by the shuffle array.
    pub fn apply_keys(&self, keys: &LayerKeys, fake_seed: u64) -> Result<TileMap> {
        if self.keys.is_some() {
            return Err(Error::Invalid("tile map is already keyed".into()));
        }
        let total_real: usize = keys.total_real();
        if total_real != self.c_in {
            return Err(Error::Shape(format!(
                "keys cover {total_real} channels, layer has {}",
                self.c_in
            )));
        }
        for p in &keys.shuffled_planes {
            if *p >= self.weight_bits {
                return Err(Error::Invalid(format!(
                    "shuffled plane {p} out of range for {}-bit weights",
                    self.weight_bits
                )));
            }
        }
        let slots = layer_slot_channels(keys);
        let m_total = slots.len();
        let ks = self.k_spatial;
        let mut planes = Vec::with_capacity(self.planes.len());
        for plane in &self.planes {
            if !keys.is_plane_shuffled(plane.significance) {
                planes.push(plane.clone());
                continue;
            }
            // patch-ordered view of the natural plane (undo the mode's row order)
            let mut nat_patch = vec![0u8; plane.rows * self.c_out];
            for (r, &src) in plane.row_sources.iter().enumerate() {
                nat_patch[src as usize * self.c_out..(src as usize + 1) * self.c_out]
                    .copy_from_slice(&plane.dense[r * self.c_out..(r + 1) * self.c_out]);
            }
            let rows = m_total * ks;
            let order = row_order(self.mode, m_total, ks);
            let mut dense = vec![0u8; rows * self.c_out];
            for (r, &src) in order.iter().enumerate() {
                let (slot, s) = (src as usize / ks, src as usize % ks);
                let row = &mut dense[r * self.c_out..(r + 1) * self.c_out];
                match slots[slot] {
                    Some(ch) => {
                        let nat_row = ch * ks + s;
                        row.copy_from_slice(
                            &nat_patch[nat_row * self.c_out..(nat_row + 1) * self.c_out],
                        );
                    }
                    None => {
                        let mut rng = KeyedRng::new(
                            fake_seed,
                            &[
                                0xfa4e,
                                self.layer as u64,
                                plane.significance as u64,
                                slot as u64,
                                s as u64,
                            ],
                        );
                        for v in row.iter_mut() {
                            *v = (rng.next_u64() & 1) as u8;
                        }
                    }
                }
            }
            let tiles = build_tiles(
                &dense,
                rows,
                self.c_out,
                plane.significance == self.weight_bits - 1,
            );
            planes.push(BitPlane {
                significance: plane.significance,
                rows,
                cols: self.c_out,
                dense,
                row_sources: order,
                shuffled: true,
                tiles,
            });
        }
        Ok(TileMap { keys: Some(keys.clone()), planes, ..self.clone() })
    }

    /// Inverts [`TileMap::apply_keys`]: gathers real channel rows back into
    /// natural order and drops fake rows. The result compares bit-exactly
    /// with the pre-shuffle map.
    pub fn unapply_keys(&self) -> Result<TileMap> {
        let keys = self
            .keys
            .as_ref()
            .ok_or_else(|| Error::Invalid("tile map holds no keys".into()))?;
        let slots = layer_slot_channels(keys);
        let mut slot_of_channel = vec![0usize; self.c_in];
        for (slot, ch) in slots.iter().enumerate() {
            if let Some(c) = ch {
                slot_of_channel[*c] = slot;
            }
        }
        let ks = self.k_spatial;
        let rows = self.c_in * ks;
        let mut planes = Vec::with_capacity(self.planes.len());
        for plane in &self.planes {
            if !plane.shuffled {
                planes.push(plane.clone());
                continue;
            }
            // undo the mode row order on the shuffled plane first
            let m_total = slots.len();
            let order = row_order(self.mode, m_total, ks);
            let mut slot_major = vec![0u8; m_total * ks * self.c_out];
            for (r, &src) in order.iter().enumerate() {
                slot_major[src as usize * self.c_out..(src as usize + 1) * self.c_out]
                    .copy_from_slice(&plane.dense[r * self.c_out..(r + 1) * self.c_out]);
            }
            let nat_order = row_order(self.mode, self.c_in, ks);
            let mut dense = vec![0u8; rows * self.c_out];
            for (r, &src) in nat_order.iter().enumerate() {
                let (ch, s) = (src as usize / ks, src as usize % ks);
                let slot_row = slot_of_channel[ch] * ks + s;
                dense[r * self.c_out..(r + 1) * self.c_out].copy_from_slice(
                    &slot_major[slot_row * self.c_out..(slot_row + 1) * self.c_out],
                );
            }
            let tiles =
                build_tiles(&dense, rows, self.c_out, plane.significance == self.weight_bits - 1);
            planes.push(BitPlane {
                significance: plane.significance,
                rows,
                cols: self.c_out,
                dense,
                row_sources: nat_order,
                shuffled: false,
                tiles,
            });
        }
        Ok(TileMap { keys: None, planes, ..self.clone() })
    }

    /// Rebuilds the dense weight codes from the tile matrices alone,
    /// inverting tiling and row ordering. Only meaningful for unkeyed maps
    /// (fake rows have no source weight).
    pub fn reconstruct_codes(&self) -> Result<Vec<u16>> {
        if self.keys.is_some() {
            return Err(Error::Invalid("cannot reconstruct weights from a keyed map".into()));
        }
        let rows = self.c_in * self.k_spatial;
        let mut codes = vec![0u16; rows * self.c_out];
        for plane in &self.planes {
            for tile in &plane.tiles {
                for c in 0..tile.cols {
                    let mask = tile.col_masks[c];
                    for r in 0..tile.rows {
                        if (mask >> r) & 1 == 1 {
                            let logical = tile.row_start + r;
                            let patch = plane.row_sources[logical] as usize;
                            let co = tile.col_start + c;
                            codes[co * rows + patch] |= 1 << plane.significance;
                        }
                    }
                }
            }
        }
        Ok(codes)
    }
}
