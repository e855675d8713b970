//! Map quantized layers onto 128x128 binary crossbar tiles and execute
//! bit-serial vector-matrix multiplication with shift-and-add accumulation.

pub mod forward;
pub mod tilemap;
pub mod vmm;

pub use forward::{forward_hw, map_network, AdcMode, HwExec, HwFactory, MappedLayer, MappedNet};
pub use tilemap::{
    layer_slot_channels, map_conventional, map_subkernel, BitPlane, MappingMode, Tile, TileMap,
    TILE_DIM, TILE_WEIGHT_COLS,
};
pub use vmm::{shift_add, tile_vmm, tile_vmm_bits};
