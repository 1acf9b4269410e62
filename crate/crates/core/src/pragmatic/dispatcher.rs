//! Neuron memory fetch timing for the serial engines.
//!
//! Bricks sharing a depth offset are stored consecutively along x
//! (`((y * i/16 + i0/16) * nx + x)` in brick units) and one NM row holds 256
//! neurons, i.e. 16 bricks. A stride-`S` pallet spans `15*S + 1` bricks, so an
//! aligned pallet touches `S` rows and a misaligned one up to `S + 1`, capped
//! at 16 row reads.

use crate::geometry::{BrickStep, LayerSpec, BRICK};

/// Bricks per NM row.
pub const NM_ROW_BRICKS: usize = 16;

/// Brick index of storage position `(x, y, i0)` under the pallet-friendly
/// mapping. Coordinates inside padding are clamped to the stored edge.
pub fn nm_brick_address(spec: &LayerSpec, x: isize, y: isize, i0: usize) -> usize {
    let xc = x.clamp(0, spec.nx as isize - 1) as usize;
    let yc = y.clamp(0, spec.ny as isize - 1) as usize;
    (yc * (spec.i / BRICK) + i0 / BRICK) * spec.nx + xc
}

/// Whether the pallet starting at window `(base_wx, wy)` begins on an NM row.
pub fn pallet_aligned(spec: &LayerSpec, base_wx: usize, wy: usize, step: BrickStep) -> bool {
    let x = (base_wx * spec.stride + step.bx) as isize - spec.pad as isize;
    let y = (wy * spec.stride + step.by) as isize - spec.pad as isize;
    nm_brick_address(spec, x, y, step.i0).is_multiple_of(NM_ROW_BRICKS)
}

/// Cycles the dispatcher needs to read one pallet (`NM_C`).
pub fn dispatcher_fetch_cycles(spec: &LayerSpec, aligned: bool) -> u32 {
    let rows = if aligned { spec.stride } else { spec.stride + 1 };
    rows.min(16) as u32
}

/// `NM_C` of a specific pallet.
pub fn pallet_fetch_cycles(spec: &LayerSpec, base_wx: usize, wy: usize, step: BrickStep) -> u32 {
    dispatcher_fetch_cycles(spec, pallet_aligned(spec, base_wx, wy, step))
}
