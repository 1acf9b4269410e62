//! Brute-force convolution and the bit-parallel baseline timing model.

use crate::encoding::essential_count;
use crate::error::Result;
use crate::geometry::{check_shapes, FilterSet, LayerSpec, Tensor3, BRICK, FILTER_GROUP};
use crate::numerics::{activate, Accum, Width};

/// Counters collected by one engine run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CycleReport {
    /// Cycles until the last phase finishes, stalls included.
    pub compute_cycles: u64,
    /// Cycles the dispatcher spent reading neuron memory.
    pub nm_fetch_cycles: u64,
    /// Cycles lost waiting on neuron memory or synapse buffer arbitration.
    pub stall_cycles: u64,
    /// Synapse-set reads from the synapse buffer.
    pub sb_reads: u64,
    pub total_terms: u64,
    pub effectual_terms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineResult {
    pub output: Tensor3,
    pub report: CycleReport,
}

/// Direct convolution with wide accumulators.
pub fn conv_oracle(input: &Tensor3, filters: &FilterSet, spec: &LayerSpec) -> Result<Tensor3> {
    check_shapes(input, filters, spec)?;
    let (ox, oy, on) = spec.output_dims()?;
    let mut out = Tensor3::zeros(ox, oy, on);
    for l in 0..oy {
        for k in 0..ox {
            for f in 0..on {
                let filt = filters.filter(f);
                let mut sum: Accum = 0;
                for y in 0..spec.fy {
                    for x in 0..spec.fx {
                        let nx = (x + k * spec.stride) as isize - spec.pad as isize;
                        let ny = (y + l * spec.stride) as isize - spec.pad as isize;
                        for i in 0..spec.i {
                            sum += filt.get(x, y, i) as Accum * input.get_or_zero(nx, ny, i) as Accum;
                        }
                    }
                }
                out.set(k, l, f, activate(sum, spec.act, spec.out_shift));
            }
        }
    }
    Ok(out)
}

/// Bit-parallel baseline: one cycle per (filter group, window, brick).
pub fn dadn_cycles(spec: &LayerSpec) -> Result<u64> {
    let (ox, oy, _) = spec.output_dims()?;
    Ok((spec.n.div_ceil(FILTER_GROUP) * ox * oy * spec.fx * spec.fy * (spec.i / BRICK)) as u64)
}

/// Terms processed by the baseline: a full container's worth per multiplication.
pub fn dadn_terms(spec: &LayerSpec, width: Width) -> Result<u64> {
    Ok(width.bits() as u64 * spec.multiplications()?)
}

/// Synapse-set reads under the shared 16-window schedule. Every engine reuses
/// one set across a pallet of windows, so this count is engine independent.
pub fn schedule_sb_reads(spec: &LayerSpec) -> Result<u64> {
    let pallets = spec.pallet_origins()?.len();
    Ok((spec.filter_groups() * pallets * spec.bricks_per_window()) as u64)
}

/// Σ over every multiplication of the neuron's essential-bit count, after
/// `map` is applied to each neuron. Padding neurons count as zero.
pub(crate) fn essential_pair_terms(
    input: &Tensor3,
    spec: &LayerSpec,
    width: Width,
    mut map: impl FnMut(i32) -> i32,
) -> Result<u64> {
    pair_sum(input, spec, |v| essential_count(map(v), width) as u64)
}

/// Σ of `cost(neuron)` over every (neuron, synapse) multiplication of the
/// layer. Padding positions contribute `cost(0)`.
pub(crate) fn pair_sum(input: &Tensor3, spec: &LayerSpec, mut cost: impl FnMut(i32) -> u64) -> Result<u64> {
    let (ox, oy, _) = spec.output_dims()?;
    // Per-position sums, reused by every window covering the position.
    let (nx, ny, depth) = input.dims();
    let mut per_pos = vec![0u64; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            per_pos[y * nx + x] = (0..depth).map(|c| cost(input.get(x, y, c))).sum();
        }
    }
    let pad_cost = cost(0) * spec.i as u64;
    let mut total = 0u64;
    for l in 0..oy {
        for k in 0..ox {
            for y in 0..spec.fy {
                for x in 0..spec.fx {
                    let px = (x + k * spec.stride) as isize - spec.pad as isize;
                    let py = (y + l * spec.stride) as isize - spec.pad as isize;
                    if px >= 0 && py >= 0 && (px as usize) < nx && (py as usize) < ny {
                        total += per_pos[py as usize * nx + px as usize];
                    } else {
                        total += pad_cost;
                    }
                }
            }
        }
    }
    Ok(total * spec.n as u64)
}

/// Runs the baseline: oracle output plus its value-blind cycle and term counts.
pub fn dadn_layer(input: &Tensor3, filters: &FilterSet, spec: &LayerSpec, width: Width) -> Result<EngineResult> {
    let output = conv_oracle(input, filters, spec)?;
    let report = CycleReport {
        compute_cycles: dadn_cycles(spec)?,
        nm_fetch_cycles: 0,
        stall_cycles: 0,
        sb_reads: schedule_sb_reads(spec)?,
        total_terms: dadn_terms(spec, width)?,
        effectual_terms: essential_pair_terms(input, spec, width, |v| v)?,
    };
    Ok(EngineResult { output, report })
}
