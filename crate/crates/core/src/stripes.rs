//! Precision-serial engine: neurons enter one bit plane per cycle, synapses
//! stay bit-parallel, and 16 windows share each synapse brick.

use crate::error::{Error, Result};
use crate::geometry::{brick_unchecked, check_shapes, FilterSet, LayerSpec, Tensor3, BRICK, PALLET_WINDOWS};
use crate::numerics::{activate, trim_tensor, Accum, NeuronFormat, PrecisionWindow, SignMode};
use crate::pragmatic::column::{pallet_sync_cycles, ColumnWork};
use crate::pragmatic::dispatcher::pallet_fetch_cycles;
use crate::reference::{essential_pair_terms, schedule_sb_reads, CycleReport, EngineResult};

/// Bit planes walked by the serial inner product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlaneRange {
    pub lo: u8,
    pub hi: u8,
    /// Whether plane `hi` carries negative weight (two's complement sign).
    pub negate_top: bool,
}

impl PlaneRange {
    /// Serial cycles per brick, i.e. the effective precision `p`.
    pub fn planes(&self) -> u32 {
        (self.hi - self.lo + 1) as u32
    }
}

/// Planes for a trimmed window. Signed neurons need one plane above the
/// window for the sign, up to the container's top bit.
pub fn plane_range(window: PrecisionWindow, sign: SignMode) -> PlaneRange {
    match sign {
        SignMode::Unsigned => PlaneRange {
            lo: window.lsb,
            hi: window.msb,
            negate_top: false,
        },
        SignMode::Signed => PlaneRange {
            lo: window.lsb,
            hi: (window.msb + 1).min(15),
            negate_top: true,
        },
    }
}

/// Serial inner product over bit planes: `Σ_b ±2^b · Σ_i n_i^b · s_i`.
/// Returns the sum and the number of serial steps.
pub fn sip_inner(neurons: &[i32], synapses: &[i32], planes: PlaneRange) -> (Accum, u32) {
    assert_eq!(neurons.len(), synapses.len(), "lane count mismatch");
    let mut acc: Accum = 0;
    for b in planes.lo..=planes.hi {
        let tree: Accum = neurons
            .iter()
            .zip(synapses)
            .filter(|(&n, _)| (n >> b) & 1 == 1)
            .map(|(_, &s)| s as Accum)
            .sum();
        if planes.negate_top && b == planes.hi {
            acc -= tree << b;
        } else {
            acc += tree << b;
        }
    }
    (acc, planes.planes())
}

fn resolve_window(profile: Option<PrecisionWindow>, format: NeuronFormat) -> Result<PrecisionWindow> {
    let window = profile.ok_or(Error::MissingProfile)?;
    window.check_container(format.width)?;
    Ok(window)
}

/// Runs a layer on the precision-serial engine.
pub fn stripes_layer(
    input: &Tensor3,
    filters: &FilterSet,
    spec: &LayerSpec,
    profile: Option<PrecisionWindow>,
    format: NeuronFormat,
) -> Result<EngineResult> {
    check_shapes(input, filters, spec)?;
    let window = resolve_window(profile, format)?;
    input.check_domain(format.domain())?;
    let trimmed = trim_tensor(input, window, format.sign)?;
    let planes = plane_range(window, format.sign);
    let p = planes.planes();

    let (ox, oy, n) = spec.output_dims()?;
    let steps = spec.brick_steps();
    let synapses: Vec<Vec<[i32; BRICK]>> = steps
        .iter()
        .map(|&st| (0..n).map(|f| filters.synapse_brick(f, st)).collect())
        .collect();

    let mut acc = vec![0 as Accum; ox * oy * n];
    let mut work = ColumnWork {
        costs: Vec::new(),
        nm: Vec::new(),
    };
    for (base_wx, wy) in spec.pallet_origins()? {
        for (si, &step) in steps.iter().enumerate() {
            work.costs.push([p; PALLET_WINDOWS]);
            work.nm.push(pallet_fetch_cycles(spec, base_wx, wy, step));
            for wx in base_wx..(base_wx + PALLET_WINDOWS).min(ox) {
                let brick = brick_unchecked(&trimmed, spec, wx, wy, step);
                let out = &mut acc[(wy * ox + wx) * n..(wy * ox + wx + 1) * n];
                for (f, o) in out.iter_mut().enumerate() {
                    *o += sip_inner(&brick.values, &synapses[si][f], planes).0;
                }
            }
        }
    }
    let output = Tensor3::from_fn(ox, oy, n, |x, y, f| activate(acc[(y * ox + x) * n + f], spec.act, spec.out_shift));

    let groups = spec.filter_groups() as u64;
    let (cycles, stalls) = pallet_sync_cycles(&work);
    let report = CycleReport {
        compute_cycles: groups * cycles,
        nm_fetch_cycles: groups * work.nm.iter().map(|&c| c as u64).sum::<u64>(),
        stall_cycles: groups * stalls,
        sb_reads: schedule_sb_reads(spec)?,
        total_terms: p as u64 * spec.multiplications()?,
        effectual_terms: essential_pair_terms(&trimmed, spec, format.width, |v| v)?,
    };
    Ok(EngineResult { output, report })
}
