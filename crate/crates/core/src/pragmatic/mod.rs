//! Essential-bit-serial engine.
//!
//! Each tile is a 16×16 array of PIPs: a column per window, a row per filter.
//! Neurons arrive as oneffset streams, one oneffset per lane per cycle, and
//! each PIP shifts its 16 synapses by them before the adder tree. Lanes that
//! finish early inject null terms until their column (or the whole pallet,
//! depending on [`SyncMode`]) moves to the next brick.

pub mod column;
pub mod dispatcher;
pub mod schedule;

use std::fmt;

use serde::Deserialize;

use crate::encoding::{encode, OneffsetStream};
use crate::error::{Error, Result};
use crate::geometry::{brick_unchecked, check_shapes, FilterSet, LayerSpec, Tensor3, BRICK, PALLET_WINDOWS};
use crate::numerics::{activate, trim_tensor, Accum, NeuronFormat, PrecisionWindow};
use crate::reference::{essential_pair_terms, schedule_sb_reads, CycleReport, EngineResult};

use column::{pallet_sync_cycles, simulate_columns, ColumnWork};
use dispatcher::pallet_fetch_cycles;
use schedule::{check_l_bits, schedule};

pub use schedule::{pallet_phase_cycles, pip_inner, two_stage_step, LaneState, PipSchedule, StepDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyncMode {
    /// All 256 lanes move to the next pallet together.
    #[default]
    Pallet,
    /// Each PIP column advances independently.
    Column,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrimMode {
    /// Raw 16-bit (or 8-bit) containers.
    None,
    /// Neurons trimmed to the layer's precision window.
    #[default]
    Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PragConfig {
    /// First-stage shifter control bits `L`; 4 is the single-stage design.
    pub l_bits: u8,
    pub sync: SyncMode,
    /// SSR count under column sync; `None` is unbounded.
    pub ssr_count: Option<usize>,
    /// Dispatcher pallet buffer depth under column sync; `None` is unbounded.
    pub pallet_buffer: Option<usize>,
    pub trim: TrimMode,
}

impl Default for PragConfig {
    fn default() -> Self {
        Self {
            l_bits: 4,
            sync: SyncMode::Pallet,
            ssr_count: Some(1),
            pallet_buffer: Some(2),
            trim: TrimMode::Profile,
        }
    }
}

impl PragConfig {
    pub fn pallet(l_bits: u8) -> Self {
        Self {
            l_bits,
            ..Self::default()
        }
    }

    pub fn column(l_bits: u8, ssr_count: Option<usize>) -> Self {
        Self {
            l_bits,
            sync: SyncMode::Column,
            ssr_count,
            ..Self::default()
        }
    }

    pub fn with_trim(mut self, trim: TrimMode) -> Self {
        self.trim = trim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_l_bits(self.l_bits)?;
        if self.ssr_count == Some(0) {
            return Err(Error::InvalidConfig("SSR count must be at least 1".into()));
        }
        if self.pallet_buffer == Some(0) {
            return Err(Error::InvalidConfig("pallet buffer must be at least 1".into()));
        }
        Ok(())
    }
}

impl fmt::Display for PragConfig {
    /// `PRA-2b`, `PRA-2b-1R`, `PRA-4b-infR-fp16`, ...
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PRA-{}b", self.l_bits)?;
        if self.sync == SyncMode::Column {
            match self.ssr_count {
                Some(n) => write!(f, "-{n}R")?,
                None => write!(f, "-infR")?,
            }
            if self.pallet_buffer != Some(2) {
                match self.pallet_buffer {
                    Some(b) => write!(f, "-buf{b}")?,
                    None => write!(f, "-bufinf")?,
                }
            }
        }
        if self.trim == TrimMode::None {
            write!(f, "-fp16")?;
        }
        Ok(())
    }
}

/// Output and per-step column costs of one pass over the layer.
struct LayerPass {
    output: Tensor3,
    work: ColumnWork,
    trimmed: Tensor3,
}

fn run_pass(
    input: &Tensor3,
    filters: &FilterSet,
    spec: &LayerSpec,
    profile: Option<PrecisionWindow>,
    format: NeuronFormat,
    cfg: &PragConfig,
) -> Result<LayerPass> {
    check_shapes(input, filters, spec)?;
    cfg.validate()?;
    input.check_domain(format.domain())?;
    let window = match cfg.trim {
        TrimMode::None => format.full_window(),
        TrimMode::Profile => profile.ok_or(Error::MissingProfile)?,
    };
    window.check_container(format.width)?;
    let trimmed = trim_tensor(input, window, format.sign)?;

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
    let mut lanes = [OneffsetStream::default(); BRICK];
    for (base_wx, wy) in spec.pallet_origins()? {
        for (si, &step) in steps.iter().enumerate() {
            let mut costs = [1u32; PALLET_WINDOWS];
            for (w, cost) in costs.iter_mut().enumerate() {
                let wx = base_wx + w;
                if wx >= ox {
                    continue;
                }
                let brick = brick_unchecked(&trimmed, spec, wx, wy, step);
                for (lane, &v) in lanes.iter_mut().zip(&brick.values) {
                    *lane = encode(v, format.sign, format.width)?;
                }
                let sched = schedule(&lanes, cfg.l_bits)?;
                *cost = sched.cycles();
                let out = &mut acc[(wy * ox + wx) * n..(wy * ox + wx + 1) * n];
                for (f, o) in out.iter_mut().enumerate() {
                    *o += sched.apply(&synapses[si][f]);
                }
            }
            work.costs.push(costs);
            work.nm.push(pallet_fetch_cycles(spec, base_wx, wy, step));
        }
    }
    let output = Tensor3::from_fn(ox, oy, n, |x, y, f| activate(acc[(y * ox + x) * n + f], spec.act, spec.out_shift));
    Ok(LayerPass { output, work, trimmed })
}

fn finish(
    pass: LayerPass,
    spec: &LayerSpec,
    format: NeuronFormat,
    cycles: u64,
    stalls: u64,
    sb_reads: u64,
) -> Result<EngineResult> {
    let groups = spec.filter_groups() as u64;
    let report = CycleReport {
        compute_cycles: groups * cycles,
        nm_fetch_cycles: groups * pass.work.nm.iter().map(|&c| c as u64).sum::<u64>(),
        stall_cycles: groups * stalls,
        sb_reads: groups * sb_reads,
        total_terms: format.width.bits() as u64 * spec.multiplications()?,
        effectual_terms: essential_pair_terms(&pass.trimmed, spec, format.width, |v| v)?,
    };
    Ok(EngineResult {
        output: pass.output,
        report,
    })
}

/// Pallet-level synchronization: every phase takes `max(NM_C, P_C)`.
pub fn prag_layer_pallet(
    input: &Tensor3,
    filters: &FilterSet,
    spec: &LayerSpec,
    profile: Option<PrecisionWindow>,
    format: NeuronFormat,
    cfg: &PragConfig,
) -> Result<EngineResult> {
    if cfg.sync != SyncMode::Pallet {
        return Err(Error::InvalidConfig("prag_layer_pallet needs pallet sync".into()));
    }
    let pass = run_pass(input, filters, spec, profile, format, cfg)?;
    let (cycles, stalls) = pallet_sync_cycles(&pass.work);
    debug_assert_eq!(pass.work.costs.len() as u64 * spec.filter_groups() as u64, schedule_sb_reads(spec)?);
    let sb_reads = pass.work.costs.len() as u64;
    finish(pass, spec, format, cycles, stalls, sb_reads)
}

/// Per-column synchronization with SSRs and a single SB port.
pub fn prag_layer_column(
    input: &Tensor3,
    filters: &FilterSet,
    spec: &LayerSpec,
    profile: Option<PrecisionWindow>,
    format: NeuronFormat,
    cfg: &PragConfig,
) -> Result<EngineResult> {
    if cfg.sync != SyncMode::Column {
        return Err(Error::InvalidConfig("prag_layer_column needs column sync".into()));
    }
    let pass = run_pass(input, filters, spec, profile, format, cfg)?;
    let out = simulate_columns(&pass.work, cfg.ssr_count, cfg.pallet_buffer)?;
    finish(pass, spec, format, out.cycles, out.stall_cycles, out.sb_reads)
}

/// Runs whichever synchronization `cfg` selects.
pub fn prag_layer(
    input: &Tensor3,
    filters: &FilterSet,
    spec: &LayerSpec,
    profile: Option<PrecisionWindow>,
    format: NeuronFormat,
    cfg: &PragConfig,
) -> Result<EngineResult> {
    match cfg.sync {
        SyncMode::Pallet => prag_layer_pallet(input, filters, spec, profile, format, cfg),
        SyncMode::Column => prag_layer_column(input, filters, spec, profile, format, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SignMode;
    use crate::reference::{conv_oracle, dadn_cycles};
    use crate::stripes::stripes_layer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layer(seed: u64, spec: &LayerSpec, hi: i32) -> (Tensor3, FilterSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Tensor3::from_fn(spec.nx, spec.ny, spec.i, |_, _, _| {
            if rng.gen_bool(0.4) {
                0
            } else {
                rng.gen_range(0..=hi)
            }
        });
        let filters = (0..spec.n)
            .map(|_| Tensor3::from_fn(spec.fx, spec.fy, spec.i, |_, _, _| rng.gen_range(-128..=127)))
            .collect();
        (input, FilterSet::new(filters).unwrap())
    }

    #[test]
    fn labels() {
        assert_eq!(PragConfig::pallet(2).to_string(), "PRA-2b");
        assert_eq!(PragConfig::column(2, Some(1)).to_string(), "PRA-2b-1R");
        assert_eq!(PragConfig::column(4, None).with_trim(TrimMode::None).to_string(), "PRA-4b-infR-fp16");
    }

    #[test]
    fn every_l_matches_oracle() {
        let spec = LayerSpec::new(9, 7, 32, 6, 3, 3, 2, 1);
        let (input, filters) = random_layer(3, &spec, 65535);
        let window = PrecisionWindow::new(13, 3).unwrap();
        let trimmed = trim_tensor(&input, window, SignMode::Unsigned).unwrap();
        let expect = conv_oracle(&trimmed, &filters, &spec).unwrap();
        for l in 0..=4 {
            for cfg in [PragConfig::pallet(l), PragConfig::column(l, Some(1)), PragConfig::column(l, None)] {
                let r = prag_layer(&input, &filters, &spec, Some(window), NeuronFormat::UNSIGNED16, &cfg).unwrap();
                assert_eq!(r.output, expect, "{cfg}");
            }
        }
    }

    #[test]
    fn worst_case_equals_baseline() {
        let spec = LayerSpec::new(16, 2, 32, 300, 1, 1, 1, 0);
        let input = Tensor3::from_fn(16, 2, 32, |_, _, _| 0xFFFF);
        let filters = FilterSet::new(vec![Tensor3::from_fn(1, 1, 32, |_, _, c| c as i32 - 16); 300]).unwrap();
        let base = dadn_cycles(&spec).unwrap();
        for l in 0..=4 {
            let cfg = PragConfig::pallet(l).with_trim(TrimMode::None);
            let r = prag_layer(&input, &filters, &spec, None, NeuronFormat::UNSIGNED16, &cfg).unwrap();
            assert_eq!(r.report.compute_cycles, base);
        }
    }

    #[test]
    fn two_essential_bits_per_phase() {
        // 10.001 in binary, scaled to an integer, under a 5-bit window.
        let spec = LayerSpec::new(16, 1, 16, 1, 1, 1, 1, 0);
        let input = Tensor3::from_fn(16, 1, 16, |_, _, _| 0b10001);
        let filters = FilterSet::new(vec![Tensor3::from_fn(1, 1, 16, |_, _, _| 3)]).unwrap();
        let window = PrecisionWindow::new(4, 0).unwrap();
        let pra = prag_layer(&input, &filters, &spec, Some(window), NeuronFormat::UNSIGNED16, &PragConfig::pallet(4)).unwrap();
        let str_ = stripes_layer(&input, &filters, &spec, Some(window), NeuronFormat::UNSIGNED16).unwrap();
        assert_eq!(pra.report.compute_cycles, 2);
        assert_eq!(str_.report.compute_cycles, 5);
        assert_eq!(pra.output, str_.output);
    }

    #[test]
    fn sync_mode_mismatch_rejected() {
        let spec = LayerSpec::new(3, 3, 16, 1, 3, 3, 1, 0);
        let (input, filters) = random_layer(1, &spec, 9);
        let r = prag_layer_pallet(&input, &filters, &spec, None, NeuronFormat::UNSIGNED16, &PragConfig::column(2, None));
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
        let r = prag_layer(&input, &filters, &spec, None, NeuronFormat::UNSIGNED16, &PragConfig::pallet(2));
        assert_eq!(r, Err(Error::MissingProfile));
    }

    #[test]
    fn signed_neurons_sign_magnitude() {
        let spec = LayerSpec::new(6, 5, 16, 3, 3, 3, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let input = Tensor3::from_fn(6, 5, 16, |_, _, _| rng.gen_range(-32768..=32767));
        let filters = FilterSet::new(
            (0..3)
                .map(|_| Tensor3::from_fn(3, 3, 16, |_, _, _| rng.gen_range(-50..=50)))
                .collect(),
        )
        .unwrap();
        let window = PrecisionWindow::new(12, 1).unwrap();
        let trimmed = trim_tensor(&input, window, SignMode::Signed).unwrap();
        let expect = conv_oracle(&trimmed, &filters, &spec).unwrap();
        for cfg in [PragConfig::pallet(2), PragConfig::column(0, Some(2))] {
            let r = prag_layer(&input, &filters, &spec, Some(window), NeuronFormat::SIGNED16, &cfg).unwrap();
            assert_eq!(r.output, expect);
        }
        let s = stripes_layer(&input, &filters, &spec, Some(window), NeuronFormat::SIGNED16).unwrap();
        assert_eq!(s.output, expect);
        assert!(matches!(
            prag_layer(&input, &filters, &spec, Some(window), NeuronFormat::UNSIGNED16, &PragConfig::pallet(2)),
            Err(Error::ValueOutOfDomain { .. })
        ));
    }
}
