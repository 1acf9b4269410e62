//! Oneffset scheduling inside one PIP column.
//!
//! Every cycle the shared column control picks the smallest live oneffset `c`
//! as the second-stage shift. A lane whose head `h` satisfies `h - c < 2^L`
//! feeds its synapse through the first-stage shifter by `h - c`; the others
//! stall. With `L = 4` the first stage covers every offset and all live lanes
//! advance each cycle.

use crate::encoding::OneffsetStream;
use crate::error::{Error, Result};
use crate::geometry::BRICK;
use crate::numerics::Accum;

/// Largest first-stage control width; `L = 4` is the single-stage design.
pub const MAX_L_BITS: u8 = 4;

/// Decision of the column control for one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepDecision {
    /// Second-stage shift, the minimum live head.
    pub shift: u8,
    /// Lanes that consume their head this cycle.
    pub advance: u16,
}

impl StepDecision {
    pub fn advances(&self, lane: usize) -> bool {
        self.advance & (1 << lane) != 0
    }
}

pub fn check_l_bits(l_bits: u8) -> Result<()> {
    if l_bits > MAX_L_BITS {
        return Err(Error::InvalidConfig(format!(
            "first-stage shifter width L must be in 0..=4, got {l_bits}"
        )));
    }
    Ok(())
}

/// One scheduling decision over the current lane heads (`None` = lane done).
pub fn two_stage_step(heads: &[Option<u8>], l_bits: u8) -> Result<StepDecision> {
    check_l_bits(l_bits)?;
    debug_assert!(heads.len() <= BRICK);
    let shift = heads.iter().flatten().copied().min().ok_or(Error::AllDone)?;
    let reach = 1u8 << l_bits;
    let advance = heads
        .iter()
        .enumerate()
        .filter(|(_, h)| matches!(h, Some(h) if h - shift < reach))
        .fold(0u16, |m, (lane, _)| m | (1 << lane));
    Ok(StepDecision { shift, advance })
}

/// Per-lane state while a brick of oneffset streams is consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LaneState {
    remaining: u16,
    neg: bool,
}

impl LaneState {
    pub fn new(stream: OneffsetStream) -> Self {
        Self {
            remaining: stream.bits(),
            neg: stream.is_negative(),
        }
    }

    pub fn head(&self) -> Option<u8> {
        (self.remaining != 0).then(|| self.remaining.trailing_zeros() as u8)
    }

    pub fn is_done(&self) -> bool {
        self.remaining == 0
    }

    pub fn is_negative(&self) -> bool {
        self.neg
    }

    fn consume(&mut self) {
        self.remaining &= self.remaining.wrapping_sub(1);
    }
}

/// One term routed through the two shifter stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipTerm {
    pub lane: u8,
    /// First-stage (per-lane) shift.
    pub first: u8,
    pub neg: bool,
}

/// What a PIP column does for one brick: per cycle, the second-stage shift
/// and the terms that enter the adder tree.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PipSchedule {
    pub shifts: Vec<u8>,
    /// `terms[cycle_starts[k]..cycle_starts[k + 1]]` belong to cycle `k`.
    pub terms: Vec<PipTerm>,
    cycle_starts: Vec<usize>,
}

impl PipSchedule {
    /// Cycles spent on the brick; a brick of zero neurons still takes one
    /// cycle for the end-of-neuron markers.
    pub fn cycles(&self) -> u32 {
        (self.shifts.len() as u32).max(1)
    }

    pub fn cycle_terms(&self, cycle: usize) -> &[PipTerm] {
        let end = self.cycle_starts.get(cycle + 1).copied().unwrap_or(self.terms.len());
        &self.terms[self.cycle_starts[cycle]..end]
    }

    /// Shift-and-add datapath: each cycle the first-stage shifted synapses are
    /// reduced, shifted by the shared second stage and accumulated.
    pub fn apply(&self, synapses: &[i32]) -> Accum {
        let mut acc: Accum = 0;
        for (cycle, &shift) in self.shifts.iter().enumerate() {
            let tree: Accum = self
                .cycle_terms(cycle)
                .iter()
                .map(|t| {
                    let s = (synapses[t.lane as usize] as Accum) << t.first;
                    if t.neg {
                        -s
                    } else {
                        s
                    }
                })
                .sum();
            acc += tree << shift;
        }
        acc
    }
}

/// Runs the column control to completion over a set of lanes.
pub fn schedule(streams: &[OneffsetStream], l_bits: u8) -> Result<PipSchedule> {
    check_l_bits(l_bits)?;
    let mut lanes: Vec<LaneState> = streams.iter().map(|&s| LaneState::new(s)).collect();
    let mut sched = PipSchedule::default();
    let mut heads: Vec<Option<u8>> = Vec::with_capacity(lanes.len());
    loop {
        heads.clear();
        heads.extend(lanes.iter().map(LaneState::head));
        let decision = match two_stage_step(&heads, l_bits) {
            Ok(d) => d,
            Err(Error::AllDone) => break,
            Err(e) => return Err(e),
        };
        sched.cycle_starts.push(sched.terms.len());
        sched.shifts.push(decision.shift);
        for (lane, state) in lanes.iter_mut().enumerate() {
            if decision.advances(lane) {
                let head = state.head().expect("advancing lane has a head");
                sched.terms.push(PipTerm {
                    lane: lane as u8,
                    first: head - decision.shift,
                    neg: state.is_negative(),
                });
                state.consume();
            }
        }
    }
    Ok(sched)
}

/// Cycles only, without recording terms.
pub fn schedule_cycles(streams: &[OneffsetStream], l_bits: u8) -> u32 {
    if l_bits >= MAX_L_BITS {
        return streams.iter().map(|s| s.len()).max().unwrap_or(0).max(1);
    }
    let reach = 1u32 << l_bits;
    let mut lanes: [u16; BRICK] = [0; BRICK];
    for (l, s) in lanes.iter_mut().zip(streams) {
        *l = s.bits();
    }
    let mut cycles = 0;
    while let Some(shift) = lanes.iter().filter(|&&b| b != 0).map(|b| b.trailing_zeros()).min() {
        for b in lanes.iter_mut().filter(|b| **b != 0) {
            if b.trailing_zeros() - shift < reach {
                *b &= *b - 1;
            }
        }
        cycles += 1;
    }
    cycles.max(1)
}

/// Inner product of up to 16 neuron streams with their synapses on one PIP.
/// Returns the value and the cycles taken.
pub fn pip_inner(streams: &[OneffsetStream], synapses: &[i32], l_bits: u8) -> Result<(Accum, u32)> {
    if streams.len() != synapses.len() || streams.len() > BRICK {
        return Err(Error::ShapeMismatch(format!(
            "{} neuron lanes vs {} synapse lanes",
            streams.len(),
            synapses.len()
        )));
    }
    let sched = schedule(streams, l_bits)?;
    Ok((sched.apply(synapses), sched.cycles()))
}

/// Cycles for one pallet phase under pallet-level synchronization: the
/// slowest of the 16 window columns.
pub fn pallet_phase_cycles(pallet: &[[OneffsetStream; BRICK]], l_bits: u8) -> u32 {
    pallet.iter().map(|w| schedule_cycles(w, l_bits)).max().unwrap_or(1).max(1)
}
