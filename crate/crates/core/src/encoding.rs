//! Essential-bit ("oneffset") representation of neurons.
//!
//! A neuron becomes the ascending list of positions of the set bits of its
//! magnitude. Zero is the empty list, which still occupies one serial slot so
//! the end-of-neuron marker can be delivered.

use crate::error::{Error, Result};
use crate::numerics::{SignMode, Width};

/// Ascending oneffsets of one neuron, stored as the magnitude bit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct OneffsetStream {
    bits: u16,
    neg: bool,
}

/// One serial slot on a neuron lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// A 4-bit power plus the end-of-neuron flag.
    Term { pow: u8, eon: bool },
    /// End marker of a zero neuron; contributes a null term.
    Null,
}

impl OneffsetStream {
    pub fn from_parts(bits: u16, neg: bool) -> Self {
        Self { bits, neg: neg && bits != 0 }
    }

    /// Magnitude bit set.
    pub fn bits(&self) -> u16 {
        self.bits
    }

    pub fn is_negative(&self) -> bool {
        self.neg
    }

    pub fn is_zero(&self) -> bool {
        self.bits == 0
    }

    /// Number of oneffsets (essential bits).
    pub fn len(&self) -> u32 {
        self.bits.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    /// Serial slots consumed on a lane, counting the marker of a zero neuron.
    pub fn serial_slots(&self) -> u32 {
        self.len().max(1)
    }

    pub fn offsets(&self) -> Vec<u8> {
        self.iter().collect()
    }

    pub fn iter(&self) -> Offsets {
        Offsets(self.bits)
    }

    pub fn head(&self) -> Option<u8> {
        (self.bits != 0).then(|| self.bits.trailing_zeros() as u8)
    }

    /// Value represented by the stream.
    pub fn reconstruct(&self) -> i32 {
        let mag = self.bits as i32;
        if self.neg {
            -mag
        } else {
            mag
        }
    }

    /// Wire form, lowest oneffset first, with `eon` set on the last slot.
    pub fn serialize(&self) -> Vec<Slot> {
        let offs = self.offsets();
        if offs.is_empty() {
            return vec![Slot::Null];
        }
        let last = offs.len() - 1;
        offs.into_iter()
            .enumerate()
            .map(|(k, pow)| Slot::Term { pow, eon: k == last })
            .collect()
    }

    /// Wire form, highest oneffset first.
    pub fn serialize_msb_first(&self) -> Vec<Slot> {
        let mut offs = self.offsets();
        if offs.is_empty() {
            return vec![Slot::Null];
        }
        offs.reverse();
        let last = offs.len() - 1;
        offs.into_iter()
            .enumerate()
            .map(|(k, pow)| Slot::Term { pow, eon: k == last })
            .collect()
    }
}

/// Iterator over the oneffsets of a stream, ascending.
#[derive(Debug, Clone)]
pub struct Offsets(u16);

impl Iterator for Offsets {
    type Item = u8;

    fn next(&mut self) -> Option<u8> {
        if self.0 == 0 {
            return None;
        }
        let b = self.0.trailing_zeros() as u8;
        self.0 &= self.0 - 1;
        Some(b)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.0.count_ones() as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Offsets {}

fn container_mask(width: Width) -> u32 {
    (1u32 << width.bits()) - 1
}

/// Encodes `v` into its oneffsets.
pub fn encode(v: i32, sign: SignMode, width: Width) -> Result<OneffsetStream> {
    let (mag, neg) = match sign {
        SignMode::Unsigned if v < 0 => return Err(Error::NegativeUnsupported(v)),
        SignMode::Unsigned => (v as u32, false),
        SignMode::Signed => (v.unsigned_abs(), v < 0),
    };
    if mag & !container_mask(width) != 0 {
        return Err(Error::ValueOutOfDomain {
            value: v,
            domain: match width {
                Width::W8 => "unsigned 8-bit",
                Width::W16 => "16-bit",
            },
        });
    }
    Ok(OneffsetStream::from_parts(mag as u16, neg))
}

/// Number of set bits of the magnitude within `width` bits.
pub fn essential_count(v: i32, width: Width) -> u32 {
    (v.unsigned_abs() & container_mask(width)).count_ones()
}

/// Essential-bit content of a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitStats {
    /// Mean fraction of container bits set, over all values.
    pub mean_essential_frac_all: f64,
    /// Same, over nonzero values only; `None` when every value is zero.
    pub mean_essential_frac_nonzero: Option<f64>,
    pub zero_fraction: f64,
}

pub fn stats(trace: &[i32], width: Width) -> Result<BitStats> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let bits = width.bits() as f64;
    let (mut ones, mut zeros) = (0u64, 0u64);
    for &v in trace {
        let c = essential_count(v, width);
        ones += c as u64;
        if c == 0 {
            zeros += 1;
        }
    }
    let count = trace.len() as u64;
    let nonzero = count - zeros;
    Ok(BitStats {
        mean_essential_frac_all: ones as f64 / (count as f64 * bits),
        mean_essential_frac_nonzero: (nonzero > 0).then(|| ones as f64 / (nonzero as f64 * bits)),
        zero_fraction: zeros as f64 / count as f64,
    })
}
