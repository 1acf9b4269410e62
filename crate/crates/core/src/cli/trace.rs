//! Binary neuron traces.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field                                                  |
//! |-------|--------------------------------------------------------|
//! | 4     | magic `PRGT`                                           |
//! | 2     | version (1)                                            |
//! | 1     | dtype: 0 = i16, 1 = u8, 2 = u16                        |
//! | 1     | reserved, 0                                            |
//! | 12    | dims x, y, i as u32                                    |
//! | ...   | values in (y, x, i) order, i fastest                   |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Tensor3, ValueDomain};
use crate::numerics::{NeuronFormat, SignMode, Width};

pub const MAGIC: &[u8; 4] = b"PRGT";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceDtype {
    I16 = 0,
    U8 = 1,
    U16 = 2,
}

impl TraceDtype {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(TraceDtype::I16),
            1 => Ok(TraceDtype::U8),
            2 => Ok(TraceDtype::U16),
            c => Err(Error::Io(format!("unknown dtype {c}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            TraceDtype::U8 => 1,
            TraceDtype::I16 | TraceDtype::U16 => 2,
        }
    }

    pub fn domain(self) -> ValueDomain {
        match self {
            TraceDtype::I16 => ValueDomain::Signed16,
            TraceDtype::U8 => ValueDomain::Unsigned8,
            TraceDtype::U16 => ValueDomain::Unsigned16,
        }
    }

    pub fn format(self) -> NeuronFormat {
        match self {
            TraceDtype::I16 => NeuronFormat::SIGNED16,
            TraceDtype::U8 => NeuronFormat::CODE8,
            TraceDtype::U16 => NeuronFormat::UNSIGNED16,
        }
    }

    pub fn for_format(format: NeuronFormat) -> Self {
        match (format.width, format.sign) {
            (Width::W8, _) => TraceDtype::U8,
            (Width::W16, SignMode::Signed) => TraceDtype::I16,
            (Width::W16, SignMode::Unsigned) => TraceDtype::U16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceFile {
    pub dtype: TraceDtype,
    pub tensor: Tensor3,
}

impl TraceFile {
    pub fn new(dtype: TraceDtype, tensor: Tensor3) -> Result<Self> {
        tensor.check_domain(dtype.domain())?;
        Ok(Self { dtype, tensor })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (x, y, i) = self.tensor.dims();
        let mut out = Vec::with_capacity(HEADER_LEN + x * y * i * self.dtype.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype as u8);
        out.push(0);
        for d in [x, y, i] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in self.tensor.values() {
            match self.dtype {
                TraceDtype::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
                TraceDtype::U8 => out.push(v as u8),
                TraceDtype::U16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Io(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Io("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Io(format!("unsupported version {version}")));
        }
        let dtype = TraceDtype::from_code(bytes[6])?;
        let dim = |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().unwrap()) as usize;
        let (x, y, i) = (dim(0), dim(1), dim(2));
        let count = x
            .checked_mul(y)
            .and_then(|c| c.checked_mul(i))
            .ok_or_else(|| Error::Io("dims overflow".into()))?;
        let payload = &bytes[HEADER_LEN..];
        if Some(payload.len()) != count.checked_mul(dtype.size()) {
            return Err(Error::Io(format!(
                "payload is {} bytes, dims {x}x{y}x{i} need {}",
                payload.len(),
                count.saturating_mul(dtype.size())
            )));
        }
        let values: Vec<i32> = match dtype {
            TraceDtype::I16 => payload
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as i32)
                .collect(),
            TraceDtype::U8 => payload.iter().map(|&b| b as i32).collect(),
            TraceDtype::U16 => payload
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as i32)
                .collect(),
        };
        let tensor = Tensor3::from_vec(x, y, i, values).map_err(|e| Error::Io(e.to_string()))?;
        Ok(Self { dtype, tensor })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Io(m) => Error::Io(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}
