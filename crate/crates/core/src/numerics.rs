//! Fixed-point containers, precision trimming, the output activation stage and
//! the 8-bit linear quantizer.

use crate::error::{Error, Result};
use crate::geometry::{Activation, Tensor3, ValueDomain};

/// Wide accumulator used by every datapath; never saturates mid-sum.
pub type Accum = i64;

/// Neuron container width in bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Width {
    W8,
    #[default]
    W16,
}

impl Width {
    pub fn bits(self) -> u8 {
        match self {
            Width::W8 => 8,
            Width::W16 => 16,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(Width::W8),
            16 => Ok(Width::W16),
            other => Err(Error::InvalidConfig(format!("width must be 8 or 16, got {other}"))),
        }
    }
}

/// How neuron containers are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SignMode {
    /// Nonnegative values using the full container (post-ReLU neurons, 8-bit codes).
    #[default]
    Unsigned,
    /// Two's complement 16-bit values. The essential-bit engine treats them as
    /// sign-magnitude; the precision-serial engine negates the top bit plane.
    Signed,
}

/// Container width and sign interpretation of a layer's input neurons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct NeuronFormat {
    pub width: Width,
    pub sign: SignMode,
}

impl NeuronFormat {
    pub const UNSIGNED16: NeuronFormat = NeuronFormat {
        width: Width::W16,
        sign: SignMode::Unsigned,
    };
    pub const SIGNED16: NeuronFormat = NeuronFormat {
        width: Width::W16,
        sign: SignMode::Signed,
    };
    pub const CODE8: NeuronFormat = NeuronFormat {
        width: Width::W8,
        sign: SignMode::Unsigned,
    };

    pub fn new(width: Width, sign: SignMode) -> Result<Self> {
        if width == Width::W8 && sign == SignMode::Signed {
            return Err(Error::InvalidConfig("8-bit codes are unsigned".into()));
        }
        Ok(Self { width, sign })
    }

    pub fn domain(self) -> ValueDomain {
        match (self.width, self.sign) {
            (Width::W8, _) => ValueDomain::Unsigned8,
            (Width::W16, SignMode::Unsigned) => ValueDomain::Unsigned16,
            (Width::W16, SignMode::Signed) => ValueDomain::Signed16,
        }
    }

    /// The untrimmed window covering the whole container.
    pub fn full_window(self) -> PrecisionWindow {
        PrecisionWindow {
            msb: self.width.bits() - 1,
            lsb: 0,
        }
    }
}

/// Bit window `[lsb, msb]` kept by trimming; bit 0 is the LSB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrecisionWindow {
    pub msb: u8,
    pub lsb: u8,
}

impl PrecisionWindow {
    pub fn new(msb: u8, lsb: u8) -> Result<Self> {
        if msb < lsb || msb > 15 {
            return Err(Error::InvalidPrecision { msb, lsb, width: 16 });
        }
        Ok(Self { msb, lsb })
    }

    /// Window of `width` bits starting at `lsb`.
    pub fn from_width(width: u8, lsb: u8) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidPrecision { msb: lsb, lsb, width: 16 });
        }
        Self::new(lsb + width - 1, lsb)
    }

    pub fn width(self) -> u8 {
        self.msb - self.lsb + 1
    }

    /// Rejects windows that reach past the container.
    pub fn check_container(self, width: Width) -> Result<()> {
        if self.msb >= width.bits() {
            return Err(Error::InvalidPrecision {
                msb: self.msb,
                lsb: self.lsb,
                width: width.bits(),
            });
        }
        Ok(())
    }

    pub fn mask(self) -> u32 {
        let hi = (1u32 << (self.msb as u32 + 1)) - 1;
        let lo = (1u32 << self.lsb) - 1;
        hi & !lo
    }

    pub fn contains_bit(self, bit: u8) -> bool {
        (self.lsb..=self.msb).contains(&bit)
    }
}

/// Zeroes the magnitude bits outside `window`. Signed values keep their sign.
pub fn trim(v: i32, window: PrecisionWindow, sign: SignMode) -> Result<i32> {
    match sign {
        SignMode::Unsigned if v < 0 => Err(Error::NegativeTrim(v)),
        SignMode::Unsigned => Ok((v as u32 & window.mask()) as i32),
        SignMode::Signed => {
            let mag = (v.unsigned_abs() & window.mask()) as i32;
            Ok(if v < 0 { -mag } else { mag })
        }
    }
}

/// Applies [`trim`] to every value of a tensor.
pub fn trim_tensor(t: &Tensor3, window: PrecisionWindow, sign: SignMode) -> Result<Tensor3> {
    t.try_map(|v| trim(v, window, sign))
}

/// Per-layer limits of the 8-bit linear quantizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub vmin: f64,
    pub vmax: f64,
}

impl QuantParams {
    pub fn new(vmin: f64, vmax: f64) -> Result<Self> {
        let q = Self { vmin, vmax };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.vmin.is_finite() || !self.vmax.is_finite() || self.vmin >= self.vmax {
            return Err(Error::DegenerateRange {
                min: self.vmin,
                max: self.vmax,
            });
        }
        Ok(())
    }

    /// Size of one code step.
    pub fn step(&self) -> f64 {
        (self.vmax - self.vmin) / 255.0
    }
}

/// Maps `x` linearly onto codes 0..=255, clamping outside `[vmin, vmax]` and
/// rounding half to even.
pub fn quantize8(x: f64, q: QuantParams) -> Result<u8> {
    q.validate()?;
    let clamped = x.clamp(q.vmin, q.vmax);
    let scaled = (clamped - q.vmin) * 255.0 / (q.vmax - q.vmin);
    Ok(scaled.round_ties_even().clamp(0.0, 255.0) as u8)
}

pub fn dequantize8(code: u8, q: QuantParams) -> f64 {
    q.vmin + code as f64 * (q.vmax - q.vmin) / 255.0
}

/// Activation, arithmetic right shift (toward negative infinity) and
/// saturation to the signed 16-bit range.
pub fn activate(sum: Accum, act: Activation, out_shift: u32) -> i32 {
    let y = match act {
        Activation::Relu => sum.max(0),
        Activation::Identity => sum,
    };
    let y = y >> out_shift.min(63);
    y.clamp(i16::MIN as Accum, i16::MAX as Accum) as i32
}
