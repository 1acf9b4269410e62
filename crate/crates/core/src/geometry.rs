//! Layer geometry, dense tensors and the brick/pallet addressing used by every
//! engine.
//!
//! A brick is 16 values contiguous along depth. A pallet is 16 bricks taken at
//! the same depth offset and filter position from 16 windows adjacent along x.
//! Padding is never materialized: reads that land outside the stored tensor
//! return zero.

use serde::Deserialize;

use crate::error::{Error, Result};

/// Values per brick (and neuron lanes per window lane).
pub const BRICK: usize = 16;
/// Windows processed concurrently by the serial engines.
pub const PALLET_WINDOWS: usize = 16;
/// Tiles per chip.
pub const TILES: usize = 16;
/// Filters per tile.
pub const FILTERS_PER_TILE: usize = 16;
/// Filters processed concurrently by the whole chip.
pub const FILTER_GROUP: usize = TILES * FILTERS_PER_TILE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
}

/// Geometry of one convolutional layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub nx: usize,
    pub ny: usize,
    /// Input depth; always a multiple of [`BRICK`] once validated.
    pub i: usize,
    /// Filter count.
    pub n: usize,
    pub fx: usize,
    pub fy: usize,
    pub stride: usize,
    pub pad: usize,
    pub act: Activation,
    /// Arithmetic right shift applied to the accumulated sum before saturation.
    pub out_shift: u32,
}

impl LayerSpec {
    /// Builds a spec with identity activation and no output shift.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        nx: usize,
        ny: usize,
        i: usize,
        n: usize,
        fx: usize,
        fy: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Self {
            nx,
            ny,
            i,
            n,
            fx,
            fy,
            stride,
            pad,
            act: Activation::Identity,
            out_shift: 0,
        }
    }

    pub fn with_act(mut self, act: Activation) -> Self {
        self.act = act;
        self
    }

    pub fn with_out_shift(mut self, shift: u32) -> Self {
        self.out_shift = shift;
        self
    }

    /// Rounds the depth up to the next multiple of [`BRICK`].
    pub fn depth_extended(mut self) -> Self {
        self.i = self.i.div_ceil(BRICK) * BRICK;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.i == 0 || self.n == 0 {
            return Err(Error::InvalidSpec(format!(
                "input dims and filter count must be positive (nx={}, ny={}, i={}, n={})",
                self.nx, self.ny, self.i, self.n
            )));
        }
        if self.fx == 0 || self.fy == 0 {
            return Err(Error::InvalidSpec("filter dims must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidSpec("stride must be at least 1".into()));
        }
        if !self.i.is_multiple_of(BRICK) {
            return Err(Error::InvalidSpec(format!(
                "depth {} is not a multiple of {BRICK}",
                self.i
            )));
        }
        self.output_dims().map(|_| ())
    }

    /// Output dimensions `(ox, oy, oi)`.
    pub fn output_dims(&self) -> Result<(usize, usize, usize)> {
        let ox = out_extent(self.nx, self.fx, self.stride, self.pad)?;
        let oy = out_extent(self.ny, self.fy, self.stride, self.pad)?;
        Ok((ox, oy, self.n))
    }

    /// Number of brick steps needed to cover one window.
    pub fn bricks_per_window(&self) -> usize {
        self.fx * self.fy * (self.i / BRICK)
    }

    /// Number of 256-filter groups, rounding partial groups up.
    pub fn filter_groups(&self) -> usize {
        self.n.div_ceil(FILTER_GROUP)
    }

    /// Neuron/synapse multiplications performed by the layer.
    pub fn multiplications(&self) -> Result<u64> {
        let (ox, oy, _) = self.output_dims()?;
        Ok((self.n * ox * oy * self.fx * self.fy * self.i) as u64)
    }

    /// Pallet start positions `(base_wx, wy)`, x fastest. Pallets never cross
    /// an output row.
    pub fn pallet_origins(&self) -> Result<Vec<(usize, usize)>> {
        let (ox, oy, _) = self.output_dims()?;
        let mut origins = Vec::with_capacity(ox.div_ceil(PALLET_WINDOWS) * oy);
        for wy in 0..oy {
            for base_wx in (0..ox).step_by(PALLET_WINDOWS) {
                origins.push((base_wx, wy));
            }
        }
        Ok(origins)
    }

    /// Brick steps `(bx, by, i0)` of a window in processing order.
    pub fn brick_steps(&self) -> Vec<BrickStep> {
        let mut steps = Vec::with_capacity(self.bricks_per_window());
        for by in 0..self.fy {
            for bx in 0..self.fx {
                for i0 in (0..self.i).step_by(BRICK) {
                    steps.push(BrickStep { bx, by, i0 });
                }
            }
        }
        steps
    }
}

/// Output dimension exposed separately so callers can check one axis.
pub fn out_extent(extent: usize, filter: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = extent + 2 * pad;
    if stride == 0 || filter == 0 || padded < filter {
        return Err(Error::InvalidSpec(format!(
            "filter {filter} does not fit padded extent {padded}"
        )));
    }
    let span = padded - filter;
    if !span.is_multiple_of(stride) {
        return Err(Error::NonIntegralDims {
            extent: padded,
            filter,
            stride,
        });
    }
    Ok(span / stride + 1)
}

/// Offset of a brick inside a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BrickStep {
    pub bx: usize,
    pub by: usize,
    pub i0: usize,
}

/// Dense 3D array stored `(y, x, i)` row-major with `i` fastest.
///
/// Values are kept as `i32` so that one type holds signed 16-bit synapses,
/// unsigned 16-bit neuron containers and 8-bit codes; [`ValueDomain`] checks
/// which container a tensor fits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor3 {
    x: usize,
    y: usize,
    i: usize,
    values: Vec<i32>,
}

impl Tensor3 {
    pub fn zeros(x: usize, y: usize, i: usize) -> Self {
        Self {
            x,
            y,
            i,
            values: vec![0; x * y * i],
        }
    }

    pub fn from_vec(x: usize, y: usize, i: usize, values: Vec<i32>) -> Result<Self> {
        if values.len() != x * y * i {
            return Err(Error::ShapeMismatch(format!(
                "{} values for dims {x}x{y}x{i}",
                values.len()
            )));
        }
        Ok(Self { x, y, i, values })
    }

    pub fn from_fn(x: usize, y: usize, i: usize, mut f: impl FnMut(usize, usize, usize) -> i32) -> Self {
        let mut values = Vec::with_capacity(x * y * i);
        for yy in 0..y {
            for xx in 0..x {
                for c in 0..i {
                    values.push(f(xx, yy, c));
                }
            }
        }
        Self { x, y, i, values }
    }

    /// `(x, y, i)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.x, self.y, self.i)
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<i32> {
        self.values
    }

    #[inline]
    fn offset(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.x + x) * self.i + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> i32 {
        self.values[self.offset(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: i32) {
        let o = self.offset(x, y, c);
        self.values[o] = v;
    }

    /// Read with virtual zero padding for coordinates outside the tensor.
    #[inline]
    pub fn get_or_zero(&self, x: isize, y: isize, c: usize) -> i32 {
        if x < 0 || y < 0 || x as usize >= self.x || y as usize >= self.y || c >= self.i {
            0
        } else {
            self.get(x as usize, y as usize, c)
        }
    }

    pub fn map(&self, mut f: impl FnMut(i32) -> i32) -> Self {
        Self {
            x: self.x,
            y: self.y,
            i: self.i,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn try_map<E>(&self, mut f: impl FnMut(i32) -> std::result::Result<i32, E>) -> std::result::Result<Self, E> {
        let values = self.values.iter().map(|&v| f(v)).collect::<std::result::Result<_, _>>()?;
        Ok(Self {
            x: self.x,
            y: self.y,
            i: self.i,
            values,
        })
    }

    /// Zero-extends the depth to `depth` (no-op when already that deep).
    pub fn zero_extend_depth(&self, depth: usize) -> Result<Self> {
        if depth < self.i {
            return Err(Error::ShapeMismatch(format!(
                "cannot shrink depth {} to {depth}",
                self.i
            )));
        }
        if depth == self.i {
            return Ok(self.clone());
        }
        Ok(Self::from_fn(self.x, self.y, depth, |x, y, c| {
            if c < self.i {
                self.get(x, y, c)
            } else {
                0
            }
        }))
    }

    pub fn check_domain(&self, domain: ValueDomain) -> Result<()> {
        match self.values.iter().find(|&&v| !domain.contains(v)) {
            Some(&value) => Err(Error::ValueOutOfDomain {
                value,
                domain: domain.name(),
            }),
            None => Ok(()),
        }
    }
}

/// Container a value is stored in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueDomain {
    Signed16,
    Unsigned16,
    Unsigned8,
}

impl ValueDomain {
    pub fn range(self) -> (i32, i32) {
        match self {
            ValueDomain::Signed16 => (i16::MIN as i32, i16::MAX as i32),
            ValueDomain::Unsigned16 => (0, u16::MAX as i32),
            ValueDomain::Unsigned8 => (0, u8::MAX as i32),
        }
    }

    pub fn contains(self, v: i32) -> bool {
        let (lo, hi) = self.range();
        (lo..=hi).contains(&v)
    }

    pub fn name(self) -> &'static str {
        match self {
            ValueDomain::Signed16 => "signed 16-bit",
            ValueDomain::Unsigned16 => "unsigned 16-bit",
            ValueDomain::Unsigned8 => "unsigned 8-bit",
        }
    }
}

/// The `n` filters of a layer, each `fx × fy × i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterSet {
    filters: Vec<Tensor3>,
}

impl FilterSet {
    pub fn new(filters: Vec<Tensor3>) -> Result<Self> {
        let Some(first) = filters.first() else {
            return Err(Error::ShapeMismatch("filter set is empty".into()));
        };
        let dims = first.dims();
        if let Some(bad) = filters.iter().find(|f| f.dims() != dims) {
            return Err(Error::ShapeMismatch(format!(
                "filters disagree on dims: {:?} vs {:?}",
                dims,
                bad.dims()
            )));
        }
        Ok(Self { filters })
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// `(fx, fy, i)` shared by all filters.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.filters[0].dims()
    }

    pub fn filter(&self, f: usize) -> &Tensor3 {
        &self.filters[f]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor3> {
        self.filters.iter()
    }

    pub fn zero_extend_depth(&self, depth: usize) -> Result<Self> {
        let filters = self
            .filters
            .iter()
            .map(|f| f.zero_extend_depth(depth))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { filters })
    }

    /// The 16 synapses of filter `f` at brick step `step`.
    pub fn synapse_brick(&self, f: usize, step: BrickStep) -> [i32; BRICK] {
        let filt = &self.filters[f];
        std::array::from_fn(|k| filt.get(step.bx, step.by, step.i0 + k))
    }
}

/// Checks that an input tensor and filter set agree with a layer spec.
pub fn check_shapes(input: &Tensor3, filters: &FilterSet, spec: &LayerSpec) -> Result<()> {
    spec.validate()?;
    if input.dims() != (spec.nx, spec.ny, spec.i) {
        return Err(Error::ShapeMismatch(format!(
            "input dims {:?} != spec ({}, {}, {})",
            input.dims(),
            spec.nx,
            spec.ny,
            spec.i
        )));
    }
    if filters.len() != spec.n {
        return Err(Error::ShapeMismatch(format!(
            "{} filters for n = {}",
            filters.len(),
            spec.n
        )));
    }
    if filters.dims() != (spec.fx, spec.fy, spec.i) {
        return Err(Error::ShapeMismatch(format!(
            "filter dims {:?} != spec ({}, {}, {})",
            filters.dims(),
            spec.fx,
            spec.fy,
            spec.i
        )));
    }
    Ok(())
}

/// 16 neurons contiguous along depth. `x`/`y` are unpadded storage
/// coordinates and may be negative (or past the edge) inside padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Brick {
    pub x: isize,
    pub y: isize,
    pub i0: usize,
    pub values: [i32; BRICK],
}

/// Neuron brick for window `(wx, wy)` at brick step `(bx, by, i0)`.
pub fn window_brick(
    input: &Tensor3,
    spec: &LayerSpec,
    wx: usize,
    wy: usize,
    bx: usize,
    by: usize,
    i0: usize,
) -> Result<Brick> {
    let (ox, oy, _) = spec.output_dims()?;
    if wx >= ox || wy >= oy {
        return Err(Error::OutOfRange(format!(
            "window ({wx}, {wy}) outside output {ox}x{oy}"
        )));
    }
    if bx >= spec.fx || by >= spec.fy {
        return Err(Error::OutOfRange(format!(
            "brick offset ({bx}, {by}) outside filter {}x{}",
            spec.fx, spec.fy
        )));
    }
    if !i0.is_multiple_of(BRICK) || i0 + BRICK > spec.i {
        return Err(Error::OutOfRange(format!("depth offset {i0} invalid for depth {}", spec.i)));
    }
    Ok(brick_unchecked(input, spec, wx, wy, BrickStep { bx, by, i0 }))
}

#[inline]
pub(crate) fn brick_unchecked(input: &Tensor3, spec: &LayerSpec, wx: usize, wy: usize, step: BrickStep) -> Brick {
    let x = (wx * spec.stride + step.bx) as isize - spec.pad as isize;
    let y = (wy * spec.stride + step.by) as isize - spec.pad as isize;
    Brick {
        x,
        y,
        i0: step.i0,
        values: std::array::from_fn(|k| input.get_or_zero(x, y, step.i0 + k)),
    }
}

/// 16 bricks from windows `base_wx .. base_wx + 16` of row `wy`; windows
/// past the right edge are absent and occupy idle lanes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pallet {
    pub base_wx: usize,
    pub wy: usize,
    pub bricks: [Option<Brick>; PALLET_WINDOWS],
}

impl Pallet {
    pub fn present(&self) -> usize {
        self.bricks.iter().filter(|b| b.is_some()).count()
    }

    /// Neuron values per lane, absent windows reading as zero.
    pub fn lane_values(&self) -> [[i32; BRICK]; PALLET_WINDOWS] {
        std::array::from_fn(|w| self.bricks[w].map_or([0; BRICK], |b| b.values))
    }
}

pub fn build_pallet(
    input: &Tensor3,
    spec: &LayerSpec,
    base_wx: usize,
    wy: usize,
    bx: usize,
    by: usize,
    i0: usize,
) -> Result<Pallet> {
    let (ox, _, _) = spec.output_dims()?;
    if base_wx >= ox {
        return Err(Error::OutOfRange(format!("pallet base {base_wx} outside output width {ox}")));
    }
    // Validates the remaining indices once.
    window_brick(input, spec, base_wx, wy, bx, by, i0)?;
    let step = BrickStep { bx, by, i0 };
    let bricks = std::array::from_fn(|w| {
        let wx = base_wx + w;
        (wx < ox).then(|| brick_unchecked(input, spec, wx, wy, step))
    });
    Ok(Pallet { base_wx, wy, bricks })
}
