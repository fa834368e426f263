//! Spectral cubes, masks and patch samples.
//!
//! A [`SpectralCube`] is a `(lines of sight × channels)` matrix of brightness
//! temperatures in mK. Lines of sight are either integration cycles of a drift
//! scan or pixels of a flat-sky grid stored row-major (`row = iy * nx + ix`).

mod io;
mod ops;

pub use io::{read_cube, read_mask, write_cube, write_mask, FORMAT_VERSION};
pub use ops::{downsample_channels, fill_empty_channels};

use ndarray::{Array2, ArrayView2, Axis};

/// Errors raised by cube construction, I/O and preprocessing.
#[derive(Debug, thiserror::Error)]
pub enum CubeError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("non-finite value at row {row}, channel {channel}")]
    NonFinite { row: usize, channel: usize },
    #[error("invalid frequency axis: {0}")]
    InvalidAxis(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = CubeError> = std::result::Result<T, E>;

/// Regularly sampled frequency axis. Channel `i` is centred on
/// `start + (i + 0.5) * width`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyAxis {
    start: f64,
    width: f64,
    n_channels: usize,
}

impl FrequencyAxis {
    pub fn new(start: f64, width: f64, n_channels: usize) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(CubeError::InvalidAxis(format!("channel width must be positive, got {width}")));
        }
        if !start.is_finite() {
            return Err(CubeError::InvalidAxis(format!("start frequency must be finite, got {start}")));
        }
        if n_channels == 0 {
            return Err(CubeError::InvalidAxis("at least one channel is required".into()));
        }
        Ok(Self { start, width, n_channels })
    }

    /// Axis covering `[low, high]` with `n_channels` equal channels.
    pub fn from_band(low: f64, high: f64, n_channels: usize) -> Result<Self> {
        if n_channels == 0 {
            return Err(CubeError::InvalidAxis("at least one channel is required".into()));
        }
        Self::new(low, (high - low) / n_channels as f64, n_channels)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn channel_width(&self) -> f64 {
        self.width
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn end(&self) -> f64 {
        self.start + self.width * self.n_channels as f64
    }

    /// Centre frequency of channel `i` in Hz.
    pub fn frequency(&self, i: usize) -> f64 {
        self.start + (i as f64 + 0.5) * self.width
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_channels).map(|i| self.frequency(i)).collect()
    }
}

/// Geometry of a square flat-sky grid whose pixels are the cube rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkyGrid {
    pub nx: usize,
    pub ny: usize,
    /// Pixel side in radians.
    pub pixel_size: f64,
}

impl SkyGrid {
    pub fn n_pixels(&self) -> usize {
        self.nx * self.ny
    }

    /// Solid angle of the whole grid in steradians.
    pub fn area(&self) -> f64 {
        self.n_pixels() as f64 * self.pixel_size * self.pixel_size
    }
}

/// Brightness-temperature cube in mK.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    data: Array2<f64>,
    axis: FrequencyAxis,
    sky_grid: Option<SkyGrid>,
}

impl SpectralCube {
    /// Builds a cube, checking that the column count matches the axis, that
    /// the sky grid (if any) covers the rows, and that every value is finite.
    pub fn new(data: Array2<f64>, axis: FrequencyAxis, sky_grid: Option<SkyGrid>) -> Result<Self> {
        if data.ncols() != axis.n_channels() {
            return Err(CubeError::Shape(format!(
                "data has {} columns but the axis has {} channels",
                data.ncols(),
                axis.n_channels()
            )));
        }
        if let Some(grid) = sky_grid {
            if grid.n_pixels() != data.nrows() {
                return Err(CubeError::Shape(format!(
                    "sky grid {}x{} does not match {} rows",
                    grid.nx,
                    grid.ny,
                    data.nrows()
                )));
            }
            if !(grid.pixel_size > 0.0) {
                return Err(CubeError::Shape("sky grid pixel size must be positive".into()));
            }
        }
        check_finite(data.view())?;
        Ok(Self { data, axis, sky_grid })
    }

    /// Same metadata, new data of identical shape.
    pub fn with_data(&self, data: Array2<f64>) -> Result<Self> {
        if data.dim() != self.data.dim() {
            return Err(CubeError::Shape(format!("expected {:?}, got {:?}", self.data.dim(), data.dim())));
        }
        Self::new(data, self.axis, self.sky_grid)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn axis(&self) -> &FrequencyAxis {
        &self.axis
    }

    pub fn sky_grid(&self) -> Option<SkyGrid> {
        self.sky_grid
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn meta(&self) -> CubeMeta {
        CubeMeta { axis: self.axis, sky_grid: self.sky_grid }
    }

    /// Channel `c` reshaped to the `(ny, nx)` sky grid.
    pub fn channel_map(&self, c: usize) -> Option<Array2<f64>> {
        let grid = self.sky_grid?;
        let column = self.data.index_axis(Axis(1), c);
        Some(Array2::from_shape_fn((grid.ny, grid.nx), |(iy, ix)| column[iy * grid.nx + ix]))
    }
}

/// Metadata shared by a cube and the masks that accompany it on disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubeMeta {
    pub axis: FrequencyAxis,
    pub sky_grid: Option<SkyGrid>,
}

pub(crate) fn check_finite(data: ArrayView2<'_, f64>) -> Result<()> {
    for ((row, channel), v) in data.indexed_iter() {
        if !v.is_finite() {
            return Err(CubeError::NonFinite { row, channel });
        }
    }
    Ok(())
}

/// Boolean flags congruent with a cube; `true` marks a contaminated cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    flags: Array2<bool>,
}

impl Mask {
    pub fn new(flags: Array2<bool>) -> Self {
        Self { flags }
    }

    pub fn empty(rows: usize, channels: usize) -> Self {
        Self { flags: Array2::from_elem((rows, channels), false) }
    }

    pub fn full(rows: usize, channels: usize) -> Self {
        Self { flags: Array2::from_elem((rows, channels), true) }
    }

    pub fn flags(&self) -> &Array2<bool> {
        &self.flags
    }

    pub fn flags_mut(&mut self) -> &mut Array2<bool> {
        &mut self.flags
    }

    pub fn into_flags(self) -> Array2<bool> {
        self.flags
    }

    pub fn dim(&self) -> (usize, usize) {
        self.flags.dim()
    }

    pub fn get(&self, row: usize, channel: usize) -> bool {
        self.flags[[row, channel]]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.flags.iter().any(|&f| f)
    }

    pub fn masked_fraction(&self) -> f64 {
        if self.flags.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.flags.len() as f64
    }

    pub fn check_congruent(&self, dim: (usize, usize)) -> Result<()> {
        if self.flags.dim() != dim {
            return Err(CubeError::Shape(format!("mask is {:?} but data is {:?}", self.flags.dim(), dim)));
        }
        Ok(())
    }

    /// Element-wise OR.
    pub fn union(&self, other: &Mask) -> Result<Mask> {
        other.check_congruent(self.dim())?;
        let mut flags = self.flags.clone();
        flags.zip_mut_with(&other.flags, |a, &b| *a |= b);
        Ok(Mask { flags })
    }

    /// Element-wise AND NOT: cells flagged here but not in `other`.
    pub fn difference(&self, other: &Mask) -> Result<Mask> {
        other.check_congruent(self.dim())?;
        let mut flags = self.flags.clone();
        flags.zip_mut_with(&other.flags, |a, &b| *a &= !b);
        Ok(Mask { flags })
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask> {
        other.check_congruent(self.dim())?;
        let mut flags = self.flags.clone();
        flags.zip_mut_with(&other.flags, |a, &b| *a &= b);
        Ok(Mask { flags })
    }

    /// Channels whose every cell is flagged.
    pub fn fully_masked_channels(&self) -> Vec<usize> {
        self.flags
            .axis_iter(Axis(1))
            .enumerate()
            .filter(|(_, col)| !col.is_empty() && col.iter().all(|&f| f))
            .map(|(c, _)| c)
            .collect()
    }
}

/// Fixed-size training-style window cut from a cube and its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub data: Array2<f64>,
    pub mask: Array2<bool>,
    pub masked_fraction: f64,
    /// `(row, channel)` of the window's first cell in the source cube.
    pub origin: (usize, usize),
}

impl PatchSample {
    pub fn size(&self) -> usize {
        self.data.nrows()
    }
}
