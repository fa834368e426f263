//! Synthetic interference, 3σ flagging, and fixed-size patch sampling.

mod flag;
mod patch;
mod rfi;

use thiserror::Error;

use crate::cube::CubeError;

pub use flag::{combine_flags, detrend_spectra, flag_channels, flag_channels_by_block, flag_outliers, FlagOptions, FlagReport};
pub use patch::{
    cut_patch, extract_patches, patch_draw_count, patch_windows, read_patch_set, write_patch_set, PatchWindow,
};
pub use rfi::{apply_rfi_template, inject_rfi, load_rfi_template, RfiModel};

#[derive(Debug, Error)]
pub enum ContaminationError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cube of {rows}x{channels} is smaller than the patch size {size}")]
    TooSmall { rows: usize, channels: usize, size: usize },
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error("patch index: {0}")]
    Index(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = ContaminationError> = std::result::Result<T, E>;
