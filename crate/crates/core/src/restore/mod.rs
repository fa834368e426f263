//! Restoration of masked cells.
//!
//! Every [`Restorer`] must return a finite matrix that equals its input at
//! every unmasked cell. External restorations (for instance from a trained
//! inpainting network) enter through [`ingest_external_restoration`], which
//! enforces the same contract.

mod external;
pub(crate) mod methods;

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::cube::{CubeError, Mask, SpectralCube};

pub use external::{ingest_external_restoration, validate_restoration, write_rejection_report, Deviation};
pub use methods::{
    legendre_basis, low_rank_restore, mean_fill_restore, spectral_poly_restore, LowRankReport, PolyReport,
};

#[derive(Debug, Error)]
pub enum RestoreError {
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite input at row {row}, channel {channel}")]
    NonFinite { row: usize, channel: usize },
    #[error("restoration rejected: {} unmasked cells altered, max deviation {max_deviation:e}", .deviations.len())]
    Rejected { max_deviation: f64, deviations: Vec<Deviation> },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = RestoreError> = std::result::Result<T, E>;

pub trait Restorer: Send + Sync {
    fn name(&self) -> &str;
    fn restore(&self, data: ArrayView2<'_, f64>, mask: &Mask) -> Result<Array2<f64>>;
}

/// Row-mean filling of every masked cell.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanFill;

impl Restorer for MeanFill {
    fn name(&self) -> &str {
        "mean_fill"
    }

    fn restore(&self, data: ArrayView2<'_, f64>, mask: &Mask) -> Result<Array2<f64>> {
        mean_fill_restore(data, mask)
    }
}

/// Per-row least-squares polynomial along frequency.
#[derive(Debug, Clone, Copy)]
pub struct SpectralPoly {
    pub order: usize,
}

impl Default for SpectralPoly {
    fn default() -> Self {
        SpectralPoly { order: 2 }
    }
}

impl Restorer for SpectralPoly {
    fn name(&self) -> &str {
        "spectral_poly"
    }

    fn restore(&self, data: ArrayView2<'_, f64>, mask: &Mask) -> Result<Array2<f64>> {
        let (out, report) = spectral_poly_restore(data, mask, self.order)?;
        if !report.fallback_rows.is_empty() {
            log::info!("spectral_poly: {} rows fell back to mean fill", report.fallback_rows.len());
        }
        Ok(out)
    }
}

/// Iterative truncated-SVD completion.
#[derive(Debug, Clone, Copy)]
pub struct LowRank {
    pub rank: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LowRank {
    fn default() -> Self {
        LowRank { rank: 4, tol: 1e-6, max_iter: 100 }
    }
}

impl Restorer for LowRank {
    fn name(&self) -> &str {
        "low_rank"
    }

    fn restore(&self, data: ArrayView2<'_, f64>, mask: &Mask) -> Result<Array2<f64>> {
        let (out, report) = low_rank_restore(data, mask, self.rank, self.tol, self.max_iter)?;
        log::debug!("low_rank: {} iterations, converged = {}", report.iterations, report.converged);
        Ok(out)
    }
}

/// Restorer by name, with default parameters.
pub fn restorer_by_name(name: &str) -> Option<Box<dyn Restorer>> {
    match name {
        "mean_fill" => Some(Box::new(MeanFill)),
        "spectral_poly" => Some(Box::new(SpectralPoly::default())),
        "low_rank" => Some(Box::new(LowRank::default())),
        _ => None,
    }
}

/// Inputs needed to score one restoration against its truth.
#[derive(Debug, Clone, Copy)]
pub struct RestorationRecord<'a> {
    pub restorer: &'a str,
    pub masked_fraction: f64,
    pub predicted: ArrayView2<'a, f64>,
    pub truth: ArrayView2<'a, f64>,
    pub mask: &'a Mask,
}

impl<'a> RestorationRecord<'a> {
    pub fn new(
        restorer: &'a str,
        predicted: ArrayView2<'a, f64>,
        truth: ArrayView2<'a, f64>,
        mask: &'a Mask,
    ) -> Result<Self> {
        if predicted.dim() != truth.dim() {
            return Err(CubeError::Shape(format!("predicted {:?} vs truth {:?}", predicted.dim(), truth.dim())).into());
        }
        mask.check_congruent(truth.dim())?;
        Ok(RestorationRecord { restorer, masked_fraction: mask.masked_fraction(), predicted, truth, mask })
    }
}

/// The four comparison datasets: untouched input, restored at outlier
/// cells, restored at channel-flagged cells, and restored everywhere.
#[derive(Debug, Clone)]
pub struct DatasetVariants {
    pub a: SpectralCube,
    pub b: SpectralCube,
    pub c: SpectralCube,
    pub d: SpectralCube,
}

impl DatasetVariants {
    pub fn iter(&self) -> impl Iterator<Item = (char, &SpectralCube)> {
        [('a', &self.a), ('b', &self.b), ('c', &self.c), ('d', &self.d)].into_iter()
    }
}

/// Runs the restorer once on the union of both masks and copies its output
/// into the cells selected by each variant; unselected cells keep their
/// input values.
pub fn restore_dataset_variants(
    cube: &SpectralCube,
    channel_mask: &Mask,
    outlier_mask: &Mask,
    restorer: &dyn Restorer,
) -> Result<DatasetVariants> {
    let dim = cube.data().dim();
    channel_mask.check_congruent(dim)?;
    outlier_mask.check_congruent(dim)?;
    let union = channel_mask.union(outlier_mask)?;
    let restored = if union.is_empty() { cube.data().clone() } else { restorer.restore(cube.data().view(), &union)? };
    let blend = |sel: &Mask| -> Result<SpectralCube> {
        let mut data = cube.data().clone();
        for ((idx, v), &f) in data.indexed_iter_mut().zip(sel.flags().iter()) {
            if f {
                *v = restored[idx];
            }
        }
        Ok(cube.with_data(data)?)
    };
    Ok(DatasetVariants { a: cube.clone(), b: blend(outlier_mask)?, c: blend(channel_mask)?, d: blend(&union)? })
}

pub(crate) fn check_input(data: ArrayView2<'_, f64>, mask: &Mask) -> Result<()> {
    mask.check_congruent(data.dim())?;
    for ((row, channel), v) in data.indexed_iter() {
        if !v.is_finite() {
            return Err(RestoreError::NonFinite { row, channel });
        }
    }
    Ok(())
}
