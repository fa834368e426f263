use std::path::Path;

use ndarray::{Array2, ArrayView2};

use super::{RestoreError, Result};
use crate::cube::{read_cube, CubeError, Mask, SpectralCube};

const RELATIVE_TOLERANCE: f64 = 1e-6;
const ABSOLUTE_FLOOR: f64 = 1e-12;

/// One unmasked cell that an external restoration altered.
#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub row: usize,
    pub channel: usize,
    pub expected: f64,
    pub found: f64,
    pub deviation: f64,
}

/// Checks that `restored` is finite and agrees with `original` at every
/// unmasked cell to `1e-6` relative.
pub fn validate_restoration(original: ArrayView2<'_, f64>, mask: &Mask, restored: ArrayView2<'_, f64>) -> Result<()> {
    if original.dim() != restored.dim() {
        return Err(CubeError::SizeMismatch(format!(
            "restored cube is {:?}, original is {:?}",
            restored.dim(),
            original.dim()
        ))
        .into());
    }
    mask.check_congruent(original.dim())?;
    let mut deviations = Vec::new();
    for ((idx, &found), &f) in restored.indexed_iter().zip(mask.flags().iter()) {
        if !found.is_finite() {
            return Err(RestoreError::NonFinite { row: idx.0, channel: idx.1 });
        }
        if f {
            continue;
        }
        let expected = original[idx];
        let deviation = (found - expected).abs();
        if deviation > RELATIVE_TOLERANCE * expected.abs() + ABSOLUTE_FLOOR {
            deviations.push(Deviation { row: idx.0, channel: idx.1, expected, found, deviation });
        }
    }
    if deviations.is_empty() {
        Ok(())
    } else {
        let max_deviation = deviations.iter().map(|d| d.deviation).fold(0.0, f64::max);
        Err(RestoreError::Rejected { max_deviation, deviations })
    }
}

/// Reads an externally restored cube and validates it against `original`.
pub fn ingest_external_restoration(original: &SpectralCube, mask: &Mask, restored_path: &Path) -> Result<Array2<f64>> {
    let restored = read_cube(restored_path)?;
    validate_restoration(original.data().view(), mask, restored.data().view())?;
    Ok(restored.into_data())
}

/// Writes `cell,expected,found,deviation` rows, with cells as `row:channel`.
pub fn write_rejection_report(path: &Path, deviations: &[Deviation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell", "expected", "found", "deviation"])?;
    for d in deviations {
        w.write_record([
            format!("{}:{}", d.row, d.channel),
            d.expected.to_string(),
            d.found.to_string(),
            d.deviation.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
