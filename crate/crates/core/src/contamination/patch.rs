use std::fs;
use std::path::Path;

use ndarray::s;
use rand::Rng;
use rayon::prelude::*;

use super::{ContaminationError, Result};
use crate::cube::{read_cube, read_mask, write_cube, write_mask, FrequencyAxis, Mask, PatchSample, SpectralCube};
use crate::rng::keyed_rng;

const STREAM_PATCH: u64 = 4;

/// Number of windows drawn from an `n1 × n2` cube: `floor(3 n1 n2 / S²)`.
pub fn patch_draw_count(n1: usize, n2: usize, size: usize) -> usize {
    (3 * n1 * n2) / (size * size)
}

/// Position and masked fraction of one accepted window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchWindow {
    pub origin: (usize, usize),
    pub masked_fraction: f64,
}

/// Draws `patch_draw_count` uniformly placed `size × size` windows of a
/// mask and keeps those whose masked fraction is at most `max_fraction`.
/// Rejected windows are not replaced.
pub fn patch_windows(mask: &Mask, size: usize, max_fraction: f64, seed: u64) -> Result<Vec<PatchWindow>> {
    let (n1, n2) = mask.dim();
    if size == 0 || n1 < size || n2 < size {
        return Err(ContaminationError::TooSmall { rows: n1, channels: n2, size });
    }
    let flags = mask.flags();
    let windows = (0..patch_draw_count(n1, n2, size))
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = keyed_rng(seed, STREAM_PATCH, i as u64);
            let r0 = rng.random_range(0..=n1 - size);
            let c0 = rng.random_range(0..=n2 - size);
            let window = flags.slice(s![r0..r0 + size, c0..c0 + size]);
            let masked = window.iter().filter(|&&f| f).count() as f64 / (size * size) as f64;
            (masked <= max_fraction).then_some(PatchWindow { origin: (r0, c0), masked_fraction: masked })
        })
        .collect();
    Ok(windows)
}

/// Cuts the windows chosen by [`patch_windows`] out of `cube` and `mask`.
pub fn extract_patches(
    cube: &SpectralCube,
    mask: &Mask,
    size: usize,
    max_fraction: f64,
    seed: u64,
) -> Result<Vec<PatchSample>> {
    mask.check_congruent(cube.data().dim())?;
    let windows = patch_windows(mask, size, max_fraction, seed)?;
    Ok(windows.iter().map(|w| cut_patch(cube, mask, size, w)).collect())
}

pub fn cut_patch(cube: &SpectralCube, mask: &Mask, size: usize, window: &PatchWindow) -> PatchSample {
    let (r0, c0) = window.origin;
    PatchSample {
        data: cube.data().slice(s![r0..r0 + size, c0..c0 + size]).to_owned(),
        mask: mask.flags().slice(s![r0..r0 + size, c0..c0 + size]).to_owned(),
        masked_fraction: window.masked_fraction,
        origin: window.origin,
    }
}

fn patch_axis(source: &FrequencyAxis, origin_channel: usize, size: usize) -> Result<FrequencyAxis> {
    let w = source.channel_width();
    Ok(FrequencyAxis::new(source.start() + origin_channel as f64 * w, w, size)?)
}

/// Writes `patch_NNNNN.imc` / `.imm` pairs plus `index.csv`.
pub fn write_patch_set(dir: &Path, patches: &[PatchSample], source_axis: &FrequencyAxis) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = csv::Writer::from_path(dir.join("index.csv"))?;
    index.write_record(["id", "origin_row", "origin_channel", "masked_fraction"])?;
    for (id, p) in patches.iter().enumerate() {
        let axis = patch_axis(source_axis, p.origin.1, p.size())?;
        let cube = SpectralCube::new(p.data.clone(), axis, None)?;
        write_cube(&cube, dir.join(format!("patch_{id:05}.imc")))?;
        write_mask(&Mask::new(p.mask.clone()), &cube.meta(), dir.join(format!("patch_{id:05}.imm")))?;
        index.write_record([
            id.to_string(),
            p.origin.0.to_string(),
            p.origin.1.to_string(),
            format!("{}", p.masked_fraction),
        ])?;
    }
    index.flush()?;
    Ok(())
}

/// Reads a directory written by [`write_patch_set`].
pub fn read_patch_set(dir: &Path) -> Result<Vec<PatchSample>> {
    let mut reader = csv::Reader::from_path(dir.join("index.csv"))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).ok_or_else(|| ContaminationError::Index(format!("short record {record:?}")));
        let parse_usize = |i: usize| {
            field(i)?.parse::<usize>().map_err(|e| ContaminationError::Index(format!("{e} in {record:?}")))
        };
        let id = parse_usize(0)?;
        let origin = (parse_usize(1)?, parse_usize(2)?);
        let masked_fraction: f64 =
            field(3)?.parse().map_err(|e| ContaminationError::Index(format!("{e} in {record:?}")))?;
        let cube = read_cube(dir.join(format!("patch_{id:05}.imc")))?;
        let (mask, _) = read_mask(dir.join(format!("patch_{id:05}.imm")))?;
        out.push(PatchSample { data: cube.into_data(), mask: mask.into_flags(), masked_fraction, origin });
    }
    Ok(out)
}
