use ndarray::{s, Array1, Array2, ArrayView2};
use rayon::prelude::*;

use super::{ContaminationError, Result};
use crate::cube::{Mask, SpectralCube};
use crate::restore::legendre_basis;
use crate::restore::methods::fit_polynomial;

/// Threshold rule shared by channel and outlier flagging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlagOptions {
    pub sigma: f64,
    /// Repeat channel flagging on the surviving channels.
    pub iterative: bool,
    pub max_iterations: usize,
    /// Compute thresholds from unflagged entries only. When false every
    /// entry contributes on every pass.
    pub exclude_flagged: bool,
}

impl Default for FlagOptions {
    fn default() -> Self {
        FlagOptions { sigma: 3.0, iterative: true, max_iterations: 10, exclude_flagged: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlagReport {
    pub mask: Mask,
    /// Channels flagged over every row.
    pub flagged_channels: Vec<usize>,
    pub outlier_count: usize,
    pub iterations: usize,
    /// Channels flagged in each row block, for block-wise flagging.
    pub block_channels: Vec<Vec<usize>>,
}

fn mean_std<'a>(values: impl Iterator<Item = &'a f64>) -> Option<(f64, f64)> {
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for &v in values {
        n += 1;
        sum += v;
        sq += v * v;
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    Some((mean, var.sqrt()))
}

/// Returns the flagged channel indices and the number of passes run.
fn flag_channel_means(data: ArrayView2<'_, f64>, opts: &FlagOptions) -> (Vec<usize>, usize) {
    let rows = data.nrows() as f64;
    let means: Vec<f64> = data.columns().into_iter().map(|c| c.sum() / rows).collect();
    let mut flagged = vec![false; means.len()];
    let mut iterations = 0;
    let max_passes = if opts.iterative { opts.max_iterations.max(1) } else { 1 };
    while iterations < max_passes {
        iterations += 1;
        let pool = means.iter().zip(&flagged).filter(|(_, &f)| !opts.exclude_flagged || !f).map(|(m, _)| m);
        let Some((mu, sd)) = mean_std(pool) else { break };
        if sd == 0.0 {
            break;
        }
        let mut new = 0;
        for (m, f) in means.iter().zip(flagged.iter_mut()) {
            if !*f && (m - mu).abs() > opts.sigma * sd {
                *f = true;
                new += 1;
            }
        }
        if new == 0 {
            break;
        }
    }
    let list = flagged.iter().enumerate().filter(|(_, &f)| f).map(|(c, _)| c).collect();
    (list, iterations)
}

/// Flags whole channels whose mean over all rows lies outside
/// `mean ± sigma·std` of the channel means.
pub fn flag_channels(cube: &SpectralCube, opts: &FlagOptions) -> Result<FlagReport> {
    flag_channels_by_block(cube, cube.n_rows(), opts)
}

/// Channel flagging applied independently to consecutive blocks of
/// `block_rows` rows (the last block may be shorter); a channel flagged in
/// a block is masked over that block only.
pub fn flag_channels_by_block(cube: &SpectralCube, block_rows: usize, opts: &FlagOptions) -> Result<FlagReport> {
    if cube.n_channels() < 2 {
        return Err(ContaminationError::InvalidParameter("channel flagging needs at least two channels".into()));
    }
    if block_rows == 0 {
        return Err(ContaminationError::InvalidParameter("block_rows must be positive".into()));
    }
    let data = cube.data();
    let (rows, channels) = data.dim();
    let mut flags = Array2::from_elem((rows, channels), false);
    let mut block_channels = Vec::new();
    let mut iterations = 0;
    for r0 in (0..rows).step_by(block_rows) {
        let r1 = (r0 + block_rows).min(rows);
        let (list, it) = flag_channel_means(data.slice(s![r0..r1, ..]), opts);
        iterations = iterations.max(it);
        for &c in &list {
            flags.slice_mut(s![r0..r1, c]).fill(true);
        }
        block_channels.push(list);
    }
    let mask = Mask::new(flags);
    let flagged_channels = mask.fully_masked_channels();
    Ok(FlagReport { mask, flagged_channels, outlier_count: 0, iterations, block_channels })
}

/// Flags cells lying outside `mean ± sigma·std` of their row. Statistics
/// skip cells in `prior` (unless `exclude_flagged` is off); cells already
/// in `prior` are never reported. Single pass.
pub fn flag_outliers(cube: &SpectralCube, prior: &Mask, opts: &FlagOptions) -> Result<FlagReport> {
    prior.check_congruent(cube.data().dim())?;
    let data = cube.data();
    let pf = prior.flags();
    let mut flags = Array2::from_elem(data.dim(), false);
    let mut count = 0;
    for (r, row) in data.rows().into_iter().enumerate() {
        let prow = pf.row(r);
        let stats = if opts.exclude_flagged {
            mean_std(row.iter().zip(prow.iter()).filter(|(_, &f)| !f).map(|(v, _)| v))
        } else {
            mean_std(row.iter())
        };
        let Some((mu, sd)) = stats else { continue };
        if sd == 0.0 {
            continue;
        }
        for (c, &v) in row.iter().enumerate() {
            if !prow[c] && (v - mu).abs() > opts.sigma * sd {
                flags[[r, c]] = true;
                count += 1;
            }
        }
    }
    Ok(FlagReport {
        mask: Mask::new(flags),
        flagged_channels: Vec::new(),
        outlier_count: count,
        iterations: 1,
        block_channels: Vec::new(),
    })
}

/// Scale estimate `1.4826 · MAD`, consistent with σ for Gaussian data.
fn robust_sigma(values: &mut [f64]) -> f64 {
    let median = |v: &mut [f64]| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
    };
    let m = median(values);
    for v in values.iter_mut() {
        *v = (*v - m).abs();
    }
    1.4826 * median(values)
}

/// Residual of every row about a polynomial of `order` in normalised
/// channel index. The fit uses only cells outside `exclude` and is
/// repeated up to `rounds` times, each time dropping cells beyond `sigma`
/// robust standard deviations. Excluded cells are zero in the output.
///
/// Smooth spectra vanish from the output while interference stays, so the
/// output suits the flagging rules better than the raw cube once the
/// strongest interference is already in `exclude`.
pub fn detrend_spectra(
    cube: &SpectralCube,
    exclude: &Mask,
    order: usize,
    sigma: f64,
    rounds: usize,
) -> Result<SpectralCube> {
    exclude.check_congruent(cube.data().dim())?;
    let n = cube.n_channels();
    if order + 1 >= n {
        return Err(ContaminationError::InvalidParameter(format!("order {order} needs more than {n} channels")));
    }
    if !(sigma > 0.0) {
        return Err(ContaminationError::InvalidParameter("sigma must be positive".into()));
    }
    let basis = legendre_basis(n, order);
    let data = cube.data();
    let flags = exclude.flags();
    let rows: Vec<Array1<f64>> = (0..cube.n_rows())
        .into_par_iter()
        .map(|r| {
            let y = data.row(r);
            let usable: Vec<usize> = (0..n).filter(|&c| !flags[[r, c]]).collect();
            let mut keep = usable.clone();
            let mut fit = Array1::<f64>::zeros(n);
            for round in 0..=rounds {
                let Some(coef) = (keep.len() > order).then(|| fit_polynomial(&basis, y, &keep)).flatten() else {
                    break;
                };
                fit = basis.dot(&Array1::from_iter(coef.iter().copied()));
                if round == rounds {
                    break;
                }
                let mut kept: Vec<f64> = keep.iter().map(|&c| y[c] - fit[c]).collect();
                let scale = robust_sigma(&mut kept);
                if scale == 0.0 {
                    break;
                }
                let next: Vec<usize> = usable.iter().copied().filter(|&c| (y[c] - fit[c]).abs() <= sigma * scale).collect();
                if next == keep {
                    break;
                }
                keep = next;
            }
            let mut out = &y - &fit;
            for c in 0..n {
                if flags[[r, c]] {
                    out[c] = 0.0;
                }
            }
            out
        })
        .collect();
    let mut out = Array2::<f64>::zeros(data.dim());
    for (mut dst, src) in out.rows_mut().into_iter().zip(&rows) {
        dst.assign(src);
    }
    Ok(cube.with_data(out)?)
}

/// Element-wise OR of the two reports' masks.
pub fn combine_flags(channels: &FlagReport, outliers: &FlagReport) -> Result<Mask> {
    Ok(channels.mask.union(&outliers.mask)?)
}
