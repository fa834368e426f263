use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use super::{EvalError, Result};
use crate::cube::{CubeError, SpectralCube};
use crate::fft::{fft2, multipole};

/// Binned flat-sky angular power spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct ClEstimate {
    /// Mean multipole of the modes in each reported bin.
    pub l_centers: Vec<f64>,
    /// mK²
    pub cl_values: Vec<f64>,
    pub mode_counts: Vec<usize>,
    /// `(lo, hi)` edges of each reported bin.
    pub bins: Vec<(f64, f64)>,
    pub pixel_size: f64,
    /// steradians
    pub map_area: f64,
}

/// `n_bins` logarithmic bins from the fundamental multipole of an
/// `n_pix`-wide map to its Nyquist multipole.
pub fn default_cl_edges(n_pix: usize, pixel_size: f64, n_bins: usize) -> Vec<f64> {
    let lo = 2.0 * std::f64::consts::PI / (n_pix as f64 * pixel_size) * (1.0 - 1e-9);
    let hi = std::f64::consts::PI / pixel_size * (1.0 + 1e-9);
    let n = n_bins.max(1);
    (0..=n).map(|i| lo * (hi / lo).powf(i as f64 / n as f64)).collect()
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(EvalError::InvalidParameter("multipole edges must be increasing".into()));
    }
    Ok(())
}

/// `Ĉ_l = |Δθ² DFT(map)|² / Ω` averaged over the modes with `l` in each bin
/// `[lo, hi)`, where `l = 2π|u|` and the zero mode is excluded. Bins without
/// modes are omitted.
pub fn angular_power_spectrum(map: ArrayView2<'_, f64>, pixel_size: f64, edges: &[f64]) -> Result<ClEstimate> {
    let (ny, nx) = map.dim();
    if ny != nx || ny == 0 {
        return Err(EvalError::InvalidParameter(format!("map must be square, got {ny}x{nx}")));
    }
    if !(pixel_size > 0.0) {
        return Err(EvalError::InvalidParameter("pixel size must be positive".into()));
    }
    check_edges(edges)?;
    let n = nx;
    let mut f: Array2<Complex64> = map.mapv(|v| Complex64::new(v, 0.0));
    fft2(&mut f);
    let area = (n as f64 * pixel_size).powi(2);
    let norm = pixel_size.powi(4) / area;
    let nb = edges.len() - 1;
    let mut sums = vec![0.0; nb];
    let mut lsum = vec![0.0; nb];
    let mut counts = vec![0usize; nb];
    for ((ky, kx), v) in f.indexed_iter() {
        if ky == 0 && kx == 0 {
            continue;
        }
        let l = multipole(ky, kx, n, n, pixel_size);
        let idx = edges.partition_point(|&e| e <= l);
        if idx == 0 || idx > nb {
            continue;
        }
        let b = idx - 1;
        sums[b] += v.norm_sqr() * norm;
        lsum[b] += l;
        counts[b] += 1;
    }
    let mut est = ClEstimate {
        l_centers: Vec::new(),
        cl_values: Vec::new(),
        mode_counts: Vec::new(),
        bins: Vec::new(),
        pixel_size,
        map_area: area,
    };
    for b in 0..nb {
        if counts[b] > 0 {
            est.l_centers.push(lsum[b] / counts[b] as f64);
            est.cl_values.push(sums[b] / counts[b] as f64);
            est.mode_counts.push(counts[b]);
            est.bins.push((edges[b], edges[b + 1]));
        }
    }
    Ok(est)
}

/// Spectrum of every channel map, averaged over channels.
pub fn channel_averaged_spectrum(cube: &SpectralCube, edges: &[f64]) -> Result<ClEstimate> {
    let grid = cube
        .sky_grid()
        .ok_or_else(|| EvalError::InvalidParameter("cube has no sky grid".into()))?;
    let per_channel: Vec<ClEstimate> = (0..cube.n_channels())
        .into_par_iter()
        .map(|c| {
            let map = cube.channel_map(c).expect("grid present");
            angular_power_spectrum(map.view(), grid.pixel_size, edges)
        })
        .collect::<Result<_>>()?;
    let mut avg = per_channel[0].clone();
    let n = per_channel.len() as f64;
    for (b, v) in avg.cl_values.iter_mut().enumerate() {
        // channel order fixes the summation order
        *v = per_channel.iter().map(|e| e.cl_values[b]).sum::<f64>() / n;
    }
    Ok(avg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumComparison {
    pub residual: ClEstimate,
    pub fiducial: ClEstimate,
    /// Mean over valid bins of `|log10 Cl_residual - log10 Cl_fiducial|`.
    pub delta_log_cl: f64,
    pub valid_bins: usize,
    /// Bins left out because a spectrum was not positive there.
    pub excluded_bins: usize,
}

pub fn spectrum_comparison(residual: &SpectralCube, fiducial: &SpectralCube, edges: &[f64]) -> Result<SpectrumComparison> {
    if residual.data().dim() != fiducial.data().dim() || residual.sky_grid() != fiducial.sky_grid() {
        return Err(CubeError::Shape("residual and fiducial cubes differ in shape or grid".into()).into());
    }
    let r = channel_averaged_spectrum(residual, edges)?;
    let f = channel_averaged_spectrum(fiducial, edges)?;
    let mut sum = 0.0;
    let mut valid = 0;
    let mut excluded = 0;
    for (&a, &b) in r.cl_values.iter().zip(&f.cl_values) {
        if a > 0.0 && b > 0.0 {
            sum += (a.log10() - b.log10()).abs();
            valid += 1;
        } else {
            excluded += 1;
        }
    }
    if valid == 0 {
        return Err(EvalError::NoValidBins);
    }
    Ok(SpectrumComparison {
        residual: r,
        fiducial: f,
        delta_log_cl: sum / valid as f64,
        valid_bins: valid,
        excluded_bins: excluded,
    })
}
