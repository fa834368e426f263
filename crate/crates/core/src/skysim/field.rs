use ndarray::{s, Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use super::{
    frequency_covariance, mean_brightness_temperature, redshift_of_frequency, CosmologyParams, ForegroundModel,
    HiFieldSpec, Result, SkyPatchSpec,
};
use crate::cube::SpectralCube;
use crate::fft::{ifft2, multipole};
use crate::rng::keyed_rng;

// Fixed sizes keep the floating-point evaluation order independent of the
// thread count.
const MODE_CHUNK: usize = 256;
const CHUNKS_PER_PASS: usize = 64;
const FOURIER_BLOCK_BYTES: usize = 256 << 20;

#[derive(Clone, Copy)]
struct Mode {
    ky: usize,
    kx: usize,
    self_conjugate: bool,
}

fn canonical_modes(n: usize) -> Vec<Mode> {
    let mut modes = Vec::with_capacity(n * n / 2 + 2);
    for ky in 0..n {
        for kx in 0..n {
            let idx = ky * n + kx;
            let mirror = ((n - ky) % n) * n + (n - kx) % n;
            if idx == 0 || idx > mirror {
                continue;
            }
            modes.push(Mode { ky, kx, self_conjugate: idx == mirror });
        }
    }
    modes
}

/// Draws a real Gaussian field on an `n_pix²` grid for every channel whose
/// Fourier modes have channel covariance `L Lᵀ` scaled by `angular(l)`.
///
/// Normalisation: `E|F_k|² = N² angular(l) / Δθ²` for the unnormalised DFT
/// `F`, so that `|Δθ² F|² / Ω` is an unbiased estimate of the angular
/// spectrum of each channel.
pub(crate) fn correlated_field(
    spec: &SkyPatchSpec,
    factor: ArrayView2<'_, f64>,
    angular: impl Fn(f64) -> f64 + Sync,
    seed: u64,
) -> Array2<f64> {
    let n = spec.n_pix;
    let n_ch = factor.nrows();
    let dtheta = spec.pixel_size();
    let norm = n as f64 / dtheta;
    let modes = canonical_modes(n);
    let mut out = Array2::<f64>::zeros((n * n, n_ch));
    let block = (FOURIER_BLOCK_BYTES / (n * n * 16)).clamp(1, n_ch);
    for c0 in (0..n_ch).step_by(block) {
        let c1 = (c0 + block).min(n_ch);
        let lb = factor.slice(s![c0..c1, ..]);
        let mut grids: Vec<Array2<Complex64>> = (c0..c1).map(|_| Array2::zeros((n, n))).collect();
        for pass in modes.chunks(MODE_CHUNK * CHUNKS_PER_PASS) {
            let results: Vec<(Vec<Mode>, Array2<f64>, Array2<f64>)> = pass
                .par_chunks(MODE_CHUNK)
                .map(|chunk| {
                    let m = chunk.len();
                    let mut zr = Array2::<f64>::zeros((n_ch, m));
                    let mut zi = Array2::<f64>::zeros((n_ch, m));
                    for (j, mode) in chunk.iter().enumerate() {
                        let mut rng = keyed_rng(seed, 0, (mode.ky * n + mode.kx) as u64);
                        let l = multipole(mode.ky, mode.kx, n, n, dtheta);
                        let mut amp = angular(l).sqrt() * norm;
                        if mode.self_conjugate {
                            for c in 0..n_ch {
                                zr[[c, j]] = StandardNormal.sample(&mut rng);
                            }
                        } else {
                            amp *= std::f64::consts::FRAC_1_SQRT_2;
                            for c in 0..n_ch {
                                zr[[c, j]] = StandardNormal.sample(&mut rng);
                                zi[[c, j]] = StandardNormal.sample(&mut rng);
                            }
                        }
                        zr.column_mut(j).mapv_inplace(|v| v * amp);
                        zi.column_mut(j).mapv_inplace(|v| v * amp);
                    }
                    (chunk.to_vec(), lb.dot(&zr), lb.dot(&zi))
                })
                .collect();
            for (chunk, yr, yi) in results {
                for (j, mode) in chunk.iter().enumerate() {
                    let (my, mx) = ((n - mode.ky) % n, (n - mode.kx) % n);
                    for (b, grid) in grids.iter_mut().enumerate() {
                        let v = Complex64::new(yr[[b, j]], yi[[b, j]]);
                        grid[[mode.ky, mode.kx]] = v;
                        grid[[my, mx]] = v.conj();
                    }
                }
            }
        }
        let maps: Vec<Array2<f64>> = grids
            .into_par_iter()
            .map(|mut g| {
                ifft2(&mut g);
                g.mapv(|v| v.re)
            })
            .collect();
        for (b, map) in maps.iter().enumerate() {
            let mut col = out.column_mut(c0 + b);
            for ((iy, ix), &v) in map.indexed_iter() {
                col[iy * n + ix] = v;
            }
        }
    }
    out
}

/// Gaussian random cube whose ensemble cross-frequency angular spectrum is
/// that of `model`. The zero mode is set to zero.
pub fn generate_correlated_field(spec: &SkyPatchSpec, model: &ForegroundModel, seed: u64) -> Result<SpectralCube> {
    spec.validate()?;
    model.validate()?;
    let rows = spec.n_pix * spec.n_pix;
    let data = if model.amplitude == 0.0 {
        Array2::zeros((rows, spec.axis.n_channels()))
    } else {
        let cov = frequency_covariance(model, &spec.axis)?;
        correlated_field(spec, cov.factor.view(), |l| model.angular_factor(l), seed)
    };
    Ok(SpectralCube::new(data, spec.axis, Some(spec.sky_grid()))?)
}

/// HI brightness-temperature cube: a Gaussian overdensity field mapped
/// through the mean brightness temperature of each channel's redshift.
pub fn generate_hi_cube(
    spec: &SkyPatchSpec,
    cosmo: &CosmologyParams,
    hi_spec: &HiFieldSpec,
    seed: u64,
) -> Result<SpectralCube> {
    spec.validate()?;
    cosmo.validate()?;
    hi_spec.validate()?;
    let model = hi_spec.as_model();
    let mut delta = generate_correlated_field(spec, &model, seed)?.into_data();
    if hi_spec.lognormal {
        for mut col in delta.columns_mut() {
            let var = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
            col.mapv_inplace(|g| (g - 0.5 * var).exp() - 1.0);
        }
    }
    for (c, mut col) in delta.columns_mut().into_iter().enumerate() {
        let z = redshift_of_frequency(spec.axis.frequency(c))?;
        let t0 = mean_brightness_temperature(cosmo, z);
        col.mapv_inplace(|d| t0 * (1.0 + d));
    }
    Ok(SpectralCube::new(delta, spec.axis, Some(spec.sky_grid()))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::FrequencyAxis;
    use crate::fft::fft2;

    fn spec(n_pix: usize, span_deg: f64, n_ch: usize) -> SkyPatchSpec {
        SkyPatchSpec {
            ra_range: (20.0, 20.0 + span_deg),
            dec_range: (25.0, 25.0 + span_deg),
            n_pix,
            axis: FrequencyAxis::from_band(800e6, 820e6, n_ch).unwrap(),
        }
    }

    #[test]
    fn canonical_modes_cover_half_plane() {
        let n = 8;
        let modes = canonical_modes(n);
        // (n² - 4) / 2 pairs plus three nonzero self-conjugate modes
        assert_eq!(modes.len(), (n * n - 4) / 2 + 3);
        assert_eq!(modes.iter().filter(|m| m.self_conjugate).count(), 3);
    }

    #[test]
    fn zero_amplitude_gives_zero_cube() {
        let mut m = ForegroundModel::synchrotron();
        m.amplitude = 0.0;
        let c = generate_correlated_field(&spec(16, 4.0, 4), &m, 1).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_field_and_thread_independence() {
        let sp = spec(32, 6.0, 6);
        let m = ForegroundModel::point_sources();
        let a = generate_correlated_field(&sp, &m, 42).unwrap();
        let b = generate_correlated_field(&sp, &m, 42).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| generate_correlated_field(&sp, &m, 42).unwrap());
        assert_eq!(a, c);
        let d = generate_correlated_field(&sp, &m, 43).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn channel_maps_have_zero_mean() {
        let c = generate_correlated_field(&spec(32, 6.0, 3), &ForegroundModel::synchrotron(), 5).unwrap();
        let scale = c.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
        for col in c.data().columns() {
            assert!(col.sum().abs() / (col.len() as f64) < 1e-12 * scale);
        }
    }

    // independent estimator: |Δθ² DFT|² / Ω averaged over annuli
    fn binned_cross(a: &Array2<f64>, b: &Array2<f64>, dtheta: f64, edges: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = a.nrows();
        let to_c = |m: &Array2<f64>| m.mapv(|v| Complex64::new(v, 0.0));
        let (mut fa, mut fb) = (to_c(a), to_c(b));
        fft2(&mut fa);
        fft2(&mut fb);
        let omega = (n as f64 * dtheta).powi(2);
        let mut sums = vec![0.0; edges.len() - 1];
        let mut ls = vec![Vec::new(); edges.len() - 1];
        for ky in 0..n {
            for kx in 0..n {
                let l = multipole(ky, kx, n, n, dtheta);
                if let Some(bin) = (0..edges.len() - 1).find(|&i| l >= edges[i] && l < edges[i + 1]) {
                    sums[bin] += (fa[[ky, kx]] * fb[[ky, kx]].conj()).re * dtheta.powi(4) / omega;
                    ls[bin].push(l);
                }
            }
        }
        let means = sums.iter().zip(&ls).map(|(s, l)| s / l.len() as f64).collect();
        (means, ls)
    }

    #[test]
    fn monte_carlo_spectrum_matches_model() {
        let sp = spec(64, 8.0, 8);
        let model = ForegroundModel::synchrotron();
        let dtheta = sp.pixel_size();
        let nyquist = std::f64::consts::PI / dtheta;
        let edges: Vec<f64> = (0..=5).map(|i| 200.0 + i as f64 * (nyquist / 2.0 - 200.0) / 5.0).collect();
        let nu = sp.axis.frequencies();
        let pairs = [(0usize, 0usize), (7, 7), (0, 7), (3, 4)];
        let realizations = 50;
        let mut samples = vec![vec![vec![0.0; realizations]; edges.len() - 1]; pairs.len()];
        let mut mode_ls = Vec::new();
        for r in 0..realizations {
            let cube = generate_correlated_field(&sp, &model, 1000 + r as u64).unwrap();
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let a = cube.channel_map(i).unwrap();
                let b = cube.channel_map(j).unwrap();
                let (means, ls) = binned_cross(&a, &b, dtheta, &edges);
                for (bin, v) in means.into_iter().enumerate() {
                    samples[p][bin][r] = v;
                }
                mode_ls = ls;
            }
        }
        for (p, &(i, j)) in pairs.iter().enumerate() {
            for bin in 0..edges.len() - 1 {
                let ls = &mode_ls[bin];
                let expected = ls.iter().map(|&l| foreground(&model, l, nu[i], nu[j])).sum::<f64>() / ls.len() as f64;
                let xs = &samples[p][bin];
                let mean = xs.iter().sum::<f64>() / realizations as f64;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (realizations - 1) as f64;
                let se = (var / realizations as f64).sqrt();
                assert!(
                    (mean - expected).abs() <= 3.0 * se,
                    "pair ({i},{j}) bin {bin}: {mean} vs {expected} (se {se})"
                );
            }
        }
    }

    fn foreground(m: &ForegroundModel, l: f64, a: f64, b: f64) -> f64 {
        super::super::foreground_cl(m, l, a, b).unwrap()
    }

    #[test]
    fn hi_cube_mean_field() {
        let sp = spec(16, 4.0, 4);
        let cosmo = CosmologyParams::default();
        let zero = HiFieldSpec { cl_amplitude: 0.0, ..HiFieldSpec::default() };
        let c = generate_hi_cube(&sp, &cosmo, &zero, 3).unwrap();
        for (ch, col) in c.data().columns().into_iter().enumerate() {
            let z = redshift_of_frequency(sp.axis.frequency(ch)).unwrap();
            let t0 = mean_brightness_temperature(&cosmo, z);
            assert!(col.iter().all(|&v| v == t0));
        }
    }

    #[test]
    fn hi_cube_channel_means_and_determinism() {
        let sp = spec(256, 30.0, 3);
        let cosmo = CosmologyParams::default();
        let hs = HiFieldSpec::default();
        let c = generate_hi_cube(&sp, &cosmo, &hs, 9).unwrap();
        assert_eq!(c, generate_hi_cube(&sp, &cosmo, &hs, 9).unwrap());
        for (ch, col) in c.data().columns().into_iter().enumerate() {
            let z = redshift_of_frequency(sp.axis.frequency(ch)).unwrap();
            let t0 = mean_brightness_temperature(&cosmo, z);
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(sd > 0.0);
            assert!((mean - t0).abs() <= 5.0 * sd / n.sqrt());
        }
    }

    #[test]
    fn lognormal_keeps_overdensity_above_minus_one() {
        let sp = spec(32, 30.0, 2);
        let cosmo = CosmologyParams::default();
        let hs = HiFieldSpec { cl_amplitude: 2e-5, lognormal: true, ..HiFieldSpec::default() };
        let c = generate_hi_cube(&sp, &cosmo, &hs, 2).unwrap();
        assert!(c.data().iter().all(|&v| v > 0.0));
    }
}
