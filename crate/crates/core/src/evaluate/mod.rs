//! Metrics: RMS binned by masked fraction, the Cm/Cu restoration ratio,
//! SSIM, PSNR, and the flat-sky angular power spectrum.

mod report;
mod spectrum;

use ndarray::{ArrayBase, ArrayView2, Data, Dimension};
use thiserror::Error;

use crate::cube::{CubeError, Mask};

pub use report::{write_fraction_bins, write_spectrum, write_summary, SummaryRow};
pub use spectrum::{
    angular_power_spectrum, channel_averaged_spectrum, default_cl_edges, spectrum_comparison, ClEstimate,
    SpectrumComparison,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate variance in {0}")]
    DegenerateVariance(&'static str),
    #[error("unmasked correlation vanishes")]
    VanishingCorrelation,
    #[error("no valid spectrum bins")]
    NoValidBins,
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RmsConvention {
    /// `sqrt(mean(x²))`.
    #[default]
    AboutZero,
    /// Population standard deviation.
    AboutMean,
}

pub fn rms<S: Data<Elem = f64>, D: Dimension>(a: &ArrayBase<S, D>) -> Result<f64> {
    rms_with(a, RmsConvention::AboutZero)
}

pub fn rms_with<S: Data<Elem = f64>, D: Dimension>(a: &ArrayBase<S, D>, convention: RmsConvention) -> Result<f64> {
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = a.len() as f64;
    let centre = match convention {
        RmsConvention::AboutZero => 0.0,
        RmsConvention::AboutMean => a.sum() / n,
    };
    Ok((a.iter().map(|v| (v - centre).powi(2)).sum::<f64>() / n).sqrt())
}

/// Percentile with linear interpolation between order statistics
/// (`p` in `[0, 1]`); `sorted` must be ascending and nonempty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `(p25, median, p75)`, absent for empty bins.
    pub quartiles: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FractionBinStats {
    pub bins: Vec<FractionBin>,
}

/// Masked-fraction bin edges 0, 0.05, ..., 0.40.
pub fn default_fraction_edges() -> Vec<f64> {
    (0..=8).map(|i| i as f64 * 0.05).collect()
}

/// Groups `(masked_fraction, value)` samples into bins `[a, b)` (the last
/// bin also includes its upper edge) and reports quartiles of each.
/// Samples outside the edges are ignored.
pub fn bin_by_masked_fraction(samples: &[(f64, f64)], edges: &[f64]) -> Result<FractionBinStats> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(EvalError::InvalidParameter("bin edges must be increasing".into()));
    }
    let nb = edges.len() - 1;
    let mut groups = vec![Vec::new(); nb];
    for &(f, v) in samples {
        let bin = if f == edges[nb] { Some(nb - 1) } else { (0..nb).find(|&i| f >= edges[i] && f < edges[i + 1]) };
        if let Some(b) = bin {
            groups[b].push(v);
        }
    }
    let bins = groups
        .into_iter()
        .enumerate()
        .map(|(i, mut g)| {
            g.sort_by(f64::total_cmp);
            let quartiles =
                (!g.is_empty()).then(|| (percentile(&g, 0.25), percentile(&g, 0.5), percentile(&g, 0.75)));
            FractionBin { lo: edges[i], hi: edges[i + 1], count: g.len(), quartiles }
        })
        .collect();
    Ok(FractionBinStats { bins })
}

fn pearson(pairs: impl Iterator<Item = (f64, f64)>, region: &'static str) -> Result<f64> {
    let v: Vec<(f64, f64)> = pairs.collect();
    if v.len() < 2 {
        return Err(EvalError::DegenerateVariance(region));
    }
    let n = v.len() as f64;
    let (ma, mb) = v.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (ma, mb) = (ma / n, mb / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(x, y) in &v {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(EvalError::DegenerateVariance(region));
    }
    if v.iter().all(|(x, y)| x == y) {
        return Ok(1.0);
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Ratio of the Pearson correlation between prediction and truth over the
/// masked cells to that over the unmasked cells.
pub fn cm_cu(predicted: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>, mask: &Mask) -> Result<f64> {
    if predicted.dim() != truth.dim() {
        return Err(CubeError::Shape(format!("{:?} vs {:?}", predicted.dim(), truth.dim())).into());
    }
    mask.check_congruent(truth.dim())?;
    let cells = || predicted.iter().zip(truth.iter()).zip(mask.flags().iter());
    let cm = pearson(cells().filter(|(_, &f)| f).map(|((&p, &t), _)| (p, t)), "masked cells")?;
    let cu = pearson(cells().filter(|(_, &f)| !f).map(|((&p, &t), _)| (p, t)), "unmasked cells")?;
    if cu.abs() < 1e-12 {
        return Err(EvalError::VanishingCorrelation);
    }
    Ok(cm / cu)
}

fn ssim_stats(x: &[f64], y: &[f64], c1: f64, c2: f64) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cxy += (a - mx) * (b - my);
    }
    let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

fn check_pair(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(CubeError::Shape(format!("{:?} vs {:?}", x.dim(), y.dim())).into());
    }
    if x.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Single-window SSIM over the whole image, with `c1 = (k1 L)²` and
/// `c2 = (k2 L)²`.
pub fn ssim(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, dynamic_range: f64, k1: f64, k2: f64) -> Result<f64> {
    check_pair(x, y)?;
    if !(dynamic_range > 0.0) {
        return Err(EvalError::InvalidParameter("dynamic range must be positive".into()));
    }
    if x == y {
        return Ok(1.0);
    }
    let c1 = (k1 * dynamic_range).powi(2);
    let c2 = (k2 * dynamic_range).powi(2);
    let xs: Vec<f64> = x.iter().copied().collect();
    let ys: Vec<f64> = y.iter().copied().collect();
    Ok(ssim_stats(&xs, &ys, c1, c2))
}

/// Mean SSIM over all `window × window` sub-images (unit stride).
pub fn ssim_windowed(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    dynamic_range: f64,
    window: usize,
    k1: f64,
    k2: f64,
) -> Result<f64> {
    check_pair(x, y)?;
    let (r, c) = x.dim();
    if window == 0 || window > r || window > c {
        return Err(EvalError::InvalidParameter(format!("window {window} does not fit a {r}x{c} image")));
    }
    if !(dynamic_range > 0.0) {
        return Err(EvalError::InvalidParameter("dynamic range must be positive".into()));
    }
    let c1 = (k1 * dynamic_range).powi(2);
    let c2 = (k2 * dynamic_range).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    let mut xs = Vec::with_capacity(window * window);
    let mut ys = Vec::with_capacity(window * window);
    for i in 0..=r - window {
        for j in 0..=c - window {
            xs.clear();
            ys.clear();
            xs.extend(x.slice(ndarray::s![i..i + window, j..j + window]).iter());
            ys.extend(y.slice(ndarray::s![i..i + window, j..j + window]).iter());
            total += ssim_stats(&xs, &ys, c1, c2);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Db(f64),
    /// The images are identical.
    Exact,
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v}"),
            Psnr::Exact => write!(f, "exact"),
        }
    }
}

pub fn psnr(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, max_value: f64) -> Result<Psnr> {
    check_pair(x, y)?;
    if !(max_value > 0.0) {
        return Err(EvalError::InvalidParameter("max value must be positive".into()));
    }
    let mse = x.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
    Ok(psnr_from_mse(mse, max_value))
}

pub fn psnr_from_mse(mse: f64, max_value: f64) -> Psnr {
    if mse == 0.0 {
        Psnr::Exact
    } else {
        Psnr::Db(10.0 * (max_value * max_value / mse).log10())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rms_values() {
        assert_eq!(rms(&Array2::<f64>::zeros((3, 3))).unwrap(), 0.0);
        assert_eq!(rms(&array![3.0, -3.0]).unwrap(), 3.0);
        assert_eq!(rms(&array![-2.5, -2.5, -2.5]).unwrap(), 2.5);
        assert_eq!(rms_with(&array![1.0, 3.0], RmsConvention::AboutMean).unwrap(), 1.0);
        assert!(rms(&Array2::<f64>::zeros((0, 3))).is_err());
    }

    #[test]
    fn fraction_bins() {
        let edges = default_fraction_edges();
        assert_eq!(edges.len(), 9);
        let s = bin_by_masked_fraction(&[(0.01, 7.0)], &edges).unwrap();
        assert_eq!(s.bins[0].quartiles, Some((7.0, 7.0, 7.0)));
        assert_eq!(s.bins[1].count, 0);
        assert!(s.bins[1].quartiles.is_none());
        let five: Vec<(f64, f64)> = [3.0, 1.0, 5.0, 2.0, 4.0].iter().map(|&v| (0.12, v)).collect();
        let s = bin_by_masked_fraction(&five, &edges).unwrap();
        assert_eq!(s.bins[2].quartiles, Some((2.0, 3.0, 4.0)));
        let s = bin_by_masked_fraction(&[(0.05, 1.0), (0.4, 2.0), (0.45, 3.0)], &edges).unwrap();
        assert_eq!(s.bins[1].count, 1);
        assert_eq!(s.bins[0].count, 0);
        assert_eq!(s.bins[7].count, 1);
        assert!(bin_by_masked_fraction(&[], &[0.1, 0.1]).is_err());
    }

    fn checker_mask(r: usize, c: usize) -> Mask {
        Mask::new(Array2::from_shape_fn((r, c), |(i, j)| (i + j) % 3 == 0))
    }

    #[test]
    fn cm_cu_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = Array2::from_shape_fn((60, 60), |_| rng.random_range(-1.0..1.0));
        let mask = checker_mask(60, 60);
        assert_eq!(cm_cu(truth.view(), truth.view(), &mask).unwrap(), 1.0);
        let affine = truth.mapv(|v| 2.0 * v + 5.0);
        assert!((cm_cu(affine.view(), truth.view(), &mask).unwrap() - 1.0).abs() < 1e-12);
        let mut noisy = truth.clone();
        for (v, &f) in noisy.iter_mut().zip(mask.flags().iter()) {
            if f {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        assert!(mask.count() >= 1000);
        assert!(cm_cu(noisy.view(), truth.view(), &mask).unwrap().abs() < 0.2);
        let flat = Array2::from_elem((60, 60), 1.0);
        assert!(matches!(cm_cu(flat.view(), truth.view(), &mask), Err(EvalError::DegenerateVariance(_))));
    }

    #[test]
    fn ssim_cases() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(ssim(x.view(), x.view(), 3.0, 0.01, 0.03).unwrap(), 1.0);
        let (a, b, l) = (2.0, 5.0, 10.0);
        let c1 = (0.01f64 * l).powi(2);
        let xa = Array2::from_elem((4, 4), a);
        let xb = Array2::from_elem((4, 4), b);
        let expected = (2.0 * a * b + c1) / (a * a + b * b + c1);
        assert!((ssim(xa.view(), xb.view(), l, 0.01, 0.03).unwrap() - expected).abs() < 1e-15);
        assert!(ssim(x.view(), x.view(), 0.0, 0.01, 0.03).is_err());
        assert_eq!(ssim_windowed(x.view(), x.view(), 3.0, 2, 0.01, 0.03).unwrap(), 1.0);
    }

    #[test]
    fn psnr_cases() {
        let x = array![[0.0, 0.0]];
        let y = array![[1.0, -1.0]];
        assert_eq!(psnr(x.view(), y.view(), 1.0).unwrap(), Psnr::Db(0.0));
        match psnr_from_mse(0.01, 1.0) {
            Psnr::Db(v) => assert!((v - 20.0).abs() < 1e-12),
            Psnr::Exact => panic!(),
        }
        assert_eq!(psnr(x.view(), x.view(), 1.0).unwrap(), Psnr::Exact);
        assert_eq!(Psnr::Exact.to_string(), "exact");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn ssim_symmetry_and_permutation(seed in any::<u64>(), n in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((n, n), |_| rng.random_range(-5.0..5.0));
            let y = Array2::from_shape_fn((n, n), |_| rng.random_range(-5.0..5.0));
            let a = ssim(x.view(), y.view(), 10.0, 0.01, 0.03).unwrap();
            let b = ssim(y.view(), x.view(), 10.0, 0.01, 0.03).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
            prop_assert!((-1.0..=1.0).contains(&a) && a < 1.0);
            // transposing both is a simultaneous permutation of cells
            let t = ssim(x.t(), y.t(), 10.0, 0.01, 0.03).unwrap();
            prop_assert!((t - a).abs() < 1e-12);
        }

        #[test]
        fn psnr_decreases_with_mse(m1 in 1e-6f64..10.0, m2 in 1e-6f64..10.0) {
            prop_assume!(m1 < m2);
            match (psnr_from_mse(m1, 2.0), psnr_from_mse(m2, 2.0)) {
                (Psnr::Db(a), Psnr::Db(b)) => prop_assert!(a > b),
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn cm_cu_affine_invariance(seed in any::<u64>(), scale in 0.1f64..10.0, shift in -10.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = Array2::from_shape_fn((12, 12), |_| rng.random_range(-1.0..1.0));
            let pred = truth.mapv(|v| scale * v + shift);
            let r = cm_cu(pred.view(), truth.view(), &checker_mask(12, 12)).unwrap();
            prop_assert!((r - 1.0).abs() < 1e-12);
        }

        #[test]
        fn percentiles_ordered(values in proptest::collection::vec(-100.0f64..100.0, 1..40)) {
            let samples: Vec<(f64, f64)> = values.iter().map(|&v| (0.1, v)).collect();
            let s = bin_by_masked_fraction(&samples, &default_fraction_edges()).unwrap();
            let (p25, med, p75) = s.bins[2].quartiles.unwrap();
            prop_assert!(p25 <= med && med <= p75);
        }
    }
}
