use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::{ContaminationError, Result};
use crate::cube::{read_cube, read_mask, Mask, SpectralCube};
use crate::rng::keyed_rng;

const STREAM_NARROWBAND: u64 = 1;
const STREAM_BROADBAND: u64 = 2;
const STREAM_OUTLIER: u64 = 3;

/// Parameters of the synthetic interference generator. Amplitudes are
/// multiples of the clean cube's RMS.
#[derive(Debug, Clone, PartialEq)]
pub struct RfiModel {
    /// Expected bursts per 1000 rows.
    pub broadband_rate: f64,
    /// Channels covered by one burst, inclusive range.
    pub broadband_width: (usize, usize),
    /// Rows covered by one burst, inclusive range.
    pub broadband_duration: (usize, usize),
    /// Probability that a channel is persistently contaminated.
    pub narrowband_channel_prob: f64,
    /// Per-cell probability of an isolated outlier.
    pub outlier_rate: f64,
    pub amplitude_scale: (f64, f64),
    pub seed: u64,
}

impl Default for RfiModel {
    fn default() -> Self {
        RfiModel {
            broadband_rate: 4.0,
            broadband_width: (8, 80),
            broadband_duration: (1, 24),
            narrowband_channel_prob: 0.01,
            outlier_rate: 5e-4,
            amplitude_scale: (10.0, 1000.0),
            seed: 0,
        }
    }
}

impl RfiModel {
    /// A model that modifies nothing.
    pub fn none() -> Self {
        RfiModel { broadband_rate: 0.0, narrowband_channel_prob: 0.0, outlier_rate: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ContaminationError::InvalidParameter(m.into()));
        if !(0.0..=1.0).contains(&self.narrowband_channel_prob) || !(0.0..=1.0).contains(&self.outlier_rate) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(self.broadband_rate >= 0.0) || !self.broadband_rate.is_finite() {
            return bad("broadband_rate must be non-negative");
        }
        let (lo, hi) = self.amplitude_scale;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("amplitude_scale must be positive and ordered");
        }
        for (name, (a, b)) in [("broadband_width", self.broadband_width), ("broadband_duration", self.broadband_duration)] {
            if a == 0 || b < a {
                return Err(ContaminationError::InvalidParameter(format!("{name} must be a positive ordered range")));
            }
        }
        Ok(())
    }

    fn amplitude(&self, rng: &mut ChaCha8Rng, rms: f64) -> f64 {
        let (lo, hi) = self.amplitude_scale;
        let u: f64 = rng.random();
        rms * (lo.ln() + u * (hi.ln() - lo.ln())).exp()
    }
}

/// Adds positive interference to a clean cube.
///
/// Three morphologies are drawn from independent streams: persistent
/// contaminated channels, broadband bursts covering a block of rows and
/// channels, and isolated single-cell outliers. The returned mask is
/// exactly the set of cells whose value changed.
pub fn inject_rfi(cube: &SpectralCube, model: &RfiModel) -> Result<(SpectralCube, Mask)> {
    model.validate()?;
    let clean = cube.data();
    let (rows, channels) = clean.dim();
    let mut rms = (clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64).sqrt();
    if !(rms > 0.0) {
        rms = 1.0;
    }
    let mut rfi = Array2::<f64>::zeros((rows, channels));

    for c in 0..channels {
        let mut rng = keyed_rng(model.seed, STREAM_NARROWBAND, c as u64);
        if rng.random::<f64>() < model.narrowband_channel_prob {
            let a = model.amplitude(&mut rng, rms);
            for r in 0..rows {
                rfi[[r, c]] += a * (0.5 + rng.random::<f64>());
            }
        }
    }

    let expected = model.broadband_rate * rows as f64 / 1000.0;
    if expected > 0.0 {
        let mut rng = keyed_rng(model.seed, STREAM_BROADBAND, 0);
        let bursts = Poisson::new(expected).map(|p| p.sample(&mut rng) as usize).unwrap_or(0);
        for _ in 0..bursts {
            let r0 = rng.random_range(0..rows);
            let dur = rng.random_range(model.broadband_duration.0..=model.broadband_duration.1);
            let c0 = rng.random_range(0..channels);
            let width = rng.random_range(model.broadband_width.0..=model.broadband_width.1);
            let c1 = (c0 + width).min(channels);
            // each channel of a burst has its own level, so a burst has
            // spectral structure rather than a flat top
            let levels: Vec<f64> = (c0..c1).map(|_| model.amplitude(&mut rng, rms)).collect();
            for r in r0..(r0 + dur).min(rows) {
                for (c, a) in (c0..c1).zip(&levels) {
                    rfi[[r, c]] += a * (0.5 + rng.random::<f64>());
                }
            }
        }
    }

    if model.outlier_rate > 0.0 {
        for (r, mut row) in rfi.rows_mut().into_iter().enumerate() {
            let mut rng = keyed_rng(model.seed, STREAM_OUTLIER, r as u64);
            for v in row.iter_mut() {
                if rng.random::<f64>() < model.outlier_rate {
                    let a = model.amplitude(&mut rng, rms);
                    *v += a;
                }
            }
        }
    }

    let contaminated = clean + &rfi;
    let flags = Array2::from_shape_fn((rows, channels), |(r, c)| contaminated[[r, c]] != clean[[r, c]]);
    Ok((cube.with_data(contaminated)?, Mask::new(flags)))
}

/// Reads an interference template: a cube of RFI values and the mask of
/// cells it occupies.
pub fn load_rfi_template(cube_path: &Path, mask_path: &Path) -> Result<(SpectralCube, Mask)> {
    let template = read_cube(cube_path)?;
    let (mask, _) = read_mask(mask_path)?;
    mask.check_congruent(template.data().dim())?;
    Ok((template, mask))
}

/// Adds a template's values to `cube` at the template's masked cells.
pub fn apply_rfi_template(cube: &SpectralCube, template: &SpectralCube, mask: &Mask) -> Result<(SpectralCube, Mask)> {
    if template.data().dim() != cube.data().dim() {
        return Err(ContaminationError::InvalidParameter(format!(
            "template shape {:?} differs from cube shape {:?}",
            template.data().dim(),
            cube.data().dim()
        )));
    }
    mask.check_congruent(cube.data().dim())?;
    let mut data = cube.data().clone();
    for ((idx, v), &f) in data.indexed_iter_mut().zip(mask.flags().iter()) {
        if f {
            *v += template.data()[idx];
        }
    }
    Ok((cube.with_data(data)?, mask.clone()))
}
