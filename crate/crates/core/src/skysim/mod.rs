//! Mock flat-sky observations: an HI brightness-temperature signal plus
//! Gaussian foreground components with a separable cross-frequency angular
//! power spectrum.

mod field;

use ndarray::Array2;
use thiserror::Error;

use crate::cube::{CubeError, FrequencyAxis, SkyGrid, SpectralCube};
use crate::linalg::cholesky_with_jitter;

pub use field::{generate_correlated_field, generate_hi_cube};

#[derive(Debug, Error)]
pub enum SkyError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("frequency {0} Hz is outside (0, nu_21]")]
    FrequencyOutOfRange(f64),
    #[error("covariance not PSD (gave up at jitter {0:e})")]
    NotPsd(f64),
    #[error(transparent)]
    Cube(#[from] CubeError),
}

pub type Result<T, E = SkyError> = std::result::Result<T, E>;

/// Rest-frame frequency of the 21-cm hyperfine line, Hz.
pub const NU_21: f64 = 1420.405751768e6;

/// Prefactor of the per-cell HI mass relation, solar masses.
pub const HI_MASS_COEFFICIENT: f64 = 2.775e11;

/// Largest diagonal jitter, relative to `trace / n`, tried when factorising
/// a frequency covariance.
pub const MAX_RELATIVE_JITTER: f64 = 1e-10;

const DEG: f64 = std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosmologyParams {
    pub omega_b: f64,
    pub omega_m: f64,
    pub omega_lambda: f64,
    pub h: f64,
    pub x_hi: f64,
}

impl Default for CosmologyParams {
    fn default() -> Self {
        // placeholder values; nothing downstream depends on them being exact
        CosmologyParams { omega_b: 0.049, omega_m: 0.315, omega_lambda: 0.685, h: 0.67, x_hi: 0.01 }
    }
}

impl CosmologyParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("omega_b", self.omega_b),
            ("omega_m", self.omega_m),
            ("omega_lambda", self.omega_lambda),
            ("h", self.h),
            ("x_hi", self.x_hi),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v < 1.5) {
                return Err(SkyError::InvalidParameter(format!("{name} = {v} is outside (0, 1.5)")));
            }
        }
        if (self.omega_m + self.omega_lambda - 1.0).abs() > 0.01 {
            return Err(SkyError::InvalidParameter(format!(
                "omega_m + omega_lambda = {} is not flat",
                self.omega_m + self.omega_lambda
            )));
        }
        Ok(())
    }
}

pub fn redshift_of_frequency(nu: f64) -> Result<f64> {
    if !(nu > 0.0 && nu <= NU_21) {
        return Err(SkyError::FrequencyOutOfRange(nu));
    }
    Ok(NU_21 / nu - 1.0)
}

/// Mean HI brightness temperature at redshift `z`, mK.
pub fn mean_brightness_temperature(cosmo: &CosmologyParams, z: f64) -> f64 {
    let zp = 1.0 + z;
    190.55 * cosmo.omega_b * cosmo.h * zp * zp * cosmo.x_hi
        / (cosmo.omega_m * zp * zp * zp + cosmo.omega_lambda).sqrt()
}

/// Brightness temperature in mK of a cell with HI overdensity `delta_hi`.
pub fn brightness_temperature(cosmo: &CosmologyParams, z: f64, delta_hi: f64) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(SkyError::InvalidParameter(format!("redshift {z} is negative")));
    }
    if !(delta_hi >= -1.0) {
        return Err(SkyError::InvalidParameter(format!("overdensity {delta_hi} is below -1")));
    }
    Ok(mean_brightness_temperature(cosmo, z) * (1.0 + delta_hi))
}

/// HI mass of a cell in solar masses. The volume is taken as given; its
/// unit convention (Mpc³ or (Mpc/h)³) is the caller's.
pub fn hi_mass_per_cell(cosmo: &CosmologyParams, cell_volume: f64, delta_hi: f64) -> Result<f64> {
    if !(cell_volume > 0.0) {
        return Err(SkyError::InvalidParameter(format!("cell volume {cell_volume} must be positive")));
    }
    if !(delta_hi >= -1.0) {
        return Err(SkyError::InvalidParameter(format!("overdensity {delta_hi} is below -1")));
    }
    Ok(HI_MASS_COEFFICIENT * cell_volume * cosmo.omega_b * cosmo.x_hi / cosmo.h * (1.0 + delta_hi))
}

/// One foreground component of the form
/// `A (l_ref/l)^β (ν_ref²/(ν1 ν2))^α exp(-ln²(ν1/ν2) / 2ξ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundModel {
    pub name: String,
    /// mK²
    pub amplitude: f64,
    pub beta: f64,
    pub alpha: f64,
    pub xi: f64,
    pub l_ref: f64,
    /// Hz
    pub nu_ref: f64,
}

impl ForegroundModel {
    fn preset(name: &str, amplitude: f64, beta: f64, alpha: f64, xi: f64) -> Self {
        ForegroundModel { name: name.into(), amplitude, beta, alpha, xi, l_ref: 1000.0, nu_ref: 130e6 }
    }

    pub fn synchrotron() -> Self {
        Self::preset("synchrotron", 700.0, 2.4, 2.80, 4.0)
    }

    pub fn point_sources() -> Self {
        Self::preset("point_sources", 57.0, 1.1, 2.07, 1.0)
    }

    pub fn galactic_free_free() -> Self {
        Self::preset("galactic_free_free", 0.088, 3.0, 2.15, 35.0)
    }

    pub fn extragalactic_free_free() -> Self {
        Self::preset("extragalactic_free_free", 0.014, 1.0, 2.10, 35.0)
    }

    /// The four standard components.
    pub fn standard_set() -> Vec<Self> {
        vec![Self::synchrotron(), Self::point_sources(), Self::galactic_free_free(), Self::extragalactic_free_free()]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(SkyError::InvalidParameter(format!("{}: amplitude must be non-negative", self.name)));
        }
        if !(self.xi > 0.0) {
            return Err(SkyError::InvalidParameter(format!("{}: xi must be positive", self.name)));
        }
        if !(self.l_ref > 0.0 && self.nu_ref > 0.0) {
            return Err(SkyError::InvalidParameter(format!("{}: pivots must be positive", self.name)));
        }
        if !(self.beta.is_finite() && self.alpha.is_finite()) {
            return Err(SkyError::InvalidParameter(format!("{}: slopes must be finite", self.name)));
        }
        Ok(())
    }

    /// Angular factor `(l_ref/l)^β`.
    pub fn angular_factor(&self, l: f64) -> f64 {
        (self.l_ref / l).powf(self.beta)
    }

    /// Frequency factor `A (ν_ref²/(ν1 ν2))^α exp(-ln²(ν1/ν2) / 2ξ²)`.
    pub fn frequency_factor(&self, nu1: f64, nu2: f64) -> f64 {
        let lr = (nu1 / nu2).ln();
        self.amplitude
            * (self.nu_ref * self.nu_ref / (nu1 * nu2)).powf(self.alpha)
            * (-lr * lr / (2.0 * self.xi * self.xi)).exp()
    }
}

pub fn foreground_cl(model: &ForegroundModel, l: f64, nu1: f64, nu2: f64) -> Result<f64> {
    if !(l > 0.0) {
        return Err(SkyError::InvalidParameter(format!("multipole {l} must be positive")));
    }
    if !(nu1 > 0.0 && nu2 > 0.0) {
        return Err(SkyError::InvalidParameter("frequencies must be positive".into()));
    }
    Ok(model.angular_factor(l) * model.frequency_factor(nu1, nu2))
}

/// A channel covariance together with its (possibly jittered) lower
/// Cholesky factor.
#[derive(Debug, Clone)]
pub struct FrequencyCovariance {
    pub matrix: Array2<f64>,
    pub factor: Array2<f64>,
    pub jitter: f64,
}

pub fn frequency_covariance(model: &ForegroundModel, axis: &FrequencyAxis) -> Result<FrequencyCovariance> {
    model.validate()?;
    let nu = axis.frequencies();
    let n = nu.len();
    let mut g = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let v = model.frequency_factor(nu[i], nu[j]);
            g[[i, j]] = v;
            g[[j, i]] = v;
        }
    }
    if model.amplitude == 0.0 {
        return Ok(FrequencyCovariance { factor: g.clone(), matrix: g, jitter: 0.0 });
    }
    let (factor, jitter) = cholesky_with_jitter(g.view(), MAX_RELATIVE_JITTER)
        .ok_or(SkyError::NotPsd(MAX_RELATIVE_JITTER * g.diag().sum() / n as f64))?;
    if jitter > 0.0 {
        log::debug!("{}: covariance factorised with jitter {jitter:e}", model.name);
    }
    Ok(FrequencyCovariance { matrix: g, factor, jitter })
}

/// Geometry of a simulated square patch.
#[derive(Debug, Clone, PartialEq)]
pub struct SkyPatchSpec {
    /// degrees
    pub ra_range: (f64, f64),
    /// degrees
    pub dec_range: (f64, f64),
    pub n_pix: usize,
    pub axis: FrequencyAxis,
}

impl SkyPatchSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.ra_range.1 > self.ra_range.0) || !(self.dec_range.1 > self.dec_range.0) {
            return Err(SkyError::InvalidParameter("coordinate ranges must be nonempty".into()));
        }
        if self.n_pix < 8 || self.n_pix % 2 != 0 {
            return Err(SkyError::InvalidParameter(format!("n_pix = {} must be even and at least 8", self.n_pix)));
        }
        Ok(())
    }

    /// Pixel side in radians. The grid is square, so the declination span
    /// sets the scale.
    pub fn pixel_size(&self) -> f64 {
        (self.dec_range.1 - self.dec_range.0) * DEG / self.n_pix as f64
    }

    pub fn sky_grid(&self) -> SkyGrid {
        SkyGrid { nx: self.n_pix, ny: self.n_pix, pixel_size: self.pixel_size() }
    }
}

/// Parameters of the Gaussian HI overdensity field: power-law angular
/// spectrum `cl_amplitude (l_ref/l)^cl_slope` with a Gaussian coherence in
/// log frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HiFieldSpec {
    pub cl_amplitude: f64,
    pub cl_slope: f64,
    pub frequency_coherence: f64,
    pub l_ref: f64,
    /// Maps the Gaussian field through `exp(g - σ²/2) - 1` so that δ > -1.
    pub lognormal: bool,
}

impl Default for HiFieldSpec {
    fn default() -> Self {
        HiFieldSpec { cl_amplitude: 1.5e-6, cl_slope: 1.0, frequency_coherence: 5e-4, l_ref: 1000.0, lognormal: false }
    }
}

impl HiFieldSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cl_amplitude >= 0.0) || !self.cl_amplitude.is_finite() {
            return Err(SkyError::InvalidParameter("cl_amplitude must be non-negative".into()));
        }
        if !(self.frequency_coherence > 0.0) {
            return Err(SkyError::InvalidParameter("frequency_coherence must be positive".into()));
        }
        Ok(())
    }

    fn as_model(&self) -> ForegroundModel {
        ForegroundModel {
            name: "hi_overdensity".into(),
            amplitude: self.cl_amplitude,
            beta: self.cl_slope,
            alpha: 0.0,
            xi: self.frequency_coherence,
            l_ref: self.l_ref,
            nu_ref: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SkyComponents {
    pub total: SpectralCube,
    pub hi: SpectralCube,
    pub foreground: SpectralCube,
}

/// Simulates the HI signal and every foreground component with independent
/// sub-seeds and sums them. An empty foreground list is an error unless
/// `allow_empty_foreground` is set.
pub fn compose_sky(
    spec: &SkyPatchSpec,
    cosmo: &CosmologyParams,
    hi_spec: &HiFieldSpec,
    models: &[ForegroundModel],
    seed: u64,
    allow_empty_foreground: bool,
) -> Result<SkyComponents> {
    if models.is_empty() && !allow_empty_foreground {
        return Err(SkyError::InvalidParameter("no foreground components given".into()));
    }
    let hi = generate_hi_cube(spec, cosmo, hi_spec, crate::rng::derive_seed(seed, 0))?;
    let mut fg = Array2::<f64>::zeros(hi.data().dim());
    for (i, model) in models.iter().enumerate() {
        let component = generate_correlated_field(spec, model, crate::rng::derive_seed(seed, 1 + i as u64))?;
        fg += component.data();
    }
    let total = hi.data() + &fg;
    // stored as a difference so that total - hi - foreground is exactly zero
    let foreground = hi.with_data(&total - hi.data())?;
    let total = hi.with_data(total)?;
    Ok(SkyComponents { total, hi, foreground })
}
