//! Run configuration: a TOML file of `section.key = value` lines merged over
//! a named profile. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use imbench::contamination::{FlagOptions, RfiModel};
use imbench::cube::FrequencyAxis;
use imbench::evaluate::default_fraction_edges;
use imbench::skysim::{CosmologyParams, ForegroundModel, HiFieldSpec, SkyPatchSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 128² sky, 216 channels.
    Desk,
    /// 512² sky, 1080 channels.
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub sky: SkySection,
    pub cosmology: CosmologySection,
    pub hi: HiSection,
    pub rfi: RfiSection,
    pub flagging: FlagSection,
    pub restore: RestoreSection,
    pub clean: CleanSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub profile: Profile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkySection {
    pub n_pix: usize,
    /// degrees
    pub ra_min: f64,
    pub ra_max: f64,
    pub dec_min: f64,
    pub dec_max: f64,
    /// MHz
    pub freq_min: f64,
    pub freq_max: f64,
    pub n_channels: usize,
    /// Preset names: synchrotron, point_sources, galactic_free_free,
    /// extragalactic_free_free.
    pub foregrounds: Vec<String>,
    pub allow_empty_foreground: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosmologySection {
    pub omega_b: f64,
    pub omega_m: f64,
    pub omega_lambda: f64,
    pub h: f64,
    pub x_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiSection {
    pub cl_amplitude: f64,
    pub cl_slope: f64,
    pub frequency_coherence: f64,
    pub l_ref: f64,
    pub lognormal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfiSection {
    pub broadband_rate: f64,
    pub broadband_width_min: usize,
    pub broadband_width_max: usize,
    pub broadband_duration_min: usize,
    pub broadband_duration_max: usize,
    pub narrowband_channel_prob: f64,
    pub outlier_rate: f64,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    /// Replaces the synthetic generator with a recorded contamination.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_cube: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagSection {
    pub sigma: f64,
    pub iterative: bool,
    pub max_iterations: usize,
    pub exclude_flagged: bool,
    /// Rows per channel-flagging block; 0 means one image row.
    pub scan_length: usize,
    /// Second pass on residuals about per-row polynomials fitted to the
    /// cells the first pass left unflagged.
    pub refine: bool,
    pub detrend_order: usize,
    pub detrend_rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestorerKind {
    MeanFill,
    SpectralPoly,
    LowRank,
    External,
}

impl RestorerKind {
    pub fn name(self) -> &'static str {
        match self {
            RestorerKind::MeanFill => "mean_fill",
            RestorerKind::SpectralPoly => "spectral_poly",
            RestorerKind::LowRank => "low_rank",
            RestorerKind::External => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestoreSection {
    pub restorer: RestorerKind,
    pub poly_order: usize,
    pub rank: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Restored cube produced outside this tool, used by `external`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastKind {
    Cubic,
    Logcosh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleanSection {
    pub poly_order: usize,
    /// Mode counts evaluated on patches.
    pub svd_modes: Vec<usize>,
    /// Mode count used on the downsampled cube.
    pub svd_k: usize,
    pub svd_center: bool,
    pub ica_components: usize,
    pub ica_tol: f64,
    pub ica_max_iter: usize,
    pub ica_contrast: ContrastKind,
    pub ica_restore_means: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub downsample_factor: usize,
    pub patch_size: usize,
    pub max_masked_fraction: f64,
    pub fraction_edges: Vec<f64>,
    pub cl_bins: usize,
    pub rms_about_mean: bool,
    /// 0 selects the global SSIM.
    pub ssim_window: usize,
    pub k1: f64,
    pub k2: f64,
    pub write_patches: bool,
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let cosmo = CosmologyParams::default();
        let hi = HiFieldSpec::default();
        let rfi = RfiModel::default();
        let flag = FlagOptions::default();
        let (n_pix, n_channels, downsample_factor, patch_size) = match profile {
            Profile::Desk => (128, 216, 4, 128),
            Profile::Paper => (512, 1080, 20, 256),
        };
        RunConfig {
            run: RunSection { profile, seed: None, out_dir: None },
            sky: SkySection {
                n_pix,
                ra_min: 20.0,
                ra_max: 50.0,
                dec_min: 25.0,
                dec_max: 55.0,
                freq_min: 800.0,
                freq_max: 820.0,
                n_channels,
                foregrounds: ForegroundModel::standard_set().into_iter().map(|m| m.name).collect(),
                allow_empty_foreground: false,
            },
            cosmology: CosmologySection {
                omega_b: cosmo.omega_b,
                omega_m: cosmo.omega_m,
                omega_lambda: cosmo.omega_lambda,
                h: cosmo.h,
                x_hi: cosmo.x_hi,
            },
            hi: HiSection {
                cl_amplitude: hi.cl_amplitude,
                cl_slope: hi.cl_slope,
                frequency_coherence: hi.frequency_coherence,
                l_ref: hi.l_ref,
                lognormal: hi.lognormal,
            },
            rfi: RfiSection {
                broadband_rate: rfi.broadband_rate,
                broadband_width_min: rfi.broadband_width.0,
                broadband_width_max: rfi.broadband_width.1,
                broadband_duration_min: rfi.broadband_duration.0,
                broadband_duration_max: rfi.broadband_duration.1,
                narrowband_channel_prob: rfi.narrowband_channel_prob,
                outlier_rate: rfi.outlier_rate,
                amplitude_min: rfi.amplitude_scale.0,
                amplitude_max: rfi.amplitude_scale.1,
                template_cube: None,
                template_mask: None,
            },
            flagging: FlagSection {
                sigma: flag.sigma,
                iterative: flag.iterative,
                max_iterations: flag.max_iterations,
                exclude_flagged: flag.exclude_flagged,
                scan_length: 0,
                refine: true,
                detrend_order: 3,
                detrend_rounds: 5,
            },
            restore: RestoreSection {
                restorer: RestorerKind::SpectralPoly,
                poly_order: 2,
                rank: 4,
                tol: 1e-6,
                max_iter: 100,
                external_path: None,
            },
            clean: CleanSection {
                poly_order: 2,
                svd_modes: (0..=30).collect(),
                svd_k: 4,
                svd_center: false,
                ica_components: 4,
                ica_tol: 1e-4,
                ica_max_iter: 200,
                ica_contrast: ContrastKind::Cubic,
                ica_restore_means: false,
            },
            eval: EvalSection {
                downsample_factor,
                patch_size,
                max_masked_fraction: 0.4,
                fraction_edges: default_fraction_edges(),
                cl_bins: 12,
                rms_about_mean: false,
                ssim_window: 0,
                k1: 0.01,
                k2: 0.03,
                write_patches: false,
            },
        }
    }

    /// Reads `path`, merges it over the selected profile and validates the
    /// result. `profile` and `seed` override the file.
    pub fn load(path: &Path, profile: Option<Profile>, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, profile, seed)
    }

    pub fn from_toml_str(text: &str, profile: Option<Profile>, seed: Option<u64>) -> Result<Self> {
        let file: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let file_profile = match file.get("run").and_then(|r| r.get("profile")) {
            None => None,
            Some(v) => Some(
                v.clone().try_into::<Profile>().map_err(|e| CliError::Config(format!("run.profile: {e}")))?,
            ),
        };
        let profile = profile.or(file_profile).unwrap_or(Profile::Desk);
        let mut merged = toml::Value::try_from(Self::profile(profile))
            .map_err(|e| CliError::Config(format!("profile defaults: {e}")))?;
        merge(&mut merged, toml::Value::Table(file));
        let mut cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.run.profile = profile;
        if seed.is_some() {
            cfg.run.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.run.seed.expect("validated config has a seed")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        if self.run.seed.is_none() {
            return bad("run.seed", "is required".into());
        }
        if self.sky.ra_min >= self.sky.ra_max {
            return bad("sky.ra_min", format!("{} must be below sky.ra_max = {}", self.sky.ra_min, self.sky.ra_max));
        }
        if self.sky.dec_min >= self.sky.dec_max {
            return bad(
                "sky.dec_min",
                format!("{} must be below sky.dec_max = {}", self.sky.dec_min, self.sky.dec_max),
            );
        }
        if !(self.sky.freq_min > 0.0 && self.sky.freq_min < self.sky.freq_max) {
            return bad("sky.freq_min", "must be positive and below sky.freq_max".into());
        }
        if self.sky.n_channels < 2 {
            return bad("sky.n_channels", "must be at least 2".into());
        }
        self.patch_spec().and_then(|s| s.validate().map_err(|e| CliError::Config(format!("sky: {e}"))))?;
        self.foreground_models()?;
        self.cosmology().validate().map_err(|e| CliError::Config(format!("cosmology: {e}")))?;
        self.hi_spec().validate().map_err(|e| CliError::Config(format!("hi: {e}")))?;
        self.rfi_model(0).validate().map_err(|e| CliError::Config(format!("rfi: {e}")))?;
        if self.rfi.template_cube.is_some() != self.rfi.template_mask.is_some() {
            return bad("rfi.template_cube", "template_cube and template_mask must be given together".into());
        }
        let rows = self.sky.n_pix * self.sky.n_pix;
        if !(self.flagging.sigma > 0.0) {
            return bad("flagging.sigma", "must be positive".into());
        }
        if self.flagging.scan_length > rows {
            return bad("flagging.scan_length", format!("exceeds the {rows} rows of the cube"));
        }
        if self.flagging.refine && self.flagging.detrend_order + 1 >= self.sky.n_channels {
            return bad("flagging.detrend_order", "must be below n_channels - 1".into());
        }
        if self.restore.restorer == RestorerKind::External && self.restore.external_path.is_none() {
            return bad("restore.external_path", "required by the external restorer".into());
        }
        if self.restore.poly_order >= self.sky.n_channels {
            return bad("restore.poly_order", "must be below the channel count".into());
        }
        if self.restore.rank == 0 || self.restore.rank > self.sky.n_channels {
            return bad("restore.rank", "must lie in [1, n_channels]".into());
        }
        let s = self.eval.patch_size;
        if s == 0 || s > rows || s > self.sky.n_channels {
            return bad("eval.patch_size", format!("{s} does not fit a {rows} x {} cube", self.sky.n_channels));
        }
        if !(0.0..=1.0).contains(&self.eval.max_masked_fraction) {
            return bad("eval.max_masked_fraction", "must lie in [0, 1]".into());
        }
        let f = self.eval.downsample_factor;
        if f == 0 || f > self.sky.n_channels {
            return bad("eval.downsample_factor", "must lie in [1, n_channels]".into());
        }
        let reduced = self.sky.n_channels / f;
        if self.clean.poly_order >= s.min(reduced) {
            return bad("clean.poly_order", "must be below the patch and downsampled channel counts".into());
        }
        if let Some(&k) = self.clean.svd_modes.iter().find(|&&k| k > s) {
            return bad("clean.svd_modes", format!("{k} exceeds the patch size {s}"));
        }
        if self.clean.svd_k > reduced {
            return bad("clean.svd_k", format!("exceeds the {reduced} downsampled channels"));
        }
        if self.clean.ica_components == 0 || self.clean.ica_components > s.min(reduced) {
            return bad("clean.ica_components", "must lie in [1, min(patch size, downsampled channels)]".into());
        }
        let edges = &self.eval.fraction_edges;
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("eval.fraction_edges", "needs at least two strictly increasing values".into());
        }
        if self.eval.cl_bins == 0 {
            return bad("eval.cl_bins", "must be positive".into());
        }
        if self.eval.ssim_window == 1 {
            return bad("eval.ssim_window", "must be 0 (global) or at least 2".into());
        }
        Ok(())
    }

    pub fn axis(&self) -> Result<FrequencyAxis> {
        FrequencyAxis::from_band(self.sky.freq_min * 1e6, self.sky.freq_max * 1e6, self.sky.n_channels)
            .map_err(|e| CliError::Config(format!("sky: {e}")))
    }

    pub fn patch_spec(&self) -> Result<SkyPatchSpec> {
        Ok(SkyPatchSpec {
            ra_range: (self.sky.ra_min, self.sky.ra_max),
            dec_range: (self.sky.dec_min, self.sky.dec_max),
            n_pix: self.sky.n_pix,
            axis: self.axis()?,
        })
    }

    pub fn foreground_models(&self) -> Result<Vec<ForegroundModel>> {
        let presets = ForegroundModel::standard_set();
        self.sky
            .foregrounds
            .iter()
            .map(|name| {
                presets.iter().find(|m| &m.name == name).cloned().ok_or_else(|| {
                    CliError::Config(format!("sky.foregrounds: unknown component {name:?}"))
                })
            })
            .collect()
    }

    pub fn cosmology(&self) -> CosmologyParams {
        let c = &self.cosmology;
        CosmologyParams {
            omega_b: c.omega_b,
            omega_m: c.omega_m,
            omega_lambda: c.omega_lambda,
            h: c.h,
            x_hi: c.x_hi,
        }
    }

    pub fn hi_spec(&self) -> HiFieldSpec {
        let h = &self.hi;
        HiFieldSpec {
            cl_amplitude: h.cl_amplitude,
            cl_slope: h.cl_slope,
            frequency_coherence: h.frequency_coherence,
            l_ref: h.l_ref,
            lognormal: h.lognormal,
        }
    }

    pub fn rfi_model(&self, seed: u64) -> RfiModel {
        let r = &self.rfi;
        RfiModel {
            broadband_rate: r.broadband_rate,
            broadband_width: (r.broadband_width_min, r.broadband_width_max),
            broadband_duration: (r.broadband_duration_min, r.broadband_duration_max),
            narrowband_channel_prob: r.narrowband_channel_prob,
            outlier_rate: r.outlier_rate,
            amplitude_scale: (r.amplitude_min, r.amplitude_max),
            seed,
        }
    }

    pub fn flag_options(&self) -> FlagOptions {
        let f = &self.flagging;
        FlagOptions {
            sigma: f.sigma,
            iterative: f.iterative,
            max_iterations: f.max_iterations,
            exclude_flagged: f.exclude_flagged,
        }
    }

    pub fn scan_length(&self) -> usize {
        match self.flagging.scan_length {
            0 => self.sky.n_pix,
            n => n,
        }
    }

    /// The effective configuration as TOML, without the output directory.
    pub fn canonical_toml(&self) -> String {
        let mut c = self.clone();
        c.run.out_dir = None;
        toml::to_string(&c).expect("config serialises")
    }

    /// SHA-256 of [`Self::canonical_toml`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_toml().as_bytes()))
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
