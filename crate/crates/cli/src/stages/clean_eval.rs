use imbench::clean::{
    fastica, polyfit_residual, remove_ica_components, remove_polyfit, remove_svd_modes_with, svd_decompose,
    CleanResult, Contrast, IcaOptions,
};
use imbench::contamination::{cut_patch, patch_windows, write_patch_set, PatchWindow};
use imbench::cube::{downsample_channels, fill_empty_channels, read_cube, read_mask, write_cube, Mask, SpectralCube};
use imbench::evaluate::{
    bin_by_masked_fraction, cm_cu, default_cl_edges, percentile, psnr, rms_with, spectrum_comparison, ssim,
    ssim_windowed, write_fraction_bins, write_spectrum, write_summary, RmsConvention, SummaryRow,
};
use imbench::restore::mean_fill_restore;
use imbench::rng::derive_seed;
use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use super::restore::BASELINE;
use super::{require, seeds, Context, StageOutcome};
use crate::config::ContrastKind;
use crate::error::{Result, StageContext};

const STAGE: &str = "clean-eval";

/// One comparison dataset and the cells still flagged in it.
struct Dataset {
    label: &'static str,
    cube: SpectralCube,
    remaining: Mask,
}

/// Residual statistics of one patch.
struct PatchMetrics {
    fraction: f64,
    polyfit: f64,
    svd: Vec<f64>,
    ica: Option<f64>,
}

/// Foreground removal on every dataset, patch RMS studies, spectrum
/// comparison against the HI truth and a summary table.
pub fn clean_eval(ctx: &Context) -> StageOutcome {
    let datasets = load_datasets(ctx)?;
    let (detected, _) = read_mask(ctx.layout.mask("detected")).stage(STAGE)?;
    ctx.ensure_dir("reports")?;
    ctx.ensure_dir("residual")?;
    let mut failures = Vec::new();
    let mut summary = Vec::new();

    restoration_rows(ctx, &datasets, &detected, &mut summary)?;
    patch_study(ctx, &datasets, &detected, &mut failures)?;
    spectrum_study(ctx, &datasets, &mut summary, &mut failures)?;

    write_summary(&ctx.layout.report("summary.csv"), &summary, &ctx.hash).stage(STAGE)?;
    Ok(failures)
}

fn load_datasets(ctx: &Context) -> Result<Vec<Dataset>> {
    let name = ctx.config.restore.restorer.name();
    let mut paths: Vec<_> = ['a', 'b', 'c', 'd'].iter().map(|&v| ctx.layout.variant(name, v)).collect();
    paths.push(ctx.layout.variant(BASELINE, 'd'));
    let masks = [ctx.layout.mask("channels"), ctx.layout.mask("outliers")];
    for p in paths.iter().chain(&masks) {
        require(p, STAGE)?;
    }
    let (channels, _) = read_mask(&masks[0]).stage(STAGE)?;
    let (outliers, _) = read_mask(&masks[1]).stage(STAGE)?;
    let (rows, cols) = channels.dim();
    let union = channels.union(&outliers).stage(STAGE)?;
    let remaining = [union, channels, outliers, Mask::empty(rows, cols), Mask::empty(rows, cols)];
    let labels = ["a", "b", "c", "d", BASELINE];
    paths
        .iter()
        .zip(remaining)
        .zip(labels)
        .map(|((p, remaining), label)| Ok(Dataset { label, cube: read_cube(p).stage(STAGE)?, remaining }))
        .collect()
}

fn convention(ctx: &Context) -> RmsConvention {
    if ctx.config.eval.rms_about_mean {
        RmsConvention::AboutMean
    } else {
        RmsConvention::AboutZero
    }
}

fn ica_options(ctx: &Context) -> IcaOptions {
    let c = &ctx.config.clean;
    IcaOptions {
        tol: c.ica_tol,
        max_iter: c.ica_max_iter,
        seed: derive_seed(ctx.seed(), seeds::ICA),
        contrast: match c.ica_contrast {
            ContrastKind::Cubic => Contrast::Cubic,
            ContrastKind::Logcosh => Contrast::LogCosh,
        },
    }
}

fn similarity(ctx: &Context, x: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> Option<f64> {
    let e = &ctx.config.eval;
    let (lo, hi) = truth.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    let result = match e.ssim_window {
        0 => ssim(x, truth, range, e.k1, e.k2),
        w => ssim_windowed(x, truth, range, w, e.k1, e.k2),
    };
    result.map_err(|err| log::warn!("ssim: {err}")).ok()
}

/// Scores every dataset against the uncontaminated sky.
fn restoration_rows(ctx: &Context, datasets: &[Dataset], detected: &Mask, summary: &mut Vec<SummaryRow>) -> Result<()> {
    let total = read_cube(ctx.layout.sky("total")).stage(STAGE)?;
    let truth = total.data().view();
    let peak = truth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for ds in datasets {
        let x = ds.cube.data().view();
        let err = &x - &truth;
        summary.push(SummaryRow {
            method: "restoration".into(),
            variant: ds.label.into(),
            rms: rms_with(&err, convention(ctx)).stage(STAGE)?,
            cm_cu: cm_cu(x, truth, detected).map_err(|e| log::warn!("cm_cu: {e}")).ok(),
            ssim: similarity(ctx, x, truth),
            psnr: psnr(x, truth, peak).ok(),
            delta_log_cl: None,
        });
    }
    Ok(())
}

fn patch_metrics(ctx: &Context, data: ArrayView2<'_, f64>, fraction: f64, opts: &IcaOptions) -> Result<PatchMetrics> {
    let c = &ctx.config.clean;
    let conv = convention(ctx);
    let polyfit = rms_with(&polyfit_residual(data, c.poly_order).stage(STAGE)?, conv).stage(STAGE)?;

    let centred;
    let x = if c.svd_center {
        centred = &data - &data.mean_axis(Axis(0)).expect("nonempty patch");
        centred.view()
    } else {
        data
    };
    let dec = svd_decompose(x).stage(STAGE)?;
    let n = data.len() as f64;
    // the residual after k modes is Σ_{i≥k} σ_i u_i v_iᵀ, so its moments
    // follow from the decomposition alone
    let sv = dec.singular_values.to_vec();
    let usum = dec.u.sum_axis(Axis(0));
    let vsum = dec.v.sum_axis(Axis(0));
    let svd = c
        .svd_modes
        .iter()
        .map(|&k| {
            let energy: f64 = sv[k..].iter().map(|s| s * s).sum::<f64>() / n;
            let mean_sq = match conv {
                RmsConvention::AboutZero => 0.0,
                RmsConvention::AboutMean => {
                    let m = (k..sv.len()).map(|i| sv[i] * usum[i] * vsum[i]).sum::<f64>() / n;
                    m * m
                }
            };
            (energy - mean_sq).max(0.0).sqrt()
        })
        .collect();

    let ica = match fastica(data, c.ica_components, opts) {
        Ok(res) => {
            let mut r = &data - &res.means - res.reconstruction();
            if c.ica_restore_means {
                r += &res.means;
            }
            Some(rms_with(&r, conv).stage(STAGE)?)
        }
        Err(e) => {
            log::debug!("fastica on patch: {e}");
            None
        }
    };
    Ok(PatchMetrics { fraction, polyfit, svd, ica })
}

/// Fixed windows cut from every dataset: polyfit, SVD and ICA residual RMS.
fn patch_study(ctx: &Context, datasets: &[Dataset], detected: &Mask, failures: &mut Vec<String>) -> Result<()> {
    let e = &ctx.config.eval;
    let size = e.patch_size;
    let windows =
        patch_windows(detected, size, e.max_masked_fraction, derive_seed(ctx.seed(), seeds::PATCHES)).stage(STAGE)?;
    log::info!("clean-eval: {} patches of {size}", windows.len());
    let opts = ica_options(ctx);
    let modes = &ctx.config.clean.svd_modes;
    let edges = &e.fraction_edges;

    let mut long = ctx.csv(&ctx.layout.report("patch_metrics.csv"), STAGE)?;
    let mut header = vec!["dataset".to_string(), "origin_row".into(), "origin_channel".into()];
    header.extend(["masked_fraction".into(), "polyfit_rms".into(), "ica_rms".into()]);
    header.extend(modes.iter().map(|k| format!("svd_rms_k{k}")));
    long.write_record(&header).stage(STAGE)?;
    let mut fig6 = ctx.csv(&ctx.layout.report("fig6_svd_modes.csv"), STAGE)?;
    fig6.write_record(["dataset", "k", "count", "p25", "median", "p75"]).stage(STAGE)?;

    for ds in datasets {
        let data = ds.cube.data();
        let metrics: Vec<PatchMetrics> = windows
            .par_iter()
            .map(|w: &PatchWindow| {
                let (r0, c0) = w.origin;
                patch_metrics(ctx, data.slice(s![r0..r0 + size, c0..c0 + size]), w.masked_fraction, &opts)
            })
            .collect::<Result<_>>()?;

        for (w, m) in windows.iter().zip(&metrics) {
            let mut rec = vec![ds.label.to_string(), w.origin.0.to_string(), w.origin.1.to_string()];
            rec.push(m.fraction.to_string());
            rec.push(m.polyfit.to_string());
            rec.push(m.ica.map(|v| v.to_string()).unwrap_or_default());
            rec.extend(m.svd.iter().map(|v| v.to_string()));
            long.write_record(&rec).stage(STAGE)?;
        }

        let poly: Vec<_> = metrics.iter().map(|m| (m.fraction, m.polyfit)).collect();
        let stats = bin_by_masked_fraction(&poly, edges).stage(STAGE)?;
        write_fraction_bins(&ctx.layout.report(&format!("fig5_polyfit_{}.csv", ds.label)), &stats, &ctx.hash)
            .stage(STAGE)?;

        let ica: Vec<_> = metrics.iter().filter_map(|m| m.ica.map(|v| (m.fraction, v))).collect();
        if ica.len() < metrics.len() {
            failures.push(format!("fastica failed on {} patches of dataset {}", metrics.len() - ica.len(), ds.label));
        }
        let stats = bin_by_masked_fraction(&ica, edges).stage(STAGE)?;
        write_fraction_bins(&ctx.layout.report(&format!("fig7_ica_{}.csv", ds.label)), &stats, &ctx.hash)
            .stage(STAGE)?;

        for (j, k) in modes.iter().enumerate() {
            let mut v: Vec<f64> = metrics.iter().map(|m| m.svd[j]).collect();
            v.sort_by(f64::total_cmp);
            let stat = |p: f64| if v.is_empty() { String::new() } else { percentile(&v, p).to_string() };
            fig6.write_record([
                ds.label.to_string(),
                k.to_string(),
                v.len().to_string(),
                stat(0.25),
                stat(0.5),
                stat(0.75),
            ])
            .stage(STAGE)?;
        }

        if e.write_patches && ds.label == "d" {
            let patches: Vec<_> = windows.iter().map(|w| cut_patch(&ds.cube, detected, size, w)).collect();
            write_patch_set(&ctx.layout.patches(), &patches, ds.cube.axis()).stage(STAGE)?;
        }
    }
    long.flush().stage(STAGE)?;
    fig6.flush().stage(STAGE)?;
    Ok(())
}

/// Downsamples, fills what is still flagged and removes foregrounds from the
/// whole cube, then compares residual spectra with the HI truth.
fn spectrum_study(
    ctx: &Context,
    datasets: &[Dataset],
    summary: &mut Vec<SummaryRow>,
    failures: &mut Vec<String>,
) -> Result<()> {
    let cfg = &ctx.config;
    let factor = cfg.eval.downsample_factor;
    let hi = read_cube(ctx.layout.sky("hi")).stage(STAGE)?;
    let (rows, cols) = hi.data().dim();
    let (hi, _) = downsample_channels(&hi, &Mask::empty(rows, cols), factor).stage(STAGE)?;
    let grid = hi.sky_grid().expect("simulated cubes carry a sky grid");
    let edges = default_cl_edges(grid.nx, grid.pixel_size, cfg.eval.cl_bins);
    let truth = hi.data().view();
    let peak = truth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let opts = ica_options(ctx);

    let mut log_csv = ctx.csv(&ctx.layout.root.join("clean_log.csv"), STAGE)?;
    log_csv.write_record(["method", "dataset", "removed", "diagnostics"]).stage(STAGE)?;
    let mut fiducial_written = false;

    for ds in datasets {
        let prepared = match prepare(&ds.cube, &ds.remaining, factor) {
            Ok(p) => p,
            Err(e) => {
                failures.push(format!("prepare {}: {e}", ds.label));
                continue;
            }
        };
        let (cube, mask) = prepared;
        let c = &cfg.clean;
        let results: [(&str, Result<CleanResult>); 3] = [
            ("polyfit", remove_polyfit(&cube, c.poly_order).stage(STAGE)),
            ("svd", remove_svd_modes_with(&cube, c.svd_k, c.svd_center).stage(STAGE)),
            (
                "ica",
                remove_ica_components(&cube, c.ica_components, &opts, c.ica_restore_means).map(|r| r.0).stage(STAGE),
            ),
        ];
        for (method, result) in results {
            let result = match result {
                Ok(r) => r,
                Err(e) => {
                    failures.push(format!("{method} on {}: {e}", ds.label));
                    continue;
                }
            };
            let diag: Vec<String> = result.diagnostics.iter().take(8).map(|v| format!("{v:e}")).collect();
            log_csv
                .write_record([method, ds.label, &result.removed_component_count.to_string(), &diag.join(";")])
                .stage(STAGE)?;
            let residual = &result.residual;
            write_cube(residual, ctx.layout.residual(method, ds.label)).stage(STAGE)?;
            let cmp = match spectrum_comparison(residual, &hi, &edges) {
                Ok(cmp) => cmp,
                Err(e) => {
                    failures.push(format!("spectrum of {method} on {}: {e}", ds.label));
                    continue;
                }
            };
            if !fiducial_written {
                write_spectrum(&ctx.layout.report("fig9_hi_truth.csv"), &cmp.fiducial, &ctx.hash).stage(STAGE)?;
                fiducial_written = true;
            }
            write_spectrum(&ctx.layout.report(&format!("fig9_{method}_{}.csv", ds.label)), &cmp.residual, &ctx.hash)
                .stage(STAGE)?;
            let r = residual.data().view();
            summary.push(SummaryRow {
                method: method.into(),
                variant: ds.label.into(),
                rms: rms_with(&r, convention(ctx)).stage(STAGE)?,
                cm_cu: if mask.is_empty() { None } else { cm_cu(r, truth, &mask).ok() },
                ssim: similarity(ctx, r, truth),
                psnr: psnr(r, truth, peak).ok(),
                delta_log_cl: Some(cmp.delta_log_cl),
            });
        }
    }
    log_csv.flush().stage(STAGE)?;
    Ok(())
}

/// Channel downsampling that skips flagged cells, then row-mean filling of
/// empty channels and of any still-flagged cell.
fn prepare(cube: &SpectralCube, remaining: &Mask, factor: usize) -> Result<(SpectralCube, Mask)> {
    let (down, mask) = downsample_channels(cube, remaining, factor).stage(STAGE)?;
    let filled = fill_empty_channels(&down, &mask).stage(STAGE)?;
    let mut leftover = mask.clone();
    for c in mask.fully_masked_channels() {
        leftover.flags_mut().column_mut(c).fill(false);
    }
    if leftover.is_empty() {
        return Ok((filled, mask));
    }
    let data: Array2<f64> = mean_fill_restore(filled.data().view(), &leftover).stage(STAGE)?;
    Ok((filled.with_data(data).stage(STAGE)?, mask))
}
