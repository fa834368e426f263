use imbench::contamination::{
    apply_rfi_template, combine_flags, detrend_spectra, flag_channels_by_block, flag_outliers, inject_rfi, load_rfi_template,
    FlagReport,
};
use imbench::cube::{read_cube, write_cube, write_mask, Mask, SpectralCube};
use imbench::evaluate::rms;
use imbench::rng::derive_seed;

use super::{require, seeds, Context, StageOutcome};
use crate::error::{Result, StageContext};

const STAGE: &str = "contaminate";

/// Cells at least this many clean-cube RMS above the clean value count as
/// strong interference in the recall summary.
const STRONG_FACTOR: f64 = 100.0;

/// Adds interference to the simulated total, flags it and writes the truth
/// and detected masks with a flagging report.
pub fn contaminate(ctx: &Context) -> StageOutcome {
    let cfg = &ctx.config;
    let total_path = ctx.layout.sky("total");
    require(&total_path, STAGE)?;
    let clean = read_cube(&total_path).stage(STAGE)?;
    let (dirty, truth) = match (&cfg.rfi.template_cube, &cfg.rfi.template_mask) {
        (Some(c), Some(m)) => {
            let (template, tmask) = load_rfi_template(c, m).stage(STAGE)?;
            apply_rfi_template(&clean, &template, &tmask).stage(STAGE)?
        }
        _ => inject_rfi(&clean, &cfg.rfi_model(derive_seed(ctx.seed(), seeds::RFI))).stage(STAGE)?,
    };
    let opts = cfg.flag_options();
    let scan = cfg.scan_length();
    let channels = flag_channels_by_block(&dirty, scan, &opts).stage(STAGE)?;
    let outliers = flag_outliers(&dirty, &channels.mask, &opts).stage(STAGE)?;
    let (channels, outliers) =
        if cfg.flagging.refine { refine(ctx, &dirty, channels, outliers)? } else { (channels, outliers) };
    let detected = combine_flags(&channels, &outliers).stage(STAGE)?;

    ctx.ensure_dir("contaminate")?;
    let meta = dirty.meta();
    write_cube(&dirty, ctx.layout.contaminated()).stage(STAGE)?;
    write_mask(&truth, &meta, ctx.layout.mask("truth")).stage(STAGE)?;
    write_mask(&channels.mask, &meta, ctx.layout.mask("channels")).stage(STAGE)?;
    write_mask(&outliers.mask, &meta, ctx.layout.mask("outliers")).stage(STAGE)?;
    write_mask(&detected, &meta, ctx.layout.mask("detected")).stage(STAGE)?;

    let mut w = ctx.csv(&ctx.layout.contaminate_report("flag_report.csv"), STAGE)?;
    w.write_record(["block", "row_start", "row_end", "n_flagged_channels", "channels"]).stage(STAGE)?;
    let rows = dirty.n_rows();
    for (b, list) in channels.block_channels.iter().enumerate() {
        let start = b * scan;
        let end = (start + scan).min(rows);
        let joined = list.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([b.to_string(), start.to_string(), end.to_string(), list.len().to_string(), joined])
            .stage(STAGE)?;
    }
    w.flush().stage(STAGE)?;

    let mut summary = summarize(&clean, &dirty, &truth, &channels.mask, &detected)?;
    summary.push(("channel_iterations", channels.iterations as f64));
    summary.push(("outlier_count", outliers.outlier_count as f64));
    let mut w = ctx.csv(&ctx.layout.contaminate_report("flag_summary.csv"), STAGE)?;
    w.write_record(["metric", "value"]).stage(STAGE)?;
    for (k, v) in summary {
        w.write_record([k.to_string(), v.to_string()]).stage(STAGE)?;
    }
    w.flush().stage(STAGE)?;
    log::info!("contaminate: {} truth cells, {} detected", truth.count(), detected.count());
    Ok(Vec::new())
}

/// Second channel-flagging pass on residuals about per-row polynomials
/// fitted to the cells the first pass left unflagged. New channel flags
/// join the first pass and take over any outlier flags they cover.
fn refine(
    ctx: &Context,
    dirty: &SpectralCube,
    channels: FlagReport,
    outliers: FlagReport,
) -> Result<(FlagReport, FlagReport)> {
    let f = &ctx.config.flagging;
    let opts = ctx.config.flag_options();
    let first = combine_flags(&channels, &outliers).stage(STAGE)?;
    let probe = detrend_spectra(dirty, &first, f.detrend_order, opts.sigma, f.detrend_rounds).stage(STAGE)?;
    let second = flag_channels_by_block(&probe, ctx.config.scan_length(), &opts).stage(STAGE)?;
    let channel_mask = channels.mask.union(&second.mask).stage(STAGE)?;
    let outlier_mask = outliers.mask.difference(&channel_mask).stage(STAGE)?;
    log::info!("refine: {} more channel-flagged cells", channel_mask.count() - channels.mask.count());
    let block_channels = channels
        .block_channels
        .iter()
        .zip(&second.block_channels)
        .map(|(a, b)| {
            let mut v: Vec<usize> = a.iter().chain(b).copied().collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();
    let merged_channels = FlagReport {
        flagged_channels: channel_mask.fully_masked_channels(),
        mask: channel_mask,
        outlier_count: 0,
        iterations: channels.iterations.max(second.iterations),
        block_channels,
    };
    let merged_outliers = FlagReport { outlier_count: outlier_mask.count(), mask: outlier_mask, ..outliers };
    Ok((merged_channels, merged_outliers))
}

fn summarize(
    clean: &SpectralCube,
    dirty: &SpectralCube,
    truth: &Mask,
    channel_mask: &Mask,
    detected: &Mask,
) -> Result<Vec<(&'static str, f64)>> {
    let level = STRONG_FACTOR * rms(clean.data()).stage(STAGE)?;
    let (mut tp, mut strong, mut strong_hit) = (0usize, 0usize, 0usize);
    for (((&t, &d), &c), &x) in truth.flags().iter().zip(detected.flags()).zip(clean.data()).zip(dirty.data()) {
        if t && d {
            tp += 1;
        }
        if x - c >= level {
            strong += 1;
            strong_hit += d as usize;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let truth_channels = truth.fully_masked_channels();
    let found = channel_mask.fully_masked_channels();
    let channel_hits = truth_channels.iter().filter(|c| found.contains(c)).count();
    Ok(vec![
        ("truth_cells", truth.count() as f64),
        ("detected_cells", detected.count() as f64),
        ("true_positive_cells", tp as f64),
        ("false_positive_cells", (detected.count() - tp) as f64),
        ("cell_recall", ratio(tp, truth.count())),
        ("cell_precision", ratio(tp, detected.count())),
        ("strong_cells", strong as f64),
        ("strong_cell_recall", ratio(strong_hit, strong)),
        ("truth_full_channels", truth_channels.len() as f64),
        ("full_channel_recall", ratio(channel_hits, truth_channels.len())),
    ])
}
