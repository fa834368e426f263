use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::{ClEstimate, FractionBinStats, Psnr, Result};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn writer(path: &Path, config_hash: &str) -> Result<csv::Writer<File>> {
    let mut file = File::create(path)?;
    writeln!(file, "# config_hash={config_hash}")?;
    Ok(csv::Writer::from_writer(file))
}

/// Columns: `bin_lo,bin_hi,count,p25,median,p75`; empty bins leave the
/// statistics blank.
pub fn write_fraction_bins(path: &Path, stats: &FractionBinStats, config_hash: &str) -> Result<()> {
    let mut w = writer(path, config_hash)?;
    w.write_record(["bin_lo", "bin_hi", "count", "p25", "median", "p75"])?;
    for b in &stats.bins {
        let (p25, med, p75) = match b.quartiles {
            Some((a, m, c)) => (Some(a), Some(m), Some(c)),
            None => (None, None, None),
        };
        w.write_record([b.lo.to_string(), b.hi.to_string(), b.count.to_string(), opt(p25), opt(med), opt(p75)])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `l_center,mode_count,cl_value`.
pub fn write_spectrum(path: &Path, est: &ClEstimate, config_hash: &str) -> Result<()> {
    let mut w = writer(path, config_hash)?;
    w.write_record(["l_center", "mode_count", "cl_value"])?;
    for ((l, n), c) in est.l_centers.iter().zip(&est.mode_counts).zip(&est.cl_values) {
        w.write_record([l.to_string(), n.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub variant: String,
    pub rms: f64,
    pub cm_cu: Option<f64>,
    pub ssim: Option<f64>,
    pub psnr: Option<Psnr>,
    pub delta_log_cl: Option<f64>,
}

/// Columns: `method,variant,rms,cm_cu,ssim,psnr,delta_log_cl`.
pub fn write_summary(path: &Path, rows: &[SummaryRow], config_hash: &str) -> Result<()> {
    let mut w = writer(path, config_hash)?;
    w.write_record(["method", "variant", "rms", "cm_cu", "ssim", "psnr", "delta_log_cl"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.variant.clone(),
            r.rms.to_string(),
            opt(r.cm_cu),
            opt(r.ssim),
            r.psnr.map(|p| p.to_string()).unwrap_or_default(),
            opt(r.delta_log_cl),
        ])?;
    }
    w.flush()?;
    Ok(())
}
