use std::path::PathBuf;

use imbench::cube::{read_cube, read_mask, write_cube, CubeError, Mask};
use imbench::restore::{
    restore_dataset_variants, validate_restoration, write_rejection_report, LowRank, MeanFill, RestoreError,
    Restorer, SpectralPoly,
};
use ndarray::{Array2, ArrayView2};

use super::{require, Context, StageOutcome};
use crate::config::RestorerKind;
use crate::error::{CliError, Result, StageContext};

const STAGE: &str = "restore";

/// Directory name of the mean-fill comparison restoration.
pub const BASELINE: &str = "baseline";

/// A restoration computed elsewhere, read from a cube file and held to the
/// same contract as the built-in restorers.
#[derive(Debug, Clone)]
pub struct ExternalRestorer {
    pub path: PathBuf,
}

impl Restorer for ExternalRestorer {
    fn name(&self) -> &str {
        "external"
    }

    fn restore(&self, data: ArrayView2<'_, f64>, mask: &Mask) -> imbench::restore::Result<Array2<f64>> {
        let restored = read_cube(&self.path)?.into_data();
        validate_restoration(data, mask, restored.view())?;
        Ok(restored)
    }
}

pub(crate) fn build_restorer(ctx: &Context) -> Box<dyn Restorer> {
    let r = &ctx.config.restore;
    match r.restorer {
        RestorerKind::MeanFill => Box::new(MeanFill),
        RestorerKind::SpectralPoly => Box::new(SpectralPoly { order: r.poly_order }),
        RestorerKind::LowRank => Box::new(LowRank { rank: r.rank, tol: r.tol, max_iter: r.max_iter }),
        RestorerKind::External => {
            Box::new(ExternalRestorer { path: r.external_path.clone().expect("validated config") })
        }
    }
}

/// Writes variants a to d for the configured restorer and variant d of the
/// mean-fill baseline.
pub fn restore(ctx: &Context) -> StageOutcome {
    let paths = [ctx.layout.contaminated(), ctx.layout.mask("channels"), ctx.layout.mask("outliers")];
    for p in &paths {
        require(p, STAGE)?;
    }
    let cube = read_cube(&paths[0]).stage(STAGE)?;
    let (channels, _) = read_mask(&paths[1]).stage(STAGE)?;
    let (outliers, _) = read_mask(&paths[2]).stage(STAGE)?;
    let union = channels.union(&outliers).stage(STAGE)?;

    let restorer = build_restorer(ctx);
    let name = ctx.config.restore.restorer.name();
    let checked = restore_dataset_variants(&cube, &channels, &outliers, restorer.as_ref())
        .and_then(|v| validate_restoration(cube.data().view(), &union, v.d.data().view()).map(|_| v));
    let variants = match checked {
        Ok(v) => v,
        Err(e) => return Err(contract_or_stage(ctx, e)),
    };
    ctx.ensure_dir(&format!("restore/{name}"))?;
    for (tag, v) in variants.iter() {
        write_cube(v, ctx.layout.variant(name, tag)).stage(STAGE)?;
    }
    let baseline = restore_dataset_variants(&cube, &channels, &outliers, &MeanFill).stage(STAGE)?;
    ctx.ensure_dir(&format!("restore/{BASELINE}"))?;
    write_cube(&baseline.d, ctx.layout.variant(BASELINE, 'd')).stage(STAGE)?;
    Ok(Vec::new())
}

fn contract_or_stage(ctx: &Context, e: RestoreError) -> CliError {
    match e {
        RestoreError::Rejected { ref deviations, .. } => {
            let path = ctx.layout.rejections();
            let written: Result<()> = ctx
                .ensure_dir("restore")
                .and_then(|_| write_rejection_report(&path, deviations).stage(STAGE));
            if let Err(w) = written {
                log::error!("could not write the rejection report: {w}");
            }
            CliError::Contract(format!("{e}; details in {}", path.display()))
        }
        RestoreError::NonFinite { .. } | RestoreError::Cube(CubeError::SizeMismatch(_)) => {
            CliError::Contract(e.to_string())
        }
        other => CliError::Stage { stage: STAGE, message: other.to_string() },
    }
}
