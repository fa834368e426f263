use imbench::cube::write_cube;
use imbench::rng::derive_seed;
use imbench::skysim::compose_sky;

use super::{seeds, Context, StageOutcome};
use crate::error::StageContext;

const STAGE: &str = "simulate";

/// Writes the total, HI and foreground cubes.
pub fn simulate(ctx: &Context) -> StageOutcome {
    let cfg = &ctx.config;
    let spec = cfg.patch_spec()?;
    let models = cfg.foreground_models()?;
    let sky = compose_sky(
        &spec,
        &cfg.cosmology(),
        &cfg.hi_spec(),
        &models,
        derive_seed(ctx.seed(), seeds::SKY),
        cfg.sky.allow_empty_foreground,
    )
    .stage(STAGE)?;
    ctx.ensure_dir("sky")?;
    write_cube(&sky.total, ctx.layout.sky("total")).stage(STAGE)?;
    write_cube(&sky.hi, ctx.layout.sky("hi")).stage(STAGE)?;
    write_cube(&sky.foreground, ctx.layout.sky("fg")).stage(STAGE)?;
    Ok(Vec::new())
}
