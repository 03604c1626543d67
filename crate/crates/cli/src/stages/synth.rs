//! `synth` stage: generate a synthetic cohort archive under the output
//! directory, ready for `ingest`.

use routines_core::synth::{export_cohort, generate_cohort};

use crate::error::Result;
use crate::stages::{Ctx, SEED_SYNTH};

pub fn run(ctx: &Ctx) -> Result<()> {
    let spec = ctx.config.synth.to_spec(ctx.stage_seed(SEED_SYNTH));
    let (cohort, truth) = generate_cohort(&spec)?;
    let dir = ctx.layout.cohort_dir();
    export_cohort(&cohort, &truth, &dir)?;
    log::info!(
        "synth: wrote {} patients, {} days, {} relapse events to {}",
        cohort.patients.len(),
        cohort.n_days(),
        cohort.patients.iter().map(|p| p.relapse_events.len()).sum::<usize>(),
        dir.display()
    );
    Ok(())
}
