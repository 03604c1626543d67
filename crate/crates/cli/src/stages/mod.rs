//! Pipeline stages. Each stage reads its inputs from the output directory
//! (or the configured cohort archive), does its work, and writes artifacts
//! back; stages share no in-process state.

pub mod analyze;
pub mod evaluate;
pub mod fit_gmm;
pub mod fit_pam;
pub mod ingest;
pub mod report;
pub mod score;
pub mod synth;

use routines_core::exec::derive_seed;

use crate::artifacts::Layout;
use crate::config::PipelineConfig;

// Seed channels, one per randomized stage. Each stage mixes its channel
// into the master seed so stages stay independent and reruns reproduce.
pub const SEED_SYNTH: u64 = 10;
pub const SEED_GMM: u64 = 11;
pub const SEED_PAM: u64 = 12;
pub const SEED_EVALUATE: u64 = 13;
pub const SEED_BASELINE: u64 = 14;

/// Resolved invocation state shared by every stage.
pub struct Ctx {
    pub config: PipelineConfig,
    pub layout: Layout,
    pub seed: u64,
}

impl Ctx {
    pub fn stage_seed(&self, channel: u64) -> u64 {
        derive_seed(self.seed, &[channel])
    }
}
