//! Optimizer, training loop and experiment sweeps.

mod adam;
mod alpha;
mod presets;
mod run;
mod sweep;

pub use alpha::{alpha_vs_time, AlphaPoint};
pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use presets::{Preset, PRESET_DEPTHS, PRESET_NAMES};
pub use run::{train, RunRecord, TrainConfig, DIVERGENCE_THRESHOLD};
pub use sweep::{
    load_sweep, log_spaced, read_json, run_seed, run_sweep, teacher_seed, write_json,
    ManifestEntry, PlannedRun, RunStatus, SweepConfig, SweepManifest, SweepOutcome,
    MANIFEST_FILE, RUNS_DIR,
};
