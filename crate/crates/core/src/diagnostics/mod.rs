//! Hidden-state angle statistics, dataset averages and trajectory clustering.
//!
//! Angles are in radians. Entries involving a zero vector are stored as NaN
//! and excluded from every average.

mod angles;
mod cluster;
mod dump;
mod summary;

pub use angles::{angle_stats_from_traces, AngleStats, ANGLE_SLACK};
pub use cluster::{
    early_stop_reference, evenly_reference, trajectory_cluster, ClusterReport,
    DEFAULT_MIDDLE_ANGLE, FIXED_PC1_THRESHOLD,
};
pub use dump::{
    decode_dump, dump_info, encode_dump, load_dump, save_dump, DumpArrayInfo, DUMP_MAGIC,
    DUMP_VERSION,
};
pub use summary::{summarize, TrajectorySummary};
