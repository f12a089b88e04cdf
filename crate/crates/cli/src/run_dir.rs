//! Naming and discovery of run directories under the output root.

use std::path::{Path, PathBuf};

use chrono::Utc;
use scenofuzz_core::engine::campaign::{read_state, STATE_FILE};
use scenofuzz_core::engine::search::AlgorithmName;

/// `<UTC timestamp>-s<seed>`, e.g. `20261019T120501Z-s7`.
pub fn new_run_id(seed: u64) -> String {
    format!("{}-s{seed}", Utc::now().format("%Y%m%dT%H%M%S%.3fZ"))
}

/// Most recent run directory for `seed` whose campaign state is unfinished
/// and was written by `algorithm`.
pub fn latest_unfinished(root: &Path, algorithm: AlgorithmName, seed: u64) -> Option<PathBuf> {
    let suffix = format!("-s{seed}");
    let mut candidates: Vec<PathBuf> = std::fs::read_dir(root)
        .ok()?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(&suffix)))
        .collect();
    // timestamps sort lexicographically
    candidates.sort();
    candidates.into_iter().rev().find(|dir| {
        read_state(&dir.join(STATE_FILE)).is_ok_and(|st| !st.finished && st.algorithm == algorithm && st.seed == seed)
    })
}
