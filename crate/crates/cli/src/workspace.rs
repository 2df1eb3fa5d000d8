//! Layout of processed data directories.

use std::path::{Path, PathBuf};

use scpm::data::{CohortDataset, Split};

use crate::{CliError, CliResult};

pub const DATASET_FILE: &str = "dataset.cache";
pub const TRUTH_FILE: &str = "truth.csv";
pub const REPORT_FILE: &str = "report.csv";

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
}

pub fn dataset_path(dir: &Path) -> PathBuf {
    dir.join(DATASET_FILE)
}

/// Loads the dataset and split of a processed data directory.
pub fn load(dir: &Path) -> CliResult<(CohortDataset, Split)> {
    let path = dataset_path(dir);
    if !path.exists() {
        return Err(CliError::Usage(format!("no processed dataset at {}", path.display())));
    }
    let ds = CohortDataset::read_cache(&path)?;
    let split = Split::read_index_files(dir)?;
    if let Some(&bad) = split.train.iter().chain(&split.validation).chain(&split.test).find(|&&i| i >= ds.len()) {
        return Err(CliError::Usage(format!(
            "split index {bad} out of range for {} rows in {}",
            ds.len(),
            dir.display()
        )));
    }
    Ok((ds, split))
}
