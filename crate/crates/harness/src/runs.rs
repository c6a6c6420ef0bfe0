use std::fs;
use std::path::{Path, PathBuf};

use crate::{HarnessError, Result};

/// Creates `root/<command>-NNNN` with the next unused number.
pub fn fresh_run_dir(root: &Path, command: &str) -> Result<PathBuf> {
    fs::create_dir_all(root)?;
    let mut next = 1;
    for entry in fs::read_dir(root)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(n) = name
            .strip_prefix(command)
            .and_then(|rest| rest.strip_prefix('-'))
            .and_then(|n| n.parse::<u32>().ok())
        {
            next = next.max(n + 1);
        }
    }
    loop {
        let dir = root.join(format!("{command}-{next:04}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => next += 1,
            Err(e) => return Err(e.into()),
        }
    }
}

/// The explicit output directory if given (it must be new or empty),
/// otherwise a fresh run directory.
pub fn output_dir(explicit: Option<&Path>, runs_root: &Path, command: &str) -> Result<PathBuf> {
    match explicit {
        Some(dir) => {
            if dir.exists() && fs::read_dir(dir)?.next().is_some() {
                return Err(HarnessError::OutputExists(dir.to_path_buf()));
            }
            fs::create_dir_all(dir)?;
            Ok(dir.to_path_buf())
        }
        None => fresh_run_dir(runs_root, command),
    }
}
