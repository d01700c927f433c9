//! Exclusive training lock: a .lock file created with create_new, removed on
//! drop. A second trainer pointed at the same out_dir fails fast instead of
//! interleaving checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::pipeline::PipelineError;

pub const LOCK_FILE: &str = ".lock";

pub struct OutDirLock {
    path: PathBuf,
}

impl OutDirLock {
    pub fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(OutDirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked {
                    path: path.display().to_string(),
                })
            }
            Err(e) => Err(PipelineError::Io {
                path: path.display().to_string(),
                source: e,
            }),
        }
    }
}

impl Drop for OutDirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_acquire_fails_until_release() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutDirLock::acquire(dir.path()).unwrap();
        let again = OutDirLock::acquire(dir.path());
        assert!(matches!(again, Err(PipelineError::Locked { .. })));
        assert_eq!(again.err().unwrap().exit_code(), 1);
        drop(lock);
        assert!(!dir.path().join(LOCK_FILE).exists());
        let third = OutDirLock::acquire(dir.path());
        assert!(third.is_ok());
    }
}
