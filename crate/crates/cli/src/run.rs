use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::error::CliResult;

/// Output directory of one invocation.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// `explicit` if given, else `<root>/<UTC timestamp>-<command>-<config hash>`.
    pub fn create(root: &Path, explicit: Option<&Path>, command: &str, config_json: &str) -> CliResult<RunDir> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let hash = hex::encode(Sha256::digest(config_json.as_bytes()));
                let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
                let base = root.join(format!("{stamp}-{command}-{}", &hash[..8]));
                let mut p = base.clone();
                let mut k = 1;
                while p.exists() {
                    p = PathBuf::from(format!("{}-{k}", base.display()));
                    k += 1;
                }
                p
            }
        };
        std::fs::create_dir_all(&path)?;
        std::fs::write(path.join("config.json"), config_json)?;
        Ok(RunDir { path })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let p = self.file(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&p, contents)?;
        Ok(p)
    }
}
