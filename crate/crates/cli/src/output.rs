//! Output directories that appear all at once or not at all.

use std::fs;
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use crate::error::{io, CliError, Result};

/// A hidden sibling directory collecting a command's outputs; [`Staged::commit`]
/// renames it into place. Dropping it uncommitted removes everything.
pub struct Staged {
    dir: TempDir,
    dest: PathBuf,
}

impl Staged {
    /// Refuses an existing non-empty destination, so earlier results (and
    /// zoo manifests in particular) are never overwritten.
    pub fn new(dest: &Path) -> Result<Self> {
        if dest.exists() {
            let empty = dest.is_dir() && fs::read_dir(dest).map_err(io(dest))?.next().is_none();
            if !empty {
                return Err(CliError::Config(format!(
                    "output directory {} already exists and is not empty",
                    dest.display()
                )));
            }
        }
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        fs::create_dir_all(parent).map_err(io(parent))?;
        let dir = tempfile::Builder::new()
            .prefix(".lineage-")
            .tempdir_in(parent)
            .map_err(io(parent))?;
        Ok(Self {
            dir,
            dest: dest.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.path().join(name);
        fs::write(&path, contents).map_err(io(path))
    }

    pub fn commit(self) -> Result<PathBuf> {
        if self.dest.is_dir() {
            fs::remove_dir(&self.dest).map_err(io(&self.dest))?;
        }
        let dest = self.dest;
        let staged = self.dir.keep();
        if let Err(e) = fs::rename(&staged, &dest) {
            let _ = fs::remove_dir_all(&staged);
            return Err(io(&dest)(e));
        }
        Ok(dest)
    }
}
