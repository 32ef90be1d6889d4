use std::fs;
use std::path::Path;

/// Create `dir` if needed and insist it is empty, so a rerun can never
/// clobber an earlier run's artifacts.
pub fn prepare_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    if fs::read_dir(dir)?.next().is_some() {
        anyhow::bail!(
            "refusing to write into non-empty directory {}; pick a fresh --out",
            dir.display()
        );
    }
    Ok(())
}
