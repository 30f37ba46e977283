pub mod augment;
pub mod compare;
pub mod measure;
pub mod phantom;
pub mod segment;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use choroid_core::par;

/// Maps `f` over `items` on a pool of `workers` threads, handing results to
/// `sink` on the calling thread in input order. Work proceeds in windows so
/// at most a few results are held in memory at once.
pub(crate) fn batch<T, R>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> R + Send + Sync,
    mut sink: impl FnMut(&T, R) -> Result<()>,
) -> Result<()>
where
    T: Sync,
    R: Send,
{
    let window = (4 * workers).max(1);
    let pool = par::Workers::new(workers);
    for chunk in items.chunks(window) {
        let results = pool.install(|| par::map(chunk, &f));
        for (item, r) in chunk.iter().zip(results) {
            sink(item, r)?;
        }
    }
    Ok(())
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// `{stem}` template resolved relative to `base` when not absolute.
pub(crate) fn template_in(base: &Path, pattern: &str) -> String {
    if Path::new(pattern).is_absolute() {
        pattern.to_string()
    } else {
        base.join(pattern).to_string_lossy().into_owned()
    }
}
