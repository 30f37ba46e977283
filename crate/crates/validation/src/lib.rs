//! Helpers for the acceptance suite in `tests/acceptance.rs`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Every file below `dir` keyed by relative path, skipping `timing/`
/// directories, whose contents are wall-clock measurements.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable directory") {
            let p = e.expect("directory entry").path();
            if p.is_dir() {
                if p.file_name().is_some_and(|n| n != "timing") {
                    stack.push(p);
                }
            } else {
                let bytes = std::fs::read(&p).expect("readable file");
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), bytes);
            }
        }
    }
    out
}

/// Path of a file in the workspace `fixtures/` directory.
pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("UTF-8 path")
}
