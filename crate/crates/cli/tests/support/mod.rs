#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use choroid_cli::{run_args, RunSummary};

/// Every file below `dir` keyed by relative path, skipping `timing/`
/// directories at any depth.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            let rel = p.strip_prefix(root).unwrap().to_path_buf();
            if rel.components().any(|c| c.as_os_str() == "timing") {
                continue;
            }
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn choroid(args: &[&str]) -> anyhow::Result<RunSummary> {
    run_args(std::iter::once("choroid").chain(args.iter().copied()))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn phantoms(dir: &Path, n: usize, seed: u64, flat: Option<f64>) {
    let n = n.to_string();
    let seed = seed.to_string();
    let mut args = vec!["phantom", "--out", s(dir), "--n", &n, "--seed", &seed];
    let th;
    if let Some(t) = flat {
        th = t.to_string();
        args.extend(["--flat", th.as_str()]);
    }
    let r = choroid(&args).unwrap();
    assert_eq!(r.failed, 0);
}
