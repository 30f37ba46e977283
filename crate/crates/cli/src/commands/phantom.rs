use anyhow::{Context, Result};
use choroid_core::augment::split_seed;
use choroid_core::phantom::{corpus_item_files, PhantomSpec};
use log::info;

use super::{batch, ensure_dir, write_file};
use crate::config::RunConfig;
use crate::{PhantomArgs, RunSummary};

/// Upper boundary depth (μm) of flat phantoms.
pub const FLAT_TOP_UM: f64 = 1200.0;

pub fn stem(i: usize) -> String {
    format!("phantom_{i:04}")
}

/// Specs for a corpus. Phantom `i` gets seed `split_seed(seed, i)`.
pub fn specs(args: &PhantomArgs, seed: u64) -> Result<Vec<PhantomSpec>> {
    let template = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str::<PhantomSpec>(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let specs: Vec<PhantomSpec> = (0..args.n)
        .map(|i| {
            let s = split_seed(seed, i as u64);
            match (&template, args.flat) {
                (Some(t), _) => PhantomSpec { seed: s, ..t.clone() },
                (None, Some(th)) => PhantomSpec::flat(th, FLAT_TOP_UM, s),
                (None, None) => PhantomSpec::randomized(s),
            }
        })
        .collect();
    for (i, s) in specs.iter().enumerate() {
        s.validate().with_context(|| format!("phantom {i} has an invalid spec"))?;
    }
    Ok(specs)
}

pub fn run(cfg: &RunConfig, args: &PhantomArgs) -> Result<RunSummary> {
    let out = ensure_dir(cfg.out_dir()?)?;
    let mcfg = cfg.measure()?;
    let specs = specs(args, cfg.seed())?;
    let indexed: Vec<(usize, PhantomSpec)> = specs.into_iter().enumerate().collect();
    let mut summary = RunSummary::default();
    batch(
        &indexed,
        cfg.workers(),
        |(i, spec)| corpus_item_files(&stem(*i), spec, &mcfg),
        |_, files| {
            for (name, bytes) in files? {
                write_file(&out.join(name), &bytes)?;
            }
            summary.processed += 1;
            Ok(())
        },
    )?;
    info!("wrote {} phantoms to {}", summary.processed, out.display());
    Ok(summary)
}
